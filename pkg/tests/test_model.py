"""Assembled model: forward contract, parameter registry, checkpoints."""

import numpy as np
import pytest

from mcvv import model as MD
from mcvv.model import Model, ModelConfig


def tiny_cfg(**kw):
    defaults = dict(clip_len=8, height=16, width=16, channels=3,
                    t=4, h=8, w=8, d=16, heads=2, n_sp=1, n_tp=1, mlp_hidden=16)
    defaults.update(kw)
    return ModelConfig(**defaults)


def test_forward_shapes_mc():
    model = Model(tiny_cfg(), seed=0)
    clip = np.random.default_rng(1).random((8, 16, 16, 3)).astype(np.float32)
    logits, emb = model.forward(clip)
    assert logits.shape == (2,)
    assert emb.shape == (model.head.embedding_dim,)


def test_forward_shapes_nomc():
    model = Model(tiny_cfg(multi_branch=False), seed=0)
    clip = np.random.default_rng(1).random((8, 16, 16, 3)).astype(np.float32)
    logits, emb = model.forward(clip)
    assert logits.shape == (2,)
    assert emb.shape == (model.head.embedding_dim,)


def test_forward_deterministic():
    model = Model(tiny_cfg(), seed=3)
    clip = np.random.default_rng(2).random((8, 16, 16, 3)).astype(np.float32)
    a = model.forward(clip)[0].data
    b = model.forward(clip)[0].data
    np.testing.assert_array_equal(a, b)


def test_same_seed_same_init():
    a = Model(tiny_cfg(), seed=5)
    b = Model(tiny_cfg(), seed=5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_named_parameters_unique_and_grad_tracked():
    model = Model(tiny_cfg(), seed=0)
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert all(p.requires_grad for _, p in model.named_parameters())


def test_temporal_dim_variants():
    for t, n_t in ((2, 4), (4, 2), (8, 1)):
        model = Model(tiny_cfg(t=t), seed=0)
        assert model.counts[0] == n_t
        clip = np.random.default_rng(0).random((8, 16, 16, 3)).astype(np.float32)
        assert model.forward(clip)[0].shape == (2,)


def test_clip_probability_range():
    model = Model(tiny_cfg(), seed=0)
    clip = np.random.default_rng(4).random((8, 16, 16, 3)).astype(np.float32)
    p = model.clip_probability(clip)
    assert 0.0 <= p <= 1.0


def test_checkpoint_roundtrip(tmp_path):
    model = Model(tiny_cfg(), seed=7)
    clip = np.random.default_rng(5).random((8, 16, 16, 3)).astype(np.float32)
    before = model.forward(clip)[0].data.copy()

    MD.save_checkpoint(model, tmp_path)
    fresh = Model(tiny_cfg(), seed=99)
    assert not np.allclose(fresh.forward(clip)[0].data, before)
    MD.load_checkpoint(fresh, tmp_path)
    np.testing.assert_array_equal(fresh.forward(clip)[0].data, before)


def test_checkpoint_shape_mismatch(tmp_path):
    model = Model(tiny_cfg(), seed=0)
    MD.save_checkpoint(model, tmp_path)
    other = Model(tiny_cfg(d=32, mlp_hidden=32), seed=0)
    with pytest.raises(ValueError, match="shape mismatch"):
        MD.load_checkpoint(other, tmp_path)


def test_gradcheck_model_size():
    model = Model(MD.gradcheck_config(), seed=0, dtype=np.float64)
    assert model.param_count() <= 5000
