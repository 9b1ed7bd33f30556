"""Full classifier: cube embedding -> factorised encoder -> multi-branch head.

Holds every learnable tensor behind stable dotted names (for the optimizer,
checkpoints, and gradient verification) and exposes a per-clip forward that
returns class logits plus the embedding feeding the discriminator loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mcvv import data as D
from mcvv import encoder as E
from mcvv import head as H
from mcvv import loss as L
from mcvv import tensor as T
from mcvv import tubelet as TB
from mcvv.tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    clip_len: int = 16
    height: int = 64
    width: int = 64
    channels: int = 3
    t: int = 4
    h: int = 16
    w: int = 16
    d: int = 64
    heads: int = 4
    n_sp: int = 2
    n_tp: int = 2
    mlp_hidden: int = 128
    num_class: int = 2
    multi_branch: bool = True

    def tubelet(self) -> TB.TubeletConfig:
        return TB.TubeletConfig(t=self.t, h=self.h, w=self.w, d=self.d)

    def encoder(self) -> E.EncoderConfig:
        return E.EncoderConfig(d=self.d, heads=self.heads, n_sp=self.n_sp,
                               n_tp=self.n_tp, mlp_hidden=self.mlp_hidden)


class Model:
    def __init__(self, cfg: ModelConfig, seed: int, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.tubelet_cfg = cfg.tubelet()
        self.encoder_cfg = cfg.encoder()
        self.counts = TB.token_counts(self.tubelet_cfg, cfg.clip_len, cfg.height, cfg.width)
        n_tokens = self.counts[0] * self.counts[1] * self.counts[2]
        cube_dim = cfg.t * cfg.h * cfg.w * cfg.channels

        rng = np.random.default_rng(seed)
        proj_std = (2.0 / (cube_dim + cfg.d)) ** 0.5
        self.proj = Tensor(rng.normal(0, proj_std, (cube_dim, cfg.d)).astype(dtype),
                           requires_grad=True)
        self.cls_token = Tensor(rng.normal(0, E.INIT_STD, cfg.d).astype(dtype),
                                requires_grad=True)
        self.pos = Tensor(rng.normal(0, E.INIT_STD, (n_tokens + 1, cfg.d)).astype(dtype),
                          requires_grad=True)
        self.encoder = E.init_encoder_params(self.encoder_cfg, self.counts[0], rng, dtype)
        if cfg.multi_branch:
            self.head = H.init_mc_params(cfg.d, cfg.num_class, rng, dtype)
        else:
            self.head = H.init_ablated_params(cfg.d, cfg.num_class, rng, dtype)

    # -- forward -------------------------------------------------------------------

    def forward(self, frames: np.ndarray) -> tuple[Tensor, Tensor]:
        """[T,H,W,C] frames -> (logits, discriminator embedding)."""
        clip = np.asarray(frames, dtype=self.dtype)
        cubes = TB.tubelet_partition(clip, self.tubelet_cfg)
        seq = TB.embed(cubes, self.proj, self.cls_token, self.pos, self.counts)
        feature = E.encoder_forward(seq, self.encoder_cfg, self.encoder)
        if self.cfg.multi_branch:
            return H.mc_features(feature, self.head)
        return H.mc_ablated_features(feature, self.head)

    def clip_probability(self, frames: np.ndarray) -> float:
        """Probability of class 1 for one clip."""
        logits, _ = self.forward(frames)
        return float(T.softmax(logits, axis=-1).data[1])

    # -- parameter registry ------------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embed.proj", self.proj), ("embed.cls", self.cls_token),
               ("embed.pos", self.pos)]

        def layer_entries(prefix, layer):
            a, f = layer.attn, layer.ff
            return [
                (f"{prefix}.attn.ln_gain", a.ln_gain), (f"{prefix}.attn.ln_bias", a.ln_bias),
                (f"{prefix}.attn.wq", a.wq), (f"{prefix}.attn.bq", a.bq),
                (f"{prefix}.attn.wk", a.wk), (f"{prefix}.attn.bk", a.bk),
                (f"{prefix}.attn.wv", a.wv), (f"{prefix}.attn.bv", a.bv),
                (f"{prefix}.attn.wo", a.wo), (f"{prefix}.attn.bo", a.bo),
                (f"{prefix}.ff.ln_gain", f.ln_gain), (f"{prefix}.ff.ln_bias", f.ln_bias),
                (f"{prefix}.ff.w1", f.w1), (f"{prefix}.ff.b1", f.b1),
                (f"{prefix}.ff.w2", f.w2), (f"{prefix}.ff.b2", f.b2),
            ]

        for i, layer in enumerate(self.encoder.spatial):
            out += layer_entries(f"encoder.spatial{i}", layer)
        for i, layer in enumerate(self.encoder.temporal):
            out += layer_entries(f"encoder.temporal{i}", layer)
        out += [("encoder.temporal_cls", self.encoder.temporal_cls),
                ("encoder.temporal_pos", self.encoder.temporal_pos)]
        f = self.encoder.final_ff
        out += [("encoder.final_ff.ln_gain", f.ln_gain), ("encoder.final_ff.ln_bias", f.ln_bias),
                ("encoder.final_ff.w1", f.w1), ("encoder.final_ff.b1", f.b1),
                ("encoder.final_ff.w2", f.w2), ("encoder.final_ff.b2", f.b2)]

        if self.cfg.multi_branch:
            out += [("head.fc1_w", self.head.fc1_w), ("head.fc1_b", self.head.fc1_b)]
            for i, (w, b) in enumerate(zip(self.head.branch_w, self.head.branch_b)):
                out += [(f"head.branch{i}_w", w), (f"head.branch{i}_b", b)]
            out += [("head.out_w", self.head.out_w), ("head.out_b", self.head.out_b)]
        else:
            out += [("head.fc1_w", self.head.fc1_w), ("head.fc1_b", self.head.fc1_b),
                    ("head.out_w", self.head.out_w), ("head.out_b", self.head.out_b)]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


# -- checkpoints -----------------------------------------------------------------------


def save_checkpoint(model: Model, out_dir: Path | str) -> Path:
    """One tensor file per parameter plus a name manifest."""
    out_dir = Path(out_dir)
    (out_dir / "params").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "params.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "path"])
        for i, (name, p) in enumerate(model.named_parameters()):
            rel = f"params/{i:04d}.mcvv"
            D.write_tensor_file(out_dir / rel, p.data)
            writer.writerow([name, rel])
    return manifest


def load_checkpoint(model: Model, out_dir: Path | str) -> None:
    out_dir = Path(out_dir)
    named = dict(model.named_parameters())
    with open(out_dir / "params.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    loaded = set()
    for row in rows:
        name = row["name"]
        if name not in named:
            raise ValueError(f"checkpoint parameter '{name}' not in model")
        arr = D.read_tensor_file(out_dir / row["path"]).astype(model.dtype)
        if arr.shape != named[name].shape:
            raise ValueError(f"shape mismatch for '{name}': "
                             f"{arr.shape} vs {named[name].shape}")
        named[name].data = arr
        loaded.add(name)
    missing = set(named) - loaded
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")


# -- full-model gradient verification ------------------------------------------------------


def gradcheck_config() -> ModelConfig:
    """Smallest config that still exercises every stage (< 5k parameters)."""
    return ModelConfig(clip_len=4, height=4, width=4, channels=3,
                       t=2, h=2, w=2, d=16, heads=2, n_sp=1, n_tp=1,
                       mlp_hidden=16, num_class=2, multi_branch=True)


def full_model_gradcheck(seed: int = 0, steps=(5e-4, 5e-5, 5e-6),
                         batch: int = 3) -> tuple[float, int]:
    """Max relative error of the end-to-end loss gradient vs central
    differences at float64, with the confusion state frozen. Returns
    (max_rel_err, parameter count). Uses a step ladder per coordinate; see
    tensor.gradcheck_multi_step for why one step cannot fit a deep model."""
    cfg = gradcheck_config()
    model = Model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    clips = [rng.random((cfg.clip_len, cfg.height, cfg.width, cfg.channels))
             for _ in range(batch)]
    labels = np.array([i % 2 for i in range(batch)])
    state = L.AdCorreState(num_class=cfg.num_class)
    L.update_confusion(state, rng.integers(0, 2, 12), rng.integers(0, 2, 12))
    params = L.HPLossParams()

    def f(_):
        logit_rows, emb_rows = [], []
        for clip in clips:
            logits, emb = model.forward(clip)
            logit_rows.append(T.reshape(logits, (1, cfg.num_class)))
            emb_rows.append(T.reshape(emb, (1, emb.shape[0])))
        logits_b = T.concat(logit_rows, axis=0)
        emb_b = T.concat(emb_rows, axis=0)
        return L.hp_loss(logits_b, labels, emb_b, state, params, update_state=False)

    err = T.gradcheck_multi_step(f, model.parameters(), steps=steps)
    return err, model.param_count()
