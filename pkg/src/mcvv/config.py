"""Flat key=value run configuration.

One namespace covers cohort generation, model dims, and training; every key
can come from a config file (`key = value`, '#' comments) or a CLI flag, and
unknown keys are rejected. Reports embed the resolved config so a run is
reproducible from its report alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from mcvv.data import CohortSpec
from mcvv.model import ModelConfig
from mcvv.train import TrainConfig


class UsageError(Exception):
    """Bad flags, unknown keys, or malformed config input."""


@dataclass
class RunConfig:
    # cohort generation
    mci: int = 20
    nc: int = 12
    frames_min: int = 128
    frames_max: int = 256
    hw: int = 64
    channels: int = 3
    strength: float = 0.35
    rho: float = 0.0
    noise: float = 0.05
    # clip geometry and model dims
    clip_len: int = 16
    t: int = 4
    h: int = 16
    w: int = 16
    d: int = 64
    heads: int = 4
    n_sp: int = 2
    n_tp: int = 2
    mlp_hidden: int = 128
    # training
    batch_size: int = 16
    epochs: int = 30
    max_steps: int = 0            # 0 means no cap
    base_lr: float = 1e-6
    max_lr: float = 1e-4
    cycle_steps: int = 0          # 0 means two epochs of batches
    seed: int = 0
    loss: str = "hp"
    head: str = "mc"
    augment: bool = True
    l_fold: int = 3
    alpha: float = 0.25
    gamma: float = 2.0
    fd_weight: float = 0.5
    epsilon: float = 1e-3

    # -- views ---------------------------------------------------------------------

    def cohort_spec(self) -> CohortSpec:
        return CohortSpec(mci_subjects=self.mci, nc_subjects=self.nc,
                          frames_min=self.frames_min, frames_max=self.frames_max,
                          clip_len=self.clip_len, height=self.hw, width=self.hw,
                          channels=self.channels, strength=self.strength,
                          rho=self.rho, noise=self.noise, seed=self.seed)

    def model_config(self) -> ModelConfig:
        return ModelConfig(clip_len=self.clip_len, height=self.hw, width=self.hw,
                           channels=self.channels, t=self.t, h=self.h, w=self.w,
                           d=self.d, heads=self.heads, n_sp=self.n_sp,
                           n_tp=self.n_tp, mlp_hidden=self.mlp_hidden,
                           multi_branch=self.head == "mc")

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs,
                           max_steps=self.max_steps or None,
                           base_lr=self.base_lr, max_lr=self.max_lr,
                           cycle_steps=self.cycle_steps or None,
                           seed=self.seed, loss=self.loss, head=self.head,
                           augment=self.augment, l_fold=self.l_fold,
                           alpha=self.alpha, gamma=self.gamma,
                           fd_weight=self.fd_weight, epsilon=self.epsilon)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # -- serialization ------------------------------------------------------------------

    def write(self, path: Path | str) -> None:
        lines = [f"{f.name} = {_render(getattr(self, f.name))}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        cfg = cls()
        cfg.apply(_parse_file(path))
        return cfg

    def apply(self, overrides: dict[str, str]) -> None:
        """Apply string key/value overrides, coercing to field types."""
        known = {f.name: f.type for f in fields(self)}
        for key, raw in overrides.items():
            if key not in known:
                raise UsageError(f"unknown config key '{key}'")
            setattr(self, key, _coerce(raw, getattr(self, key), key))


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(raw, current, key: str):
    if isinstance(raw, type(current)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    if isinstance(current, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"key '{key}' expects a boolean, got {text!r}")
    try:
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
    except ValueError as exc:
        raise UsageError(f"key '{key}': {exc}") from exc
    return text


def _parse_file(path: Path | str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out
