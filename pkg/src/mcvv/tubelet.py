"""Cube tokenization: carve a clip into non-overlapping 3D cubes and embed them.

Token order is time-major: index = tau * n_h * n_w + row * n_w + col, with each
cube flattened row-major over (t, h, w, C). Trailing frames/pixels that do not
fill a whole cube are discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcvv import tensor as T
from mcvv.tensor import Tensor


@dataclass(frozen=True)
class TubeletConfig:
    t: int          # frames per cube
    h: int          # pixel rows per cube
    w: int          # pixel cols per cube
    d: int = 64     # embedding dimension

    def __post_init__(self):
        if min(self.t, self.h, self.w, self.d) < 1:
            raise ValueError(f"non-positive tubelet extent in {self}")


@dataclass
class TokenSequence:
    tokens: Tensor              # [n_t*n_h*n_w + 1, d], class token at index 0
    n_t: int
    n_h: int
    n_w: int

    def __post_init__(self):
        expected = self.n_t * self.n_h * self.n_w + 1
        if self.tokens.shape[0] != expected:
            raise T.ShapeError(f"token sequence length {self.tokens.shape[0]}, "
                               f"expected {expected}")

    @property
    def n_spatial(self) -> int:
        return self.n_h * self.n_w


def token_counts(cfg: TubeletConfig, frames: int, height: int, width: int) -> tuple[int, int, int]:
    n_t, n_h, n_w = frames // cfg.t, height // cfg.h, width // cfg.w
    if min(n_t, n_h, n_w) < 1:
        raise T.ShapeError(f"clip {frames}x{height}x{width} too small for cubes "
                           f"{cfg.t}x{cfg.h}x{cfg.w}")
    return n_t, n_h, n_w


def tubelet_partition(clip, cfg: TubeletConfig) -> Tensor:
    """[T,H,W,C] clip -> [n_t*n_h*n_w, t*h*w*C] cube matrix (a constant leaf)."""
    arr = clip.data if isinstance(clip, Tensor) else np.asarray(clip)
    if arr.ndim != 4:
        raise T.ShapeError(f"clip must be [T,H,W,C], got shape {arr.shape}")
    frames, height, width, channels = arr.shape
    n_t, n_h, n_w = token_counts(cfg, frames, height, width)
    region = arr[:n_t * cfg.t, :n_h * cfg.h, :n_w * cfg.w, :]
    cubes = region.reshape(n_t, cfg.t, n_h, cfg.h, n_w, cfg.w, channels)
    cubes = cubes.transpose(0, 2, 4, 1, 3, 5, 6)
    flat = np.ascontiguousarray(cubes).reshape(n_t * n_h * n_w,
                                               cfg.t * cfg.h * cfg.w * channels)
    return Tensor(flat)


def embed(cubes: Tensor, proj: Tensor, cls_token: Tensor, pos: Tensor,
          counts: tuple[int, int, int]) -> TokenSequence:
    """Project cubes, prepend the class token, add the positional embedding."""
    n_t, n_h, n_w = counts
    n_tokens = n_t * n_h * n_w
    d = proj.shape[-1]
    if cls_token.shape != (d,):
        raise T.ShapeError(f"class token shape {cls_token.shape}, expected ({d},)")
    if pos.shape != (n_tokens + 1, d):
        raise T.ShapeError(f"positional embedding shape {pos.shape}, "
                           f"expected ({n_tokens + 1}, {d})")
    projected = T.matmul(cubes, proj)
    tokens = T.concat([T.reshape(cls_token, (1, d)), projected], axis=0)
    return TokenSequence(tokens=T.add(tokens, pos), n_t=n_t, n_h=n_h, n_w=n_w)
