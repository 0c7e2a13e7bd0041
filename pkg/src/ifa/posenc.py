"""Sinusoidal encoding of relative coordinates with trainable frequencies."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

MODES = ("none", "coord-only", "sine-only", "cosine-only",
         "sine+cosine-fixed", "sine+cosine-learned")

# entries per frequency per axis
_PER_FREQ = {"sine-only": 1, "cosine-only": 1, "sine+cosine-fixed": 2,
             "sine+cosine-learned": 2}


def initial_frequencies(n: int) -> np.ndarray:
    """2 * e**l for l = 1..n."""
    return np.array([2.0 * math.exp(l) for l in range(1, n + 1)])


def freqs_for_dim(mode: str, total_dim: int) -> int:
    """Number of frequencies giving ``total_dim`` encoded entries over two axes."""
    if mode not in _PER_FREQ:
        return 0
    per = 2 * _PER_FREQ[mode]
    if total_dim <= 0 or total_dim % per:
        raise ValueError(f"pe.total_dim={total_dim} must be a positive multiple of {per} "
                         f"for mode {mode!r}")
    return total_dim // per


class PosEncoder:
    """One frequency bank shared by the x and y axes."""

    def __init__(self, mode: str = "sine+cosine-learned", num_freqs: int = 6,
                 learned: bool | None = None, name: str = "pe"):
        if mode not in MODES:
            raise ValueError(f"unknown pe.mode {mode!r}; expected one of {MODES}")
        self.mode = mode
        self.num_freqs = num_freqs if mode in _PER_FREQ else 0
        if learned is None or mode.startswith("sine+cosine"):
            learned = mode != "sine+cosine-fixed"
        self.omega = Parameter(initial_frequencies(self.num_freqs), name=f"{name}.omega",
                               requires_grad=learned and self.num_freqs > 0)

    @property
    def learned(self) -> bool:
        return self.omega.requires_grad

    def parameters(self) -> list[Parameter]:
        return [self.omega] if self.num_freqs else []

    @property
    def dim(self) -> int:
        return encoding_dim(self)

    def __call__(self, delta: Tensor) -> Tensor | None:
        """Encode a (Q, 2) tensor of (dx, dy) rows; ``None`` in mode "none"."""
        if self.mode == "none":
            return None
        if self.mode == "coord-only":
            return delta
        L = self.num_freqs
        q = delta.shape[0]
        row = T.reshape(self.omega, (1, L))
        parts = []
        for axis in range(2):
            phase = T.matmul(Tensor(delta.data[:, axis:axis + 1]), row)
            if self.mode == "sine-only":
                parts.append(T.sin(phase))
            elif self.mode == "cosine-only":
                parts.append(T.cos(phase))
            else:
                both = T.concat_lastdim([T.sin(phase), T.cos(phase)])
                # [s1..sL, c1..cL] -> [s1, c1, ..., sL, cL]
                order = np.stack([np.arange(L), np.arange(L) + L], axis=1).ravel()
                parts.append(T.take_lastdim(both, order))
        out = T.concat_lastdim(parts)
        assert out.shape == (q, self.dim)
        return out


def encoding_dim(enc: PosEncoder) -> int:
    if enc.mode == "none":
        return 0
    if enc.mode == "coord-only":
        return 2
    return 2 * _PER_FREQ[enc.mode] * enc.num_freqs


def encode(enc: PosEncoder, delta) -> np.ndarray:
    """Encode a single (dx, dy) pair; returns a flat array."""
    d = Tensor(np.asarray(delta, dtype=enc.omega.data.dtype).reshape(1, 2))
    out = enc(d)
    return np.zeros(0) if out is None else out.data[0].copy()
