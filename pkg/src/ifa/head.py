"""Implicit feature alignment head.

Each query coordinate picks its nearest latent code on every pyramid level;
the codes, their cell-unit offsets and the encoded offsets are concatenated
and decoded to class logits by an MLP. Queries never interact, so any output
resolution can be decoded from the same pyramid.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .grid import FeatureGrid, nearest_cells, query_array
from .posenc import PosEncoder, encoding_dim
from .tensor import Parameter, Tensor


class LevelError(ValueError):
    pass


def mlp_flops(widths: Sequence[int], bias: bool = True) -> int:
    """FLOPs of one MLP evaluation: 2 per multiply-accumulate, 1 per bias add."""
    return sum(2 * a * b + (b if bias else 0) for a, b in zip(widths[:-1], widths[1:]))


class IfaHead:
    def __init__(self, in_channels: Mapping[int, int], num_classes: int, proj_dim: int = 64,
                 hidden: Sequence[int] = (256, 256), pe_mode: str = "sine+cosine-learned",
                 pe_freqs: int = 6, pe_learned: bool | None = None,
                 share_pe: bool = False, chunk_size: int = 8192,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.levels = sorted(in_channels)
        self.in_channels = dict(in_channels)
        self.num_classes = num_classes
        self.proj_dim = proj_dim
        self.chunk_size = chunk_size
        # Attachment point for a context module on the coarsest level; unused.
        self.context_hook = None

        self.proj_w, self.proj_b = {}, {}
        for lv in self.levels:
            c = in_channels[lv]
            self.proj_w[lv] = Parameter(rng.standard_normal((proj_dim, c)) * np.sqrt(1.0 / c),
                                        name=f"head.proj{lv}.w")
            self.proj_b[lv] = Parameter(np.zeros(proj_dim), name=f"head.proj{lv}.b")

        if share_pe:
            shared = PosEncoder(pe_mode, pe_freqs, pe_learned, name="head.pe")
            self.pe = {lv: shared for lv in self.levels}
        else:
            self.pe = {lv: PosEncoder(pe_mode, pe_freqs, pe_learned, name=f"head.pe{lv}")
                       for lv in self.levels}

        self.widths = [self.in_dim, *hidden, num_classes]
        self.mlp_w, self.mlp_b = [], []
        for j, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.mlp_w.append(Parameter(rng.standard_normal((a, b)) * np.sqrt(2.0 / a),
                                        name=f"head.mlp{j}.w"))
            self.mlp_b.append(Parameter(np.zeros(b), name=f"head.mlp{j}.b"))

    @property
    def pe_dim(self) -> int:
        return encoding_dim(self.pe[self.levels[0]])

    @property
    def in_dim(self) -> int:
        return len(self.levels) * (self.proj_dim + 2 + self.pe_dim)

    def parameters(self) -> list[Parameter]:
        out = []
        for lv in self.levels:
            out += [self.proj_w[lv], self.proj_b[lv]]
        seen = set()
        for lv in self.levels:
            for p in self.pe[lv].parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        for w, b in zip(self.mlp_w, self.mlp_b):
            out += [w, b]
        return out

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    # ------------------------------------------------------------ forward

    def project(self, features: Mapping[int, Tensor]) -> dict[int, Tensor]:
        """1x1 projections of encoder maps (B, C_i, H_i, W_i) to ``proj_dim`` channels."""
        self._check_levels(features)
        return {lv: T.conv1x1(features[lv], self.proj_w[lv], self.proj_b[lv])
                for lv in self.levels}

    def query_logits(self, projected: Mapping[int, Tensor], batch: np.ndarray,
                     coords: np.ndarray, row_stable: bool = False) -> Tensor:
        """(Q, N) logits for ``coords`` (Q, 2) in the images ``batch`` (Q,)."""
        self._check_levels(projected)
        dtype = T.get_dtype()
        xs, ys = coords[:, 0], coords[:, 1]
        parts = []
        for lv in self.levels:
            fmap = projected[lv]
            rows, cols, dx, dy = nearest_cells(fmap.shape[2], fmap.shape[3], xs, ys)
            delta = np.stack([dx, dy], axis=1).astype(dtype)
            parts.append(T.gather_rows(fmap, batch, rows, cols))
            enc = self.pe[lv]
            # Mode "none" withholds all position information.
            parts.append(Tensor(np.zeros_like(delta) if enc.mode == "none" else delta))
            encoded = enc(Tensor(delta))
            if encoded is not None:
                parts.append(encoded)
        h = T.concat_lastdim(parts)
        last = len(self.mlp_w) - 1
        for j, (w, b) in enumerate(zip(self.mlp_w, self.mlp_b)):
            h = T.add(T.matmul(h, w, row_stable=row_stable), b)
            if j < last:
                h = T.relu(h)
        return h

    def _check_levels(self, maps: Mapping[int, object]) -> None:
        if sorted(maps) != self.levels:
            raise LevelError(f"pyramid levels {sorted(maps)} do not match head levels "
                             f"{self.levels}")


Pyramid = dict  # level -> FeatureGrid with proj_dim channels


def make_pyramid(grids: Sequence[FeatureGrid]) -> dict[int, FeatureGrid]:
    levels = [g.level for g in grids]
    if levels != sorted(set(levels)):
        raise LevelError(f"pyramid levels must be strictly increasing, got {levels}")
    return {g.level: g for g in grids}


def decode(head: IfaHead, pyr: Mapping[int, FeatureGrid], queries) -> np.ndarray:
    """Logits (Q, N) for unit-square queries, evaluated chunk by chunk."""
    coords = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    if len(coords) == 0:
        raise ValueError("decode needs at least one query")
    if sorted(pyr) != head.levels:
        raise LevelError(f"pyramid levels {sorted(pyr)} do not match head levels {head.levels}")
    for lv, g in pyr.items():
        if g.channels != head.proj_dim:
            raise LevelError(f"level {lv} has {g.channels} channels, head expects "
                             f"{head.proj_dim}")
    maps = {lv: Tensor(g.values[None].astype(T.get_dtype())) for lv, g in pyr.items()}
    out = np.empty((len(coords), head.num_classes), dtype=T.get_dtype())
    step = max(1, head.chunk_size)
    for s in range(0, len(coords), step):
        chunk = coords[s:s + step]
        batch = np.zeros(len(chunk), dtype=np.int64)
        out[s:s + step] = head.query_logits(maps, batch, chunk, row_stable=True).data
    return out


def decode_map(head: IfaHead, pyr: Mapping[int, FeatureGrid], h_out: int,
               w_out: int) -> np.ndarray:
    """Logits (N, h_out, w_out) at the pixel centers of an ``h_out x w_out`` grid."""
    logits = decode(head, pyr, query_array(h_out, w_out))
    return logits.T.reshape(head.num_classes, h_out, w_out)


def flops_of_head(head: IfaHead, h_out: int, w_out: int,
                  pyramid_dims: Mapping[int, tuple[int, int, int]]) -> int:
    """FLOPs of projecting the pyramid once and decoding ``h_out * w_out`` queries.

    ``pyramid_dims`` maps level -> (C_in, H, W). Per query and level the
    encoding costs one multiply per phase plus one per sin/cos entry.
    """
    proj = sum(h * w * (2 * c * head.proj_dim + head.proj_dim)
               for c, h, w in (pyramid_dims[lv] for lv in head.levels))
    pe = 0
    for lv in head.levels:
        enc = head.pe[lv]
        if enc.num_freqs:
            pe += 2 * enc.num_freqs + encoding_dim(enc)
    per_query = mlp_flops(head.widths) + pe
    return proj + per_query * h_out * w_out
