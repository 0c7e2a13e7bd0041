"""FPN top-down decoders with interchangeable 2x aligning steps.

All kinds share the lateral 1x1 projections and the stride-4 classifier;
they differ only in how the coarser map is brought to the next resolution:

* ``bilinear`` / ``nearest``: parameter-free resize
* ``deconv``: stride-2 4x4 transposed convolution + ReLU
* ``upsample-module``: 3x3 convolution + ReLU, then bilinear 2x
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

KINDS = ("bilinear", "nearest", "deconv", "upsample-module", "ifa")
FPN_KINDS = KINDS[:4]


class FpnDecoder:
    def __init__(self, kind: str, in_channels: Mapping[int, int], num_classes: int,
                 fpn_dim: int = 256, rng: np.random.Generator | None = None):
        if kind not in FPN_KINDS:
            raise ValueError(f"align.kind {kind!r} is not an FPN aligner; "
                             f"expected one of {FPN_KINDS}")
        rng = rng or np.random.default_rng(0)
        self.kind = kind
        self.levels = sorted(in_channels)
        self.in_channels = dict(in_channels)
        self.fpn_dim = fpn_dim
        self.num_classes = num_classes
        d = fpn_dim
        self.lat = {}
        for lv in self.levels:
            c = in_channels[lv]
            self.lat[lv] = (Parameter(rng.standard_normal((d, c)) * np.sqrt(1.0 / c),
                                      name=f"fpn.lat{lv}.w"),
                            Parameter(np.zeros(d), name=f"fpn.lat{lv}.b"))
        # one aligning step per level transition, indexed by the target level
        self.up = {}
        for lv in self.levels[:-1]:
            if kind == "deconv":
                w = rng.standard_normal((d, d, 4, 4)) * np.sqrt(2.0 / (d * 4))
                self.up[lv] = (Parameter(w, name=f"fpn.up{lv}.w"),
                               Parameter(np.zeros(d), name=f"fpn.up{lv}.b"))
            elif kind == "upsample-module":
                w = rng.standard_normal((d, d, 3, 3)) * np.sqrt(2.0 / (d * 9))
                self.up[lv] = (Parameter(w, name=f"fpn.up{lv}.w"),
                               Parameter(np.zeros(d), name=f"fpn.up{lv}.b"))
        self.cls = (Parameter(rng.standard_normal((num_classes, d)) * np.sqrt(1.0 / d),
                              name="fpn.cls.w"),
                    Parameter(np.zeros(num_classes), name="fpn.cls.b"))

    def parameters(self) -> list[Parameter]:
        out = []
        for lv in self.levels:
            out += list(self.lat[lv])
        for lv in sorted(self.up):
            out += list(self.up[lv])
        return out + list(self.cls)

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def upsample2x(self, x: Tensor, target: int) -> Tensor:
        h, w = x.shape[2] * 2, x.shape[3] * 2
        if self.kind == "bilinear":
            return T.bilinear_upsample(x, h, w)
        if self.kind == "nearest":
            return T.nearest_upsample(x, h, w)
        wt, b = self.up[target]
        if self.kind == "deconv":
            return T.relu(T.conv_transpose2d(x, wt, b, stride=2, pad=1))
        return T.bilinear_upsample(T.relu(T.conv2d(x, wt, b, stride=1, pad=1)), h, w)

    def __call__(self, feats: Mapping[int, Tensor]) -> Tensor:
        """Pyramid {level: (B, C_i, H_i, W_i)} -> logits (B, N, H_2, W_2)."""
        if sorted(feats) != self.levels:
            raise T.ShapeError(f"fpn: pyramid levels {sorted(feats)} != {self.levels}")
        top = self.levels[-1]
        p = T.conv1x1(feats[top], *self.lat[top])
        for lv in reversed(self.levels[:-1]):
            want = feats[lv].shape[2:]
            if (p.shape[2] * 2, p.shape[3] * 2) != want:
                raise T.ShapeError(f"fpn: level {lv + 1} map {p.shape[2:]} does not double "
                                   f"to level {lv} map {want}")
            p = T.add(self.upsample2x(p, lv), T.conv1x1(feats[lv], *self.lat[lv]))
        return T.conv1x1(p, *self.cls)


def fpn_fuse(decoder: FpnDecoder, feats: Mapping[int, Tensor]) -> Tensor:
    return decoder(feats)


def _conv_flops(h: int, w: int, cin: int, cout: int, k: int) -> int:
    return h * w * (2 * cin * k * k * cout + cout)


def flops_of_aligner(kind: str, pyramid_dims: Mapping[int, tuple[int, int, int]],
                     fpn_dim: int, num_classes: int) -> int:
    """FLOPs of the FPN decoder for one image; resizes count zero.

    ``pyramid_dims`` maps level -> (C_in, H, W). Same convention as the IFA
    head count: 2 per multiply-accumulate, 1 per bias or merge add.
    """
    if kind not in FPN_KINDS:
        raise ValueError(f"no FPN aligner named {kind!r}")
    levels = sorted(pyramid_dims)
    d = fpn_dim
    total = sum(_conv_flops(h, w, c, d, 1) for c, h, w in pyramid_dims.values())
    for lv in levels[:-1]:
        _, h, w = pyramid_dims[lv + 1]
        if kind == "deconv":
            # every input pixel scatters a 4x4 patch; bias once per output pixel
            total += h * w * 2 * d * 16 * d + 4 * h * w * d
        elif kind == "upsample-module":
            total += _conv_flops(h, w, d, d, 3)
        _, h2, w2 = pyramid_dims[lv]
        total += h2 * w2 * d  # merge add
    _, h2, w2 = pyramid_dims[levels[0]]
    return total + _conv_flops(h2, w2, d, num_classes, 1)
