"""Small convolutional pyramid encoder producing F_2..F_5.

The stem halves the input; each of the four stages opens with a stride-2
3x3 convolution, so stage outputs sit at strides 4, 8, 16 and 32. Every
extra 2x2 average pool after the stem doubles all of those strides.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .grid import FeatureGrid
from .tensor import Parameter, Tensor

LEVELS = (2, 3, 4, 5)


@dataclass
class EncoderConfig:
    widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 128])
    blocks: int = 2
    extra_pool: int = 0
    num_classes: int = 5

    @property
    def multiple(self) -> int:
        return 32 * 2 ** self.extra_pool

    def level_channels(self) -> dict[int, int]:
        return {lv: self.widths[i + 1] for i, lv in enumerate(LEVELS)}

    def level_shapes(self, height: int, width: int) -> dict[int, tuple[int, int, int]]:
        """level -> (C, H_i, W_i) for an input of the given size."""
        k = 2 ** self.extra_pool
        return {lv: (self.widths[i + 1], height // (2 ** lv * k), width // (2 ** lv * k))
                for i, lv in enumerate(LEVELS)}


def _conv_param(rng, cout, cin, k, name):
    fan_in = cin * k * k
    w = Parameter(rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / fan_in), name=name + ".w")
    b = Parameter(np.zeros(cout), name=name + ".b")
    return w, b


class Encoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        if len(cfg.widths) != 5:
            raise ValueError(f"enc.widths needs 5 entries (stem + 4 stages), got {cfg.widths}")
        if cfg.blocks < 1:
            raise ValueError("enc.blocks must be >= 1")
        self.cfg = cfg
        w = cfg.widths
        self.stem = _conv_param(rng, w[0], 3, 3, "enc.stem")
        self.stages = []
        for s in range(4):
            blocks = [_conv_param(rng, w[s + 1], w[s], 3, f"enc.stage{s + 1}.0")]
            for j in range(1, cfg.blocks):
                blocks.append(_conv_param(rng, w[s + 1], w[s + 1], 3, f"enc.stage{s + 1}.{j}"))
            self.stages.append(blocks)
        c3 = cfg.level_channels()[3]
        self.aux_w = Parameter(rng.standard_normal((cfg.num_classes, c3)) * np.sqrt(1.0 / c3),
                               name="enc.aux.w")
        self.aux_b = Parameter(np.zeros(cfg.num_classes), name="enc.aux.b")

    def parameters(self) -> list[Parameter]:
        out = list(self.stem)
        for blocks in self.stages:
            for wb in blocks:
                out += list(wb)
        return out + [self.aux_w, self.aux_b]

    def check_size(self, height: int, width: int) -> None:
        m = self.cfg.multiple
        if height % m or width % m:
            raise ValueError(f"input {height}x{width} must be divisible by {m} "
                             f"(32 * 2**extra_pool with extra_pool={self.cfg.extra_pool})")

    def __call__(self, images: Tensor) -> dict[int, Tensor]:
        """(B, 3, H, W) images in [0, 1] -> {level: (B, C, H_i, W_i)}."""
        self.check_size(*images.shape[2:])
        x = Tensor(images.data - 0.5)
        x = T.relu(T.conv2d(x, *self.stem, stride=2, pad=1))
        for _ in range(self.cfg.extra_pool):
            x = T.avgpool2d(x, 2)
        feats = {}
        for lv, blocks in zip(LEVELS, self.stages):
            for j, (w, b) in enumerate(blocks):
                x = T.relu(T.conv2d(x, w, b, stride=2 if j == 0 else 1, pad=1))
            feats[lv] = x
        return feats

    def aux(self, f3: Tensor) -> Tensor:
        """1x1 classifier on F_3 -> (B, N, H_3, W_3)."""
        return T.conv1x1(f3, self.aux_w, self.aux_b)

    def flops(self, height: int, width: int) -> int:
        """Convolution FLOPs (2 per MAC, 1 per bias add) for one image."""
        total = 0
        h, w = height // 2, width // 2
        total += h * w * (2 * 3 * 9 * self.cfg.widths[0] + self.cfg.widths[0])
        h //= 2 ** self.cfg.extra_pool
        w //= 2 ** self.cfg.extra_pool
        for blocks in self.stages:
            h, w = h // 2, w // 2
            for wt, _ in blocks:
                cout, cin = wt.shape[:2]
                total += h * w * (2 * cin * 9 * cout + cout)
        return total


def encode_image(encoder: Encoder, image: np.ndarray) -> dict[int, FeatureGrid]:
    """Pyramid of FeatureGrids for one (3, H, W) image."""
    feats = encoder(Tensor(np.asarray(image, dtype=T.get_dtype())[None]))
    return {lv: FeatureGrid(lv, f.data[0]) for lv, f in feats.items()}


def aux_logits(encoder: Encoder, f3: FeatureGrid) -> np.ndarray:
    return encoder.aux(Tensor(f3.values[None])).data[0]


def downsample_labels(labels: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    """Nearest-neighbour label resampling at pixel centers; labels stay categorical."""
    H, W = labels.shape[-2:]
    ri = np.minimum(((np.arange(h_out) + 0.5) * H / h_out).astype(np.int64), H - 1)
    ci = np.minimum(((np.arange(w_out) + 0.5) * W / w_out).astype(np.int64), W - 1)
    return labels[..., ri[:, None], ci[None, :]]
