"""Seeded procedural segmentation scenes.

Classes pair up by colour: 1 and 2 share a warm base colour and differ only
by stripe orientation, 3 and 4 share a cool colour and differ by checker
versus smooth texture, so pixel colour alone does not separate them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_SIGMA = 0.1

_BASE = np.array([
    [0.45, 0.45, 0.45],
    [0.80, 0.35, 0.25],
    [0.80, 0.35, 0.25],
    [0.25, 0.40, 0.80],
    [0.25, 0.40, 0.80],
    [0.30, 0.75, 0.30],
    [0.85, 0.80, 0.25],
    [0.60, 0.30, 0.70],
])


@dataclass
class SynthSample:
    image: np.ndarray   # (3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (H, W) int64 class ids


def _base_color(cls: int) -> np.ndarray:
    if cls < len(_BASE):
        return _BASE[cls]
    return np.random.default_rng(cls).uniform(0.2, 0.8, 3)


def _texture(cls: int, yy: np.ndarray, xx: np.ndarray, phase: float) -> np.ndarray:
    kind = cls % 4
    if cls == 0:
        return np.zeros_like(xx)
    if kind == 1:
        return np.where(((yy + phase) // 2) % 2 == 0, 1.0, -1.0)
    if kind == 2:
        return np.where(((xx + phase) // 2) % 2 == 0, 1.0, -1.0)
    if kind == 3:
        return np.where(((yy + phase) // 3 + (xx + phase) // 3) % 2 == 0, 1.0, -1.0)
    return np.zeros_like(xx)


def _shape_mask(rng: np.random.Generator, H: int, W: int, yy, xx) -> np.ndarray:
    kind = rng.integers(3)
    cy, cx = rng.uniform(0, H), rng.uniform(0, W)
    if kind == 0:  # ellipse
        ry, rx = rng.uniform(0.08, 0.3) * H, rng.uniform(0.08, 0.3) * W
        th = rng.uniform(0, np.pi)
        dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    if kind == 1:  # axis-aligned rectangle
        hy, hx = rng.uniform(0.06, 0.25) * H, rng.uniform(0.06, 0.25) * W
        return (np.abs(yy + 0.5 - cy) <= hy) & (np.abs(xx + 0.5 - cx) <= hx)
    # slanted stripe
    th = rng.uniform(0, np.pi)
    half = rng.uniform(1.5, 0.08 * min(H, W) + 2.0)
    d = (xx + 0.5 - cx) * np.cos(th) + (yy + 0.5 - cy) * np.sin(th)
    return np.abs(d) <= half


def gen_synth(seed: int, index: int, num_classes: int, height: int, width: int) -> SynthSample:
    """Deterministic sample for ``(seed, index)``; always shows at least two classes."""
    rng = np.random.default_rng([seed, index])
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    labels = np.zeros((height, width), dtype=np.int64)
    n_shapes = int(rng.integers(3, 9))
    for _ in range(n_shapes):
        cls = int(rng.integers(1, num_classes))
        labels[_shape_mask(rng, height, width, yy, xx)] = cls
    if (labels == labels.flat[0]).all():
        # central block so the map never collapses to one class
        cls = 1 if labels.flat[0] == 0 else 0
        labels[height // 4: 3 * height // 4, width // 4: 3 * width // 4] = cls

    image = np.empty((3, height, width))
    jitter = rng.uniform(-0.08, 0.08, (num_classes, 3))
    phase = rng.integers(0, 6, num_classes)
    for cls in np.unique(labels):
        m = labels == cls
        tex = _texture(int(cls), yy, xx, float(phase[cls]))
        col = _base_color(int(cls)) + jitter[cls]
        for ch in range(3):
            image[ch][m] = col[ch] + 0.15 * tex[m]
    image += rng.normal(0.0, NOISE_SIGMA, image.shape)
    return SynthSample(np.clip(image, 0.0, 1.0).astype(np.float32), labels)


def batch(seed: int, indices, num_classes: int, height: int, width: int,
          flips=None) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (B, 3, H, W) images and (B, H, W) labels."""
    imgs, labs = [], []
    for j, idx in enumerate(indices):
        s = gen_synth(seed, int(idx), num_classes, height, width)
        img, lab = s.image, s.labels
        if flips is not None and flips[j]:
            img, lab = img[:, :, ::-1], lab[:, ::-1]
        imgs.append(img)
        labs.append(lab)
    return np.stack(imgs), np.stack(labs)
