"""Binary PPM (P6) and PGM (P5) with 8-bit samples."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` header tokens (comments skipped) and the offset after them."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ImageFormatError("truncated header")
        out.append(data[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte before the raster


def _read(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    toks, off = _tokens(data, 4)
    if toks[0] != magic:
        raise ImageFormatError(f"{path}: expected {magic.decode()} header, got {toks[0]!r}")
    w, h, maxval = (int(t) for t in toks[1:])
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    n = w * h * channels
    raster = data[off:off + n]
    if len(raster) != n:
        raise ImageFormatError(f"{path}: raster has {len(raster)} bytes, expected {n}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) uint8."""
    return _read(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """(H, W) uint8."""
    return _read(path, b"P5", 1)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ImageFormatError("PPM needs an (H, W, 3) uint8 array")
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ImageFormatError("PGM needs an (H, W) uint8 array")
    h, w = gray.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + gray.tobytes())


def image_to_chw(rgb: np.ndarray) -> np.ndarray:
    return rgb.astype(np.float64).transpose(2, 0, 1) / 255.0


def chw_to_image(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
