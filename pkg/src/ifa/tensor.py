"""Dense tensors with a fixed set of differentiable ops.

Every op computes its forward value with numpy and closes over exactly the
activations its backward rule needs. ``backward`` walks the recorded graph in
reverse topological order and accumulates into ``Parameter.grad`` (``+=``),
so several losses can be backpropagated before a single optimizer step.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

IGNORE_LABEL = 255

_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class GraphError(RuntimeError):
    """Raised when backward is requested on an invalid graph."""


def set_precision(name: str) -> None:
    """Select the global float type: ``"float64"`` (tests) or ``"float32"``."""
    global _DTYPE
    if name not in ("float64", "float32"):
        raise ValueError(f"unknown precision {name!r}")
    _DTYPE = np.dtype(name).type


def get_dtype():
    return _DTYPE


class Tensor:
    """A value in the graph; ``data`` is a row-major numpy array."""

    __slots__ = ("data", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str | None = None,
                 parents: tuple = (), backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"


class Parameter(Tensor):
    """A trainable leaf; ``grad`` always has the value's shape."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name: str = "", requires_grad: bool = True):
        super().__init__(np.array(data, dtype=_DTYPE), requires_grad=requires_grad)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def _node(data, op: str, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    # Untracked when no input needs a gradient: no parents, no saved activations.
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op, tuple(parents), backward)
    return Tensor(data, False, op)


def _check(cond: bool, op: str, msg: str) -> None:
    if not cond:
        raise ShapeError(f"{op}: {msg}")


# ---------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable ``Parameter.grad``."""
    if not isinstance(loss, Tensor) or loss.op is None:
        raise GraphError("backward called on a tensor that no forward op produced")
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ------------------------------------------------------------- dense ops

def matmul(a: Tensor, b: Tensor, row_stable: bool = False) -> Tensor:
    """(M, K) @ (K, N).

    ``row_stable`` evaluates with a fixed per-row summation order so a row's
    result does not depend on how many other rows share the call.
    """
    _check(a.data.ndim == 2 and b.data.ndim == 2, "matmul",
           f"expected 2-D operands, got {a.shape} and {b.shape}")
    _check(a.shape[1] == b.shape[0], "matmul",
           f"inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    A, B = a.data, b.data
    out = np.einsum("mk,kn->mn", A, B) if row_stable else A @ B

    def back(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _node(out, "matmul", (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis."""
    bias = b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]
    _check(a.shape == b.shape or bias, "add",
           f"shapes {a.shape} and {b.shape} are not addable")
    out = a.data + b.data
    red = tuple(range(a.data.ndim - 1)) if bias and a.shape != b.shape else None

    def back(g):
        gb = g if red is None else g.sum(axis=red)
        return g, gb

    return _node(out, "add", (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    return _node(a.data * s, "scale", (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0), "relu", (a,), lambda g: (g * mask,))


def sin(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.sin(x), "sin", (a,), lambda g: (g * np.cos(x),))


def cos(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.cos(x), "cos", (a,), lambda g: (-g * np.sin(x),))


def concat_lastdim(tensors: Sequence[Tensor]) -> Tensor:
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        _check(t.shape[:-1] == lead, "concat-lastdim",
               f"leading dims {t.shape[:-1]} differ from {lead}")
    widths = [t.shape[-1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=-1)
    cuts = np.cumsum(widths)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _node(out, "concat-lastdim", tuple(tensors), back)


def take_lastdim(a: Tensor, index: np.ndarray) -> Tensor:
    """Select/permute columns of the last axis by a fixed integer index."""
    index = np.asarray(index)
    n = a.shape[-1]

    def back(g):
        full = np.zeros(g.shape[:-1] + (n,), dtype=g.dtype)
        np.add.at(full, (..., index), g)
        return (full,)

    return _node(a.data[..., index], "take-lastdim", (a,), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(src),))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    src = a.shape
    return _node(np.asarray(a.data.sum()), "sum", (a,),
                 lambda g: (np.broadcast_to(g, src).copy(),))


# ---------------------------------------------------------- spatial ops

def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int = 0) -> Tensor:
    """Cross-correlation of (B, C, H, W) with (O, C, kh, kw) weights."""
    _check(x.data.ndim == 4 and w.data.ndim == 4, "conv2d",
           f"expected 4-D input/kernel, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = w.shape
    _check(C == Ck, "conv2d", f"input channels {C} != kernel channels {Ck}")
    _check(H + 2 * pad >= kh and W + 2 * pad >= kw, "conv2d",
           f"padded input {H + 2 * pad}x{W + 2 * pad} smaller than kernel {kh}x{kw}")
    if b is not None:
        _check(b.shape == (O,), "conv2d", f"bias shape {b.shape} != ({O},)")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    Ho, Wo = _conv_out(H, kh, stride, pad), _conv_out(W, kw, stride, pad)
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = cols[:, :, :Ho, :Wo]
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    wd = w.data

    def back(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.tensordot(g, wd, axes=([1], [0]))  # B, Ho, Wo, C, kh, kw
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
            gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, "conv2d", parents, back)


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-pixel linear map of (B, C, H, W) by (O, C) weights."""
    _check(x.data.ndim == 4 and w.data.ndim == 2, "conv1x1",
           f"expected 4-D input and 2-D weight, got {x.shape} and {w.shape}")
    _check(x.shape[1] == w.shape[1], "conv1x1",
           f"input channels {x.shape[1]} != weight columns {w.shape[1]}")
    X, Wd = x.data, w.data
    out = np.einsum("oc,bchw->bohw", Wd, X, optimize=True)
    if b is not None:
        _check(b.shape == (w.shape[0],), "conv1x1", f"bias shape {b.shape}")
        out = out + b.data[None, :, None, None]

    def back(g):
        gx = np.einsum("oc,bohw->bchw", Wd, g, optimize=True) if x.requires_grad else None
        gw = np.einsum("bohw,bchw->oc", g, X, optimize=True) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, "conv1x1", parents, back)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2,
                     pad: int = 0, output_pad: int = 0) -> Tensor:
    """Transposed convolution of (B, C, H, W) with (C, O, kh, kw) weights.

    Output side is ``(H - 1) * stride - 2 * pad + kh + output_pad``.
    """
    _check(x.data.ndim == 4 and w.data.ndim == 4, "transposed-conv2d",
           f"expected 4-D input/kernel, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    Ck, O, kh, kw = w.shape
    _check(C == Ck, "transposed-conv2d", f"input channels {C} != kernel channels {Ck}")
    Hf = (H - 1) * stride + kh + output_pad
    Wf = (W - 1) * stride + kw + output_pad
    Ho, Wo = Hf - 2 * pad, Wf - 2 * pad
    _check(Ho > 0 and Wo > 0, "transposed-conv2d", f"empty output {Ho}x{Wo}")
    X, Wd = x.data, w.data
    cols = np.tensordot(X, Wd, axes=([1], [0]))  # B, H, W, O, kh, kw
    full = np.zeros((B, O, Hf, Wf), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * H:stride, j:j + stride * W:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    out = full[:, :, pad:pad + Ho, pad:pad + Wo]
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        gfull = np.zeros((B, O, Hf, Wf), dtype=g.dtype)
        gfull[:, :, pad:pad + Ho, pad:pad + Wo] = g
        win = sliding_window_view(gfull, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        win = win[:, :, :H, :W]  # B, O, H, W, kh, kw
        gx = (np.tensordot(win, Wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
              if x.requires_grad else None)
        gw = np.tensordot(X, win, axes=([0, 2, 3], [0, 2, 3])) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, "transposed-conv2d", parents, back)


def avgpool2d(x: Tensor, k: int = 2) -> Tensor:
    B, C, H, W = x.shape
    _check(H % k == 0 and W % k == 0, "avgpool2d",
           f"spatial size {H}x{W} not divisible by window {k}")
    out = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return _node(out, "avgpool2d", (x,), back)


def maxpool_select(x: Tensor, k: int = 2) -> Tensor:
    """k x k max pooling; the gradient goes to the first maximum of each window."""
    B, C, H, W = x.shape
    _check(H % k == 0 and W % k == 0, "maxpool-select",
           f"spatial size {H}x{W} not divisible by window {k}")
    win = x.data.reshape(B, C, H // k, k, W // k, k).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(B, C, H // k, W // k, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(B, C, H // k, W // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (gw.reshape(B, C, H, W),)

    return _node(out, "maxpool-select", (x,), back)


def gather_rows(fmap: Tensor, b: np.ndarray, r: np.ndarray, c: np.ndarray) -> Tensor:
    """Pick one C-vector per query from a (B, C, H, W) map -> (Q, C)."""
    B, C, H, W = fmap.shape
    _check(len(b) == len(r) == len(c), "gather-rows", "index arrays differ in length")
    if len(r):
        _check(r.max() < H and c.max() < W and b.max() < B, "gather-rows",
               f"index out of range for map {fmap.shape}")
    out = fmap.data[b, :, r, c]

    def back(g):
        gf = np.zeros((B, H, W, C), dtype=g.dtype)
        np.add.at(gf, (b, r, c), g)
        return (gf.transpose(0, 3, 1, 2),)

    return _node(out, "gather-rows", (fmap,), back)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Pixel-center convention with edge replication.
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def _nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    src = np.minimum(np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(int), n_in - 1)
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), src] = 1.0
    return m


def _resize(x: Tensor, my: np.ndarray, mx: np.ndarray, op: str) -> Tensor:
    _check(x.data.ndim == 4, op, f"expected (B, C, H, W), got {x.shape}")
    my = my.astype(x.data.dtype)
    mx = mx.astype(x.data.dtype)
    out = my @ x.data @ mx.T

    def back(g):
        return (my.T @ g @ mx,)

    return _node(out, op, (x,), back)


def bilinear_upsample(x: Tensor, h_out: int, w_out: int) -> Tensor:
    H, W = x.shape[2:]
    return _resize(x, _bilinear_matrix(H, h_out), _bilinear_matrix(W, w_out),
                   "bilinear-upsample")


def nearest_upsample(x: Tensor, h_out: int, w_out: int) -> Tensor:
    H, W = x.shape[2:]
    return _resize(x, _nearest_matrix(H, h_out), _nearest_matrix(W, w_out),
                   "nearest-upsample")


# ----------------------------------------------------------------- loss

def _class_last(logits: np.ndarray) -> np.ndarray:
    if logits.ndim == 2:
        return logits
    n = logits.shape[1]
    return np.moveaxis(logits, 1, -1).reshape(-1, n)


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def pixel_xent(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-pixel cross-entropy (no graph); ignore-label pixels get NaN."""
    z = _class_last(np.asarray(logits))
    y = np.asarray(labels).reshape(-1)
    valid = y != IGNORE_LABEL
    out = np.full(y.shape, np.nan, dtype=z.dtype)
    if valid.any():
        lp = log_softmax_rows(z[valid])
        out[valid] = -lp[np.arange(len(lp)), y[valid]]
    return out


def softmax_xent(logits: Tensor, labels: np.ndarray,
                 weights: np.ndarray | None = None) -> Tensor:
    """Weighted sum of per-pixel cross-entropies.

    ``logits`` is (Q, N) or (B, N, H, W) with classes on axis 1; ``labels``
    holds integer ids of the matching non-class shape. Without ``weights``
    the loss is the mean over pixels whose label is not ``IGNORE_LABEL``.
    """
    shape = logits.shape
    n = shape[1]
    expect = (shape[0],) if len(shape) == 2 else (shape[0],) + shape[2:]
    labels = np.asarray(labels)
    _check(labels.shape == expect, "softmax-xent",
           f"labels shape {labels.shape} does not match logits {shape}")
    y = labels.reshape(-1)
    valid = y != IGNORE_LABEL
    if weights is None:
        count = int(valid.sum())
        if count == 0:
            raise ValueError("no valid pixels")
        wt = valid / count
    else:
        wt = np.asarray(weights, dtype=float).reshape(-1) * valid
    _check(not (valid & (y >= n)).any(), "softmax-xent", f"label id >= {n} classes")
    z = _class_last(logits.data)
    lp = log_softmax_rows(z)
    ys = np.where(valid, y, 0)
    rows = np.arange(len(ys))
    loss = -(wt * lp[rows, ys]).sum()

    def back(g):
        d = np.exp(lp)
        d[rows, ys] -= 1.0
        d *= (wt * g)[:, None]
        d = d.astype(logits.data.dtype, copy=False)
        if len(shape) == 2:
            return (d,)
        b, _, *spatial = shape
        return (np.moveaxis(d.reshape(b, *spatial, n), -1, 1),)

    return _node(np.asarray(loss, dtype=logits.data.dtype), "softmax-xent", (logits,), back)
