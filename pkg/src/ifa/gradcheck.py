"""Finite-difference verification of hand-written backward rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, matmul, reshape, zero_grads


@dataclass
class GradReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def flagged(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.flagged

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"{k:40s} {v:.3e}{'  FLAGGED' if k in self.flagged else ''}"
                 for k, v in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the larger of the two max magnitudes."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradient_check(build: Callable[[], Tensor], params: Sequence[Parameter],
                   tolerance: float = 1e-4, eps: float = 1e-6,
                   max_entries: int | None = None, seed: int = 0) -> GradReport:
    """Compare analytic grads of ``build()`` with central differences.

    ``build`` must rebuild the graph from the current parameter values each
    call. With ``max_entries`` only that many randomly chosen entries per
    parameter are probed.
    """
    rng = np.random.default_rng(seed)
    trainable = [p for p in params if p.requires_grad]
    zero_grads(trainable)
    backward(build())
    analytic = {id(p): p.grad.copy() for p in trainable}
    zero_grads(trainable)

    report = GradReport(tolerance)
    for i, p in enumerate(trainable):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        for n, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + eps
            up = float(build().data)
            flat[j] = orig - eps
            down = float(build().data)
            flat[j] = orig
            numeric[n] = (up - down) / (2 * eps)
        name = p.name or f"param{i}"
        report.errors[name] = relative_error(analytic[id(p)].reshape(-1)[idx], numeric)
    return report


def jvp_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
              eps: float = 1e-6, seed: int = 0) -> float:
    """Relative error of the analytic directional derivative of ``<fn(x), u>``.

    ``u`` is a random cotangent and the direction is random; ``fn`` maps
    Parameters built from ``inputs`` to an output tensor.
    """
    rng = np.random.default_rng(seed)
    params = [Parameter(x.copy(), name=f"in{i}") for i, x in enumerate(inputs)]
    out = fn(*params)
    u = rng.standard_normal(out.shape)
    dirs = [rng.standard_normal(x.shape) for x in inputs]

    flat = reshape(out, (1, out.data.size))
    backward(matmul(flat, Tensor(u.reshape(-1, 1))))
    analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, dirs))

    def value(sign):
        ps = [Parameter(x + sign * eps * d) for x, d in zip(inputs, dirs)]
        return float((fn(*ps).data * u).sum())

    numeric = (value(1) - value(-1)) / (2 * eps)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
