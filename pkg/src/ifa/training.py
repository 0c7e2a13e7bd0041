"""Losses, optimizer, metrics and the training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import RunConfig, TrainConfig
from .data import batch as synth_batch
from .data import gen_synth
from .encoder import downsample_labels
from .model import Segmenter
from .tensor import IGNORE_LABEL, Parameter, Tensor

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["iter", "lr", "loss_main", "loss_aux", "val_miou", "wall_ms"]
VAL_OFFSET = 1_000_000
EVAL_OFFSET = 2_000_000


class TrainingDiverged(RuntimeError):
    def __init__(self, it: int, lr: float, history: list[float]):
        self.iter, self.lr, self.history = it, lr, history
        super().__init__(f"non-finite loss at iter {it} (lr={lr:.3g}); "
                         f"recent losses: {[round(h, 5) for h in history]}")


def poly_lr(cfg: TrainConfig, it: int) -> float:
    if not 0 <= it <= cfg.max_iter:
        raise ValueError(f"iter {it} outside [0, {cfg.max_iter}]")
    if cfg.max_iter == 0:
        return cfg.lr0
    return cfg.lr0 * (1.0 - it / cfg.max_iter) ** cfg.power


def ohem_weights(ce: np.ndarray, labels: np.ndarray, threshold: float,
                 min_kept: int) -> np.ndarray:
    """Per-pixel weights averaging the cross-entropy over the kept hard pixels.

    A pixel is hard when its true-class probability is below ``threshold``;
    if fewer than ``min_kept`` are hard, the ``min_kept`` highest-loss valid
    pixels are kept instead.
    """
    if min_kept < 1:
        raise ValueError("min_kept must be >= 1")
    y = np.asarray(labels).reshape(-1)
    valid = y != IGNORE_LABEL
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no valid pixels")
    keep = valid & (np.exp(-np.nan_to_num(ce, nan=0.0)) < threshold)
    if keep.sum() < min_kept:
        k = min(min_kept, n_valid)
        vidx = np.flatnonzero(valid)
        order = np.argsort(-ce[vidx], kind="stable")
        keep = np.zeros_like(valid)
        keep[vidx[order[:k]]] = True
    return keep / keep.sum()


def ohem_xent(logits: Tensor, labels: np.ndarray, threshold: float = 0.7,
              min_kept: int = 1) -> Tensor:
    ce = T.pixel_xent(logits.data, labels)
    weights = ohem_weights(ce, labels, threshold, min_kept)
    return T.softmax_xent(logits, labels, weights)


class SGD:
    """Momentum SGD with L2 weight decay folded into the velocity."""

    def __init__(self, params: list[Parameter], cfg: TrainConfig):
        self.params = [p for p in params if p.requires_grad]
        self.cfg = cfg
        self.velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self, it: int) -> float:
        lr = poly_lr(self.cfg, it)
        for p in self.params:
            v = self.velocity[id(p)]
            v *= self.cfg.momentum
            v += p.grad + self.cfg.weight_decay * p.data
            p.data -= lr * v
            p.zero_grad()
        return lr


def sgd_step(opt: SGD, it: int) -> float:
    return opt.step(it)


# ------------------------------------------------------------------ metrics

def confusion(pred: np.ndarray, gt: np.ndarray, n: int) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = gt != IGNORE_LABEL
    return np.bincount(gt[valid].astype(np.int64) * n + pred[valid].astype(np.int64),
                       minlength=n * n).reshape(n, n)


def miou_from_confusion(conf: np.ndarray) -> tuple[float, np.ndarray]:
    inter = np.diag(conf).astype(float)
    union = conf.sum(0) + conf.sum(1) - np.diag(conf)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    in_gt = conf.sum(1) > 0
    return float(np.mean(iou[in_gt])) if in_gt.any() else float("nan"), iou


def miou(pred: np.ndarray, gt: np.ndarray, n: int) -> tuple[float, np.ndarray]:
    """Mean IoU over classes present in ``gt``; per-class IoU (NaN when absent)."""
    return miou_from_confusion(confusion(pred, gt, n))


def evaluate(model: Segmenter, seed: int, offset: int, count: int,
             row_stable: bool = False) -> float:
    cfg = model.cfg
    H, W = cfg.train.crop
    n = cfg.num_classes
    conf = np.zeros((n, n), dtype=np.int64)
    for i in range(count):
        s = gen_synth(seed, offset + i, n, H, W)
        conf += confusion(model.predict(s.image, row_stable=row_stable), s.labels, n)
    return miou_from_confusion(conf)[0]


# ----------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: Segmenter
    rows: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    final_miou: float = float("nan")

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow(row)
        return buf.getvalue()


def train_step(model: Segmenter, images: np.ndarray, labels: np.ndarray,
               rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
    """Forward both losses and backpropagate their weighted sum."""
    cfg = model.cfg
    feats = model.features(images)
    logits, target = model.train_logits(feats, labels, rng)
    valid = int((target != IGNORE_LABEL).sum())
    min_kept = max(1, int(valid * cfg.train.ohem_min_kept_fraction))
    main = ohem_xent(logits, target, cfg.train.ohem_threshold, min_kept)
    aux_logits = model.encoder.aux(feats[3])
    aux_labels = downsample_labels(labels, *aux_logits.shape[2:])
    aux = T.softmax_xent(aux_logits, aux_labels)
    total = T.add(main, T.scale(aux, cfg.train.aux_weight))
    T.backward(total)
    return total, main, aux


def train(cfg: RunConfig, out_dir=None, final_eval: bool = True) -> TrainResult:
    """Run ``cfg.train.max_iter`` SGD steps; optionally write checkpoint + CSV."""
    cfg.validate()
    previous = np.dtype(T.get_dtype()).name
    T.set_precision(cfg.precision)
    try:
        return _train(cfg, out_dir, final_eval)
    finally:
        T.set_precision(previous)


def _train(cfg: RunConfig, out_dir, final_eval: bool) -> TrainResult:
    tc = cfg.train
    model = Segmenter(cfg)
    opt = SGD(model.parameters(), tc)
    rng = np.random.default_rng([tc.seed, 1])
    H, W = tc.crop
    result = TrainResult(model)
    acc_main = acc_aux = 0.0
    acc_n = 0
    t0 = time.perf_counter()
    for it in range(tc.max_iter):
        idx = rng.integers(0, cfg.data.train_size, tc.batch_size)
        flips = rng.random(tc.batch_size) < 0.5
        images, labels = synth_batch(cfg.data.seed, idx, cfg.num_classes, H, W, flips)
        total, main, aux = train_step(model, images, labels, rng)
        loss = float(total.data)
        result.losses.append(loss)
        if not math.isfinite(loss):
            raise TrainingDiverged(it, poly_lr(tc, it), result.losses[-10:])
        lr = opt.step(it)
        acc_main += float(main.data)
        acc_aux += float(aux.data)
        acc_n += 1
        done = it + 1
        if done % cfg.log.interval == 0 or done == tc.max_iter:
            val = evaluate(model, cfg.data.seed, VAL_OFFSET, cfg.data.val_size)
            wall = int((time.perf_counter() - t0) * 1000) if cfg.log.wall_ms else 0
            result.rows.append({
                "iter": done, "lr": f"{lr:.6g}", "loss_main": f"{acc_main / acc_n:.6f}",
                "loss_aux": f"{acc_aux / acc_n:.6f}", "val_miou": f"{val:.6f}",
                "wall_ms": wall})
            log.info("iter %d lr %.4g main %.4f aux %.4f val_miou %.4f", done, lr,
                     acc_main / acc_n, acc_aux / acc_n, val)
            acc_main = acc_aux = 0.0
            acc_n = 0
    if final_eval:
        result.final_miou = evaluate(model, cfg.data.seed, EVAL_OFFSET, cfg.data.eval_size,
                                     row_stable=True)
    if out_dir is not None:
        write_outputs(result, cfg, Path(out_dir))
    return result


def write_outputs(result: TrainResult, cfg: RunConfig, out_dir: Path) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config": cfg.to_dict()}
    ckpt, blob = checkpoint.save(out_dir / "checkpoint.json", result.model.state(),
                                 dtype=cfg.precision, meta=meta)
    metrics = out_dir / "metrics.csv"
    metrics.write_text(result.metrics_csv())
    return {"checkpoint": ckpt, "checkpoint_blob": blob, "metrics": metrics}
