"""Grids of hermetic training runs summarised as one CSV row per cell."""

from __future__ import annotations

import copy
import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig, set_key
from .training import train

log = logging.getLogger(__name__)

BENCH_COLUMNS = ["kind", "extra_pool", "seed", "miou", "params", "flops"]


@dataclass(frozen=True)
class Cell:
    kind: str
    extra_pool: int
    seed: int
    overrides: tuple = ()

    def config(self, base: RunConfig) -> RunConfig:
        cfg = copy.deepcopy(base)
        cfg.align.kind = self.kind
        cfg.enc.extra_pool = self.extra_pool
        cfg.train.seed = self.seed
        for key, value in self.overrides:
            set_key(cfg, key, value)
        return cfg.validate()


def run_cell(base: RunConfig, cell: Cell) -> dict:
    cfg = cell.config(base)
    result = train(cfg)
    model = result.model
    H, W = cfg.train.crop
    return {"kind": cell.kind, "extra_pool": cell.extra_pool, "seed": cell.seed,
            "miou": f"{result.final_miou:.6f}", "params": model.total_params(),
            "flops": model.flops(H, W)["total"]}


def _safe_run(args):
    base, cell = args
    try:
        return run_cell(base, cell), None
    except Exception as exc:  # recorded per cell, the grid carries on
        log.exception("cell %s failed", cell)
        return None, f"{type(exc).__name__}: {exc}"


def run_grid(base: RunConfig, cells: list[Cell], jobs: int = 1):
    """Train every cell; returns (rows, failures) in cell order."""
    work = [(base, c) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(_safe_run, work))
    else:
        outcomes = [_safe_run(w) for w in work]
    rows, failures = [], []
    for cell, (row, err) in zip(cells, outcomes):
        if err is None:
            rows.append(row)
        else:
            failures.append({"kind": cell.kind, "extra_pool": cell.extra_pool,
                             "seed": cell.seed, "error": err})
    return rows, failures


def cartesian(kinds, seeds, pools, overrides: tuple = ()) -> list[Cell]:
    return [Cell(k, p, s, overrides) for k in kinds for p in pools for s in seeds]


def rows_to_csv(rows: list[dict], columns=BENCH_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def mean_miou(rows: list[dict], **match) -> float:
    vals = [float(r["miou"]) for r in rows
            if all(str(r[k]) == str(v) for k, v in match.items())]
    if not vals:
        raise KeyError(f"no bench rows match {match}")
    return sum(vals) / len(vals)


def write_csv(path, rows: list[dict], columns=BENCH_COLUMNS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows, columns))
    return path
