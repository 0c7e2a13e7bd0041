"""Run configuration: one record per concern, addressable by dotted keys."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .aligners import KINDS
from .posenc import MODES, freqs_for_dim


class ConfigError(ValueError):
    pass


@dataclass
class EncSection:
    widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 128])
    blocks: int = 2
    extra_pool: int = 0


@dataclass
class HeadSection:
    levels: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    proj_dim: int = 64
    mlp_widths: list[int] = field(default_factory=lambda: [256, 256])
    chunk_size: int = 8192


@dataclass
class PeSection:
    mode: str = "sine+cosine-learned"
    total_dim: int = 24
    learned: bool | None = None
    share_across_levels: bool = False


@dataclass
class AlignSection:
    kind: str = "ifa"
    fpn_dim: int = 256


@dataclass
class TrainConfig:
    lr0: float = 0.04
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    max_iter: int = 2000
    batch_size: int = 2
    crop: list[int] = field(default_factory=lambda: [64, 64])
    aux_weight: float = 0.4
    ohem_threshold: float = 0.7
    ohem_min_kept_fraction: float = 1 / 16
    seed: int = 0
    query_samples: int = 1024


@dataclass
class DataSection:
    seed: int = 0
    train_size: int = 2000
    val_size: int = 8
    eval_size: int = 32


@dataclass
class LogSection:
    interval: int = 100
    wall_ms: bool = False


@dataclass
class RunConfig:
    num_classes: int = 5
    precision: str = "float32"
    enc: EncSection = field(default_factory=EncSection)
    head: HeadSection = field(default_factory=HeadSection)
    pe: PeSection = field(default_factory=PeSection)
    align: AlignSection = field(default_factory=AlignSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    log: LogSection = field(default_factory=LogSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        t = self.train

        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(self.num_classes >= 2, "num_classes", "must be >= 2")
        need(self.precision in ("float32", "float64"), "precision", "float32 or float64")
        need(t.lr0 > 0, "train.lr0", f"lr0 must be > 0, got {t.lr0}")
        need(0 <= t.momentum < 1, "train.momentum", "must be in [0, 1)")
        need(t.weight_decay >= 0, "train.weight_decay", "must be >= 0")
        need(t.power > 0, "train.power", "must be > 0")
        need(t.max_iter >= 0, "train.max_iter", "must be >= 0")
        need(t.batch_size >= 1, "train.batch_size", "must be >= 1")
        need(len(t.crop) == 2 and min(t.crop) >= 1, "train.crop", "must be [H, W]")
        need(t.aux_weight >= 0, "train.aux_weight", "must be >= 0")
        need(0 < t.ohem_threshold < 1, "train.ohem_threshold", "must be in (0, 1)")
        need(0 < t.ohem_min_kept_fraction <= 1, "train.ohem_min_kept_fraction",
             "must be in (0, 1]")
        need(t.query_samples >= 1, "train.query_samples", "must be >= 1")
        need(self.enc.extra_pool >= 0, "enc.extra_pool", "must be >= 0")
        need(len(self.enc.widths) == 5, "enc.widths", "needs 5 entries")
        need(self.enc.blocks >= 1, "enc.blocks", "must be >= 1")
        multiple = 32 * 2 ** self.enc.extra_pool
        need(t.crop[0] % multiple == 0 and t.crop[1] % multiple == 0, "train.crop",
             f"must be divisible by {multiple} for enc.extra_pool={self.enc.extra_pool}")
        need(self.head.levels == [2, 3, 4, 5], "head.levels", "only [2, 3, 4, 5] is built")
        need(self.head.proj_dim >= 1, "head.proj_dim", "must be >= 1")
        need(self.head.chunk_size >= 1, "head.chunk_size", "must be >= 1")
        need(self.pe.mode in MODES, "pe.mode", f"must be one of {MODES}")
        try:
            freqs_for_dim(self.pe.mode, self.pe.total_dim)
        except ValueError as exc:
            raise ConfigError(f"pe.total_dim: {exc}") from None
        need(self.align.kind in KINDS, "align.kind", f"must be one of {KINDS}")
        need(self.align.fpn_dim >= 1, "align.fpn_dim", "must be >= 1")
        need(self.log.interval >= 1, "log.interval", "must be >= 1")
        need(self.data.train_size >= 1 and self.data.val_size >= 1
             and self.data.eval_size >= 1, "data", "sizes must be >= 1")
        return self


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def from_dict(d: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in d.items():
        set_key(cfg, key, value)
    return cfg


def set_key(cfg: RunConfig, key: str, value) -> None:
    """Assign ``value`` at dotted ``key`` (a nested dict is also accepted)."""
    head, _, rest = key.partition(".")
    if head not in _SECTIONS:
        raise ConfigError(f"{key}: unknown config key")
    if not rest:
        if isinstance(value, dict):
            for sub, v in value.items():
                set_key(cfg, f"{head}.{sub}", v)
            return
        if not isinstance(getattr(cfg, head), (int, float, str)):
            raise ConfigError(f"{key}: is a section, give a mapping")
        setattr(cfg, head, _coerce(key, getattr(cfg, head), value))
        return
    section = getattr(cfg, head)
    if not hasattr(section, "__dataclass_fields__") or rest not in section.__dataclass_fields__:
        raise ConfigError(f"{key}: unknown config key")
    setattr(section, rest, _coerce(key, getattr(section, rest), value))


def _coerce(key: str, current, value):
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if current is None:
        return value
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(current, (int, float)) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(current, int) and not isinstance(current, bool) and float(value) != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return type(current)(value)
    if isinstance(current, list) and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    return copy.deepcopy(value)


def load(path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config; ``overrides`` (dotted key -> value) win."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    profile = raw.pop("profile", None)
    if profile is not None and profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile!r}")
    cfg = from_dict(PROFILES[profile]) if profile else RunConfig()
    for key, value in raw.items():
        set_key(cfg, key, value)
    for key, value in (overrides or {}).items():
        set_key(cfg, key, value)
    return cfg.validate()


PROFILES: dict[str, dict] = {
    "desk": {},
    # Hyperparameters of the full Cityscapes run; documented, not run here.
    "cityscapes-paper": {
        "num_classes": 19,
        "train.lr0": 0.01,
        "train.weight_decay": 5e-4,
        "train.momentum": 0.9,
        "train.power": 0.9,
        # 769 in the original setup; the encoder needs a multiple of 32
        "train.crop": [768, 768],
        "train.batch_size": 16,
        "train.max_iter": 18000,
    },
}
