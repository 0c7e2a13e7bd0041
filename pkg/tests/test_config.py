import json

import pytest

from ifa.config import PROFILES, ConfigError, RunConfig, from_dict, load, set_key


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.align.fpn_dim == cfg.head.mlp_widths[0]


def test_dict_roundtrip():
    cfg = RunConfig()
    cfg.pe.mode = "coord-only"
    cfg.train.crop = [128, 128]
    assert from_dict(cfg.to_dict()) == cfg


def test_set_key_parses_strings():
    cfg = RunConfig()
    set_key(cfg, "train.crop", "[96, 96]")
    set_key(cfg, "pe.learned", "false")
    set_key(cfg, "train.lr0", "0.02")
    assert cfg.train.crop == [96, 96] and cfg.pe.learned is False and cfg.train.lr0 == 0.02


@pytest.mark.parametrize("key,value,fragment", [
    ("train.lr0", -1.0, "lr0"),
    ("train.max_iter", 2.5, "train.max_iter"),
    ("train.crop", [70, 64], "train.crop"),
    ("pe.total_dim", 10, "pe.total_dim"),
    ("pe.mode", "fourier", "pe.mode"),
    ("align.kind", "bicubic", "align.kind"),
    ("train.ohem_threshold", 1.5, "ohem_threshold"),
    ("train.bogus", 1, "train.bogus"),
    ("bogus", 1, "bogus"),
])
def test_invalid_values_name_their_key(key, value, fragment):
    cfg = RunConfig()
    with pytest.raises(ConfigError, match=fragment):
        set_key(cfg, key, value)
        cfg.validate()


def test_extra_pool_changes_required_multiple():
    cfg = RunConfig()
    cfg.enc.extra_pool = 2
    with pytest.raises(ConfigError, match="divisible by 128"):
        cfg.validate()
    cfg.train.crop = [128, 128]
    cfg.validate()


def test_load_profile_then_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"profile": "cityscapes-paper", "train": {"batch_size": 8}}))
    cfg = load(p, {"train.max_iter": "100"})
    assert cfg.num_classes == 19 and cfg.train.crop == [768, 768]
    assert cfg.train.batch_size == 8 and cfg.train.max_iter == 100


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "missing.json")
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"profile": "imagenet"}))
    with pytest.raises(ConfigError, match="profile"):
        load(p)


def test_profiles_validate():
    for name, overrides in PROFILES.items():
        from_dict(overrides).validate()
