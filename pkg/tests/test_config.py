"""Config loading: defaults, strict key checking, TOML/JSON parity, and the
dump round-trip every run artifact relies on."""

import json

import pytest

from taskmask import config as cfg_mod
from taskmask.config import ExperimentConfig, dump_config, load_config


def test_defaults_match_pinned_values():
    cfg = ExperimentConfig()
    assert cfg.train.tau == pytest.approx(0.07)
    assert cfg.masknet.s_max == 700.0
    assert cfg.masknet.lambda1 == 0.25
    assert cfg.masknet.lambda_rest == 0.1
    assert cfg.calib.iterations == 160
    assert cfg.calib.lr == pytest.approx(0.01)
    assert cfg.memory.per_class == 20
    assert cfg.seed == 0
    assert cfg.eval.mode == "til"
    assert not cfg.eval.calibrated


def test_task_lambda_switches_after_first_task():
    cfg = ExperimentConfig()
    assert cfg.task_lambda(1) == 0.25
    assert cfg.task_lambda(2) == 0.1
    assert cfg.task_lambda(5) == 0.1


def test_unknown_top_level_key_rejected():
    with pytest.raises(ValueError, match="extra"):
        ExperimentConfig.model_validate({"learning_rate": 0.1})


def test_unknown_nested_key_rejected():
    with pytest.raises(ValueError, match="extra"):
        ExperimentConfig.model_validate({"train": {"batchsize": 64}})


def test_out_of_range_values_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"train": {"tau": 0.0}})
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"data": {"val_fraction": 1.0}})
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"masknet": {"s_max": 0.5}})


def test_load_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 7\n[train]\nbatch = 32\n[data]\nsource = "synthetic"\n')
    cfg = load_config(p)
    assert cfg.seed == 7
    assert cfg.train.batch == 32
    # untouched sections keep defaults
    assert cfg.model.hidden_width == 256


def test_load_json_matches_toml(tmp_path):
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"seed": 7, "train": {"batch": 32}}))
    t = tmp_path / "c.toml"
    t.write_text("seed = 7\n[train]\nbatch = 32\n")
    assert load_config(j) == load_config(t)


def test_load_rejects_unknown_suffix(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 7\n")
    with pytest.raises(ValueError, match="unsupported config format"):
        load_config(p)


def test_load_rejects_unknown_key_in_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nepochs = 5\n")
    with pytest.raises(ValueError):
        load_config(p)


def test_dump_round_trip(tmp_path):
    cfg = ExperimentConfig.model_validate({"seed": 3, "masknet": {"s_max": 100.0}})
    p = tmp_path / "dumped.json"
    dump_config(cfg, p)
    assert load_config(p) == cfg


def test_augment_build_applies_overrides():
    cfg = ExperimentConfig()
    ac = cfg.augment.build(hflip_p=0.0, pad=0)
    assert ac.hflip_p == 0.0
    assert ac.pad == 0
    assert ac.rotations is True


def test_tomllib_fallback_is_loaded():
    # python 3.10 has no stdlib tomllib; either name must still parse
    assert hasattr(cfg_mod, "tomllib")
    assert cfg_mod.tomllib.loads("a = 1") == {"a": 1}
