import numpy as np
import pytest

from drivelab import config
from drivelab.config import ConfigError, default_config, emit_config, \
    load_config, parse_config_text


def test_defaults_reference_values():
    cfg = default_config()
    assert cfg.get("objective", "w_heading_err") == 30.0
    assert cfg.get("objective", "r_pedestrian") == 2.2
    assert cfg.get("objective", "r_ego") == 1.75
    assert cfg.get("world", "lane_width") == 3.75
    assert cfg.get("world", "veh_flow_per_hour") == 400.0
    assert sum(cfg.get("lights", "phase_durations")) == 120.0
    assert cfg.get("sensors", "camera_range") == 80.0
    assert cfg.get("sensors", "max_vehicles") == 10
    assert cfg.get("train", "d3") == 155
    assert cfg.get("train", "batch_size") == 256
    assert cfg.get("train", "lr_policy_start") == 3e-4
    assert cfg.get("penalty", "amplifier") == 1.1
    assert cfg.get("penalty", "update_interval") == 100
    assert cfg.get("buffer", "capacity") == 500000
    assert cfg.get("vehicle", "steer_max") == 0.4
    assert cfg.get("vehicle", "accel_min") == -3.0


def test_round_trip_byte_identical():
    text1 = emit_config(default_config())
    cfg = parse_config_text(text1)
    text2 = emit_config(cfg)
    assert text1 == text2


def test_every_key_annotated():
    text = emit_config(default_config())
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if "=" in line and not line.startswith("#"):
            assert lines[i - 1].startswith("# "), "missing annotation for %s" % line


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("[vehicle]\nbogus_key = 3\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[warp_drive]\n")


def test_bad_value_rejected():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("[vehicle]\nmass = heavy\n")


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError, match="outside"):
        parse_config_text("mass = 10\n")


def test_missing_file_raises():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/config.ini")


def test_validation_rules():
    with pytest.raises(ConfigError, match="six"):
        parse_config_text("[lights]\nphase_durations = 30.0,30.0,30.0,30.0\n")
    with pytest.raises(ConfigError, match="representation"):
        parse_config_text("[train]\nrepresentation = onehot\n")
    with pytest.raises(ConfigError, match="task"):
        parse_config_text("[train]\ntask = uturn\n")
    with pytest.raises(ConfigError, match="circle_offset_mode"):
        parse_config_text("[objective]\ncircle_offset_mode = both\n")


def test_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv("DRIVELAB_TRAIN__BATCH_SIZE", "64")
    monkeypatch.setenv("DRIVELAB_OBJECTIVE__R_EGO", "1.9")
    cfg = load_config(None)
    assert cfg.get("train", "batch_size") == 64
    assert cfg.get("objective", "r_ego") == 1.9


def test_dataclass_views():
    cfg = default_config()
    vcfg = cfg.vehicle_config()
    assert vcfg.corner_front == 88000.0 and vcfg.dt == 0.1
    wcfg = cfg.world_config()
    assert wcfg.half == pytest.approx(15.25)
    assert wcfg.dt == vcfg.dt
    ocfg = cfg.objective_config()
    assert ocfg.w_dphi == 30.0
    tcfg = cfg.train_config()
    assert tcfg.penalty.amplifier == 1.1
    assert tcfg.buffer_capacity == 500000


def test_parse_file_round_trip(tmp_path):
    p = tmp_path / "run.ini"
    cfg = default_config()
    cfg.values["train"]["task"] = "right"
    cfg.values["train"]["iterations"] = 123
    p.write_text(emit_config(cfg))
    back = load_config(str(p))
    assert back.get("train", "task") == "right"
    assert back.get("train", "iterations") == 123
