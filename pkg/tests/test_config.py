import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from pulsesync.config import (
    DEFAULT_CONFIG, ConfigError, SimConfig, config_from_dict, derive_constants, load_config, validate_config,
)

import oracles


def test_default_config_is_valid():
    assert validate_config(SimConfig(n=4, f=1, cycle=50_000, d=1000)) == []


def test_derived_values_n4():
    cfg = derive_constants(4, 1, 50_000, 1000)
    assert (cfg.byz_dur, cfg.sigma, cfg.cycle_min, cfg.cycle_max) == (35_000, 3000, 39_000, 59_000)
    assert cfg.derived() == oracles.derived(4, 1, 50_000, 1000)


def test_lower_bound_n7():
    assert oracles.byz_dur(2, 1000) == 49_000
    assert oracles.cycle_floor(2, 1000) == 63_000
    cfg = derive_constants(7, 2, 63_000)
    assert cfg.byz_dur == 49_000
    with pytest.raises(ConfigError):
        derive_constants(7, 2, 62_999)


def test_n_equal_3f_rejected():
    assert "n > 3f fails" in validate_config(SimConfig(n=3, f=1, cycle=60_000))


def test_cycle_below_bound_named():
    assert validate_config(SimConfig(n=4, f=1, cycle=48_000)) == ["Cycle below BYZdur+14d=49000"]


def test_fault_free_degenerate():
    cfg = derive_constants(1, 0, 35_000)
    assert cfg.byz_dur == 21_000
    assert validate_config(cfg) == []


def test_every_violation_reported():
    cfg = SimConfig(n=3, f=1, cycle=10_000, delta=2000, epsilon=1000, rho_num=1, rho_den=1, seed=-1)
    problems = validate_config(cfg)
    assert len(problems) == 7


def test_epsilon_and_delta_defaults():
    cfg = DEFAULT_CONFIG
    assert cfg.delta == 1000 and cfg.epsilon == 10


def test_byz_dur_override_warns(caplog):
    cfg = derive_constants(4, 1, 60_000, byz_dur=40_000)
    assert cfg.byz_dur == 40_000
    assert "overridden" in caplog.text


def test_json_round_trip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(DEFAULT_CONFIG.raw()))
    assert load_config(path) == DEFAULT_CONFIG


def test_json_rejects_derived_fields():
    with pytest.raises(ConfigError, match="unknown config field 'byz_dur'"):
        config_from_dict({"n": 4, "f": 1, "cycle": 50_000, "byz_dur": 1})


def test_json_rejects_non_integer():
    with pytest.raises(ConfigError):
        config_from_dict({"n": 4, "f": 1, "cycle": 50_000.5})


def test_rho_fraction():
    cfg = config_from_dict({"n": 4, "f": 1, "cycle": 50_000, "rho_num": 1, "rho_den": 1_000_000})
    assert cfg.rho == Fraction(1, 1_000_000)


# d=1 leaves no room for 0 < epsilon < d
@given(st.integers(0, 6), st.integers(2, 5000), st.integers(0, 3))
def test_valid_configs_keep_margin(f, d, extra):
    n = 3 * f + 1
    cycle = oracles.cycle_floor(f, d) + extra * d
    cfg = derive_constants(n, f, cycle, d)
    assert cfg.cycle - cfg.byz_dur >= 14 * d
    assert cfg.derived() == oracles.derived(n, f, cycle, d)
    # deterministic and idempotent
    again = derive_constants(n, f, cycle, d, epsilon=cfg.epsilon)
    assert again == cfg
