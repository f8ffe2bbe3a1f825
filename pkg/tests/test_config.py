import configparser

import pytest
from hypothesis import given, settings, strategies as st

from clbfet.config import (VARIANTS, ConfigError, RunConfig, effective, from_parser, load_config, to_ini,
                           validate)
from clbfet.trajectories import KINDS


@given(st.sampled_from(VARIANTS), st.sampled_from(KINDS), st.integers(0, 10**6),
       st.floats(1.0, 100.0), st.floats(0.0, 0.5), st.booleans())
@settings(max_examples=40)
def test_ini_roundtrip(variant, traj, seed, epsilon, noise, gust):
    cfg = (RunConfig().with_run(variant=variant, trajectory=traj, seed=seed)
           .with_section("controller", epsilon=epsilon).with_section("plant", noise_std=noise)
           .with_section("wind", gust=gust))
    cp = configparser.ConfigParser()
    cp.read_string(to_ini(cfg))
    assert from_parser(cp) == cfg


def test_load_file_with_partial_sections(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nvariant = LB-FL-QP\nseed = 3\n[obstacles]\ntimes = 5, 6\n")
    cfg = load_config(p)
    assert cfg.run.variant == "LB-FL-QP" and cfg.run.seed == 3
    assert cfg.obstacles.times == (5.0, 6.0) and cfg.gp == RunConfig().gp


@pytest.mark.parametrize("text", [
    "[bogus]\na = 1\n",
    "[run]\nvarient = CLBFET\n",
    "[run]\nseed = three\n",
    "[wind]\ngust = maybe\n",
    "[run]\nvariant = PID\n",
    "[run]\nduration = 5\n",
    "[run]\ndt = 0.03\n",
    "[gp]\nvarsigma = 1.0\n",
    "[trigger]\npolicy = random\n",
    "[wind]\nc_mag_min = 12\n",
    "not an ini file",
])
def test_bad_configs_rejected(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_validate_accepts_defaults():
    cfg = RunConfig()
    assert validate(cfg) is cfg and cfg.n_ticks == 3500


def test_effective_overrides():
    assert effective(RunConfig().with_run(variant="LB-FL-MPC")).trigger.policy == "periodic"
    assert effective(RunConfig().with_run(variant="FL-QP-MPC")).trigger.policy == "never"
    assert effective(RunConfig().with_run(variant="ROBUST")).trigger.policy == "never"
    assert effective(RunConfig()).trigger.policy == "event"
