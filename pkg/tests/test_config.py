import math
from pathlib import Path

import numpy as np
import pytest

from ddmpc.config import DEFAULT_CONFIG_TEXT, ConfigError, dump_config, load_config, parse_config_text
from ddmpc.scenario import ScenarioConfig

DEFAULT_FILE = Path(__file__).resolve().parents[1] / "configs" / "default.cfg"


def _write(tmp_path, text):
    f = tmp_path / "c.cfg"
    f.write_text(text)
    return f


def test_defaults_file_matches_builtin():
    assert DEFAULT_FILE.read_text() == DEFAULT_CONFIG_TEXT
    assert load_config(DEFAULT_FILE) == ScenarioConfig()
    assert load_config(None) == ScenarioConfig()


def test_degrees_converted(tmp_path):
    cfg = load_config(_write(tmp_path, "u_min_deg = -2\nu_max_deg = 3\npid_u_max_deg = 4\n"))
    assert cfg.ddmpc.u_min == pytest.approx(math.radians(-2))
    assert cfg.ddmpc.u_max == pytest.approx(math.radians(3))
    assert cfg.pid.u_max == pytest.approx(math.radians(4))


def test_diagonal_weights(tmp_path):
    cfg = load_config(_write(tmp_path, "q_diag = 1, 2, 3\nr_diag = 0.5\nlambda = 0.01\n"))
    np.testing.assert_array_equal(cfg.ddmpc.Q, [1, 2, 3])
    assert cfg.ddmpc.R == 0.5 and cfg.ddmpc.lam == 0.01
    np.testing.assert_array_equal(cfg.ddmpc.output_weight(3), np.diag([1.0, 2.0, 3.0]))


def test_comments_and_blanks(tmp_path):
    cfg = load_config(_write(tmp_path, "# header\n\nL = 10   # inline\n   \nv = 3\n"))
    assert (cfg.ddmpc.L, cfg.ddmpc.v) == (10, 3)


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("L = 10\nbogus = 1\n", 2),
        ("L = 10\nL = 11\n", 2),
        ("# c\nL 10\n", 2),
        ("L =\n", 1),
        ("L = ten\n", 1),
    ],
)
def test_parse_errors_carry_line_numbers(tmp_path, text, lineno):
    with pytest.raises(ConfigError) as err:
        load_config(_write(tmp_path, text))
    assert f":{lineno}:" in str(err.value)


@pytest.mark.parametrize("text", ["L = 0\n", "lambda = -1\n", "u_min_deg = 5\nu_max_deg = -5\n", "q_diag = -1\n",
                                  "s1 = 100\n", "speed = 0\n"])
def test_invalid_values_are_config_errors(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_dump_round_trip(tmp_path):
    cfg = load_config(_write(tmp_path, "q_diag = 1, 2, 3\nseed = 9\nname = other\nkin_horizon = 12\n"))
    back = load_config(_write(tmp_path, dump_config(cfg)))
    np.testing.assert_array_equal(back.ddmpc.Q, cfg.ddmpc.Q)
    assert back.seed == 9 and back.name == "other" and back.kin_mpc.horizon == 12
    assert back.ddmpc.u_max == pytest.approx(cfg.ddmpc.u_max, rel=1e-15)
    assert back.excitation_amplitude == pytest.approx(cfg.excitation_amplitude, rel=1e-15)


def test_parse_returns_raw_strings():
    vals = parse_config_text("L = 24\nname = x\n")
    assert vals == {"L": ("24", 1), "name": ("x", 2)}
