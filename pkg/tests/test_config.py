import math

import pytest

from starflow.config import (DEFAULTS, build_config, defaults_help, parse_config_text,
                             with_values)
from starflow.errors import ValidationError


def write(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


def test_parse_values():
    vals = parse_config_text("""
        # comment
        run.dt = 2*pi/500      # trailing comment
        run.x0 = 1, 0, 0
        pesin.n_max = 200
        recurrence.rank = distance
        field.poly.x = -y + x - x^3
    """)
    assert vals["run.dt"] == pytest.approx(2 * math.pi / 500, rel=1e-15)
    assert vals["run.x0"] == (1, 0, 0)
    assert vals["pesin.n_max"] == 200 and isinstance(vals["pesin.n_max"], int)
    assert vals["recurrence.rank"] == "distance"
    assert vals["field.poly.x"] == "-y + x - x^3"


@pytest.mark.parametrize("text", ["run.dt 0.01", " = 3"])
def test_parse_errors(text):
    with pytest.raises(ValidationError):
        parse_config_text(text)


def test_defaults_and_overrides(tmp_path):
    cfg = build_config(write(tmp_path, "run.total_time = 200\nrun.seed = 7\n"))
    assert cfg.field["name"] == "LOR"
    assert cfg["run.total_time"] == 200
    assert cfg["run.dt"] == DEFAULTS["run.dt"][0]
    assert cfg.seed == 7
    assert build_config(write(tmp_path, "run.seed = 7\n"), seed=3).seed == 3


def test_cyc_preset_is_consistent():
    cfg = build_config(field_name="CYC")
    e = cfg.experiment()
    assert e.step_T / e.dt == pytest.approx(50)
    assert e.targets == (pytest.approx(2 * math.pi),)


def test_field_spec_from_file(tmp_path):
    cfg = build_config(write(tmp_path, "field.name = LOR\nfield.rho = 24\n"))
    assert cfg.field == {"name": "LOR", "rho": 24}
    poly = build_config(write(tmp_path, "field.poly.x = -x\nfield.poly.y = -y\nfield.poly.z = -z\n"))
    assert poly.field["name"] == "POLY"
    assert poly.field["poly"]["x"] == "-x"


@pytest.mark.parametrize("text", [
    "run.step_T = 0.015",
    "recurrence.T = 0.013",
    "run.tol = 0",
    "run.tol = 1e-2",
    "run.x0 = 1, 2",
    "recurrence.rank = random",
    "cone.gamma = -1",
    "bogus.key = 1",
])
def test_validation_errors(tmp_path, text):
    with pytest.raises(ValidationError):
        build_config(write(tmp_path, text + "\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        build_config(tmp_path / "nope.cfg")


def test_with_values_revalidates():
    cfg = build_config()
    assert with_values(cfg, run__total_time=50.0)["run.total_time"] == 50.0
    with pytest.raises(ValidationError):
        with_values(cfg, run__step_T=0.015)


def test_echo_and_help():
    cfg = build_config(seed=5)
    echo = cfg.echo()
    assert echo["seed"] == 5 and list(echo["values"]) == sorted(echo["values"])
    text = defaults_help()
    assert all(k in text for k in DEFAULTS)
