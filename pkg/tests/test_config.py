from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vvstark.config import ConfigError, load_config, parse_override, parse_quantity

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


MINIMAL = """
[device]
membrane_thickness = "120 um"

[[defects]]
name = "a"
"""


def test_default_config_loads():
    cfg = load_config(DEFAULT)
    assert cfg.device.membrane_thickness == 120.0
    assert [d.name for d in cfg.defects] == ["VV_centre", "VV_gate"]
    assert len(cfg.sweep.stark.settings()) == 31
    assert cfg.sweep.stark.v_z[-1] == pytest.approx(-300.0)
    assert cfg.output.formats == "both"


@pytest.mark.parametrize("text,kind,value", [
    ("120 um", "length", 120.0), ("0.12 mm", "length", 120.0), ("-300 V", "voltage", -300.0),
    ("2.5 kV/cm", "field", 0.25), ("1 s", "time_us", 1e6), ("500 MHz", "frequency", 0.5),
    (3, "voltage", 3.0), ("1e-5 mW/um^2", "power", 1e-5),
])
def test_parse_quantity(text, kind, value):
    assert parse_quantity(text, kind) == pytest.approx(value, rel=1e-12)


@pytest.mark.parametrize("bad", ["12 parsecs", "abc", True, [1], "inf V"])
def test_parse_quantity_rejects(bad):
    with pytest.raises(ConfigError):
        parse_quantity(bad, "voltage", "k")


@given(x=st.floats(-1e6, 1e6))
def test_parse_quantity_roundtrips_numbers(x):
    assert parse_quantity(f"{x!r} V", "voltage") == x


def test_minimal_config(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.defects[0].name == "a"


def test_unknown_key_reports_line(tmp_path):
    p = write(tmp_path, MINIMAL + "\n[kinetics]\nslope_0_minus = 0.3\nwobble = 1\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    e = exc.value
    assert e.key == "kinetics.wobble" and e.line == 10
    assert f"{p}:10" in str(e)


def test_wrong_unit_reports_key(tmp_path):
    p = write(tmp_path, MINIMAL.replace('"120 um"', '"120 V"'))
    with pytest.raises(ConfigError, match="device.membrane_thickness"):
        load_config(p)


def test_missing_section(tmp_path):
    with pytest.raises(ConfigError, match="defects"):
        load_config(write(tmp_path, '[device]\nmembrane_thickness = 1\n'))


def test_syntax_error_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="TOML"):
        load_config(write(tmp_path, "[device\n"))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_empty_sweep_rejected():
    with pytest.raises(ConfigError, match="empty"):
        load_config(DEFAULT, ["sweep.v_z=[]"])


def test_overrides():
    cfg = load_config(DEFAULT, ["sweep.grid.nx=64", "defects.1.position=['1 um', '0 um', '2 um']",
                                "output.seed=9", 'photon.bin_duration="4 ms"'])
    assert cfg.sweep.grid.nx == 64
    assert cfg.defects[1].position == (1.0, 0.0, 2.0)
    assert cfg.output.seed == 9 and cfg.photon.bin_duration == 4.0


def test_override_errors_point_at_set():
    with pytest.raises(ConfigError, match="--set"):
        load_config(DEFAULT, ["kinetics.nope=1"])
    with pytest.raises(ConfigError):
        load_config(DEFAULT, ["defects.7.name=x"])
    with pytest.raises(ConfigError):
        parse_override("no_equals")


def test_parse_override_values():
    assert parse_override("a.b=3") == (("a", "b"), 3)
    assert parse_override("a=hello") == (("a",), "hello")
    assert parse_override("d.0.x=[1, 2]") == (("d", 0, "x"), [1, 2])


def test_hash_is_stable_and_sensitive():
    a = load_config(DEFAULT)
    b = load_config(DEFAULT)
    assert a.hash == b.hash and len(a.hash) == 16
    assert load_config(DEFAULT, ["output.seed=1"]).hash != a.hash
    assert a.with_seed(1).hash == load_config(DEFAULT, ["output.seed=1"]).hash


def test_sweep_forms(tmp_path):
    text = MINIMAL + '\n[sweep]\nv_z = "-10 V"\nv_x = {start = 0, stop = 4, num = 3}\n'
    cfg = load_config(write(tmp_path, text))
    assert cfg.sweep.stark.v_z == (-10.0,)
    np.testing.assert_allclose(cfg.sweep.stark.v_x, [0, 2, 4])


def test_invalid_values_are_config_errors(tmp_path):
    for extra in ('\n[output]\nformats = "png"\n', '\n[fit]\nmodel = "cubic"\n',
                  '\n[photon]\nlambda_bright = 0.01\nlambda_dark = 0.1\n'):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, MINIMAL + extra))


def test_duplicate_defect_names(tmp_path):
    with pytest.raises(ConfigError, match="unique"):
        load_config(write(tmp_path, MINIMAL + '\n[[defects]]\nname = "a"\n'))
