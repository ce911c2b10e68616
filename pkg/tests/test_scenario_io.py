import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from platoonstab.errors import ParseError, ValidationError
from platoonstab.model import ControllerSpec, ScenarioConfig
from platoonstab.rational import RationalFunction
from platoonstab.scenario_io import (
    TRACE_HEADER,
    dumps,
    load_scenario,
    parse_scenario,
    read_trace,
    serialize_scenario,
    to_jsonable,
    write_trace,
)
from platoonstab.simulation import simulate

DEFAULT_TEXT = (FIXTURES / "default.yaml").read_text()


def test_fixture_parses_to_defaults():
    cfg = load_scenario(FIXTURES / "default.yaml")
    default = ScenarioConfig()
    for name in ("v0", "p", "T", "r", "N", "dt", "t_end", "shift_sign"):
        assert getattr(cfg, name) == getattr(default, name)
    assert cfg.plant.transfer == default.plant.transfer
    assert cfg.leader_controller.transfer == default.leader_controller.transfer
    assert cfg.probe.n_max == 2000 and cfg.sweep.points == 2000


def test_other_fixtures_load():
    assert load_scenario(FIXTURES / "p0.yaml").p == 0.0
    assert load_scenario(FIXTURES / "kp0.yaml").predecessor_controller.transfer.is_zero
    assert load_scenario(FIXTURES / "paper_exact.yaml").shift_sign == "paper_exact"


def test_out_of_range_field_named():
    with pytest.raises(ValidationError) as info:
        parse_scenario(DEFAULT_TEXT.replace("p: 0.25", "p: 1.5"))
    assert info.value.field == "p"
    assert "p" in str(info.value)


def test_missing_plant_block():
    text = DEFAULT_TEXT.replace("plant:", "plant_removed:")
    with pytest.raises(ParseError, match="plant"):
        parse_scenario(text)


def test_missing_plant_block_removed_entirely():
    lines = DEFAULT_TEXT.splitlines()
    start = next(i for i, line in enumerate(lines) if line.startswith("plant:"))
    text = "\n".join(lines[:start] + lines[start + 3:])
    with pytest.raises(ParseError, match="missing required block 'plant'"):
        parse_scenario(text)


def test_malformed_yaml_reports_line():
    text = "v0: 20.0\np: [0.25\nT: 2.0\n"
    with pytest.raises(ParseError, match="line"):
        parse_scenario(text)


def test_numeric_strings_coerced():
    cfg = parse_scenario(DEFAULT_TEXT.replace("v0: 20.0", 'v0: "20"'))
    assert cfg.v0 == 20.0


def test_non_numeric_rejected():
    with pytest.raises(ParseError, match="v0"):
        parse_scenario(DEFAULT_TEXT.replace("v0: 20.0", "v0: fast"))


def test_unknown_field_rejected():
    with pytest.raises(ParseError, match="unknown"):
        parse_scenario(DEFAULT_TEXT + "colour: blue\n")


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "absent.yaml")


coef = st.floats(-5, 5, allow_nan=False).map(lambda c: float(f"{c:.6g}"))


@settings(max_examples=40, deadline=None)
@given(
    st.floats(1, 40), st.floats(0, 0.9), st.floats(0.1, 5), st.floats(1, 30), st.integers(1, 50),
    st.lists(coef, min_size=1, max_size=2), st.sampled_from(["causal", "paper_exact"]),
)
def test_round_trip(v0, p, T, r, N, kp_num, mode):
    cfg = ScenarioConfig(
        v0=v0, p=p, T=T, r=r, N=N, shift_sign=mode,
        predecessor_controller=ControllerSpec(RationalFunction(kp_num, [0.0, 1.0]), "predecessor"),
    )
    cfg = parse_scenario(serialize_scenario(cfg))
    again = parse_scenario(serialize_scenario(cfg))
    assert again == cfg


def test_round_trip_default_exact():
    cfg = load_scenario(FIXTURES / "default.yaml")
    assert parse_scenario(serialize_scenario(cfg)) == cfg


# -- traces ------------------------------------------------------------------

def test_trace_schema(tmp_path):
    cfg = ScenarioConfig(N=3, t_end=2.0, dt=0.01)
    trace = simulate(cfg)
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    header, data = read_trace(path)
    assert header == TRACE_HEADER == "t,vehicle,x,v,u,e,eprime"
    assert data.shape == (200 * 3, 7)
    assert np.array_equal(data[:3, 1], [1, 2, 3])
    assert np.all(np.diff(data[:, 0]) >= 0)
    assert np.allclose(data[:, 5].reshape(200, 3), trace.e, atol=1e-6)


def test_trace_bytes_deterministic(tmp_path):
    cfg = ScenarioConfig(N=3, t_end=5.0, dt=0.01)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trace(simulate(cfg), a)
    write_trace(simulate(cfg), b)
    assert a.read_bytes() == b.read_bytes()


# -- JSON ------------------------------------------------------------------------

def test_jsonable_rounding_and_specials():
    out = to_jsonable({"a": 1 / 3, "b": np.float64(2.0), "c": float("inf"), "d": float("nan"), "z": 1 + 2j})
    assert out["a"] == 0.333333333
    assert out["c"] == "inf" and out["d"] is None
    assert out["z"] == {"re": 1.0, "im": 2.0}
    json.loads(dumps({"x": np.arange(3)}))
