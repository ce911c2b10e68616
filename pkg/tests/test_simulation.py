import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import lag_plant, pi
from platoonstab.errors import (
    AlgebraicLoopError,
    ImproperTransferFunction,
    NonCausalMode,
    NumericalBlowup,
    WindowTooLong,
)
from platoonstab.model import ControllerSpec, PlantSpec, ScenarioConfig, error_series
from platoonstab.rational import RationalFunction, evaluate, inverse_laplace
from platoonstab.simulation import (
    extract_errors,
    realize_statespace,
    reference_positions,
    simulate,
    steady_state_metrics,
)

R = RationalFunction


@pytest.fixture(scope="module")
def default_trace():
    return simulate(ScenarioConfig(t_end=80.0, dt=0.005))


# -- realization -------------------------------------------------------------

def test_realize_default_plant():
    ss = realize_statespace(R([1.0], [0.0, 1.0, 0.5]))
    assert ss.state_dimension == 2
    assert ss.D == 0.0
    assert np.allclose(np.sort(np.linalg.eigvals(ss.A).real), [-2.0, 0.0])
    assert ss.transfer_at(1.0) == pytest.approx(1 / 1.5)


def test_realize_pi_controller_has_feedthrough():
    ss = realize_statespace(R([1.0, 1.0], [0.0, 1.0]))
    assert ss.state_dimension == 1 and ss.D == 1.0
    assert ss.transfer_at(2.0) == pytest.approx(1.5)


def test_realize_static_gain():
    ss = realize_statespace(R([3.0]))
    assert ss.state_dimension == 0
    assert ss.transfer_at(5j) == pytest.approx(3.0)


def test_realize_improper_rejected():
    with pytest.raises(ImproperTransferFunction):
        realize_statespace(R([0.0, 0.0, 1.0], [1.0, 1.0]))


coef = st.floats(-3, 3).filter(lambda c: abs(c) > 1e-2)


@settings(max_examples=40, deadline=None)
@given(st.lists(coef, min_size=1, max_size=4), st.lists(coef, min_size=1, max_size=3), st.floats(0.2, 3))
def test_realization_reproduces_transfer(num, den_low, lead):
    num = num[: len(den_low) + 1]
    f = R(num, den_low + [lead])
    ss = realize_statespace(f)
    s = np.array([0.3 + 1.1j, 2.0 - 0.5j, 5.0j + 0.1])
    assert np.allclose(ss.transfer_at(s), evaluate(f, s), rtol=1e-9, atol=1e-12)


# -- simulation basics -----------------------------------------------------

def test_grid_and_shapes(default_trace):
    cfg = default_trace.config
    assert default_trace.steps == round(cfg.t_end / cfg.dt)
    assert default_trace.t[0] == 0.0
    assert default_trace.t[1] == pytest.approx(cfg.dt)
    assert default_trace.x.shape == (default_trace.steps, cfg.N)


def test_starts_on_profile(default_trace):
    errs = extract_errors(default_trace)
    assert np.max(np.abs(errs.e[0])) < 1e-9
    assert np.allclose(default_trace.v[0], 20.0)


def test_no_drop_stays_on_profile():
    trace = simulate(ScenarioConfig(p=0.0, t_end=30.0, dt=0.01))
    assert np.max(np.abs(trace.e)) < 1e-9
    assert np.max(np.abs(trace.eprime)) < 1e-9


def test_post_drop_speed(default_trace):
    k = int(round(60.0 / default_trace.config.dt))
    assert default_trace.v[k, 0] == pytest.approx(15.0, abs=1e-2)


def test_vehicle_one_error_settles(default_trace):
    metrics = steady_state_metrics(default_trace, 10.0)
    assert metrics.mean_abs_e[0] < 1e-3


def test_error_identities(default_trace):
    errs = extract_errors(default_trace)
    ref = reference_positions(default_trace.config, default_trace.t)
    assert np.allclose(errs.eprime, ref - default_trace.x)
    assert np.array_equal(errs.e[:, 0], errs.eprime[:, 0])
    assert np.allclose(errs.total, errs.e.sum(axis=1))
    assert np.all(errs.abs_total >= np.abs(errs.total) - 1e-12)


def test_longer_platoon_has_larger_error_sum():
    cfg = ScenarioConfig(t_end=60.0, dt=0.01)
    small = extract_errors(simulate(cfg.replace(N=10)))
    large = extract_errors(simulate(cfg.replace(N=20)))
    assert np.max(np.abs(large.total)) > np.max(np.abs(small.total))


def test_matches_inverse_laplace_from_rest():
    cfg = ScenarioConfig(N=4, t_end=25.0, dt=0.005)
    trace = simulate(cfg, initial_condition="rest")
    series = error_series(cfg, cfg.N)
    sample = np.array([3.0, 7.5, 12.0, 20.0])
    idx = np.round(sample / cfg.dt).astype(int)
    for i, transform in enumerate(series):
        expected = inverse_laplace(transform.expression, sample)
        assert np.allclose(trace.e[idx, i], expected, rtol=1e-6, atol=1e-6)


def test_steady_state_metrics_window():
    trace = simulate(ScenarioConfig(N=3, t_end=20.0, dt=0.01))
    with pytest.raises(WindowTooLong):
        steady_state_metrics(trace, 25.0)
    m = steady_state_metrics(trace, 5.0)
    assert m.mean_abs_e.shape == (3,)
    assert np.all(m.max_abs_e >= m.mean_abs_e)


def test_non_causal_mode_refused():
    with pytest.raises(NonCausalMode):
        simulate(ScenarioConfig(shift_sign="paper_exact"))


def test_unstable_loop_blows_up_with_partial_trace():
    cfg = ScenarioConfig(
        N=2, t_end=400.0, dt=0.01,
        leader_controller=ControllerSpec(R([-1.0, 1.0], [0.0, 1.0]), "leader"),
    )
    with pytest.raises(NumericalBlowup) as info:
        simulate(cfg)
    partial = info.value.trace
    assert partial is not None and not partial.complete
    assert 0 < partial.steps < round(cfg.t_end / cfg.dt)


def test_algebraic_loop_detected():
    cfg = ScenarioConfig(
        N=2,
        plant=PlantSpec(R([1.0], [1.0])),
        leader_controller=ControllerSpec(R([-1.0]), "leader"),
        predecessor_controller=ControllerSpec(R([0.0]), "predecessor"),
    )
    with pytest.raises(AlgebraicLoopError):
        simulate(cfg)


def test_deterministic():
    cfg = ScenarioConfig(N=5, t_end=20.0, dt=0.01)
    a, b = simulate(cfg), simulate(cfg)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.u.tobytes() == b.u.tobytes()


def test_translation_invariance():
    cfg = ScenarioConfig(N=5, t_end=30.0, dt=0.01)
    a = simulate(cfg)
    b = simulate(cfg, position_offset=1234.5)
    assert np.allclose(a.e, b.e, atol=1e-8)
    assert np.allclose(b.x - a.x, 1234.5, atol=1e-8)


def test_step_halving_converges():
    cfg = ScenarioConfig(N=5, t_end=30.0, dt=0.01)
    coarse = simulate(cfg)
    fine = simulate(cfg.replace(dt=0.005))
    diff = np.max(np.abs(fine.e[::2] - coarse.e))
    assert diff <= 1e-4 * np.max(np.abs(fine.e))


def test_other_loop_shapes_run():
    cfg = ScenarioConfig(
        N=4, t_end=40.0, dt=0.01, p=0.1,
        plant=lag_plant(0.3),
        leader_controller=pi(2.0, 0.5, "leader"),
        predecessor_controller=pi(1.0, 0.2, "predecessor"),
    )
    trace = simulate(cfg)
    assert np.all(np.isfinite(trace.x))
    assert np.max(np.abs(trace.e[0])) < 1e-9
