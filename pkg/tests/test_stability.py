import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pi
from platoonstab.errors import InsufficientSizes, PoleOnAxis, RatioOutOfRange
from platoonstab.model import ControllerSpec, PlantSpec, ProbeSpec, ScenarioConfig
from platoonstab.rational import RationalFunction, is_hurwitz
from platoonstab.stability import (
    analyze,
    characteristic_polynomial,
    check_closed_loop,
    check_local,
    check_local_all,
    check_strong_growth,
    growth_verdict,
    lemma_geometric_check,
    sweep_propagation,
)

R = RationalFunction


# -- frequency sweep -------------------------------------------------------

def test_sweep_default_supremum(default_config):
    sweep = sweep_propagation(default_config, 1e-3, 1e3, 2000)
    # dense independent grid as the oracle
    w = np.linspace(1.0, 3.0, 400_001)
    mag = np.abs((2j * w + 2) / ((1j * w) ** 3 + 2 * (1j * w) ** 2 + 4j * w + 4))
    assert sweep.supremum == pytest.approx(mag.max(), abs=1e-9)
    assert sweep.w_at_supremum == pytest.approx(w[np.argmax(mag)], abs=1e-4)
    assert sweep.supremum > 1 and not sweep.string_stable
    assert np.all(sweep.magnitude <= sweep.supremum + 1e-12)


def test_sweep_low_frequency_limit(default_config):
    sweep = sweep_propagation(default_config, 1e-4, 1e-3, 10)
    assert sweep.magnitude[0] == pytest.approx(0.5, abs=1e-4)


def test_sweep_without_predecessor_loop_is_zero():
    cfg = ScenarioConfig(predecessor_controller=ControllerSpec(R([0.0]), "predecessor"))
    sweep = sweep_propagation(cfg, 0.1, 10, 50)
    assert sweep.supremum == 0.0 and sweep.string_stable


def test_sweep_pole_on_axis():
    # unit gains on a double integrator: 1 + H = 0 at s = +-j
    cfg = ScenarioConfig(
        plant=PlantSpec(R([1.0], [0.0, 0.0, 1.0])),
        leader_controller=ControllerSpec(R([1.0]), "leader"),
        predecessor_controller=ControllerSpec(R([1.0]), "predecessor"),
    )
    with pytest.raises(PoleOnAxis):
        sweep_propagation(cfg, 0.1, 10, 50)


# -- local stability ------------------------------------------------------

def test_local_first_vehicle_default(default_config):
    result = check_local(default_config, 1)
    assert result.classification == "locally_stable" and result.limit == 0.0


def test_local_limits_follow_recursion(default_config):
    results = check_local_all(default_config, 6)
    limits = [r.limit for r in results]
    expected = [0.0]
    for _ in range(5):
        expected.append(0.5 * expected[-1] - 5.0)
    assert np.allclose(limits, expected, atol=1e-9)
    assert all(r.classification == "nonzero_limit" for r in results[1:])


def test_local_pure_gain_nonzero():
    cfg = ScenarioConfig(p=0.0, leader_controller=ControllerSpec(R([1.0]), "leader"))
    result = check_local(cfg, 1)
    assert result.classification == "nonzero_limit"
    assert result.limit == pytest.approx(20.0)


def test_local_unstable_loop_invalid():
    cfg = ScenarioConfig(leader_controller=ControllerSpec(R([-1.0, 1.0], [0.0, 1.0]), "leader"))
    assert check_local(cfg, 1).classification == "hypothesis_invalid"


def test_local_index_checked(default_config):
    with pytest.raises(ValueError):
        check_local(default_config, 0)


# -- closed loop ------------------------------------------------------------

def test_closed_loop_default(default_config):
    result = check_closed_loop(default_config)
    assert result.stable and not result.origin_pole
    lead, both = result.loops
    assert np.allclose(lead.characteristic.coeffs, [2.0, 2.0, 2.0, 1.0])
    assert np.allclose(both.characteristic.coeffs, [4.0, 4.0, 2.0, 1.0])
    lead_poles = sorted((p for p, _ in lead.poles), key=lambda z: (z.real, z.imag))
    assert lead_poles[0] == pytest.approx(-1.5437, abs=1e-4)
    expected = np.sort_complex(np.roots([1.0, 2.0, 4.0, 4.0]))
    got = np.sort_complex(np.array([p for p, _ in both.poles]))
    assert np.allclose(got, expected, atol=1e-10)


def test_characteristic_polynomial_coefficients():
    K = R([1.0, 1.0], [0.0, 1.0])
    H = R([1.0], [0.0, 1.0, 0.5])
    # H is stored with a monic denominator: 2 / (s^2 + 2s)
    assert np.allclose(characteristic_polynomial(K, H).coeffs, [2.0, 2.0, 2.0, 1.0])


def test_hurwitz_examples():
    assert is_hurwitz([1.0, -1.0, 0.0, 1.0]) is False  # s^3 - s + 1
    assert is_hurwitz([6.0, 11.0, 6.0, 1.0]) is True    # (s+1)(s+2)(s+3)
    assert check_closed_loop(ScenarioConfig(
        plant=PlantSpec(R([1.0], [1.0, 0.0, 0.0, 1.0])),
        leader_controller=ControllerSpec(R([-2.0]), "leader"),
        predecessor_controller=ControllerSpec(R([0.0]), "predecessor"),
    )).stable is False


def test_closed_loop_with_origin_pole():
    cfg = ScenarioConfig(
        plant=PlantSpec(R([1.0], [0.0, 1.0])),
        leader_controller=ControllerSpec(R([0.0]), "leader"),
        predecessor_controller=ControllerSpec(R([1.0]), "predecessor"),
    )
    result = check_closed_loop(cfg)
    assert result.origin_pole and not result.stable
    assert result.note


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-2), min_size=2, max_size=6))
def test_hurwitz_matches_roots(coeffs):
    coeffs = coeffs[:-1] + [abs(coeffs[-1]) + 0.1]
    roots = np.roots(coeffs[::-1])
    if np.min(np.abs(roots.real)) < 1e-6:
        return
    assert is_hurwitz(coeffs) == bool(np.all(roots.real < 0))


# -- growth ------------------------------------------------------------------

def test_growth_verdict_rule():
    assert growth_verdict([1.0, 1.5, 2.5])
    assert not growth_verdict([1.0, 1.5, 1.9])
    assert not growth_verdict([1.0, 3.0, 2.9])


def test_growth_needs_two_sizes(default_config):
    with pytest.raises(InsufficientSizes):
        check_strong_growth(default_config, [10])


def test_growth_without_drop_stays_flat():
    cfg = ScenarioConfig(p=0.0, t_end=20.0, dt=0.01)
    result = check_strong_growth(cfg, [3, 6])
    assert all(row.max_signed_sum < 1e-9 for row in result.table)
    assert not result.strong_stability_violated


def test_growth_table_sizes_and_bound():
    cfg = ScenarioConfig(t_end=40.0, dt=0.01)
    result = check_strong_growth(cfg, [3, 6])
    assert [row.N for row in result.table] == [3, 6]
    assert all(row.max_abs_sum >= row.max_signed_sum for row in result.table)


# -- geometric bound ----------------------------------------------------------

def test_geometric_half():
    check = lemma_geometric_check(0.5, 1.0, 21)
    assert check.predicted_sum == 2.0
    assert check.observed_partial_sums[-1] == pytest.approx(2.0, abs=1e-6)
    assert check.nondecreasing and check.bounded and check.sum_limit == 0.0


def test_geometric_zero_ratio():
    check = lemma_geometric_check(0.0, 3.0, 5)
    assert check.observed_partial_sums == (3.0,) * 5


def test_geometric_ratio_out_of_range():
    with pytest.raises(RatioOutOfRange):
        lemma_geometric_check(1.0, 1.0, 10)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.99), st.floats(0, 100), st.integers(1, 200))
def test_geometric_partial_sums_bounded(P, E1, terms):
    check = lemma_geometric_check(P, E1, terms)
    assert check.nondecreasing and check.bounded
    assert check.observed_partial_sums[-1] == pytest.approx(E1 * (1 - P**terms) / (1 - P), rel=1e-9, abs=1e-12)


# -- report -----------------------------------------------------------------

def test_analyze_report_default():
    cfg = ScenarioConfig(N=5, t_end=30.0, dt=0.01, probe=ProbeSpec(n_max=200))
    report = analyze(cfg, platoon_sizes=[3, 5])
    assert report.ok
    assert len(report.local_stability) == 5
    assert report.string_stable_frequency_criterion is False
    assert report.closed_loop.stable
    assert report.probe is not None
    assert len(report.strong_growth.table) == 2


def test_analyze_collects_diagnostics():
    cfg = ScenarioConfig(
        N=3, t_end=10.0, dt=0.01,
        plant=PlantSpec(R([1.0], [0.0, 0.0, 1.0])),
        leader_controller=ControllerSpec(R([1.0]), "leader"),
        predecessor_controller=ControllerSpec(R([1.0]), "predecessor"),
    )
    report = analyze(cfg)
    assert not report.ok
    assert any(d["check"] == "frequency_sweep" and d["error"] == "PoleOnAxis" for d in report.diagnostics)


def test_other_controllers_string_stable_check():
    cfg = ScenarioConfig(
        leader_controller=pi(3.0, 0.1, "leader"),
        predecessor_controller=pi(0.2, 0.01, "predecessor"),
    )
    sweep = sweep_propagation(cfg, 1e-3, 1e3, 2000)
    assert math.isfinite(sweep.supremum) and sweep.supremum > 0
