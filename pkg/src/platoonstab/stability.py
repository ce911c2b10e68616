"""Executable stability checks for the platoon model.

Local stability uses the final value of each error transform.  String
stability is tested on the homogeneous propagation factor ``Gamma`` over a
frequency sweep.  Strong stability is measured empirically: the peak of the
platoon error sum ``M(N)`` is tracked across platoon sizes.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    InsufficientSizes,
    NumericalBlowup,
    PlatoonStabError,
    PoleOnAxis,
    RatioOutOfRange,
)
from .model import SweepSpec, error_series, path_probe, propagation_ratio
from .rational import Polynomial, combine, evaluate, final_value, is_hurwitz
from .simulation import extract_errors, simulate

AXIS_TOL = 1e-9
SWEEP_TOL = 1e-9
GOLDEN_XTOL = 1e-6
LHP_MARGIN = 1e-9
LOCAL_ZERO_TOL = 1e-9
CRITERION_LABEL = "homogeneous-factor criterion"


# -- frequency criterion ----------------------------------------------------

class SweepResult(NamedTuple):
    w: np.ndarray
    magnitude: np.ndarray
    supremum: float
    w_at_supremum: float

    @property
    def string_stable(self):
        return bool(self.supremum <= 1 + SWEEP_TOL)


def _refine_peak(mag_at, w, k):
    """Golden-section refinement of a grid maximum at index ``k``."""
    if k == 0 or k == len(w) - 1:
        return w[k], mag_at(w[k])
    res = minimize_scalar(
        lambda x: -mag_at(x),
        bracket=(w[k - 1], w[k], w[k + 1]),
        method="golden",
        tol=GOLDEN_XTOL / (2 * w[k + 1]),
    )
    if -res.fun >= mag_at(w[k]) and w[k - 1] <= res.x <= w[k + 1]:
        return float(res.x), float(-res.fun)
    return w[k], mag_at(w[k])


def sweep_propagation(config, w_min=None, w_max=None, points=None):
    """``|Gamma(jw)|`` on a log grid plus the refined supremum.

    Missing arguments come from ``config.sweep`` (or the default sweep).
    """
    spec = config.sweep or SweepSpec()
    w_min = spec.w_min if w_min is None else w_min
    w_max = spec.w_max if w_max is None else w_max
    points = spec.points if points is None else points
    SweepSpec(w_min, w_max, points)  # validates the band
    gamma = propagation_ratio(config)
    for pole, _ in gamma.poles():
        if abs(pole.real) <= AXIS_TOL and w_min <= abs(pole.imag) <= w_max:
            raise PoleOnAxis(f"Gamma has a pole at {pole:.6g}, on the imaginary axis inside the band")
    w = np.logspace(np.log10(w_min), np.log10(w_max), points)
    mag = np.abs(evaluate(gamma, 1j * w))
    if gamma.is_zero:
        return SweepResult(w, mag, 0.0, float(w[0]))

    def mag_at(x):
        return float(abs(evaluate(gamma, 1j * x)))

    w_star, sup = _refine_peak(mag_at, w, int(np.argmax(mag)))
    return SweepResult(w, mag, float(sup), float(w_star))


# -- local stability --------------------------------------------------------

class LocalStability(NamedTuple):
    index: int
    classification: str  # locally_stable | nonzero_limit | unbounded | hypothesis_invalid
    limit: Optional[float]
    hypothesis_valid: bool


def _local_from_transform(index, transform):
    fv = final_value(transform.expression)
    valid = fv.classification != "invalid"
    limit = None if fv.value is None else float(fv.value.real)
    if not valid:
        cls = "hypothesis_invalid"
    elif fv.classification == "divergent":
        cls = "unbounded"
    elif abs(limit) <= LOCAL_ZERO_TOL:
        cls = "locally_stable"
        limit = 0.0
    else:
        cls = "nonzero_limit"
    return LocalStability(index, cls, limit, valid)


def check_local(config, i):
    """Final-value test of ``E_i``; ``locally_stable`` iff the limit is 0."""
    if i < 1:
        raise ValueError("vehicle index must be >= 1")
    return _local_from_transform(i, error_series(config, i)[-1])


def check_local_all(config, n=None):
    """``check_local`` for vehicles ``1 .. n`` (default ``N``) sharing one recursion."""
    n = config.N if n is None else n
    return [_local_from_transform(e.index, e) for e in error_series(config, n)]


# -- strong stability -------------------------------------------------------

@dataclass(frozen=True)
class GrowthRow:
    N: int
    max_signed_sum: float  # max_t |sum_i e_i(t)|
    max_abs_sum: float     # max_t sum_i |e_i(t)|
    config: object = field(repr=False, compare=False)


@dataclass(frozen=True)
class GrowthResult:
    table: tuple
    strong_stability_violated: bool


def growth_verdict(values):
    """Strictly increasing and the last value more than twice the first."""
    values = list(values)
    increasing = all(b > a for a, b in zip(values, values[1:]))
    return bool(increasing and values[-1] > 2 * values[0])


def check_strong_growth(config, platoon_sizes):
    """Peak platoon error sum ``M(N)`` for each size, and the growth verdict."""
    sizes = [int(n) for n in platoon_sizes]
    if len(sizes) < 2:
        raise InsufficientSizes("growth measurement needs at least two platoon sizes")
    if any(n < 2 for n in sizes):
        raise ValueError("platoon sizes must be >= 2")
    rows = []
    for n in sizes:
        cfg = config.replace(N=n)
        try:
            trace = simulate(cfg)
        except NumericalBlowup as exc:
            exc.table = tuple(rows)
            raise
        errs = extract_errors(trace)
        rows.append(GrowthRow(n, float(np.max(np.abs(errs.total))), float(np.max(errs.abs_total)), cfg))
    return GrowthResult(tuple(rows), growth_verdict(r.max_signed_sum for r in rows))


# -- closed-loop poles ------------------------------------------------------

class LoopPoles(NamedTuple):
    name: str
    characteristic: Polynomial
    poles: list
    routh_hurwitz: bool


class ClosedLoopResult(NamedTuple):
    stable: bool                 # every pole strictly in the left half-plane
    stable_except_origin: bool   # same test with origin poles exempted
    origin_pole: bool
    loops: tuple
    note: str

    @property
    def poles(self):
        return [p for loop in self.loops for p in loop.poles]


def characteristic_polynomial(K, H):
    """``den_K den_H + num_K num_H`` for the loop ``1 + K H``."""
    return K.den * H.den + K.num * H.num


def _loop_poles(name, char):
    char = char.monic()
    found = char.clustered_roots() if char.degree >= 1 else []
    return LoopPoles(name, char, found, is_hurwitz(char.coeffs))


def check_closed_loop(config):
    """Poles of ``1/(1 + K_l H)`` and ``1/(1 + (K_l + K_p) H)``.

    The characteristic polynomials are formed without cancelling, so an
    open-loop configuration keeps its plant poles.
    """
    H = config.plant.transfer
    Kl = config.leader_controller.transfer
    Kp = config.predecessor_controller.transfer
    loops = (
        _loop_poles("1+K_lH", characteristic_polynomial(Kl, H)),
        _loop_poles("1+(K_l+K_p)H", characteristic_polynomial(combine(Kl, Kp, "add"), H)),
    )
    all_poles = [p for loop in loops for p, _ in loop.poles]
    origin = any(abs(p) <= LHP_MARGIN for p in all_poles)
    stable = all(p.real < -LHP_MARGIN for p in all_poles)
    except_origin = all(p.real < -LHP_MARGIN for p in all_poles if abs(p) > LHP_MARGIN)
    note = ""
    if origin:
        note = "closed loop has a pole at the origin; exempted only for final-value bookkeeping"
    return ClosedLoopResult(stable, except_origin, origin, loops, note)


# -- geometric bound --------------------------------------------------------

@dataclass(frozen=True)
class GeometricBoundCheck:
    ratio: float
    first_error_norm: float
    predicted_sum: float
    observed_partial_sums: tuple
    nondecreasing: bool
    bounded: bool
    sum_limit: float  # limit of the summed errors given zero per-term limits


def lemma_geometric_check(P, E1_norm, terms, term_limits=None):
    """Partial sums of ``E1_norm * P**(i-1)`` against ``E1_norm / (1 - P)``.

    With ``P < 1`` the norms have a summable geometric majorant, so zero
    per-term limits (``term_limits``, default all zero) give a zero limit
    for the sum.  ``P >= 1`` raises :class:`RatioOutOfRange`.
    """
    if P < 0:
        raise ValueError("ratio P must be >= 0")
    if E1_norm < 0:
        raise ValueError("E1_norm must be >= 0")
    if terms < 1:
        raise ValueError("terms must be >= 1")
    norms = E1_norm * P ** np.arange(terms, dtype=float)
    partial = np.cumsum(norms)
    if P >= 1:
        raise RatioOutOfRange(
            P,
            f"ratio P = {P:g} >= 1: error norms do not decay, the sum is unbounded",
            partial,
        )
    predicted = E1_norm / (1 - P)
    limits = np.zeros(terms) if term_limits is None else np.asarray(term_limits, dtype=float)
    return GeometricBoundCheck(
        ratio=float(P),
        first_error_norm=float(E1_norm),
        predicted_sum=float(predicted),
        observed_partial_sums=tuple(float(v) for v in partial),
        nondecreasing=bool(np.all(np.diff(partial) >= 0)),
        bounded=bool(np.all(partial <= predicted + 1e-9)),
        sum_limit=float(np.sum(limits)),
    )


# -- report -----------------------------------------------------------------

@dataclass
class StabilityReport:
    config: object
    local_stability: list = field(default_factory=list)
    frequency_sweep: Optional[SweepResult] = None
    closed_loop: Optional[ClosedLoopResult] = None
    strong_growth: Optional[GrowthResult] = None
    probe: object = None
    diagnostics: list = field(default_factory=list)

    @property
    def sweep_supremum(self):
        return None if self.frequency_sweep is None else self.frequency_sweep.supremum

    @property
    def string_stable_frequency_criterion(self):
        return None if self.frequency_sweep is None else self.frequency_sweep.string_stable

    @property
    def ok(self):
        return not self.diagnostics


def analyze(config, platoon_sizes=None, include_probe=None):
    """Run every check; failures are recorded as diagnostics instead of raised.

    ``platoon_sizes`` defaults to ``config.platoon_sizes``; the probe runs
    when ``config.probe`` is set unless ``include_probe`` says otherwise.
    """
    report = StabilityReport(config)
    sizes = config.platoon_sizes if platoon_sizes is None else platoon_sizes
    if include_probe is None:
        include_probe = config.probe is not None

    def attempt(name, fn):
        try:
            return fn()
        except (PlatoonStabError, ArithmeticError, ValueError) as exc:
            report.diagnostics.append({"check": name, "error": type(exc).__name__, "message": str(exc)})
            return None

    report.local_stability = attempt("local_stability", lambda: check_local_all(config)) or []
    report.frequency_sweep = attempt("frequency_sweep", lambda: sweep_propagation(config))
    report.closed_loop = attempt("closed_loop", lambda: check_closed_loop(config))
    if sizes:
        report.strong_growth = attempt("strong_growth", lambda: check_strong_growth(config, sizes))
    if include_probe:
        spec = config.probe
        kwargs = {} if spec is None else dict(path=spec.path, n_max=spec.n_max, bound=spec.bound, x_fixed=spec.x)
        report.probe = attempt("probe", lambda: path_probe(config, **kwargs))
    return report
