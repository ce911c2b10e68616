"""Laplace-domain model of a constant-spacing platoon with leader and predecessor loops.

Vehicle 1 tracks the shifted trajectory of an imaginary leader moving at
constant speed ``v0``; every later vehicle combines a leader loop ``K_l``
(tracking its own shifted reference) with a predecessor loop ``K_p``
(holding spacing ``r`` to the vehicle ahead).  Vehicle ``i`` meets the
speed drop ``p * v0`` at time ``i * T``.

Shift factors follow ``ScenarioConfig.shift_sign``: ``"paper_exact"`` uses
``exp(+s i T)`` exactly as the formulas are usually printed, ``"causal"``
uses the physically meaningful delay ``exp(-s i T)``.
"""

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import DegenerateLoop, ValidationError
from .rational import DelayedRationalSum, RationalFunction, evaluate

CAUSAL = "causal"
PAPER_EXACT = "paper_exact"
SHIFT_MODES = (CAUSAL, PAPER_EXACT)


def default_plant():
    """Integrator plus first-order lag, ``1 / (s (0.5 s + 1))``."""
    return PlantSpec(RationalFunction([1.0], [0.0, 1.0, 0.5]))


def pi_controller(label="PI"):
    """``(s + 1) / s``."""
    return ControllerSpec(RationalFunction([1.0, 1.0], [0.0, 1.0]), label)


@dataclass(frozen=True)
class PlantSpec:
    transfer: RationalFunction

    def __post_init__(self):
        if not self.transfer.is_proper:
            raise ValidationError("plant", "transfer function must be proper")


@dataclass(frozen=True)
class ControllerSpec:
    transfer: RationalFunction
    label: str = ""

    def __post_init__(self):
        if not self.transfer.is_proper:
            raise ValidationError(self.label or "controller", "transfer function must be proper")


@dataclass(frozen=True)
class SweepSpec:
    w_min: float = 1e-3
    w_max: float = 1e3
    points: int = 2000

    def __post_init__(self):
        if not 0 < self.w_min < self.w_max:
            raise ValidationError("sweep.w_min", "require 0 < w_min < w_max")
        if self.points < 2:
            raise ValidationError("sweep.points", "require points >= 2")


@dataclass(frozen=True)
class ProbeSpec:
    path: str = "inv_sqrt_n"
    n_max: int = 2000
    bound: float = 1e6
    x: float = 0.1  # used by the fixed_x path

    def __post_init__(self):
        if self.path not in ("inv_sqrt_n", "fixed_x"):
            raise ValidationError("probe.path", "expected inv_sqrt_n or fixed_x")
        if self.n_max < 4:
            raise ValidationError("probe.n_max", "require n_max >= 4")
        if not self.bound > 0:
            raise ValidationError("probe.bound", "require bound > 0")
        if not self.x > 0:
            raise ValidationError("probe.x", "require x > 0")


@dataclass(frozen=True)
class ScenarioConfig:
    """One platoon experiment.

    Units: ``v0`` m/s, ``T`` s, ``r`` m, ``dt`` and ``t_end`` s; ``p`` is the
    fractional speed drop, so the post-drop speed is ``(1 - p) * v0``.
    """

    v0: float = 20.0
    p: float = 0.25
    T: float = 2.0
    r: float = 10.0
    N: int = 20
    plant: PlantSpec = field(default_factory=default_plant)
    leader_controller: ControllerSpec = field(default_factory=lambda: pi_controller("leader"))
    predecessor_controller: ControllerSpec = field(default_factory=lambda: pi_controller("predecessor"))
    shift_sign: str = CAUSAL
    dt: float = 0.001
    t_end: float = 120.0
    sweep: Optional[SweepSpec] = None
    probe: Optional[ProbeSpec] = None
    platoon_sizes: Optional[tuple] = None

    def __post_init__(self):
        checks = [
            ("v0", self.v0 > 0, "must be > 0"),
            ("p", 0 <= self.p <= 1, "must lie in 0..1"),
            ("T", self.T > 0, "must be > 0"),
            ("r", self.r > 0, "must be > 0"),
            ("N", isinstance(self.N, (int, np.integer)) and self.N >= 1, "must be an integer >= 1"),
            ("dt", self.dt > 0, "must be > 0"),
            ("t_end", self.t_end > self.dt, "must exceed dt"),
            ("shift_sign", self.shift_sign in SHIFT_MODES, f"must be one of {', '.join(SHIFT_MODES)}"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ValidationError(name, message)
        if self.platoon_sizes is not None:
            sizes = tuple(int(n) for n in self.platoon_sizes)
            if any(n < 1 for n in sizes):
                raise ValidationError("platoon_sizes", "sizes must be >= 1")
            object.__setattr__(self, "platoon_sizes", sizes)

    @property
    def sigma(self):
        """Sign of the shift exponent: +1 (paper_exact) or -1 (causal)."""
        return 1.0 if self.shift_sign == PAPER_EXACT else -1.0

    def replace(self, **changes):
        return replace(self, **changes)

    def drop_time(self, i):
        return i * self.T


class Loop(NamedTuple):
    KlH: RationalFunction
    KpH: RationalFunction
    one_plus_KlH: RationalFunction
    D: RationalFunction            # 1 + (K_l + K_p) H
    gamma: RationalFunction        # K_p H / D
    leader_gain: RationalFunction  # K_l H / D
    inv_lead: RationalFunction     # 1 / (1 + K_l H)
    inv_D: RationalFunction        # 1 / D


@lru_cache(maxsize=64)
def _loop(H, Kl, Kp):
    KlH = Kl * H
    KpH = Kp * H
    one_plus = 1 + KlH
    D = 1 + (Kl + Kp) * H
    if one_plus.is_zero:
        raise DegenerateLoop("1 + K_l H cancels to zero")
    if D.is_zero:
        raise DegenerateLoop("1 + (K_l + K_p) H cancels to zero")
    return Loop(
        KlH=KlH,
        KpH=KpH,
        one_plus_KlH=one_plus,
        D=D,
        gamma=KpH / D,
        leader_gain=KlH / D,
        inv_lead=1 / one_plus,
        inv_D=1 / D,
    )


def loop_functions(config):
    """Closed-loop rational building blocks for ``config`` (cached)."""
    return _loop(
        config.plant.transfer,
        config.leader_controller.transfer,
        config.predecessor_controller.transfer,
    )


def _drop_input(config):
    return RationalFunction([config.p * config.v0], [0.0, 0.0, 1.0])


def _spacing_input(config):
    return RationalFunction([config.r], [0.0, 1.0])


def build_reference(config, i):
    """Reference position of vehicle ``i`` in the Laplace domain.

    ``v0/s^2 - i r/s - (p v0/s^2) exp(sigma i T s)``; vehicle 0 is the
    imaginary leader and never slows down.
    """
    if i < 0:
        raise ValueError("vehicle index must be >= 0")
    ramp = RationalFunction([config.v0], [0.0, 0.0, 1.0])
    if i == 0:
        return DelayedRationalSum.of(ramp)
    return DelayedRationalSum([
        (0.0, ramp - _spacing_input(config).scaled(i)),
        (config.sigma * i * config.T, -_drop_input(config)),
    ])


@dataclass(frozen=True)
class ErrorTransform:
    index: int
    expression: DelayedRationalSum

    def __call__(self, s):
        return self.expression(s)


def _drop_difference(config, loop, later, earlier):
    """``K_l H / D * (p v0/s^2) * (exp(sigma later T s) - exp(sigma earlier T s))``."""
    gq = loop.leader_gain * _drop_input(config)
    sig = config.sigma * config.T
    return DelayedRationalSum([(sig * later, gq), (sig * earlier, -gq)])


def error_series(config, n):
    """Spacing-error transforms ``E_1 .. E_n``.

    ``E_1`` is vehicle 1's error against its shifted reference, ``E_2``
    follows from the definition ``E_2 = X_1 - X_2 - r/s``, and later
    errors obey ``E_i = Gamma E_{i-1} + K_l H/D * drop_i - (r/s)/D``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    loop = loop_functions(config)
    spacing = DelayedRationalSum.of(_spacing_input(config) * loop.inv_D)
    out = [ErrorTransform(1, build_reference(config, 1) * loop.inv_lead)]
    if n == 1:
        return out
    current = -_drop_difference(config, loop, 1, 2) - spacing
    out.append(ErrorTransform(2, current))
    for i in range(3, n + 1):
        current = current * loop.gamma + _drop_difference(config, loop, i, i - 1) - spacing
        out.append(ErrorTransform(i, current))
    return out


def cumulative_closed_form(config, n, series=None):
    """Closed form of ``sum_{i=2}^n E_i`` obtained by telescoping the recursion."""
    if n < 2:
        raise ValueError("n must be >= 2")
    loop = loop_functions(config)
    if series is None:
        series = error_series(config, n)
    E_n = series[n - 1].expression
    inner = (
        -(E_n * loop.gamma)
        - _drop_difference(config, loop, 1, n)
        - DelayedRationalSum.of((_spacing_input(config) * loop.inv_D).scaled(n - 1))
    )
    return inner * (loop.D * loop.inv_lead)


def propagation_ratio(config):
    """Homogeneous error propagation factor ``K_p H / (1 + (K_l + K_p) H)``."""
    return loop_functions(config).gamma


def error_values_at(config, s, n):
    """Values of ``E_1 .. E_n`` at the point(s) ``s`` by scalar recursion.

    Returns an array of shape ``(n,) + shape(s)``.  Overflow of the shift
    factors yields non-finite entries rather than an exception.
    """
    loop = loop_functions(config)
    s = np.asarray(s, dtype=complex)
    sig = config.sigma * config.T
    with np.errstate(over="ignore", invalid="ignore"):
        ref1 = config.v0 / s**2 - config.r / s - config.p * config.v0 / s**2 * np.exp(sig * s)
        gq = evaluate(loop.leader_gain, s) * config.p * config.v0 / s**2
        gamma = evaluate(loop.gamma, s)
        spacing = config.r / s * evaluate(loop.inv_D, s)
        out = np.empty((n,) + s.shape, dtype=complex)
        out[0] = ref1 * evaluate(loop.inv_lead, s)
        if n >= 2:
            out[1] = -gq * (np.exp(sig * s) - np.exp(2 * sig * s)) - spacing
        for i in range(3, n + 1):
            out[i - 1] = (
                gamma * out[i - 2]
                + gq * (np.exp(i * sig * s) - np.exp((i - 1) * sig * s))
                - spacing
            )
    return out


def _bracket_factors(config, x):
    loop = loop_functions(config)
    lead_ratio = evaluate(loop.KpH * loop.inv_lead, x)
    lead_share = evaluate(loop.KlH * loop.inv_lead, x)
    inv_lead = evaluate(loop.inv_lead, x)
    return lead_ratio, lead_share, inv_lead


def necessary_condition_term(config, x, n, E_n=None):
    """Bracketed expression whose joint limit ``x -> 0, n -> inf`` must vanish.

    ``-(K_p H/(1+K_l H)) (x/n) E_n(x)
      - (K_l H/(1+K_l H)) (p v0/(n x)) (exp(sigma x T) - exp(sigma n x T))
      - ((n-1)/n) r/(1 + K_l H(x))``

    ``E_n`` may be an :class:`ErrorTransform`, a precomputed value, or
    ``None`` to evaluate it by scalar recursion at ``s = x``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not x > 0:
        raise ValueError("x must be positive")
    if E_n is None:
        e_val = error_values_at(config, x, n)[-1]
    elif isinstance(E_n, ErrorTransform):
        e_val = E_n(x)
    else:
        e_val = complex(E_n)
    lead_ratio, lead_share, inv_lead = _bracket_factors(config, x)
    sig = config.sigma * config.T
    drop = config.p * config.v0 / (n * x) * (math.exp(sig * x) - math.exp(sig * n * x))
    return complex(
        -lead_ratio * (x / n) * e_val
        - lead_share * drop
        - (n - 1) / n * config.r * inv_lead
    )


def growth_kernel(n, T, b=0):
    """Growth kernel ``exp(T sqrt(n)) / n**(b/2 + 1)`` along ``x = 1/sqrt(n)``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(over="ignore"):
        return np.exp(T * np.sqrt(n)) / n ** (b / 2 + 1)


def kernel_first_exceed(T, bound, b=0, n_max=10**6):
    """Smallest integer ``n >= 1`` with ``growth_kernel(n) > bound``."""
    n = np.arange(1, n_max + 1)
    hits = np.flatnonzero(growth_kernel(n, T, b) > bound)
    return int(n[hits[0]]) if hits.size else None


class ProbeSample(NamedTuple):
    n: int
    x: float
    value: complex
    error: Optional[str] = None


@dataclass(frozen=True)
class ProbeResult:
    path_label: str
    samples: tuple
    verdict: str  # diverges | converges_to_zero | converges_nonzero
    divergence_threshold_n: Optional[int]
    bound: float

    @property
    def magnitudes(self):
        return np.array([abs(s.value) for s in self.samples])


PATHS = {
    "inv_sqrt_n": lambda n: 1.0 / np.sqrt(n),
}


def _resolve_path(path, x_fixed):
    if callable(path):
        return getattr(path, "__name__", "custom"), path
    name = str(path).replace("-", "_")
    if name == "inv_sqrt_n":
        return name, PATHS[name]
    if name == "fixed_x":
        return name, lambda n: np.full(np.shape(n), float(x_fixed))
    raise ValueError(f"unknown probe path {path!r}")


def _classify_tail(ns, mags, zero_atol):
    finite = np.isfinite(mags)
    ns, mags = ns[finite], mags[finite]
    tail = ns >= ns[-1] / 2
    if np.max(mags[tail]) <= zero_atol:
        return "converges_to_zero"
    positive = tail & (mags > 0)
    if np.count_nonzero(positive) >= 2:
        slope = np.polyfit(np.log(ns[positive]), np.log(mags[positive]), 1)[0]
        if slope < -0.1:
            return "converges_to_zero"
    return "converges_nonzero"


def path_probe(config, path="inv_sqrt_n", n_max=2000, bound=1e6, x_fixed=0.1, zero_atol=1e-9):
    """Evaluate the necessary-condition bracket along a path ``x = x(n)``.

    Samples run over ``n = 2 .. n_max``.  The verdict is ``diverges`` when
    ``|bracket|`` exceeds ``bound`` (the first such ``n`` is reported);
    otherwise the tail decay decides between ``converges_to_zero`` (power-law
    decay with log-log slope below -0.1, or magnitudes below ``zero_atol``)
    and ``converges_nonzero``.
    """
    if n_max < 4:
        raise ValueError("n_max must be >= 4")
    if not bound > 0:
        raise ValueError("bound must be positive")
    label, x_of_n = _resolve_path(path, x_fixed)
    ns = np.arange(2, n_max + 1)
    xs = np.asarray(x_of_n(ns), dtype=float)
    loop = loop_functions(config)
    sig = config.sigma * config.T
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        s = xs.astype(complex)
        gq = evaluate(loop.leader_gain, s) * config.p * config.v0 / s**2
        gamma = evaluate(loop.gamma, s)
        spacing = config.r / s * evaluate(loop.inv_D, s)
        # E_n at x_n for every n at once: iterate i and freeze once i == n
        current = -gq * (np.exp(sig * s) - np.exp(2 * sig * s)) - spacing
        e_n = current.copy()
        for i in range(3, n_max + 1):
            active = ns >= i
            current = np.where(
                active,
                gamma * current + gq * (np.exp(i * sig * s) - np.exp((i - 1) * sig * s)) - spacing,
                current,
            )
            e_n = np.where(ns == i, current, e_n)
        lead_ratio, lead_share, inv_lead = _bracket_factors(config, s)
        drop = config.p * config.v0 / (ns * xs) * (np.exp(sig * xs) - np.exp(sig * ns * xs))
        values = (
            -lead_ratio * (xs / ns) * e_n
            - lead_share * drop
            - (ns - 1) / ns * config.r * inv_lead
        )
    mags = np.abs(values)
    samples = []
    for n, x, v in zip(ns, xs, values):
        err = None if np.isfinite(v) else "non-finite value (overflow)"
        samples.append(ProbeSample(int(n), float(x), complex(v), err))
    exceeded = np.flatnonzero(~(mags <= bound))
    if exceeded.size:
        threshold = int(ns[exceeded[0]])
        verdict = "diverges"
    else:
        threshold = None
        verdict = _classify_tail(ns, mags, zero_atol)
    return ProbeResult(label, tuple(samples), verdict, threshold, float(bound))
