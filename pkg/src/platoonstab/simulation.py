"""Fixed-step time-domain simulation of the platoon closed loop.

Every vehicle shares the plant ``H`` and the controllers ``K_l``, ``K_p``,
each realized in controllable canonical form.  Vehicle 1 runs the leader
loop only; vehicles ``i >= 2`` add the predecessor loop.  The whole platoon
is one linear system

    X' = A X + B U(t),    U = [x_ref_1 .. x_ref_N, 1]

integrated with the classical fourth-order Runge-Kutta method.  Because the
system is linear the RK4 step is itself a linear map, so the stage formulas
are evaluated once on identity columns and each step costs one
matrix-vector product.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    AlgebraicLoopError,
    ImproperTransferFunction,
    NonCausalMode,
    NumericalBlowup,
    WindowTooLong,
)
from .model import CAUSAL
from .rational import _rational

BLOWUP_THRESHOLD = 1e12
KINK_MARGIN = 1e-12
CHUNK = 4096


class StateSpaceRealization(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float

    @property
    def state_dimension(self):
        return self.A.shape[0]

    def transfer_at(self, s):
        """``C (sI - A)^-1 B + D`` at the point(s) ``s``."""
        s = np.asarray(s, dtype=complex)
        n = self.state_dimension
        flat = s.reshape(-1)
        out = np.full(flat.shape, self.D, dtype=complex)
        if n:
            eye = np.eye(n)
            for k, sk in enumerate(flat):
                out[k] += self.C @ np.linalg.solve(sk * eye - self.A, self.B)
        return out.reshape(s.shape)


def realize_statespace(f):
    """Controllable canonical realization of a proper rational function."""
    f = _rational(f)
    num, den = f.num, f.den
    if num.degree > den.degree:
        raise ImproperTransferFunction(
            f"numerator degree {num.degree} exceeds denominator degree {den.degree}"
        )
    n = den.degree
    lead = den.leading
    a = den.coeffs / lead
    b = np.zeros(n + 1)
    b[: len(num.coeffs)] = num.coeffs / lead
    d = float(b[n])
    A = np.zeros((n, n))
    if n:
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -a[:n] + 0.0
    B = np.zeros(n)
    if n:
        B[-1] = 1.0
    C = b[:n] - d * a[:n]
    return StateSpaceRealization(A, B, C, d)


def reference_positions(config, t, offset=0.0):
    """``x_ref_i(t) = v0 t - i r - p v0 (t - iT)^+`` for ``i = 1..N``; shape ``t.shape + (N,)``."""
    t = np.asarray(t, dtype=float)[..., None]
    i = np.arange(1, config.N + 1, dtype=float)
    lag = np.maximum(t - i * config.T, 0.0)
    return config.v0 * t - i * config.r - config.p * config.v0 * lag + offset


def reference_velocities(config, t):
    t = np.asarray(t, dtype=float)[..., None]
    i = np.arange(1, config.N + 1, dtype=float)
    return config.v0 - config.p * config.v0 * (t > i * config.T)


class _Platoon(NamedTuple):
    A: np.ndarray        # state matrix
    B: np.ndarray        # input map for U = [refs, 1]
    Wx: np.ndarray       # signals [x; u] = Wx X + Wu U
    Wu: np.ndarray
    plant_blocks: tuple  # state slices of each vehicle's plant
    plant: StateSpaceRealization


def _assemble(config):
    N = config.N
    H = realize_statespace(config.plant.transfer)
    Kl = realize_statespace(config.leader_controller.transfer)
    Kp = realize_statespace(config.predecessor_controller.transfer)
    nh, nl, npd = H.state_dimension, Kl.state_dimension, Kp.state_dimension
    blocks = []
    offset = 0
    for i in range(N):
        sizes = (nh, nl, npd if i else 0)
        slices = []
        for size in sizes:
            slices.append(slice(offset, offset + size))
            offset += size
        blocks.append(slices)
    n = offset
    nu = N + 1  # refs and the constant 1

    # signal equations  M [x; u] = K X + L U
    M = np.eye(2 * N)
    K = np.zeros((2 * N, n))
    L = np.zeros((2 * N, nu))
    for i, (sp, sl, spp) in enumerate(blocks):
        xi, ui = i, N + i
        M[xi, ui] -= H.D
        K[xi, sp] = H.C
        M[ui, xi] += Kl.D
        K[ui, sl] = Kl.C
        L[ui, i] = Kl.D
        if i:
            M[ui, xi] += Kp.D
            M[ui, xi - 1] -= Kp.D
            K[ui, spp] = Kp.C
            L[ui, N] = -Kp.D * config.r
    if np.linalg.cond(M) > 1e12:
        raise AlgebraicLoopError("feedthrough terms make the interconnection singular")
    Wx = np.linalg.solve(M, K)
    Wu = np.linalg.solve(M, L)

    # state equations  X' = S X + Bw [x; u] + Bu U
    S = np.zeros((n, n))
    Bw = np.zeros((n, 2 * N))
    Bu = np.zeros((n, nu))
    for i, (sp, sl, spp) in enumerate(blocks):
        S[sp, sp] = H.A
        Bw[sp, N + i] = H.B
        S[sl, sl] = Kl.A
        Bu[sl, i] = Kl.B
        Bw[sl, i] = -Kl.B
        if i:
            S[spp, spp] = Kp.A
            Bw[spp, i - 1] = Kp.B
            Bw[spp, i] = -Kp.B
            Bu[spp, N] = -Kp.B * config.r
    A = S + Bw @ Wx
    B = Bu + Bw @ Wu
    return _Platoon(A, B, Wx, Wu, tuple(b[0] for b in blocks), H)


def _rk4_maps(A, B, h):
    """Classical RK4 step as ``X+ = Phi X + M0 U(t) + Mh U(t + h/2) + M1 U(t + h)``."""
    n, m = B.shape
    width = n + 3 * m
    EX = np.zeros((n, width))
    EX[:, :n] = np.eye(n)
    U0, Uh, U1 = (np.zeros((n, width)) for _ in range(3))
    U0[:, n:n + m] = B
    Uh[:, n + m:n + 2 * m] = B
    U1[:, n + 2 * m:] = B
    k1 = A @ EX + U0
    k2 = A @ (EX + h / 2 * k1) + Uh
    k3 = A @ (EX + h / 2 * k2) + Uh
    k4 = A @ (EX + h * k3) + U1
    step = EX + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return step[:, :n], step[:, n:n + m], step[:, n + m:n + 2 * m], step[:, n + 2 * m:]


def _equilibrium(config, system, offset):
    """State on the pre-drop profile, or None if the loop cannot hold it with zero error."""
    A, B, Wx, Wu = system.A, system.B, system.Wx, system.Wu
    N, n = config.N, A.shape[0]
    idx = np.arange(1, N + 1, dtype=float)
    U0 = np.concatenate([-idx * config.r + offset, [1.0]])
    U1 = np.concatenate([np.full(N, config.v0), [0.0]])
    Px, Qx = Wx[:N], Wu[:N]
    I = np.eye(n)
    Z = np.zeros((n, n))
    Zx = np.zeros((N, n))
    lhs = np.block([[A, -I], [Z, A], [Px, Zx], [Zx, Px]])
    rhs = np.concatenate([
        -B @ U0,
        -B @ U1,
        (-idx * config.r + offset) - Qx @ U0,
        np.full(N, config.v0) - Qx @ U1,
    ])
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    residual = np.max(np.abs(lhs @ sol - rhs))
    if residual > 1e-9 * max(1.0, np.max(np.abs(rhs))):
        return None
    return sol[:n], sol[n:]


def _plant_on_profile(config, system, offset):
    """Plant states at the pre-drop position and speed; controller states zero."""
    H = system.plant
    X = np.zeros(system.A.shape[0])
    if H.state_dimension == 0:
        return X
    rows = [H.C]
    if H.state_dimension > 1:
        rows.append(H.C @ H.A)
    rows = np.array(rows)
    for i, sl in enumerate(system.plant_blocks, start=1):
        target = np.array([-i * config.r + offset, config.v0])[: len(rows)]
        X[sl], *_ = np.linalg.lstsq(rows, target, rcond=None)
    return X


@dataclass(frozen=True)
class PlatoonTrace:
    """Sampled platoon trajectories on the grid ``t_k = k dt``.

    ``x``, ``v`` and ``u`` have shape ``(steps, N)``.  The error columns are
    derived from the positions and the reference, so they are always
    consistent with them.
    """

    config: object
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    initial_condition: str = "on_profile"
    position_offset: float = 0.0
    complete: bool = True

    @property
    def steps(self):
        return self.t.shape[0]

    @property
    def reference(self):
        return reference_positions(self.config, self.t, self.position_offset)

    @property
    def e(self):
        """Spacing errors; vehicle 1 is measured against its shifted reference."""
        out = np.empty_like(self.x)
        out[:, 0] = self.reference[:, 0] - self.x[:, 0]
        out[:, 1:] = self.x[:, :-1] - self.x[:, 1:] - self.config.r
        return out

    @property
    def eprime(self):
        return self.reference - self.x


def simulate(config, initial_condition="on_profile", position_offset=0.0):
    """Integrate the platoon over ``[0, t_end)`` with step ``dt``.

    ``initial_condition="on_profile"`` starts every vehicle on its pre-drop
    reference at speed ``v0`` with zero errors (controller integrators hold
    the steady control effort); if the loop cannot hold the profile with
    zero error the plants start on-profile and the controllers at zero.
    ``"rest"`` starts from the zero state, which is the setting of the
    Laplace-domain transforms.
    """
    if config.shift_sign != CAUSAL:
        raise NonCausalMode("non-causal shift mode not simulatable")
    if initial_condition not in ("on_profile", "rest"):
        raise ValueError("initial_condition must be 'on_profile' or 'rest'")
    system = _assemble(config)
    A, B = system.A, system.B
    N, n = config.N, A.shape[0]
    h = config.dt
    steps = int(round(config.t_end / h))
    t = np.arange(steps) * h

    # Integrate the deviation from a nominal ramp solution X0 + X1 t that
    # follows the pre-drop profile exactly.  RK4 reproduces such ramps
    # exactly, so this only keeps rounding from growing with position.
    nominal = None
    if initial_condition == "on_profile":
        nominal = _equilibrium(config, system, position_offset)
    if nominal is not None:
        X0, X1 = nominal
        X = np.zeros(n)
    else:
        X0 = X1 = np.zeros(n)
        X = np.zeros(n) if initial_condition == "rest" else _plant_on_profile(config, system, position_offset)
    inputs = _Inputs(config, position_offset, nominal is not None)

    Phi, M0, Mh, M1 = _rk4_maps(A, B, h)
    kinks = np.arange(1, N + 1) * config.T
    Wx_x, Wu_x = system.Wx[:N], system.Wu[:N]
    Wx_u, Wu_u = system.Wx[N:], system.Wu[N:]
    vel_state = Wx_x @ A
    vel_input = Wx_x @ B
    idx = np.arange(1, N + 1, dtype=float)
    U0 = np.concatenate([-idx * config.r + position_offset, [1.0]])
    U1 = np.concatenate([np.full(N, config.v0), [0.0]])

    x = np.empty((steps, N))
    v = np.empty((steps, N))
    u = np.empty((steps, N))
    history = np.empty((min(CHUNK, steps), n))

    def record(lo, hi, states):
        tc = t[lo:hi]
        dU = inputs(tc)
        dV = inputs.rate(tc)
        x[lo:hi] = states @ Wx_x.T + dU @ Wu_x.T
        u[lo:hi] = states @ Wx_u.T + dU @ Wu_u.T
        v[lo:hi] = states @ vel_state.T + dU @ vel_input.T + dV @ Wu_x.T
        if nominal is not None:
            x[lo:hi] += config.v0 * tc[:, None] - idx * config.r + position_offset
            v[lo:hi] += config.v0
            u[lo:hi] += (X0 @ Wx_u.T + U0 @ Wu_u.T) + tc[:, None] * (X1 @ Wx_u.T + U1 @ Wu_u.T)

    for lo in range(0, steps, CHUNK):
        hi = min(lo + CHUNK, steps)
        tc = t[lo:hi]
        F = inputs(tc) @ M0.T + inputs(tc + h / 2) @ Mh.T + inputs(tc + h) @ M1.T
        special = {}
        for tk in kinks:
            k = int(np.floor(tk / h))
            for kk in (k - 1, k):
                if lo <= kk < hi and t[kk] + KINK_MARGIN < tk < t[kk] + h - KINK_MARGIN:
                    special.setdefault(kk, []).append(tk)
        for k in range(lo, hi):
            history[k - lo] = X
            if k in special:
                X = _split_step(A, B, X, t[k], h, sorted(special[k]), inputs)
            else:
                X = Phi @ X + F[k - lo]
        states = history[: hi - lo]
        full = states + X0 + tc[:, None] * X1
        bad = np.flatnonzero(~(np.max(np.abs(full), axis=1) <= BLOWUP_THRESHOLD))
        if bad.size:
            stop = lo + int(bad[0])
            record(lo, stop, states[: bad[0]])
            partial = PlatoonTrace(
                config, t[:stop], x[:stop], v[:stop], u[:stop],
                initial_condition, position_offset, complete=False,
            )
            raise NumericalBlowup(stop, trace=partial)
        record(lo, hi, states)
    return PlatoonTrace(config, t, x, v, u, initial_condition, position_offset)


class _Inputs:
    """Input vector ``U(t)`` or, around the nominal ramp, its drop part only."""

    def __init__(self, config, offset, deviation):
        self.config = config
        self.offset = offset
        self.deviation = deviation
        self.i = np.arange(1, config.N + 1, dtype=float)

    def __call__(self, t):
        cfg = self.config
        t = np.asarray(t, dtype=float)
        if self.deviation:
            lag = np.maximum(t[..., None] - self.i * cfg.T, 0.0)
            refs = -cfg.p * cfg.v0 * lag
            const = np.zeros(t.shape + (1,))
        else:
            refs = reference_positions(cfg, t, self.offset)
            const = np.ones(t.shape + (1,))
        return np.concatenate([refs, const], axis=-1)

    def rate(self, t):
        cfg = self.config
        t = np.asarray(t, dtype=float)
        if self.deviation:
            rates = -cfg.p * cfg.v0 * (t[..., None] > self.i * cfg.T)
        else:
            rates = reference_velocities(cfg, t)
        return np.concatenate([rates, np.zeros(t.shape + (1,))], axis=-1)


def _split_step(A, B, X, t0, h, cuts, inputs):
    """One step of length ``h`` split at reference kinks so each piece is smooth."""
    edges = [t0] + list(cuts) + [t0 + h]
    for a, b in zip(edges[:-1], edges[1:]):
        Phi, M0, Mh, M1 = _rk4_maps(A, B, b - a)
        X = Phi @ X + M0 @ inputs(a) + Mh @ inputs((a + b) / 2) + M1 @ inputs(b)
    return X


class ErrorSeries(NamedTuple):
    e: np.ndarray        # (steps, N)
    eprime: np.ndarray   # (steps, N)
    total: np.ndarray    # (steps,) signed sum of e_i
    abs_total: np.ndarray


def extract_errors(trace):
    """Spacing errors, reference errors and their platoon sums on the trace grid."""
    e = trace.e
    return ErrorSeries(e, trace.eprime, e.sum(axis=1), np.abs(e).sum(axis=1))


class SteadyStateMetrics(NamedTuple):
    window: float
    mean_abs_e: np.ndarray
    max_abs_e: np.ndarray
    mean_abs_eprime: np.ndarray
    max_abs_eprime: np.ndarray


def steady_state_metrics(trace, tail_window):
    """Per-vehicle mean and max of ``|e_i|`` and ``|e'_i|`` over the final window."""
    duration = trace.steps * trace.config.dt
    if not 0 < tail_window < duration:
        raise WindowTooLong(f"tail window {tail_window} s must be shorter than the trace ({duration:g} s)")
    tail = trace.t >= trace.t[-1] - tail_window
    e = np.abs(trace.e[tail])
    ep = np.abs(trace.eprime[tail])
    return SteadyStateMetrics(float(tail_window), e.mean(axis=0), e.max(axis=0), ep.mean(axis=0), ep.max(axis=0))
