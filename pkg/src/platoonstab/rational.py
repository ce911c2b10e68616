"""Rational functions of the Laplace variable ``s`` with exponential shift factors.

Polynomials store real (occasionally complex) coefficients in ascending
degree order.  A :class:`RationalFunction` is kept in canonical form:
common factors cancelled and a monic denominator.  A
:class:`DelayedRationalSum` is a finite sum ``sum_k R_k(s) * exp(theta_k * s)``;
``theta < 0`` is a time delay and ``theta > 0`` a time advance.
"""

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    AdvanceTermRejected,
    DivisionByZeroFunction,
    ImpulsivePart,
    NonConvergence,
    PoleProximity,
    ZeroFunction,
)

ROOT_TOL = 1e-12
ROOT_MAX_ITER = 500
CLUSTER_RADIUS = 1e-7
CANCEL_TOL = 1e-9
# root-based cancellation is skipped above this degree (clustered high-order
# roots are not resolvable in double precision)
CANCEL_MAX_DEGREE = 16
POLE_TOL = 1e-9
FINAL_VALUE_RTOL = 1e-9

_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny


def _trim(c):
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1, dtype=c.dtype)
    return c[: nz[-1] + 1]


def _as_array(coefficients):
    c = np.atleast_1d(np.asarray(coefficients))
    if c.ndim != 1:
        raise ValueError("coefficients must be a flat sequence")
    if np.iscomplexobj(c):
        if np.all(c.imag == 0):
            c = c.real
        c = c.astype(complex if np.iscomplexobj(c) else float)
    else:
        c = c.astype(float)
    if c.size == 0:
        c = np.zeros(1)
    # subnormal coefficients carry no usable precision
    c = np.where(np.abs(c) < _TINY, 0.0, c).astype(c.dtype)
    return _trim(c)


def _horner(c, s):
    acc = np.zeros_like(s, dtype=np.result_type(c, s)) + c[-1]
    for a in c[-2::-1]:
        acc = acc * s + a
    return acc


def _noise_free_sum(terms, bounds):
    """Sum coefficient arrays, zeroing entries at rounding-noise level."""
    size = max(len(t) for t in terms)
    total = np.zeros(size, dtype=np.result_type(*terms))
    bound = np.zeros(size)
    for t, b in zip(terms, bounds):
        total[: len(t)] += t
        bound[: len(b)] += b
    total[np.abs(total) <= 16 * _EPS * bound] = 0
    return total


class Polynomial:
    """Immutable polynomial with ascending coefficients."""

    __slots__ = ("_c", "_roots")

    def __init__(self, coefficients):
        c = _as_array(coefficients)
        c.setflags(write=False)
        self._c = c
        self._roots = None

    @property
    def coeffs(self):
        return self._c

    @property
    def degree(self):
        return len(self._c) - 1

    @property
    def is_zero(self):
        return len(self._c) == 1 and self._c[0] == 0

    @property
    def is_real(self):
        return not np.iscomplexobj(self._c)

    @property
    def leading(self):
        return self._c[-1]

    def __call__(self, s):
        return _horner(self._c, s)

    def __repr__(self):
        return f"Polynomial({self._c.tolist()})"

    def __len__(self):
        return len(self._c)

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return np.array_equal(self._c, other._c)
        return NotImplemented

    def __hash__(self):
        return hash(tuple(self._c.tolist()))

    def __neg__(self):
        return Polynomial(-self._c)

    def __add__(self, other):
        other = _poly(other)
        return Polynomial(_noise_free_sum([self._c, other._c], [abs(self._c), abs(other._c)]))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-_poly(other))

    def __rsub__(self, other):
        return _poly(other) - self

    def __mul__(self, other):
        if np.isscalar(other):
            return Polynomial(self._c * other)
        return Polynomial(np.convolve(self._c, _poly(other)._c))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Polynomial(self._c / scalar)

    def __divmod__(self, other):
        other = _poly(other)
        if other.is_zero:
            raise ZeroDivisionError("polynomial division by zero")
        num = self._c.astype(np.result_type(self._c, other._c)).copy()
        den = other._c
        n, d = len(num) - 1, len(den) - 1
        if n < d:
            return Polynomial([0.0]), Polynomial(num)
        quot = np.zeros(n - d + 1, dtype=num.dtype)
        for k in range(n - d, -1, -1):
            q = num[k + d] / den[d]
            quot[k] = q
            num[k: k + d + 1] -= q * den
            num[k + d] = 0
        return Polynomial(quot), Polynomial(num[:d] if d > 0 else [0.0])

    def trailing_zeros(self):
        """Multiplicity of the root at the origin (exact zero coefficients)."""
        if self.is_zero:
            raise ZeroFunction("zero polynomial has no finite order at the origin")
        return int(np.flatnonzero(self._c)[0])

    def shift_down(self, k):
        """Divide by ``s**k``; the low ``k`` coefficients must be zero."""
        return Polynomial(self._c[k:]) if k else self

    def taylor(self, point, order=None):
        """Coefficients of ``P(point + h)`` in ascending powers of ``h``."""
        c = self._c.astype(np.result_type(self._c, point)).copy()
        n = len(c) - 1
        out = np.empty(n + 1, dtype=c.dtype)
        for k in range(n + 1):
            for j in range(n - 1, k - 1, -1):
                c[j] += point * c[j + 1]
            out[k] = c[k]
        return out if order is None else out[: order + 1]

    def derivative(self):
        if self.degree == 0:
            return Polynomial([0.0])
        return Polynomial(self._c[1:] * np.arange(1, len(self._c)))

    def monic(self):
        return Polynomial(self._c / self._c[-1])

    def roots(self):
        """All complex roots with repetition (cached)."""
        if self._roots is None:
            r = find_roots(self._c)
            r.setflags(write=False)
            self._roots = r
        return self._roots

    def clustered_roots(self, radius=CLUSTER_RADIUS):
        """Roots merged into (root, multiplicity) clusters."""
        return cluster_roots(self.roots(), radius, real_input=self.is_real)

    @classmethod
    def from_roots(cls, roots, leading=1.0):
        c = np.array([leading], dtype=complex)
        for r in roots:
            c = np.convolve(c, [-r, 1.0])
        if np.all(np.abs(c.imag) <= 1e-14 * np.max(np.abs(c))):
            c = c.real
        return cls(c)


def _poly(value):
    if isinstance(value, Polynomial):
        return value
    return Polynomial(value)


# --------------------------------------------------------------------------
# roots

def find_roots(coefficients, tol=ROOT_TOL, max_iter=ROOT_MAX_ITER):
    """Roots of a polynomial by simultaneous Aberth-Ehrlich iteration.

    Parameters
    ----------
    coefficients : array_like
        Ascending coefficients.
    tol : float
        Required relative backward error ``|P(z)| / sum |a_k| |z|**k``.
    max_iter : int
        Iteration cap; exceeding it raises :class:`NonConvergence`.

    Returns
    -------
    numpy.ndarray
        Complex roots, repeated according to multiplicity.
    """
    a = _as_array(coefficients).astype(complex)
    if len(a) == 1 and a[0] == 0:
        raise ZeroFunction("zero polynomial has no isolated roots")
    k0 = int(np.flatnonzero(a)[0])
    a = a[k0:]
    n = len(a) - 1
    origin = np.zeros(k0, dtype=complex)
    if n == 0:
        return origin
    if n == 1:
        return np.concatenate([origin, [-a[0] / a[1]]])
    p = a / a[-1]
    absp = np.abs(p)
    # initial guesses on a circle whose radius follows the Newton polygon
    radius = max(abs(p[0]) ** (1.0 / n), 1e-8)
    upper = 1.0 + np.max(absp[:-1])
    radius = min(radius, upper)
    angles = 2 * np.pi * np.arange(n) / n + 0.4 + 0.1 / n
    z = radius * np.exp(1j * angles)
    best = np.inf
    extra = 0
    # huge genuine roots overflow the Horner sums; non-finite values are
    # handled explicitly below
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(max_iter):
            pv = np.full(n, p[-1], dtype=complex)
            dv = np.zeros(n, dtype=complex)
            for coef in p[-2::-1]:
                dv = dv * z + pv
                pv = pv * z + coef
            scale = _horner(absp, np.abs(z))
            bwd = np.max(np.abs(pv) / scale)
            if bwd <= tol:
                # keep polishing while the residual still improves markedly
                if bwd > 0.5 * best or extra >= 100 or bwd == 0:
                    break
                extra += 1
            best = min(best, bwd)
            dv = np.where(dv == 0, _EPS * scale, dv)
            ratio = pv / dv
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, 1.0)
            inv = 1.0 / diff
            np.fill_diagonal(inv, 0.0)
            w = ratio / (1.0 - ratio * inv.sum(axis=1))
            w = np.where(np.isfinite(w), w, 0.0)
            z = z - w
            # every root lies inside the Cauchy bound; pull stray iterates back
            far = np.abs(z) > upper
            z[far] = z[far] / np.abs(z[far]) * upper
        else:
            raise NonConvergence(
                f"root iteration did not reach backward error {tol:g} in {max_iter} iterations "
                f"(degree {n}, residual {best:.3g})"
            )
    return np.concatenate([origin, z])


def cluster_roots(roots, radius=CLUSTER_RADIUS, real_input=True):
    """Merge roots closer than ``radius`` into (center, multiplicity) pairs.

    For real polynomials the centers are snapped to the real axis or to
    exact conjugate pairs.
    """
    roots = np.asarray(roots, dtype=complex)
    n = len(roots)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(roots[i] - roots[j]) <= radius:
                parent[find(i)] = find(j)
    groups = defaultdict(list)
    for i in range(n):
        groups[find(i)].append(roots[i])
    clusters = [(complex(np.mean(g)), len(g)) for g in groups.values()]
    if real_input:
        snapped = []
        for c, m in clusters:
            if abs(c.imag) <= radius * max(1.0, abs(c)):
                c = complex(c.real, 0.0)
            snapped.append([c, m])
        upper = [k for k, (c, _) in enumerate(snapped) if c.imag > 0]
        lower = {k for k, (c, _) in enumerate(snapped) if c.imag < 0}
        for k in upper:
            c, m = snapped[k]
            partners = [j for j in lower if snapped[j][1] == m]
            if not partners:
                continue
            j = min(partners, key=lambda j: abs(snapped[j][0] - c.conjugate()))
            centre = 0.5 * (c + snapped[j][0].conjugate())
            snapped[k][0] = centre
            snapped[j][0] = centre.conjugate()
            lower.discard(j)
        clusters = [(c, m) for c, m in snapped]
    clusters.sort(key=lambda cm: (cm[0].real, cm[0].imag))
    return clusters


# --------------------------------------------------------------------------
# Routh-Hurwitz

def routh_array(coefficients):
    """Routh table rows for a polynomial given by ascending coefficients.

    Returns ``None`` in place of the table when a zero pivot appears in the
    first column (a root on the imaginary axis or a sign pattern that the
    plain table cannot resolve).
    """
    c = _as_array(coefficients)
    desc = c[::-1].astype(float)
    n = len(desc) - 1
    width = n // 2 + 1
    r0 = np.zeros(width)
    r1 = np.zeros(width)
    r0[: len(desc[0::2])] = desc[0::2]
    r1[: len(desc[1::2])] = desc[1::2]
    rows = [r0, r1]
    for _ in range(n - 1):
        prev, cur = rows[-2], rows[-1]
        pivot = cur[0]
        if abs(pivot) <= 1e-13 * max(np.max(np.abs(cur)), np.max(np.abs(prev))):
            return None
        nxt = np.zeros(width)
        nxt[:-1] = (pivot * prev[1:] - prev[0] * cur[1:]) / pivot
        rows.append(nxt)
    return rows[: n + 1]


def is_hurwitz(coefficients):
    """True iff every root has strictly negative real part."""
    c = _as_array(coefficients)
    if len(c) == 1:
        return c[0] != 0
    if np.iscomplexobj(c):
        return bool(np.all(find_roots(c).real < 0))
    if not (np.all(c > 0) or np.all(c < 0)):
        return False
    rows = routh_array(c)
    if rows is None:
        return False
    first = np.array([row[0] for row in rows])
    return bool(np.all(first > 0) or np.all(first < 0))


# --------------------------------------------------------------------------
# rational functions

_S = Polynomial([0.0, 1.0])


def _key(poly):
    return poly.coeffs.dtype.char.encode() + poly.coeffs.tobytes()


def _split(poly):
    """Gain and monic factor list of a polynomial, origin roots split off."""
    if poly.is_zero:
        return 0.0, ()
    k = poly.trailing_zeros()
    core = poly.shift_down(k)
    gain = core.leading
    factors = []
    if k:
        factors.append((_S, k))
    if core.degree >= 1:
        factors.append((core / gain if gain != 1 else core, 1))
    return gain, tuple(factors)


def _merge(*lists):
    merged = {}
    for factors in lists:
        for poly, m in factors:
            key = _key(poly)
            if key in merged:
                merged[key][1] += m
            else:
                merged[key] = [poly, m]
    return tuple((p, m) for p, m in merged.values() if m > 0)


def _counts(factors):
    return {_key(p): m for p, m in factors}


def _lcm(a, b):
    out = {_key(p): [p, m] for p, m in a}
    for p, m in b:
        key = _key(p)
        if key in out:
            out[key][1] = max(out[key][1], m)
        else:
            out[key] = [p, m]
    return tuple((p, m) for p, m in out.values())


def _remove(big, small):
    """Factor list ``big / small``; ``small`` must be contained in ``big``."""
    counts = _counts(small)
    out = []
    for p, m in big:
        left = m - counts.get(_key(p), 0)
        if left:
            out.append((p, left))
    return tuple(out)


def _expand(factors, gain=1.0, absolute=False):
    c = np.array([abs(gain) if absolute else gain])
    for poly, m in factors:
        coeffs = np.abs(poly.coeffs) if absolute else poly.coeffs
        for _ in range(m):
            c = np.convolve(c, coeffs)
    return c


def _term_key(factors):
    return tuple(sorted((_key(p), m) for p, m in factors))


def _merge_terms(terms):
    out = {}
    for coef, factors in terms:
        if coef == 0:
            continue
        key = _term_key(factors)
        if key in out:
            out[key][0] += coef
        else:
            out[key] = [coef, factors]
    return tuple((c, f) for c, f in out.values() if c != 0)


def _expand_terms(terms):
    if not terms:
        return Polynomial([0.0])
    if len(terms) == 1:
        coef, factors = terms[0]
        return Polynomial(_expand(factors, coef))
    arrays = [_expand(f, c) for c, f in terms]
    bounds = [_expand(f, c, absolute=True) for c, f in terms]
    return Polynomial(_noise_free_sum(arrays, bounds))


def _root_factor(root):
    if root.imag != 0:
        return Polynomial([abs(root) ** 2, -2 * root.real, 1.0])
    return Polynomial([-root.real + 0.0, 1.0])


def _vanishes_at(poly, root):
    """True when ``poly`` has a root within the cancellation tolerance of ``root``."""
    if poly.degree < 1:
        return False
    if poly.degree <= CANCEL_MAX_DEGREE:
        try:
            return any(abs(r - root) <= CANCEL_TOL for r, _ in poly.clustered_roots())
        except NonConvergence:
            return False
    value = abs(poly(root))
    scale = _horner(np.abs(poly.coeffs), abs(root))
    return value <= 1e-11 * scale


def _pull(factors, index, divisor):
    """Remove one copy of ``divisor`` from the factor at ``index``."""
    poly, m = factors[index]
    reduced, _ = divmod(poly, divisor)
    rest = list(factors[:index]) + ([(poly, m - 1)] if m > 1 else []) + list(factors[index + 1:])
    if reduced.degree >= 1:
        rest.append((reduced, 1))
    return _merge(rest)


def _divisor(root, *candidates):
    """Root factor for ``root``; an exact candidate of the right degree is preferred."""
    exact = _root_factor(root)
    for poly in candidates:
        if poly.degree == exact.degree:
            return poly
    return exact


def _terms_value(terms, s):
    total = 0.0
    scale = 0.0
    for coef, factors in terms:
        v = coef * _factor_values(factors, s)
        total = total + v
        scale = scale + np.abs(v)
    return total, scale


def _numerator_factor_at(terms, root, full=False):
    """Single-term numerator ``(coef, factors, index)`` with factor ``index`` vanishing at ``root``."""
    if len(terms) == 1:
        coef, factors = terms[0]
    else:
        # A sum of products is only collapsed for a root at the origin, where
        # the cancellation decides the final value, and only while the
        # expansion stays well conditioned.  Elsewhere a removable pole is
        # harmless and dividing the expanded sum would cost accuracy, so
        # that is left to an explicit ``reduced()``.
        if abs(root) > CANCEL_TOL and not full:
            return None
        num = _expand_terms(terms)
        if num.degree > CANCEL_MAX_DEGREE or not _vanishes_at(num, root):
            return None
        # kept whole: re-factoring through computed roots would perturb the
        # other roots, while dividing by the denominator factor does not
        lead = num.leading
        return lead, ((Polynomial(num.coeffs / lead), 1),), 0
    for i, (f, _) in enumerate(factors):
        if _vanishes_at(f, root):
            return coef, factors, i
    return None


def _canonical_terms(terms, df, cancel=True, full=False):
    terms = _merge_terms(terms)
    if not terms or _expand_terms(terms).is_zero:
        return (), ()
    # factors shared by every numerator term and the denominator
    shared = dict(_counts(df))
    for _, factors in terms:
        counts = _counts(factors)
        shared = {k: min(m, counts[k]) for k, m in shared.items() if k in counts}
    if shared:
        lookup = {_key(p): p for p, _ in df}
        common = tuple((lookup[k], m) for k, m in shared.items())
        terms = tuple((c, _remove(f, common)) for c, f in terms)
        df = _remove(df, common)
    if not cancel:
        return terms, df
    changed = True
    while changed:
        changed = False
        for j, (g, _) in enumerate(df):
            if g.degree > CANCEL_MAX_DEGREE:
                continue
            try:
                roots = g.clustered_roots()
            except NonConvergence:
                continue
            for root, _ in roots:
                if root.imag < 0:
                    continue
                hit = _numerator_factor_at(terms, root, full)
                if hit is None:
                    continue
                coef, factors, i = hit
                divisor = _divisor(root, factors[i][0], g)
                terms = ((coef, _pull(factors, i, divisor)),)
                df = _pull(df, j, divisor)
                changed = True
                break
            if changed:
                break
    return terms, df


class RationalFunction:
    """Immutable ratio of two polynomials in ``s`` in canonical form.

    The numerator is held as a sum of products of monic factors and the
    (monic) denominator as a product of factors with multiplicities, so
    evaluation stays accurate when high powers of a closed-loop polynomial
    accumulate.  ``num`` and ``den`` expand them to plain polynomials.
    """

    __slots__ = ("terms", "den_factors", "_num", "_den")

    def __init__(self, numerator, denominator=1.0, canonical=True):
        num = _poly(numerator)
        den = _poly(denominator)
        if den.is_zero:
            raise DivisionByZeroFunction("denominator is identically zero")
        gn, nf = _split(num)
        gd, df = _split(den)
        terms = ((gn / gd, nf),) if gn != 0 else ()
        self._assign(terms, df, canonical)

    def _assign(self, terms, df, cancel=True):
        terms, df = _canonical_terms(terms, df, cancel)
        self.terms = terms
        self.den_factors = df
        self._num = None
        self._den = None

    @classmethod
    def _build(cls, terms, df, cancel=True):
        obj = cls.__new__(cls)
        obj._assign(terms, df, cancel)
        return obj

    @property
    def num(self):
        if self._num is None:
            self._num = _expand_terms(self.terms)
        return self._num

    @property
    def den(self):
        if self._den is None:
            self._den = Polynomial(_expand(self.den_factors))
        return self._den

    @classmethod
    def s(cls):
        return cls([0.0, 1.0])

    @classmethod
    def constant(cls, value):
        return cls([value])

    def __repr__(self):
        return f"RationalFunction({self.num.coeffs.tolist()}, {self.den.coeffs.tolist()})"

    @property
    def is_zero(self):
        return not self.terms

    @property
    def is_proper(self):
        return self.is_zero or self.num.degree <= self.den.degree

    @property
    def is_strictly_proper(self):
        return self.is_zero or self.num.degree < self.den.degree

    def __call__(self, s):
        return evaluate(self, s)

    def __neg__(self):
        return self.scaled(-1.0)

    def __add__(self, other):
        return combine(self, _rational(other), "add")

    def __radd__(self, other):
        return combine(_rational(other), self, "add")

    def __sub__(self, other):
        return combine(self, _rational(other), "sub")

    def __rsub__(self, other):
        return combine(_rational(other), self, "sub")

    def __mul__(self, other):
        if isinstance(other, DelayedRationalSum):
            return NotImplemented
        return combine(self, _rational(other), "mul")

    def __rmul__(self, other):
        return combine(_rational(other), self, "mul")

    def __truediv__(self, other):
        return combine(self, _rational(other), "div")

    def __rtruediv__(self, other):
        return combine(_rational(other), self, "div")

    def __pow__(self, k):
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = RationalFunction([1.0])
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, RationalFunction):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.num, self.den))

    def poles(self):
        return poles(self)

    def zeros(self):
        if self.num.degree < 1:
            return []
        return self.num.clustered_roots()

    def ord_at_zero(self):
        return ord_at_zero(self)

    def scaled(self, factor):
        if factor == 0:
            return RationalFunction([0.0])
        obj = RationalFunction.__new__(RationalFunction)
        obj.terms = tuple((c * factor, f) for c, f in self.terms)
        obj.den_factors = self.den_factors
        obj._num = None
        obj._den = self._den
        return obj

    def reduced(self):
        """Lowest-terms form, also cancelling removable roots of summed numerators.

        The default form leaves such roots away from the origin in place
        because dividing an expanded sum costs accuracy; use this for
        coefficient-level comparison rather than evaluation.
        """
        obj = RationalFunction.__new__(RationalFunction)
        terms, df = _canonical_terms(self.terms, self.den_factors, full=True)
        obj.terms, obj.den_factors, obj._num, obj._den = terms, df, None, None
        return obj

    def allclose(self, other, rtol=1e-9):
        """Coefficient-level comparison of canonical forms."""
        other = _rational(other)
        for a, b in ((self.num, other.num), (self.den, other.den)):
            size = max(len(a.coeffs), len(b.coeffs))
            ca = np.pad(a.coeffs, (0, size - len(a.coeffs)))
            cb = np.pad(b.coeffs, (0, size - len(b.coeffs)))
            scale = max(np.max(np.abs(ca)), np.max(np.abs(cb)), 1e-300)
            if np.max(np.abs(ca - cb)) > rtol * scale:
                return False
        return True


def _rational(value):
    if isinstance(value, RationalFunction):
        return value
    if isinstance(value, Polynomial):
        return RationalFunction(value, 1.0, canonical=False)
    if np.isscalar(value):
        return RationalFunction([value], [1.0], canonical=False)
    raise TypeError(f"cannot interpret {type(value).__name__} as a rational function")


def _single_factor_numerator(f):
    if len(f.terms) == 1:
        return f.terms[0]
    gain, factors = _split(f.num)
    return gain, factors


def _add(a, b, sign):
    if b.is_zero:
        return a
    if a.is_zero:
        return b if sign > 0 else -b
    den = _lcm(a.den_factors, b.den_factors)
    qa = _remove(den, a.den_factors)
    qb = _remove(den, b.den_factors)
    terms = [(c, _merge(f, qa)) for c, f in a.terms]
    terms += [(sign * c, _merge(f, qb)) for c, f in b.terms]
    return RationalFunction._build(terms, den)


def combine(a, b, operation):
    """Add, subtract, multiply or divide two rational functions.

    The result is in canonical form (common factors cancelled, monic
    denominator).  Dividing by the zero function raises
    :class:`DivisionByZeroFunction`.
    """
    a, b = _rational(a), _rational(b)
    if operation == "add":
        return _add(a, b, +1)
    if operation == "sub":
        return _add(a, b, -1)
    if operation == "mul":
        if a.is_zero or b.is_zero:
            return RationalFunction([0.0])
        terms = [(ca * cb, _merge(fa, fb)) for ca, fa in a.terms for cb, fb in b.terms]
        return RationalFunction._build(terms, _merge(a.den_factors, b.den_factors))
    if operation == "div":
        if b.is_zero:
            raise DivisionByZeroFunction("division by the zero rational function")
        if a.is_zero:
            return RationalFunction([0.0])
        gain, nf = _single_factor_numerator(b)
        terms = [(c / gain, _merge(f, b.den_factors)) for c, f in a.terms]
        return RationalFunction._build(terms, _merge(a.den_factors, nf))
    raise ValueError(f"unknown operation {operation!r}")


def _factor_roots(factors, radius=CLUSTER_RADIUS):
    out = []
    for poly, m in factors:
        for root, k in poly.clustered_roots(radius):
            for idx, (r, mult) in enumerate(out):
                if abs(r - root) <= radius:
                    out[idx] = (r, mult + k * m)
                    break
            else:
                out.append((root, k * m))
    out.sort(key=lambda rm: (rm[0].real, rm[0].imag))
    return out



def poles(f, radius=CLUSTER_RADIUS):
    """Denominator roots of ``f`` as ``(pole, multiplicity)`` pairs."""
    f = _rational(f)
    return _factor_roots(f.den_factors, radius)


def ord_at_zero(f):
    """Integer ``k`` with ``f(s) ~ c * s**k`` as ``s -> 0``, ``c != 0``."""
    f = _rational(f)
    if f.is_zero:
        raise ZeroFunction("ord_at_zero is undefined for the zero function")
    return f.num.trailing_zeros() - _counts(f.den_factors).get(_key(_S), 0)


def laurent_at_zero(f, count):
    """Order ``k`` and the first ``count`` coefficients of ``f = s**k * sum c_j s**j``."""
    f = _rational(f)
    k = ord_at_zero(f)
    n = f.num.shift_down(f.num.trailing_zeros()).coeffs
    d = f.den.shift_down(f.den.trailing_zeros()).coeffs
    c = np.zeros(count, dtype=np.result_type(n, d))
    for j in range(count):
        acc = n[j] if j < len(n) else 0.0
        for i in range(1, min(j, len(d) - 1) + 1):
            acc -= d[i] * c[j - i]
        c[j] = acc / d[0]
    return k, c


def _factor_values(factors, s):
    out = np.ones_like(s)
    for poly, m in factors:
        out = out * poly(s) ** m
    return out


def _check_pole_proximity(f, s):
    for poly, _ in f.den_factors:
        values = np.atleast_1d(poly(s))
        scale = _horner(np.abs(poly.coeffs), np.abs(np.atleast_1d(s)))
        suspect = np.abs(values) <= 1e-8 * scale
        if not np.any(suspect):
            continue
        points = np.atleast_1d(s)[suspect]
        for pole, _ in poly.clustered_roots():
            if np.any(np.abs(points - pole) <= POLE_TOL * max(1.0, abs(pole))):
                raise PoleProximity(f"evaluation point within {POLE_TOL:g} of pole {pole:.6g}")


def evaluate(f, s):
    """Value of a polynomial, rational function or delayed sum at ``s``.

    ``s`` may be a scalar or an array.  Raises :class:`PoleProximity` when
    ``s`` is within the pole tolerance of a denominator root.
    """
    if isinstance(f, Polynomial):
        out = f(np.asarray(s, dtype=complex))
        return complex(out) if np.ndim(out) == 0 else out
    if isinstance(f, DelayedRationalSum):
        return f(s)
    f = _rational(f)
    s_c = np.asarray(s, dtype=complex)
    _check_pole_proximity(f, s_c)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _terms_value(f.terms, s_c)[0] / _factor_values(f.den_factors, s_c)
    return complex(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# delayed sums

def _theta_key(theta):
    key = round(float(theta), 12)
    return key + 0.0


class DelayedRationalSum:
    """Finite sum of shifted rational terms ``R(s) * exp(theta * s)``.

    Terms with equal shift are merged; zero terms are dropped, so the zero
    sum has no terms.  Terms are ordered by decreasing shift.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=()):
        merged = {}
        for theta, rational in terms:
            rational = _rational(rational)
            key = _theta_key(theta)
            merged[key] = merged[key] + rational if key in merged else rational
        self.terms = tuple(
            (theta, r) for theta, r in sorted(merged.items(), key=lambda kv: -kv[0]) if not r.is_zero
        )

    @classmethod
    def of(cls, rational, shift=0.0):
        return cls([(shift, rational)])

    def __repr__(self):
        inner = ", ".join(f"({t:g}, {r!r})" for t, r in self.terms)
        return f"DelayedRationalSum([{inner}])"

    @property
    def is_zero(self):
        return not self.terms

    @property
    def shifts(self):
        return tuple(t for t, _ in self.terms)

    def rational_at(self, theta):
        key = _theta_key(theta)
        for t, r in self.terms:
            if t == key:
                return r
        return RationalFunction([0.0])

    def delayed_part(self):
        """Terms with a nonzero shift."""
        return DelayedRationalSum([(t, r) for t, r in self.terms if t != 0])

    def undelayed_part(self):
        return DelayedRationalSum([(t, r) for t, r in self.terms if t == 0])

    def __call__(self, s):
        s_c = np.asarray(s, dtype=complex)
        total = np.zeros_like(s_c)
        for theta, r in self.terms:
            total = total + evaluate(r, s_c) * np.exp(theta * s_c)
        return complex(total) if np.ndim(total) == 0 else total

    def __neg__(self):
        return DelayedRationalSum([(t, -r) for t, r in self.terms])

    def __add__(self, other):
        other = _delayed(other)
        return DelayedRationalSum(self.terms + other.terms)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-_delayed(other))

    def __rsub__(self, other):
        return _delayed(other) - self

    def __mul__(self, other):
        if isinstance(other, DelayedRationalSum):
            return DelayedRationalSum(
                [(ta + tb, ra * rb) for ta, ra in self.terms for tb, rb in other.terms]
            )
        other = _rational(other)
        return DelayedRationalSum([(t, r * other) for t, r in self.terms])

    __rmul__ = __mul__

    def map(self, fn):
        """Apply ``fn`` to every rational part."""
        return DelayedRationalSum([(t, fn(r)) for t, r in self.terms])

    def reduced(self):
        return self.map(RationalFunction.reduced)


def _delayed(value):
    if isinstance(value, DelayedRationalSum):
        return value
    return DelayedRationalSum.of(_rational(value))


# --------------------------------------------------------------------------
# partial fractions and inversion

class PoleTerm(NamedTuple):
    pole: complex
    multiplicity: int
    residues: tuple  # coefficient of 1/(s - pole)**k for k = 1..multiplicity


@dataclass(frozen=True)
class PartialFractionExpansion:
    proper_terms: tuple
    polynomial_part: Polynomial

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        total = self.polynomial_part(s) + 0j
        for term in self.proper_terms:
            for k, res in enumerate(term.residues, start=1):
                total = total + res / (s - term.pole) ** k
        return total

    def recombine(self):
        """Rebuild the rational function from poles and residues."""
        den = np.array([1.0 + 0j])
        for term in self.proper_terms:
            for _ in range(term.multiplicity):
                den = np.convolve(den, [-term.pole, 1.0])
        num = np.convolve(self.polynomial_part.coeffs, den).astype(complex)
        for term in self.proper_terms:
            others = np.array([1.0 + 0j])
            for other in self.proper_terms:
                if other is term:
                    continue
                for _ in range(other.multiplicity):
                    others = np.convolve(others, [-other.pole, 1.0])
            for k, res in enumerate(term.residues, start=1):
                part = others
                for _ in range(term.multiplicity - k):
                    part = np.convolve(part, [-term.pole, 1.0])
                num[: len(part)] += res * part
        scale = max(np.max(np.abs(num)), 1e-300)
        if np.max(np.abs(num.imag)) <= 1e-10 * scale and np.max(np.abs(den.imag)) <= 1e-10 * np.max(np.abs(den)):
            num, den = num.real, den.real
        return RationalFunction(num, den, canonical=False)


def partial_fractions(f):
    """Pole/residue decomposition of a rational function.

    Improper inputs contribute a polynomial part obtained by long division.
    Residues of a pole ``p`` of multiplicity ``m`` come from the Taylor
    expansion of ``(s - p)**m f(s)`` about ``p``.
    """
    f = _rational(f)
    quotient, remainder = divmod(f.num, f.den)
    if remainder.is_zero or f.den.degree == 0:
        return PartialFractionExpansion((), quotient)
    clusters = poles(f)
    lead = f.den.leading
    terms = []
    for p, m in clusters:
        q = np.array([lead + 0j])
        for other, mo in clusters:
            if other == p:
                continue
            for _ in range(mo):
                q = np.convolve(q, [p - other, 1.0])
        q_taylor = np.zeros(m, dtype=complex)
        q_taylor[: min(m, len(q))] = q[:m]
        n_taylor = np.zeros(m, dtype=complex)
        nt = remainder.taylor(complex(p), m - 1)
        n_taylor[: len(nt)] = nt
        c = np.zeros(m, dtype=complex)
        for j in range(m):
            acc = n_taylor[j]
            for i in range(1, j + 1):
                acc -= q_taylor[i] * c[j - i]
            c[j] = acc / q_taylor[0]
        residues = tuple(complex(c[m - k]) for k in range(1, m + 1))
        terms.append(PoleTerm(complex(p), m, residues))
    return PartialFractionExpansion(tuple(terms), quotient)


def inverse_laplace(f, t_grid):
    """Inverse Laplace transform of a delayed sum of rational terms.

    Each rational term is expanded in partial fractions and inverted to
    ``sum residue * t**(k-1) * exp(p t) / (k-1)!``; the shift ``theta``
    (which must be a delay, ``theta <= 0``) moves the term right by
    ``-theta`` behind a unit step.
    """
    f = _delayed(f)
    t = np.asarray(t_grid, dtype=float)
    total = np.zeros(t.shape, dtype=complex)
    for theta, rational in f.terms:
        if theta > 0:
            raise AdvanceTermRejected(f"term with shift +{theta:g} s is a time advance")
        pfe = partial_fractions(rational)
        if not pfe.polynomial_part.is_zero:
            raise ImpulsivePart("rational term is not strictly proper")
        tau = t + theta
        active = tau >= 0
        tau_a = np.where(active, tau, 0.0)
        part = np.zeros(t.shape, dtype=complex)
        with np.errstate(over="ignore", invalid="ignore"):
            for term in pfe.proper_terms:
                expo = np.exp(term.pole * tau_a)
                for k, res in enumerate(term.residues, start=1):
                    part += res * tau_a ** (k - 1) * expo / math.factorial(k - 1)
        total += np.where(active, part, 0.0)
    imag = np.max(np.abs(total.imag)) if total.size else 0.0
    real = total.real
    peak = np.max(np.abs(real)) if real.size else 0.0
    if imag > 1e-9 * max(1.0, peak):
        raise ArithmeticError(f"inverse transform has imaginary residue {imag:.3g}")
    return real


class FinalValue(NamedTuple):
    classification: str  # "finite" | "divergent" | "invalid"
    value: complex | None


def final_value(f):
    """``lim_{s->0} s F(s)`` for a delayed sum, with validity classification.

    Shift factors are expanded in Taylor series about the origin so that
    singular parts cancelling across terms (differences of delayed ramps)
    are handled exactly.  The result is ``invalid`` when any non-origin pole
    has nonnegative real part; the formal limit is still reported.
    """
    f = _delayed(f)
    acc = defaultdict(complex)
    mag = defaultdict(float)
    hypothesis_ok = True
    for theta, rational in f.terms:
        for poly, _ in rational.den_factors:
            if poly is not _S and _key(poly) != _key(_S) and not is_hurwitz(poly.coeffs):
                hypothesis_ok = False
        m = ord_at_zero(rational)
        if m + 1 > 0:
            continue
        order = -m - 1
        _, c = laurent_at_zero(rational, order + 1)
        for j in range(order + 1):
            for l in range(order - j + 1):
                q = m + 1 + j + l
                val = c[j] * theta ** l / math.factorial(l)
                acc[q] += val
                mag[q] += abs(val)
    divergent = any(
        abs(acc[q]) > FINAL_VALUE_RTOL * mag[q] for q in acc if q < 0
    )
    value = None if divergent else complex(acc.get(0, 0.0))
    if not hypothesis_ok:
        return FinalValue("invalid", value)
    if divergent:
        return FinalValue("divergent", None)
    return FinalValue("finite", value)
