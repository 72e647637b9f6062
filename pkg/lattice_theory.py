"""
ReflectLab - Lattice Theory
===========================
Kernels, essential classes and the closed-form invariant measures of the
reflected walk on a lattice:

    nu(0) = (1 - mu(0))/2,   nu(x) = mu(x)/2 + mu((x, inf))              (walk)
    rho(0) = (1 - mu(0))/2,  rho(x) = sum_{k>=1} mu(k) (nu(x) - nu(x+k))  (reflections)

Finite rational laws go through an exact sympy backend where invariance is a
zero-tolerance check. Everything else runs in float64 with an explicit bound
on the error introduced by capping the class at ``x_max``.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
import sympy
from scipy import signal

from core import NumericError, ValidationError
from measures import (
    ExtendedReal, INFINITE, IncrementLaw, LawKind, RenewalSequence, moments,
    renewal_sequence,
)

logger = logging.getLogger('reflectlab.lattice_theory')

DEFAULT_X_MAX = 10_000

# The exact backend is used up to this many class states.
EXACT_STATE_LIMIT = 64

# Terms kept in the inner k-sum of rho for infinite-support laws.
RHO_TERMS = 2 ** 16
RHO_TAIL_TARGET = 1e-14

# Terms summed directly before the quadratic-tail remainder takes over.
QUAD_TERMS = 2 ** 16

# Allowance for float64 accumulation in residuals and row sums.
ROUNDOFF = 1e-10

_GRID_TOL = 1e-9

Number = Union[sympy.Rational, float]


# =============================================================================
# DATA MODELS
# =============================================================================

class Kernel(str, Enum):
    P = "p"
    Q = "q"


class Verdict(str, Enum):
    POSITIVE_RECURRENT = "PositiveRecurrent"
    NULL_RECURRENT = "NullRecurrent"
    UNKNOWN = "Unknown"


@dataclass(frozen=True, eq=False)
class EssentialClass:
    """C(x0) = {kd +- x0} intersected with [0, N], capped at x_max.

    States are exact sympy numbers; ``values`` holds their float images in the
    same (increasing) order.
    """
    span: int
    offsets: Tuple[sympy.Rational, ...]
    cap: float
    limit: sympy.Rational
    states: Tuple[sympy.Rational, ...]
    x0: sympy.Rational

    @property
    def values(self) -> np.ndarray:
        return np.array([float(s) for s in self.states], dtype=float)

    @property
    def truncated(self) -> bool:
        """True when supp(mu) reaches beyond the enumerated states."""
        return self.cap > float(self.limit)

    @property
    def n_offsets(self) -> int:
        return len(self.offsets)

    def __len__(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        return self._positions[_exact(state)]

    @cached_property
    def _positions(self) -> Dict[sympy.Rational, int]:
        return {s: i for i, s in enumerate(self.states)}

    def chain(self, offset: sympy.Rational) -> List[int]:
        """Indices of the states offset + k*span, in order."""
        return [i for i, s in enumerate(self.states)
                if sympy.Rational(s - offset, self.span).q == 1]


@dataclass(frozen=True, eq=False)
class Measure:
    """Masses aligned with the states of an EssentialClass."""
    states: Tuple[sympy.Rational, ...]
    values: Union[Tuple[sympy.Rational, ...], np.ndarray]
    exact: bool = False
    cut_error: float = 0.0

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, state):
        return self.values[self.states.index(_exact(state))]

    def floats(self) -> np.ndarray:
        return np.array([float(v) for v in self.values], dtype=float)

    def as_dict(self) -> Dict[sympy.Rational, Number]:
        return dict(zip(self.states, self.values))

    def total(self) -> Number:
        if self.exact:
            return sum(self.values, sympy.Integer(0))
        return math.fsum(self.floats())


@dataclass(frozen=True, eq=False)
class Residual:
    """Per-state |mK(y) - m(y)| with its sup and the truncation error bound."""
    kernel: Kernel
    per_state: Union[Tuple[sympy.Rational, ...], np.ndarray]
    bound: float
    exact: bool = False

    @property
    def sup(self) -> Number:
        if self.exact:
            return max(self.per_state, default=sympy.Integer(0))
        return float(np.max(self.per_state)) if len(self.per_state) else 0.0

    @property
    def within_bound(self) -> bool:
        return float(self.sup) <= self.bound


@dataclass(frozen=True, eq=False)
class InvariantTable:
    """nu and rho on a class with their invariance residuals."""
    essential_class: EssentialClass
    nu: Measure
    rho: Measure
    nu_residual: Residual
    rho_residual: Residual

    HEADER = ("state", "nu", "rho", "nu_residual", "rho_residual")

    @property
    def states(self) -> Tuple[sympy.Rational, ...]:
        return self.essential_class.states

    @property
    def truncation_bound(self) -> float:
        return max(self.nu_residual.bound, self.rho_residual.bound)

    def to_rows(self) -> List[Tuple]:
        return [
            (_plain(s), _plain(n), _plain(r), _plain(nr), _plain(rr))
            for s, n, r, nr, rr in zip(self.states, self.nu.values, self.rho.values,
                                       self.nu_residual.per_state, self.rho_residual.per_state)
        ]


@dataclass(frozen=True)
class Evidence:
    name: str
    value: object

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "value": self.value}


@dataclass(frozen=True)
class ClassificationReport:
    model: str
    quad_tail: ExtendedReal
    mean: ExtendedReal
    verdict: Verdict
    evidence: List[Evidence] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "model": self.model,
            "quad_tail": self.quad_tail.to_dict(),
            "mean": self.mean.to_dict(),
            "verdict": self.verdict.value,
            "evidence": [e.to_dict() for e in self.evidence],
        }


def verdict_for(quad_tail: ExtendedReal, mean: ExtendedReal) -> Verdict:
    """Sufficient-condition verdict: never claims transience."""
    if not quad_tail.is_finite:
        return Verdict.UNKNOWN
    return Verdict.POSITIVE_RECURRENT if mean.is_finite else Verdict.NULL_RECURRENT


# =============================================================================
# ESSENTIAL CLASS
# =============================================================================

def essential_class(m: IncrementLaw, x0=0, x_max: float = DEFAULT_X_MAX) -> EssentialClass:
    """Enumerate C(x0) for a half-line lattice law."""
    _require_half_line(m, "essential_class")
    x0 = _exact(x0)
    if x0 < 0:
        raise ValidationError(f"x0 must be >= 0, got {x0}")
    if not x_max > 0:
        raise ValidationError(f"x_max must be positive, got {x_max}")

    d = sympy.Integer(m.span)
    alpha = x0 - d * sympy.floor(x0 / d)
    if alpha == 0:
        offsets = (sympy.Integer(0),)
    elif 2 * alpha == d:
        offsets = (alpha,)
    else:
        offsets = tuple(sorted((alpha, d - alpha)))

    cap = m.support_max
    if math.isfinite(cap) and cap <= x_max:
        limit = sympy.Integer(int(cap))
    else:
        limit = _exact(x_max)

    states: List[sympy.Rational] = []
    for o in offsets:
        if o > limit:
            continue
        k_max = int(sympy.floor((limit - o) / d))
        states.extend(o + k * d for k in range(k_max + 1))
    if not states:
        raise ValidationError(f"x_max={x_max} is below every state of the class of x0={x0}")

    states.sort(key=float)
    logger.debug(f"Class of x0={x0} under {m}: d={d}, offsets={offsets}, {len(states)} states")
    return EssentialClass(span=int(d), offsets=offsets, cap=cap, limit=limit,
                          states=tuple(states), x0=x0)


# =============================================================================
# KERNELS
# =============================================================================

def kernel_p(m: IncrementLaw, x, y) -> Number:
    """Transition probability of the reflected walk."""
    if x < 0 or y < 0:
        raise ValidationError(f"kernel_p needs x, y >= 0, got {x}, {y}")
    if y == 0:
        return _mu(m, x)
    value = _mu(m, _add(x, y))
    if x >= y:
        value += _mu(m, _sub(x, y))
    return value


def kernel_q(m: IncrementLaw, U: RenewalSequence, x, y) -> Number:
    """Transition probability of the process of reflections."""
    if x < 0 or y < 0:
        raise ValidationError(f"kernel_q needs x, y >= 0, got {x}, {y}")
    if x == 0:
        return _mu(m, y)
    w_count = _grid_count(x)
    if len(U) < w_count:
        raise ValidationError(f"Renewal sequence covers n <= {U.n_max}, kernel_q({x}, .) needs {w_count - 1}")
    exact = m.exact and U.exact and _is_exact(x) and _is_exact(y)
    total = sympy.Integer(0) if exact else 0.0
    s = _add(x, y)
    for w in range(w_count):
        u = U[w]
        if not u:
            continue
        if exact:
            total += u * _mu(m, _sub(s, w))
        else:
            total += float(u) * float(_mu(m, _sub(s, w)))
    return total


def kernel_p_row_sums(m: IncrementLaw, cls: EssentialClass,
                      exact: Optional[bool] = None) -> Union[Tuple[sympy.Rational, ...], np.ndarray]:
    """Row sums of p over the class, plus the analytic mass beyond the cap."""
    use_exact = _use_exact(m, cls, exact)
    sums = []
    for i, row in _p_rows(m, cls, use_exact):
        if use_exact:
            sums.append(sum(row, sympy.Integer(0)))
        else:
            x = cls.values[i]
            beyond = float(m.tail_at(np.array([x + float(cls.limit)]))[0]) if cls.truncated else 0.0
            sums.append(math.fsum(row) + beyond)
    return tuple(sums) if use_exact else np.array(sums)


def kernel_q_row_sums(m: IncrementLaw, U: RenewalSequence, cls: EssentialClass,
                      exact: Optional[bool] = None) -> Union[Tuple[sympy.Rational, ...], np.ndarray]:
    """Row sums of q over the class, plus the analytic mass beyond the cap."""
    use_exact = _use_exact(m, cls, exact) and U.exact
    sums = []
    U_float = None if use_exact else U.as_array()
    for i, row in _q_rows(m, U, cls, use_exact):
        if use_exact:
            sums.append(sum(row, sympy.Integer(0)))
            continue
        beyond = 0.0
        x = cls.values[i]
        if cls.truncated and x == 0:
            beyond = float(m.tail_at(np.array([float(cls.limit)]))[0])
        elif cls.truncated:
            ws = np.arange(_grid_count(cls.states[i]))
            beyond = float(np.dot(U_float[ws], m.tail_at(x + float(cls.limit) - ws)))
        sums.append(math.fsum(row) + beyond)
    return tuple(sums) if use_exact else np.array(sums)


def _p_rows(m: IncrementLaw, cls: EssentialClass, exact: bool) -> Iterator[Tuple[int, Sequence]]:
    if exact:
        for i, x in enumerate(cls.states):
            yield i, [kernel_p(m, x, y) for y in cls.states]
        return

    vals = cls.values
    is_zero = vals == 0
    for i, x in enumerate(vals):
        row = m.pmf_at(x + vals)
        fold = (~is_zero) & (x - vals >= -_GRID_TOL)
        if np.any(fold):
            row[fold] += m.pmf_at(x - vals[fold])
        row[is_zero] = m.pmf_at(np.array([x]))[0]
        yield i, row


def _q_rows(m: IncrementLaw, U: RenewalSequence, cls: EssentialClass,
            exact: bool) -> Iterator[Tuple[int, Sequence]]:
    """Rows q(x, .) from r_x(t) = sum_{w < x} U(w) mu(t - w), grown one w at a time."""
    need = _grid_count(cls.states[-1])
    if len(U) < need:
        raise ValidationError(f"Renewal sequence covers n <= {U.n_max}, class needs {need - 1}")

    if exact:
        r: Dict[int, sympy.Rational] = {}
        grown = 0
        for i, x in enumerate(cls.states):
            if x == 0:
                yield i, [_mu(m, y) for y in cls.states]
                continue
            while grown < _grid_count(x):
                u = U[grown]
                if u:
                    for k, p in m.exact_atoms:
                        r[grown + k] = r.get(grown + k, sympy.Integer(0)) + u * p
                grown += 1
            row = []
            for y in cls.states:
                t = x + y
                row.append(r.get(int(t), sympy.Integer(0)) if t.q == 1 else sympy.Integer(0))
            yield i, row
        return

    vals = cls.values
    top = int(math.ceil(2 * float(cls.limit))) + 1
    mu = m.pmf_array(np.arange(top + 1))
    U_float = U.as_array()
    r = np.zeros(top + 1)
    grown = 0
    for i, x in enumerate(vals):
        if x == 0:
            yield i, m.pmf_at(vals)
            continue
        target = _grid_count(cls.states[i])
        while grown < target:
            u = U_float[grown]
            if u:
                r[grown:] += u * mu[:top + 1 - grown]
            grown += 1
        t = x + vals
        ti = np.rint(t)
        on_grid = np.abs(t - ti) <= _GRID_TOL * np.maximum(1.0, t)
        row = np.zeros(len(vals))
        row[on_grid] = r[ti[on_grid].astype(np.int64)]
        yield i, row


# =============================================================================
# INVARIANT MEASURES
# =============================================================================

def nu_measure(m: IncrementLaw, cls: EssentialClass, exact: Optional[bool] = None) -> Measure:
    """Invariant measure of the reflected walk restricted to the class."""
    _require_half_line(m, "nu_measure")
    if _use_exact(m, cls, exact):
        return Measure(states=cls.states, values=tuple(_nu_exact(m, x) for x in cls.states), exact=True)
    return Measure(states=cls.states, values=_nu_float(m, cls.values))


def rho_measure(m: IncrementLaw, cls: EssentialClass, exact: Optional[bool] = None) -> Measure:
    """Invariant measure of the process of reflections restricted to the class."""
    _require_half_line(m, "rho_measure")
    if _use_exact(m, cls, exact):
        values = []
        for x in cls.states:
            if x == 0:
                values.append((1 - m.pmf_exact(0)) / 2)
                continue
            nu_x = _nu_exact(m, x)
            values.append(sum((p * (nu_x - _nu_exact(m, x + k)) for k, p in m.exact_atoms if k >= 1),
                              sympy.Integer(0)))
        return Measure(states=cls.states, values=tuple(values), exact=True)

    d = cls.span
    K, cut_error = _rho_terms(m, d)
    weights = m.pmf_array(np.arange(K + 1, dtype=np.int64) * d)
    weights[0] = 0.0
    mu0 = m.pmf(0)

    rho = np.zeros(len(cls))
    for offset in cls.offsets:
        idx = cls.chain(offset)
        if not idx:
            continue
        positions = float(offset) + d * np.arange(len(idx) + K, dtype=float)
        nu_ext = _nu_float(m, positions)
        shifted = signal.correlate(nu_ext, weights, mode='valid')[:len(idx)]
        rho[idx] = np.maximum((1.0 - mu0) * nu_ext[:len(idx)] - shifted, 0.0)
    rho[cls.values == 0] = (1.0 - mu0) / 2.0

    logger.debug(f"rho on {len(cls)} states with K={K} inner terms, cut error {cut_error:.3g}")
    return Measure(states=cls.states, values=rho, cut_error=cut_error)


def invariance_residual(m: IncrementLaw, cls: EssentialClass,
                        masses: Union[Measure, Sequence[Number]],
                        kernel: Union[Kernel, str] = Kernel.P,
                        U: Optional[RenewalSequence] = None) -> Residual:
    """sup_y |sum_x m(x) K(x, y) - m(y)| over the class, with its error bound."""
    kernel = Kernel(kernel)
    if not isinstance(masses, Measure):
        values = tuple(masses)
        exact = all(isinstance(v, (int, sympy.Rational)) for v in values)
        masses = Measure(states=cls.states, values=values if exact else np.array(values, dtype=float),
                         exact=exact)
    if len(masses) != len(cls):
        raise ValidationError(f"Got {len(masses)} masses for {len(cls)} states")

    if kernel == Kernel.Q and U is None:
        U = renewal_sequence(m, _grid_count(cls.states[-1]), exact=_use_exact(m, cls, None))

    use_exact = masses.exact and _use_exact(m, cls, None) and (kernel == Kernel.P or U.exact)
    rows = _p_rows(m, cls, use_exact) if kernel == Kernel.P else _q_rows(m, U, cls, use_exact)

    if use_exact:
        acc = [sympy.Integer(0)] * len(cls)
        for i, row in rows:
            mass = masses.values[i]
            if mass:
                acc = [a + mass * k for a, k in zip(acc, row)]
        per_state = tuple(abs(a - v) for a, v in zip(acc, masses.values))
        return Residual(kernel=kernel, per_state=per_state, bound=0.0, exact=True)

    weights = masses.floats()
    acc = np.zeros(len(cls))
    for i, row in rows:
        if weights[i]:
            acc += weights[i] * np.asarray(row, dtype=float)
    per_state = np.abs(acc - weights)

    bound = _residual_bound(m, cls, kernel, masses.cut_error)
    logger.debug(f"{kernel.value}-residual sup {per_state.max():.3g} (bound {bound:.3g})")
    return Residual(kernel=kernel, per_state=per_state, bound=bound)


def invariant_table(m: IncrementLaw, x0=0, x_max: float = DEFAULT_X_MAX,
                    exact: Optional[bool] = None) -> InvariantTable:
    """nu, rho and both residuals on C(x0)."""
    cls = essential_class(m, x0, x_max)
    use_exact = _use_exact(m, cls, exact)
    U = renewal_sequence(m, _grid_count(cls.states[-1]), exact=use_exact)

    nu = nu_measure(m, cls, use_exact)
    rho = rho_measure(m, cls, use_exact)
    table = InvariantTable(
        essential_class=cls, nu=nu, rho=rho,
        nu_residual=invariance_residual(m, cls, nu, Kernel.P),
        rho_residual=invariance_residual(m, cls, rho, Kernel.Q, U),
    )
    logger.info(f"Invariant table for {m} on {len(cls)} states "
                f"({'exact' if use_exact else 'float'}): "
                f"nu residual {float(table.nu_residual.sup):.3g}, rho residual {float(table.rho_residual.sup):.3g}")
    return table


def nu_from_rho(m: IncrementLaw, U: RenewalSequence, cls: EssentialClass,
                rho: Measure) -> Measure:
    """nu(x) = sum_k U(k) rho(x + k) for x > 0; nu(0) = rho(0)."""
    if len(U) <= int(math.floor(float(cls.limit))):
        raise ValidationError(f"Renewal sequence covers n <= {U.n_max}, need {float(cls.limit)}")
    exact = rho.exact and U.exact
    lookup = rho.as_dict()
    values = []
    for x in cls.states:
        if x == 0:
            values.append(lookup[x])
            continue
        total = sympy.Integer(0) if exact else 0.0
        for k in range(int(sympy.floor(cls.limit - x)) + 1):
            u = U[k]
            if u:
                r = lookup.get(x + k, 0)
                total += u * r if exact else float(u) * float(r)
        values.append(total)
    return Measure(states=cls.states, values=tuple(values) if exact else np.array(values), exact=exact)


def stationary_by_power_iteration(m: IncrementLaw, cls: EssentialClass, tol: float = 1e-14,
                                  max_iter: int = 100_000) -> np.ndarray:
    """Normalized stationary vector of the lazy chain (I + P)/2 on a finite class."""
    if cls.truncated:
        raise ValidationError("Power iteration needs a finite, untruncated class")
    P = np.vstack([np.asarray(row, dtype=float) for _, row in _p_rows(m, cls, False)])
    lazy = 0.5 * (np.eye(len(cls)) + P)

    pi = np.full(len(cls), 1.0 / len(cls))
    for it in range(max_iter):
        nxt = pi @ lazy
        nxt /= nxt.sum()
        if 0.5 * np.abs(nxt - pi).sum() < tol:
            logger.debug(f"Power iteration converged after {it + 1} steps")
            return nxt
        pi = nxt
    raise NumericError(f"Power iteration did not reach tol={tol} in {max_iter} steps")


def nu_total_mass(m: IncrementLaw, cls: EssentialClass) -> ExtendedReal:
    """Total nu mass of the class: n_offsets * E(Y) / d when the class is complete."""
    if not cls.truncated:
        total = nu_measure(m, cls).total()
        return ExtendedReal(float(total))
    mean = moments(m).mean
    if not mean.is_finite:
        return INFINITE
    return ExtendedReal(cls.n_offsets * mean.value / cls.span)


# =============================================================================
# QUADRATIC TAIL AND CLASSIFICATION
# =============================================================================

def quadratic_tail_sum(m: IncrementLaw) -> ExtendedReal:
    """sum_{k>=0} H(k)^2, finiteness decided analytically."""
    _require_half_line(m, "quadratic_tail_sum")
    if m.is_finite_support:
        if m.exact:
            top = int(m.support_max)
            return ExtendedReal(float(sum((m.tail_exact(k) ** 2 for k in range(top)), sympy.Integer(0))))
        ks = np.arange(int(m.support_max))
        return ExtendedReal(math.fsum(m.tail_int(ks) ** 2))

    remainder = _quad_tail_remainder(m, QUAD_TERMS)
    if not math.isfinite(remainder):
        return INFINITE
    head = m.tail_int(np.arange(QUAD_TERMS)) ** 2
    return ExtendedReal(math.fsum(head) + remainder)


def classify_lattice(m: IncrementLaw) -> ClassificationReport:
    """Quadratic-tail verdict with the half-moment cross-check."""
    _require_half_line(m, "classify_lattice")
    quad = quadratic_tail_sum(m)
    report = moments(m)

    implies = report.half_moment.is_finite
    if implies and not quad.is_finite:
        raise NumericError(f"{m}: finite E(sqrt Y) but infinite quadratic tail")

    evidence = [
        Evidence("quadratic_tail", quad.to_dict()),
        Evidence("mean", report.mean.to_dict()),
        Evidence("half_moment", report.half_moment.to_dict()),
        Evidence("half_moment_implies_quad_tail", implies),
        Evidence("span", m.span),
    ]
    verdict = verdict_for(quad, report.mean)
    logger.info(f"Classified {m}: {verdict.value}")
    return ClassificationReport(model=str(m), quad_tail=quad, mean=report.mean,
                                verdict=verdict, evidence=evidence)


def _quad_tail_remainder(m: IncrementLaw, start: int) -> float:
    """sum_{k >= start} H(k)^2, math.inf when the series diverges."""
    if m.is_finite_support:
        ks = np.arange(start, max(start, int(m.support_max)))
        return math.fsum(m.tail_int(ks) ** 2)

    if m.kind == LawKind.LATTICE_POWER_LAW:
        if m.a <= 0.5:
            return math.inf
        c, s = m.normalizer, 1 + m.a

        def f(t):
            return (c * mpmath.zeta(s, t + 1)) ** 2
    elif m.kind == LawKind.LATTICE_LOG_POWER_LAW:
        if m.a < 0.5 or (m.a == 0.5 and 2 * m.b >= -1):
            return math.inf
        c, a, b = m.normalizer, m.a, m.b

        def f(t):
            return (c * mpmath.gammainc(b + 1, a * mpmath.log(t + 1.5)) / a ** (b + 1)) ** 2
    else:
        raise ValidationError(f"No quadratic-tail rule for {m}")

    with mpmath.workdps(20):
        k = mpmath.mpf(start)
        value = (mpmath.quad(f, [k, 10 * k, 100 * k, mpmath.inf]) + f(k) / 2
                 - mpmath.diff(f, k) / 12)
    return float(value)


# =============================================================================
# TRUNCATION BOUNDS
# =============================================================================

def _rho_terms(m: IncrementLaw, d: int) -> Tuple[int, float]:
    """Inner-sum length K for rho and the bound H(Kd)^2 on what is cut."""
    if m.is_finite_support:
        return int(m.support_max) // d, 0.0
    tails = m.tail_int(np.arange(1, RHO_TERMS + 1, dtype=np.int64) * d)
    below = np.nonzero(tails < RHO_TAIL_TARGET)[0]
    K = int(below[0]) + 1 if below.size else RHO_TERMS
    return K, float(tails[K - 1]) ** 2


def _pair_tail_sum(m: IncrementLaw, shift: int) -> float:
    """sum_{j>=0} H(j) H(shift + j)."""
    if m.is_finite_support:
        js = np.arange(max(0, int(m.support_max) - shift) + 1)
    else:
        js = np.arange(QUAD_TERMS)
    head = math.fsum(m.tail_int(js) * m.tail_int(js + shift))
    if m.is_finite_support:
        return head
    return head + _quad_tail_remainder(m, QUAD_TERMS)


def _residual_bound(m: IncrementLaw, cls: EssentialClass, kernel: Kernel, cut_error: float) -> float:
    if not cls.truncated:
        return ROUNDOFF + (len(cls) + 1) * cut_error
    floor_limit = int(math.floor(float(cls.limit)))
    h_limit = float(m.tail_int(np.array([floor_limit]))[0])
    if kernel == Kernel.P:
        return 2.0 * h_limit + ROUNDOFF
    beyond = cls.n_offsets * (h_limit / 2.0 + _pair_tail_sum(m, floor_limit))
    return beyond + (len(cls) + 1) * cut_error + ROUNDOFF


# =============================================================================
# HELPERS
# =============================================================================

def _require_half_line(m: IncrementLaw, what: str) -> None:
    if not m.is_lattice or m.is_signed:
        raise ValidationError(f"{what} needs a half-line lattice law, got {m}")


def _use_exact(m: IncrementLaw, cls: EssentialClass, requested: Optional[bool]) -> bool:
    possible = m.exact and not cls.truncated and len(cls) <= EXACT_STATE_LIMIT
    if requested and not possible:
        raise ValidationError(f"Exact backend unavailable for {m} on {len(cls)} states")
    return possible if requested is None else bool(requested)


def _exact(v) -> sympy.Rational:
    if isinstance(v, sympy.Rational):
        return v
    if isinstance(v, sympy.Basic):
        return sympy.Rational(str(v))
    if isinstance(v, (bool, np.bool_)):
        raise ValidationError(f"Not a state: {v!r}")
    if isinstance(v, (int, np.integer)):
        return sympy.Integer(int(v))
    if isinstance(v, Fraction):
        return sympy.Rational(v.numerator, v.denominator)
    value = float(v)
    if not math.isfinite(value):
        raise ValidationError(f"Not a finite number: {v!r}")
    f = Fraction(repr(value))
    return sympy.Rational(f.numerator, f.denominator)


def _is_exact(v) -> bool:
    return isinstance(v, (int, sympy.Rational))


def _add(x, y):
    return x + y if _is_exact(x) and _is_exact(y) else float(x) + float(y)


def _sub(x, y):
    return x - y if _is_exact(x) and _is_exact(y) else float(x) - float(y)


def _mu(m: IncrementLaw, t) -> Number:
    """mu({t}) at a real point; exact when both law and point are exact."""
    if m.exact and _is_exact(t):
        t = sympy.sympify(t)
        return m.pmf_exact(int(t)) if t.is_integer else sympy.Integer(0)
    return float(m.pmf_at(np.array([float(t)]))[0])


def _grid_count(x) -> int:
    """Number of integers w in [0, x)."""
    if _is_exact(x):
        return int(sympy.ceiling(x))
    return int(math.ceil(float(x) - _GRID_TOL))


def _nu_exact(m: IncrementLaw, x: sympy.Rational) -> sympy.Rational:
    if x == 0:
        return (1 - m.pmf_exact(0)) / 2
    return _mu(m, x) / 2 + m.tail_exact(x)


def _nu_float(m: IncrementLaw, xs: np.ndarray) -> np.ndarray:
    out = m.pmf_at(xs) / 2.0 + m.tail_at(xs)
    out[xs == 0] = (1.0 - m.pmf(0)) / 2.0
    return out


def _plain(v):
    """CSV-friendly scalar: exact integers stay integers."""
    if isinstance(v, sympy.Integer):
        return int(v)
    if isinstance(v, sympy.Basic):
        return float(v)
    if hasattr(v, "item"):
        return v.item()
    return v
