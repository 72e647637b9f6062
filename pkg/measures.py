"""
ReflectLab - Increment Laws
===========================
Increment laws for the step Y of a reflected random walk: finite lattice
pmfs, heavy-tailed lattice families, signed lattice laws and continuous
parametric families, with exact tails, moments, convolution and the renewal
sequence U.
"""

import logging
import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from functools import cached_property, lru_cache, reduce
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import mpmath
import numpy as np
import sympy
from scipy import signal, special, stats

from core import LawParseError, ValidationError

logger = logging.getLogger('reflectlab.measures')

# Heavy-tailed lattice families tabulate this many atoms before switching to
# the closed-form tail.
DEFAULT_TRUNCATION = 2 ** 16

# Sampled magnitudes never exceed 2**53 so every lattice value stays exact in
# a float64.
MAGNITUDE_CAP = 2 ** 53

MASS_TOLERANCE = 1e-12


# =============================================================================
# DATA MODELS
# =============================================================================

class LawKind(str, Enum):
    LATTICE_FINITE = "LatticeFinite"
    LATTICE_POWER_LAW = "LatticePowerLaw"
    LATTICE_LOG_POWER_LAW = "LatticeLogPowerLaw"
    SIGNED_LATTICE_FINITE = "SignedLatticeFinite"
    SIGNED_SYMMETRIC_POWER_LAW = "SignedSymmetricPowerLaw"
    CONTINUOUS_EXPONENTIAL = "ContinuousExponential"
    CONTINUOUS_UNIFORM = "ContinuousUniform"
    CONTINUOUS_PARETO = "ContinuousPareto"


FINITE_KINDS = frozenset({LawKind.LATTICE_FINITE, LawKind.SIGNED_LATTICE_FINITE})
SIGNED_KINDS = frozenset({LawKind.SIGNED_LATTICE_FINITE, LawKind.SIGNED_SYMMETRIC_POWER_LAW})
CONTINUOUS_KINDS = frozenset({
    LawKind.CONTINUOUS_EXPONENTIAL, LawKind.CONTINUOUS_UNIFORM, LawKind.CONTINUOUS_PARETO,
})


@dataclass(frozen=True)
class ExtendedReal:
    """A non-negative real or the +infinity flag."""
    value: float = math.inf

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self) -> Dict[str, object]:
        if self.is_finite:
            return {"status": "finite", "value": self.value}
        return {"status": "infinite"}


INFINITE = ExtendedReal(math.inf)


@dataclass(frozen=True)
class MomentReport:
    """Moments of Y. Half and three-half moments refer to Y+ for signed laws."""
    mean: ExtendedReal
    half_moment: ExtendedReal
    three_half_moment: ExtendedReal
    pos_mean: ExtendedReal
    neg_mean: ExtendedReal

    def to_dict(self) -> Dict[str, object]:
        return {
            "mean": self.mean.to_dict(),
            "half_moment": self.half_moment.to_dict(),
            "three_half_moment": self.three_half_moment.to_dict(),
            "pos_mean": self.pos_mean.to_dict(),
            "neg_mean": self.neg_mean.to_dict(),
        }


@dataclass(frozen=True)
class IncrementLaw:
    """Common law of the increments Y_n.

    Lattice laws live on the integers with span ``span`` (the gcd of the
    support); finite kinds store their atoms, and rational atoms are kept a
    second time as exact ``sympy.Rational`` values. Analytic families store
    their parameters and normalizer and expose the exact tail.
    """
    kind: LawKind
    span: Optional[int] = None
    atoms: Tuple[Tuple[int, float], ...] = ()
    exact_atoms: Optional[Tuple[Tuple[int, sympy.Rational], ...]] = None
    a: Optional[float] = None
    b: Optional[float] = None
    rate: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    alpha: Optional[float] = None
    scale: Optional[float] = None
    normalizer: float = 1.0
    truncation: int = DEFAULT_TRUNCATION
    spec: str = ""

    def __str__(self) -> str:
        return self.spec or self.kind.value

    # -- classification -----------------------------------------------------

    @property
    def is_lattice(self) -> bool:
        return self.kind not in CONTINUOUS_KINDS

    @property
    def is_signed(self) -> bool:
        return self.kind in SIGNED_KINDS

    @property
    def is_continuous(self) -> bool:
        return self.kind in CONTINUOUS_KINDS

    @property
    def is_finite_support(self) -> bool:
        return self.kind in FINITE_KINDS

    @property
    def exact(self) -> bool:
        return self.exact_atoms is not None

    @cached_property
    def is_symmetric(self) -> bool:
        if self.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW:
            return True
        if self.kind != LawKind.SIGNED_LATTICE_FINITE:
            return False
        source = dict(self.exact_atoms) if self.exact else self._atom_map
        return all(source.get(-k) == p for k, p in source.items())

    @property
    def support_max(self) -> float:
        """N = sup supp(mu)."""
        if self.is_finite_support:
            return float(max(k for k, _ in self.atoms))
        if self.kind == LawKind.CONTINUOUS_UNIFORM:
            return float(self.hi)
        return math.inf

    # -- point masses -------------------------------------------------------

    @cached_property
    def _atom_map(self) -> Dict[int, float]:
        return dict(self.atoms)

    @cached_property
    def _exact_map(self) -> Dict[int, sympy.Rational]:
        return dict(self.exact_atoms or ())

    def pmf(self, k: int) -> float:
        """mu({k}) for a lattice law."""
        return float(self.pmf_array(np.array([k], dtype=np.int64))[0])

    def pmf_exact(self, k: int) -> sympy.Rational:
        """mu({k}) as an exact rational (finite rational laws only)."""
        if not self.exact:
            raise ValidationError(f"{self} has no exact-rational representation")
        return self._exact_map.get(int(k), sympy.Integer(0))

    def pmf_array(self, ks: np.ndarray) -> np.ndarray:
        """Vectorized mu({k}) over integer indices."""
        self._require_lattice("pmf")
        ks = np.asarray(ks, dtype=np.int64)
        out = np.zeros(ks.shape, dtype=float)

        if self.is_finite_support:
            idx, masses = self._finite_table
            pos = np.searchsorted(idx, ks)
            pos = np.clip(pos, 0, len(idx) - 1)
            hit = idx[pos] == ks
            out[hit] = masses[pos[hit]]
            return out

        if self.kind == LawKind.LATTICE_POWER_LAW:
            mask = ks >= 1
            out[mask] = self.normalizer * ks[mask].astype(float) ** -(1.0 + self.a)
        elif self.kind == LawKind.LATTICE_LOG_POWER_LAW:
            mask = ks >= 0
            out[mask] = self.normalizer * _logpow_weight(ks[mask].astype(float), self.a, self.b)
        elif self.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW:
            mask = ks != 0
            out[mask] = self.normalizer * np.abs(ks[mask]).astype(float) ** -(1.0 + self.a)
        return out

    def pmf_at(self, values: np.ndarray) -> np.ndarray:
        """mu({v}) at real points; zero off the integer grid."""
        v = np.asarray(values, dtype=float)
        k = np.rint(v)
        on_grid = np.abs(v - k) <= 1e-9 * np.maximum(1.0, np.abs(v))
        out = np.zeros(v.shape, dtype=float)
        if np.any(on_grid):
            out[on_grid] = self.pmf_array(k[on_grid].astype(np.int64))
        return out

    @cached_property
    def _finite_table(self) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.array([k for k, _ in self.atoms], dtype=np.int64)
        masses = np.array([p for _, p in self.atoms], dtype=float)
        return idx, masses

    # -- distribution function ----------------------------------------------

    def tail(self, x: float) -> float:
        """H(x) = mu((x, inf))."""
        if self.is_continuous:
            return float(self._frozen.sf(x))
        if self.exact:
            return float(self.tail_exact(x))
        return float(self.tail_int(np.array([math.floor(x)], dtype=np.int64))[0])

    def tail_exact(self, x) -> sympy.Rational:
        """H(x) as an exact rational; x may be any sympy real."""
        if not self.exact:
            raise ValidationError(f"{self} has no exact-rational representation")
        return sum((p for k, p in self.exact_atoms if k > x), sympy.Integer(0))

    def tail_int(self, ks: np.ndarray) -> np.ndarray:
        """Vectorized H(k) = mu((k, inf)) over integer k."""
        self._require_lattice("tail")
        ks = np.asarray(ks, dtype=np.int64)

        if self.is_finite_support:
            idx, masses = self._finite_table
            # suffix sums keep small tails accurate
            suffix = np.concatenate((np.cumsum(masses[::-1])[::-1], [0.0]))
            return suffix[np.searchsorted(idx, ks, side='right')]

        if self.kind == LawKind.LATTICE_POWER_LAW:
            return np.where(
                ks < 1, 1.0,
                self.normalizer * special.zeta(1.0 + self.a, np.maximum(ks, 0).astype(float) + 1.0),
            )

        if self.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW:
            kf = ks.astype(float)
            upper = self.normalizer * special.zeta(1.0 + self.a, np.maximum(kf, 0.0) + 1.0)
            lower = self.normalizer * special.zeta(1.0 + self.a, np.maximum(-kf, 1.0))
            return np.where(ks >= 0, upper, 1.0 - lower)

        # LatticeLogPowerLaw
        size = int(ks.max()) + 2 if ks.size else 1
        table = _logpow_tail_table(self.a, self.b, _round_up_pow2(max(size, 2)), self.normalizer)
        return np.where(ks < 0, 1.0, table[np.clip(ks, 0, None) + 1])

    def tail_at(self, values: np.ndarray) -> np.ndarray:
        """H(v) at real points (lattice laws)."""
        v = np.asarray(values, dtype=float)
        return self.tail_int(np.floor(v + 1e-9).astype(np.int64))

    def cdf(self, x: float) -> float:
        return 1.0 - self.tail(x)

    # -- sampling -----------------------------------------------------------

    @property
    def uniforms_per_draw(self) -> int:
        return 2 if self.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW else 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` increments by inverse CDF.

        Each draw consumes a fixed number of uniforms, so drawing n values at
        once or in consecutive chunks from the same generator gives the same
        sequence.
        """
        if size == 0:
            return np.zeros(0, dtype=float)

        if self.uniforms_per_draw == 1:
            u = rng.random(size)
        else:
            pair = rng.random((size, 2))
            u, sign_u = pair[:, 0], pair[:, 1]

        if self.is_continuous:
            return np.asarray(self._frozen.ppf(u), dtype=float)

        if self.is_finite_support:
            idx, masses = self._finite_table
            cdf = np.cumsum(masses)
            pos = np.minimum(np.searchsorted(cdf, u, side='right'), len(idx) - 1)
            return idx[pos].astype(float)

        magnitude = self._sample_heavy_magnitude(u)
        if self.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW:
            return np.where(sign_u < 0.5, -magnitude, magnitude)
        return magnitude

    def _sample_heavy_magnitude(self, u: np.ndarray) -> np.ndarray:
        values, cdf = self._heavy_table
        pos = np.searchsorted(cdf, u, side='right')
        inside = pos < len(values)
        out = np.empty(u.shape, dtype=float)
        out[inside] = values[pos[inside]]

        beyond = ~inside
        if np.any(beyond):
            out[beyond] = self._invert_tail_beyond_table(1.0 - u[beyond])
        return out

    @cached_property
    def _heavy_table(self) -> Tuple[np.ndarray, np.ndarray]:
        """Atoms and CDF of |Y| for the first ``truncation`` magnitudes."""
        if self.kind == LawKind.LATTICE_LOG_POWER_LAW:
            ks = np.arange(0, self.truncation, dtype=np.int64)
            masses = self.pmf_array(ks)
        else:
            ks = np.arange(1, self.truncation + 1, dtype=np.int64)
            # magnitude law of sympow is the one-sided power law
            masses = ks.astype(float) ** -(1.0 + self.a) / special.zeta(1.0 + self.a)
        return ks.astype(float), np.cumsum(masses)

    def _magnitude_tail(self, n: np.ndarray) -> np.ndarray:
        """P(|Y| > n) for n at or beyond the end of the table."""
        if self.kind == LawKind.LATTICE_LOG_POWER_LAW:
            # closed-form shape beyond the table, scaled to the exact tail mass there
            end = float(self.truncation - 1)
            exact_mass = float(self.tail_int(np.array([self.truncation - 1]))[0])
            shape = _logpow_integral_tail(n + 0.5, self.a, self.b)
            return exact_mass * shape / _logpow_integral_tail(np.array([end + 0.5]), self.a, self.b)[0]
        return special.zeta(1.0 + self.a, n + 1.0) / special.zeta(1.0 + self.a)

    def _invert_tail_beyond_table(self, v: np.ndarray) -> np.ndarray:
        """Smallest n with P(|Y| > n) <= v, by vectorized bisection."""
        values, _ = self._heavy_table
        lo = np.full(v.shape, values[-1], dtype=float)
        hi = np.full(v.shape, float(MAGNITUDE_CAP), dtype=float)
        capped = self._magnitude_tail(hi) > v
        for _ in range(64):
            active = hi - lo > 1
            if not np.any(active):
                break
            mid = np.floor((lo + hi) / 2)
            ok = self._magnitude_tail(mid) <= v
            hi = np.where(active & ok, mid, hi)
            lo = np.where(active & ~ok, mid, lo)
        hi[capped] = float(MAGNITUDE_CAP)
        return hi

    def abs_quantile(self, q: float) -> float:
        """Quantile of |Y| at level q."""
        if self.is_continuous:
            return float(self._frozen.ppf(q))
        if self.is_finite_support:
            mags: Dict[int, float] = {}
            for k, p in self.atoms:
                mags[abs(k)] = mags.get(abs(k), 0.0) + p
            keys = sorted(mags)
            cdf = np.cumsum([mags[k] for k in keys])
            return float(keys[min(int(np.searchsorted(cdf, q)), len(keys) - 1)])
        values, cdf = self._heavy_table
        pos = int(np.searchsorted(cdf, q))
        if pos < len(values):
            return float(values[pos])
        return float(self._invert_tail_beyond_table(np.array([1.0 - q]))[0])

    # -- helpers --------------------------------------------------------------

    @cached_property
    def _frozen(self):
        if self.kind == LawKind.CONTINUOUS_EXPONENTIAL:
            return stats.expon(scale=1.0 / self.rate)
        if self.kind == LawKind.CONTINUOUS_UNIFORM:
            return stats.uniform(loc=self.lo, scale=self.hi - self.lo)
        if self.kind == LawKind.CONTINUOUS_PARETO:
            return stats.lomax(c=self.alpha, scale=self.scale)
        raise ValidationError(f"{self} is not a continuous law")

    @property
    def frozen(self):
        """The scipy.stats frozen distribution of a continuous law."""
        return self._frozen

    def _require_lattice(self, what: str) -> None:
        if not self.is_lattice:
            raise ValidationError(f"{what} needs a lattice law, got {self}")


@dataclass(frozen=True)
class LatticePmf:
    """A lattice pmf truncated to |k| <= n_max, with the cut mass kept aside."""
    masses: Tuple[Tuple[int, float], ...]
    remainder: float = 0.0
    exact: Optional[Tuple[Tuple[int, sympy.Rational], ...]] = None
    span: int = 1

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, Union[float, sympy.Rational]],
                     remainder: float = 0.0) -> 'LatticePmf':
        items = sorted((int(k), p) for k, p in mapping.items() if p != 0)
        exact = None
        if items and all(isinstance(p, (sympy.Rational, int, Fraction)) for _, p in items):
            exact = tuple((k, _to_rational(p)) for k, p in items)
        return cls(
            masses=tuple((k, float(p)) for k, p in items),
            remainder=float(remainder),
            exact=exact,
            span=_gcd_span(k for k, _ in items),
        )

    def as_dict(self) -> Dict[int, float]:
        return dict(self.masses)

    def exact_dict(self) -> Dict[int, sympy.Rational]:
        if self.exact is None:
            raise ValidationError("pmf has no exact-rational representation")
        return dict(self.exact)

    def __getitem__(self, k: int) -> float:
        return self.as_dict().get(int(k), 0.0)

    @property
    def total(self) -> float:
        return math.fsum(p for _, p in self.masses)


@dataclass(frozen=True, eq=False)
class RenewalSequence:
    """U(0..n_max): expected number of visits of S_n to each lattice point."""
    values: Union[np.ndarray, Tuple[sympy.Rational, ...]]
    n_max: int
    law: IncrementLaw
    exact: bool = False

    def __getitem__(self, n: int):
        return self.values[n]

    def __len__(self) -> int:
        return self.n_max + 1

    def as_array(self) -> np.ndarray:
        return np.array([float(u) for u in self.values]) if self.exact else self.values

    def identity_residual(self):
        """max_n |sum_k A(k) U(n-k) - delta_0(n)| with A = delta_0 - mu."""
        if self.exact:
            worst = sympy.Integer(0)
            for n in range(self.n_max + 1):
                conv = sum((p * self.values[n - k] for k, p in self.law.exact_atoms if k <= n),
                           sympy.Integer(0))
                worst = max(worst, abs(self.values[n] - conv - (1 if n == 0 else 0)))
            return worst

        mu = self.law.pmf_array(np.arange(self.n_max + 1))
        conv = np.convolve(mu, self.values)[: self.n_max + 1]
        delta = np.zeros(self.n_max + 1)
        delta[0] = 1.0
        return float(np.max(np.abs(self.values - conv - delta)))


# =============================================================================
# PARSING AND CONSTRUCTION
# =============================================================================

_SPEC_RE = re.compile(r"^(lat|int|cont):([a-z]+)\((.*)\)$")

_FAMILY_PARAMS = {
    ("lat", "powerlaw"): ("a",),
    ("lat", "logpow"): ("a", "b"),
    ("int", "sympow"): ("a",),
    ("cont", "exp"): ("rate",),
    ("cont", "uniform"): ("lo", "hi"),
    ("cont", "pareto"): ("alpha", "scale"),
}


def parse_law(spec: str) -> IncrementLaw:
    """Parse a distribution-spec string into a validated IncrementLaw.

    Lattice laws live on the unit grid: pmf indices are integers and the
    optional ``d=`` declaration is the integer span, checked against the gcd
    of the support. A walk on a real grid with unit u is the unit-grid walk
    multiplied by u, since |ux - uy| = u|x - y|.
    """
    text = "".join(spec.split())
    match = _SPEC_RE.match(text)
    if not match:
        raise LawParseError(f"Malformed distribution spec: {spec!r}")

    kind, family, body = match.groups()
    logger.debug(f"Parsing law kind={kind} family={family} body={body!r}")

    if family == "pmf":
        if kind == "cont":
            raise LawParseError("pmf is only available for lat: and int: laws")
        declared, atoms = _parse_pmf_body(body)
        return lattice_law(atoms, span=declared, signed=(kind == "int"), spec=text)

    names = _FAMILY_PARAMS.get((kind, family))
    if names is None:
        raise LawParseError(f"Unknown family {kind}:{family}")
    params = _parse_params(body, names)

    builders = {
        "powerlaw": lambda p: power_law(p["a"]),
        "logpow": lambda p: log_power_law(p["a"], p["b"]),
        "sympow": lambda p: symmetric_power_law(p["a"]),
        "exp": lambda p: exponential(p["rate"]),
        "uniform": lambda p: uniform(p["lo"], p["hi"]),
        "pareto": lambda p: pareto(p["alpha"], p["scale"]),
    }
    law = builders[family](params)
    return _with_spec(law, text)


def _parse_number(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as e:
        raise LawParseError(f"Not a number: {text!r}") from e


def _parse_pmf_body(body: str) -> Tuple[Optional[int], Dict[int, Fraction]]:
    declared = None
    if body.startswith("d="):
        head, sep, body = body.partition(";")
        if not sep:
            raise LawParseError("Span declaration must be followed by ';'")
        d = _parse_number(head[2:])
        if d.denominator != 1 or d <= 0:
            raise LawParseError(f"Span must be a positive integer, got {head[2:]}")
        declared = int(d)

    if not body:
        raise LawParseError("pmf needs at least one atom")

    atoms: Dict[int, Fraction] = {}
    for entry in body.split(","):
        index, sep, prob = entry.partition(":")
        if not sep:
            raise LawParseError(f"Atom {entry!r} is not index:prob")
        k = _parse_number(index)
        if k.denominator != 1:
            raise LawParseError(f"Atom index must be an integer, got {index}")
        if int(k) in atoms:
            raise LawParseError(f"Duplicate atom index {int(k)}")
        atoms[int(k)] = _parse_number(prob)
    return declared, atoms


def _parse_params(body: str, names: Tuple[str, ...]) -> Dict[str, float]:
    params: Dict[str, float] = {}
    for entry in body.split(","):
        key, sep, value = entry.partition("=")
        if not sep or key not in names or key in params:
            raise LawParseError(f"Unexpected parameter {entry!r}; expected {', '.join(names)}")
        params[key] = float(_parse_number(value))
    if set(params) != set(names):
        raise LawParseError(f"Missing parameters; expected {', '.join(names)}")
    return params


def _with_spec(law: IncrementLaw, spec: str) -> IncrementLaw:
    return replace(law, spec=spec)


def _gcd_span(indices: Iterable[int]) -> int:
    return reduce(math.gcd, (abs(int(k)) for k in indices), 0)


def lattice_law(atoms: Mapping[int, Union[float, Fraction, sympy.Rational, str]],
                span: Optional[int] = None, signed: bool = False,
                allow_degenerate: bool = False, spec: str = "") -> IncrementLaw:
    """Build a finite lattice law from index -> mass.

    Rational masses summing exactly to 1 also get the exact representation.
    Point masses are refused unless ``allow_degenerate`` is set (they are used
    as worked examples, never parsed).
    """
    exact_items: List[Tuple[int, sympy.Rational]] = []
    float_items: List[Tuple[int, float]] = []
    all_rational = True

    for k, p in atoms.items():
        k = int(k)
        if isinstance(p, str):
            p = _parse_number(p)
        if isinstance(p, (Fraction, int)):
            p = sympy.Rational(p.numerator, p.denominator) if isinstance(p, Fraction) else sympy.Integer(p)
        if isinstance(p, sympy.Rational):
            if p < 0:
                raise ValidationError(f"Negative mass {p} at index {k}")
            if p != 0:
                exact_items.append((k, p))
                float_items.append((k, float(p)))
        else:
            p = float(p)
            all_rational = False
            if p < 0 or not math.isfinite(p):
                raise ValidationError(f"Invalid mass {p} at index {k}")
            if p != 0:
                float_items.append((k, p))

    if not float_items:
        raise ValidationError("Law has no mass")
    if not signed and any(k < 0 for k, _ in float_items):
        raise ValidationError("Half-line lattice laws need non-negative indices; use int: for signed laws")

    exact = None
    if all_rational and sum(p for _, p in exact_items) == 1:
        exact = tuple(sorted(exact_items))
    else:
        total = math.fsum(p for _, p in float_items)
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise ValidationError(f"Masses sum to {total:.12g}, expected 1")

    if len(float_items) == 1 and not allow_degenerate:
        raise ValidationError("Degenerate law: all mass on a single point")

    d = _gcd_span(k for k, _ in float_items)
    if span is not None and span != d:
        raise ValidationError(f"Declared span d={span} but gcd of the support is {d}")

    return IncrementLaw(
        kind=LawKind.SIGNED_LATTICE_FINITE if signed else LawKind.LATTICE_FINITE,
        span=d if d > 0 else 1,
        atoms=tuple(sorted(float_items)),
        exact_atoms=exact,
        spec=spec,
    )


def point_mass(k: int) -> IncrementLaw:
    """delta_k as a (degenerate) lattice law."""
    return lattice_law({k: 1}, allow_degenerate=True, signed=k < 0, spec=f"delta({k})")


def power_law(a: float, truncation: int = DEFAULT_TRUNCATION) -> IncrementLaw:
    """mu(k) = c k^-(1+a), k >= 1, with c = 1/zeta(1+a)."""
    if not a > 0:
        raise ValidationError(f"powerlaw needs a > 0, got {a}")
    return IncrementLaw(kind=LawKind.LATTICE_POWER_LAW, span=1, a=float(a),
                        normalizer=float(1.0 / special.zeta(1.0 + a)), truncation=truncation,
                        spec=f"lat:powerlaw(a={a})")


def symmetric_power_law(a: float, truncation: int = DEFAULT_TRUNCATION) -> IncrementLaw:
    """mu(k) = mu(-k) = c |k|^-(1+a), mu(0) = 0, with c = 1/(2 zeta(1+a))."""
    if not a > 0:
        raise ValidationError(f"sympow needs a > 0, got {a}")
    return IncrementLaw(kind=LawKind.SIGNED_SYMMETRIC_POWER_LAW, span=1, a=float(a),
                        normalizer=float(1.0 / (2.0 * special.zeta(1.0 + a))),
                        truncation=truncation, spec=f"int:sympow(a={a})")


def log_power_law(a: float, b: float, truncation: int = DEFAULT_TRUNCATION) -> IncrementLaw:
    """mu(n) = c (log(n+2))^b / (n+1)^(1+a), n >= 0.

    Needs b > -1 so the tail has the incomplete-gamma closed form used beyond
    the atom table, and a non-increasing pmf.
    """
    if not a > 0:
        raise ValidationError(f"logpow needs a > 0, got {a}")
    if not b > -1:
        raise ValidationError(f"logpow needs b > -1, got {b}")

    weights = _logpow_weight(np.arange(truncation + 1, dtype=float), a, b)
    if np.any(np.diff(weights) > 0) or b > (1.0 + a) * math.log(truncation + 2):
        raise ValidationError(f"logpow(a={a}, b={b}) is not monotone")

    total = math.fsum(weights[:truncation]) + _logpow_series_tail(a, b, 0.0, truncation)
    return IncrementLaw(kind=LawKind.LATTICE_LOG_POWER_LAW, span=1, a=float(a), b=float(b),
                        normalizer=1.0 / total, truncation=truncation,
                        spec=f"lat:logpow(a={a},b={b})")


def exponential(rate: float) -> IncrementLaw:
    if not rate > 0:
        raise ValidationError(f"exp needs rate > 0, got {rate}")
    return IncrementLaw(kind=LawKind.CONTINUOUS_EXPONENTIAL, rate=float(rate),
                        spec=f"cont:exp(rate={rate})")


def uniform(lo: float, hi: float) -> IncrementLaw:
    if not 0 <= lo < hi:
        raise ValidationError(f"uniform needs 0 <= lo < hi, got lo={lo}, hi={hi}")
    return IncrementLaw(kind=LawKind.CONTINUOUS_UNIFORM, lo=float(lo), hi=float(hi),
                        spec=f"cont:uniform(lo={lo},hi={hi})")


def pareto(alpha: float, scale: float = 1.0) -> IncrementLaw:
    """Lomax law: H(x) = (1 + x/scale)^-alpha."""
    if not alpha > 0 or not scale > 0:
        raise ValidationError(f"pareto needs alpha > 0 and scale > 0, got {alpha}, {scale}")
    return IncrementLaw(kind=LawKind.CONTINUOUS_PARETO, alpha=float(alpha), scale=float(scale),
                        spec=f"cont:pareto(alpha={alpha},scale={scale})")


# =============================================================================
# LOG-POWER SERIES
# =============================================================================

def _logpow_weight(n: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.log(n + 2.0) ** b / (n + 1.0) ** (1.0 + a)


def _logpow_series_tail(a: float, b: float, p: float, start: int) -> float:
    """sum_{n >= start} n^p log(n+2)^b / (n+1)^(1+a) by Euler-Maclaurin."""
    def f(t):
        return t ** p * mpmath.log(t + 2) ** b / (t + 1) ** (1 + a)

    with mpmath.workdps(30):
        k = mpmath.mpf(start)
        value = (mpmath.quad(f, [k, 2 * k, mpmath.inf]) + f(k) / 2
                 - mpmath.diff(f, k) / 12 + mpmath.diff(f, k, 3) / 720)
    return float(value)


def _logpow_integral_tail(t: np.ndarray, a: float, b: float) -> np.ndarray:
    """int_t^inf log(s+1)^b (s+1)^-(1+a) ds in closed form (b > -1)."""
    z = a * np.log(np.asarray(t, dtype=float) + 1.0)
    return special.gamma(b + 1.0) * special.gammaincc(b + 1.0, z) / a ** (b + 1.0)


@lru_cache(maxsize=32)
def _logpow_tail_table(a: float, b: float, size: int, normalizer: float) -> np.ndarray:
    """T[j] = mu([j, inf)) for j < size, built from suffix sums plus the exact tail."""
    weights = _logpow_weight(np.arange(size, dtype=float), a, b)
    rest = _logpow_series_tail(a, b, 0.0, size)
    suffix = np.cumsum(weights[::-1])[::-1] + rest
    return np.minimum(normalizer * np.concatenate((suffix, [rest])), 1.0)


def _round_up_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


# =============================================================================
# OPERATIONS
# =============================================================================

def cdf_tail(m: IncrementLaw, x: float) -> Tuple[float, float]:
    """(F(x), H(x)) with F + H = 1."""
    if not m.is_signed and x < 0:
        return 0.0, 1.0
    h = m.tail(x)
    return 1.0 - h, h


def moments(m: IncrementLaw) -> MomentReport:
    """Mean, E sqrt(Y+), E (Y+)^(3/2), E Y+ and E Y-; infinite flags decided analytically."""
    if m.is_finite_support:
        pos = [(k, p) for k, p in m.atoms if k > 0]
        neg = [(-k, p) for k, p in m.atoms if k < 0]

        def moment(items, power):
            return ExtendedReal(math.fsum(k ** power * p for k, p in items))

        pos_mean, neg_mean = moment(pos, 1), moment(neg, 1)
        return MomentReport(
            mean=ExtendedReal(pos_mean.value - neg_mean.value) if m.is_signed else pos_mean,
            half_moment=moment(pos, 0.5),
            three_half_moment=moment(pos, 1.5),
            pos_mean=pos_mean,
            neg_mean=neg_mean,
        )

    def positive_moment(power: float) -> ExtendedReal:
        if m.kind == LawKind.LATTICE_POWER_LAW:
            if m.a <= power:
                return INFINITE
            return ExtendedReal(m.normalizer * float(special.zeta(1.0 + m.a - power)))
        if m.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW:
            if m.a <= power:
                return INFINITE
            return ExtendedReal(m.normalizer * float(special.zeta(1.0 + m.a - power)))
        if m.kind == LawKind.LATTICE_LOG_POWER_LAW:
            # sum n^p log^b(n) n^-(1+a) converges iff a > p, since b > -1
            if m.a <= power:
                return INFINITE
            head = np.arange(m.truncation, dtype=float)
            body = math.fsum(head ** power * _logpow_weight(head, m.a, m.b))
            return ExtendedReal(m.normalizer * (body + _logpow_series_tail(m.a, m.b, power, m.truncation)))
        if m.kind == LawKind.CONTINUOUS_EXPONENTIAL:
            return ExtendedReal(math.gamma(1.0 + power) / m.rate ** power)
        if m.kind == LawKind.CONTINUOUS_UNIFORM:
            return ExtendedReal((m.hi ** (power + 1) - m.lo ** (power + 1))
                                / ((power + 1) * (m.hi - m.lo)))
        # ContinuousPareto (Lomax)
        if m.alpha <= power:
            return INFINITE
        return ExtendedReal(m.scale ** power * float(
            special.gamma(power + 1) * special.gamma(m.alpha - power) / special.gamma(m.alpha)))

    pos_mean = positive_moment(1.0)
    if m.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW:
        neg_mean = pos_mean
        mean = ExtendedReal(0.0) if pos_mean.is_finite else INFINITE
    else:
        neg_mean = ExtendedReal(0.0)
        mean = pos_mean

    return MomentReport(
        mean=mean,
        half_moment=positive_moment(0.5),
        three_half_moment=positive_moment(1.5),
        pos_mean=pos_mean,
        neg_mean=neg_mean,
    )


def lattice_pmf(m: IncrementLaw, n_max: int) -> LatticePmf:
    """Truncate a lattice law to |k| <= n_max, keeping the cut mass as remainder."""
    m._require_lattice("lattice_pmf")

    if m.is_finite_support:
        kept = {k: p for k, p in m.atoms if abs(k) <= n_max}
        if m.exact:
            exact = {k: p for k, p in m.exact_atoms if abs(k) <= n_max}
            remainder = 1 - sum(exact.values(), sympy.Integer(0))
            return LatticePmf(masses=tuple(sorted(kept.items())), remainder=float(remainder),
                              exact=tuple(sorted(exact.items())), span=m.span)
        return LatticePmf(masses=tuple(sorted(kept.items())),
                          remainder=max(0.0, 1.0 - math.fsum(kept.values())), span=m.span)

    if m.kind == LawKind.SIGNED_SYMMETRIC_POWER_LAW:
        ks = np.concatenate((np.arange(-n_max, 0), np.arange(1, n_max + 1)))
        remainder = 2.0 * float(m.tail_int(np.array([n_max]))[0])
    else:
        ks = np.arange(0, n_max + 1)
        remainder = float(m.tail_int(np.array([n_max]))[0])
    masses = m.pmf_array(ks)
    keep = masses > 0
    return LatticePmf(masses=tuple(zip(ks[keep].tolist(), masses[keep].tolist())),
                      remainder=remainder, span=m.span)


def _as_pmf(p: Union[LatticePmf, IncrementLaw], n_max: int) -> LatticePmf:
    return lattice_pmf(p, n_max) if isinstance(p, IncrementLaw) else p


def _convolve_dense(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if min(len(x), len(y)) > 512:
        return np.clip(signal.fftconvolve(x, y), 0.0, None)
    return np.convolve(x, y)


def convolve(m1: Union[LatticePmf, IncrementLaw], m2: Union[LatticePmf, IncrementLaw],
             n_max: int) -> LatticePmf:
    """(m1 * m2)(n) = sum_k m1(k) m2(n-k), truncated at |n| <= n_max."""
    p1, p2 = _as_pmf(m1, n_max), _as_pmf(m2, n_max)
    if p1.span != p2.span:
        raise ValidationError(f"Span mismatch: {p1.span} vs {p2.span}")

    if p1.exact is not None and p2.exact is not None and p1.remainder == 0 and p2.remainder == 0:
        out: Dict[int, sympy.Rational] = {}
        for i, a in p1.exact:
            for j, b in p2.exact:
                out[i + j] = out.get(i + j, sympy.Integer(0)) + a * b
        kept = {k: v for k, v in out.items() if abs(k) <= n_max and v != 0}
        remainder = 1 - sum(kept.values(), sympy.Integer(0))
        return LatticePmf(masses=tuple(sorted((k, float(v)) for k, v in kept.items())),
                          remainder=float(remainder), exact=tuple(sorted(kept.items())),
                          span=_gcd_span(kept))

    k1 = np.array([k for k, _ in p1.masses], dtype=np.int64)
    k2 = np.array([k for k, _ in p2.masses], dtype=np.int64)
    dense1 = np.zeros(k1.max() - k1.min() + 1)
    dense1[k1 - k1.min()] = [p for _, p in p1.masses]
    dense2 = np.zeros(k2.max() - k2.min() + 1)
    dense2[k2 - k2.min()] = [p for _, p in p2.masses]

    full = _convolve_dense(dense1, dense2)
    ks = np.arange(len(full)) + k1.min() + k2.min()
    inside = (np.abs(ks) <= n_max) & (full > 0)

    retained = full[inside]
    cut = math.fsum(full[~inside])
    remainder = p1.remainder + p2.remainder - p1.remainder * p2.remainder + cut
    return LatticePmf(masses=tuple(zip(ks[inside].tolist(), retained.tolist())),
                      remainder=remainder, span=_gcd_span(ks[inside].tolist()))


def renewal_sequence(m: IncrementLaw, n_max: int, exact: bool = False) -> RenewalSequence:
    """U(0..n_max) from U(n)(1 - mu(0)) = delta_0(n) + sum_{k>=1} mu(k) U(n-k)."""
    if not m.is_lattice or m.is_signed:
        raise ValidationError(f"renewal_sequence needs a half-line lattice law, got {m}")
    if n_max < 0:
        raise ValidationError(f"n_max must be >= 0, got {n_max}")

    if exact:
        atoms = [(k, p) for k, p in (m.exact_atoms or ()) if k >= 1]
        if not m.exact:
            raise ValidationError(f"{m} has no exact-rational representation")
        scale = 1 - m.pmf_exact(0)
        values: List[sympy.Rational] = []
        for n in range(n_max + 1):
            s = sympy.Integer(1 if n == 0 else 0)
            s += sum((p * values[n - k] for k, p in atoms if k <= n), sympy.Integer(0))
            values.append(s / scale)
        return RenewalSequence(values=tuple(values), n_max=n_max, law=m, exact=True)

    window = n_max if not m.is_finite_support else int(min(m.support_max, n_max))
    mu = m.pmf_array(np.arange(window + 1))
    scale = 1.0 - mu[0]
    U = np.zeros(n_max + 1)
    for n in range(n_max + 1):
        reach = min(n, window)
        s = 1.0 if n == 0 else 0.0
        if reach:
            s += float(np.dot(mu[1:reach + 1], U[n - reach:n][::-1]))
        U[n] = s / scale

    logger.debug(f"Renewal sequence for {m} up to n={n_max}: U(n_max)={U[-1]:.6g}")
    return RenewalSequence(values=U, n_max=n_max, law=m)


def total_variation(p: Union[LatticePmf, Mapping[int, float]],
                    q: Union[LatticePmf, Mapping[int, float]]) -> float:
    """1/2 sum_k |p(k) - q(k)| over the union of supports."""
    p = p.as_dict() if isinstance(p, LatticePmf) else {int(k): float(v) for k, v in p.items()}
    q = q.as_dict() if isinstance(q, LatticePmf) else {int(k): float(v) for k, v in q.items()}
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))


def _to_rational(p: Union[int, Fraction, sympy.Rational]) -> sympy.Rational:
    if isinstance(p, Fraction):
        return sympy.Rational(p.numerator, p.denominator)
    return sympy.Rational(p)
