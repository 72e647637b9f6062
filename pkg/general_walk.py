"""
ReflectLab - General (Signed) Walks
===================================
Reflected walks driven by increments on the whole lattice: drift cases,
the |S_n| fold for symmetric laws, the Wiener-Hopf construction of a
symmetric law from a prescribed ladder-height law, empirical ladder heights,
the embedded ladder walk and the characteristic-function slope diagnostic.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Tuple, Union

import mpmath
import numpy as np
import sympy
from scipy import signal

from core import NumericError, ValidationError
from measures import (
    IncrementLaw, LatticePmf, LawKind, MASS_TOLERANCE, lattice_law, lattice_pmf, log_power_law,
    moments, total_variation,
)
from simulate import (
    LadderMode, SeededStream, WalkMode, WalkPath, embedded_ladder_walk, ladder_trace,
    path_from_increments, reflection_trace,
)

logger = logging.getLogger('reflectlab.general_walk')

DEFAULT_N_MAX = 10_000

# Ladder excursions are stepped in blocks of this many increments.
LADDER_BLOCK = 64
DEFAULT_MAX_STEPS = 100_000
# Watchdog: more censored excursions than this fraction means drift to -inf.
CENSORED_LIMIT = 0.05

ABSTAIN_MARGIN = 0.05
EXACT_ATOM_LIMIT = 256

Mass = Union[float, sympy.Rational]


# =============================================================================
# DRIFT
# =============================================================================

class DriftCase(str, Enum):
    POSITIVE = "a"
    BALANCED = "b"
    SYMMETRIC = "symmetric"
    NEGATIVE = "negative_drift"


@dataclass(frozen=True)
class DriftReport:
    case: DriftCase
    pos_mean: float
    neg_mean: float
    recurrence_sufficient: bool

    def to_dict(self) -> Dict[str, object]:
        return {
            "case": self.case.value,
            "pos_mean": self.pos_mean,
            "neg_mean": self.neg_mean,
            "recurrence_sufficient": self.recurrence_sufficient,
        }


def drift_report(m: IncrementLaw) -> DriftReport:
    """Which drift case a signed lattice law falls in, and whether the moment condition holds.

    Symmetric laws with infinite means get their own case: limsup S_n = inf
    by symmetry, but neither moment condition applies.
    """
    if not m.is_lattice:
        raise ValidationError(f"drift_report needs a lattice law, got {m}")
    report = moments(m)
    pos, neg = report.pos_mean.value, report.neg_mean.value

    if math.isinf(pos) and math.isinf(neg):
        case = DriftCase.SYMMETRIC if m.is_symmetric else DriftCase.NEGATIVE
    elif neg < pos:
        case = DriftCase.POSITIVE
    elif neg == pos and 0 < neg:
        case = DriftCase.BALANCED
    else:
        case = DriftCase.NEGATIVE

    sufficient = ((case == DriftCase.POSITIVE and report.half_moment.is_finite)
                  or (case == DriftCase.BALANCED and report.three_half_moment.is_finite))
    logger.debug(f"Drift of {m}: case {case.value}, E(Y+)={pos}, E(Y-)={neg}")
    return DriftReport(case=case, pos_mean=pos, neg_mean=neg, recurrence_sufficient=sufficient)


# =============================================================================
# WIENER-HOPF CONSTRUCTION
# =============================================================================

@dataclass(frozen=True, eq=False)
class WienerHopfResult:
    """Symmetric mu whose non-strict ascending ladder heights follow mu0."""
    mu0: LatticePmf
    mu_times: LatticePmf
    mu: LatticePmf
    remainder: float
    validity: Dict[str, object] = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        return self.mu.exact is not None

    def as_law(self) -> IncrementLaw:
        """mu as a signed IncrementLaw; float masses are renormalized over the kept atoms."""
        if self.exact:
            return lattice_law(self.mu.exact_dict(), signed=True, spec="wiener-hopf")
        masses = self.mu.as_dict()
        total = math.fsum(masses.values())
        return lattice_law({k: p / total for k, p in masses.items()}, signed=True, spec="wiener-hopf")

    def to_rows(self) -> List[Tuple[int, Optional[float], float]]:
        mu0, mu = self.mu0.as_dict(), self.mu.as_dict()
        reach = max(abs(k) for k in mu)
        return [(k, mu0.get(k, 0.0) if k >= 0 else None, mu.get(k, 0.0))
                for k in range(-reach, reach + 1)]


def wiener_hopf_construct(mu0: Union[IncrementLaw, LatticePmf, Mapping[int, object]],
                          n_max: int = DEFAULT_N_MAX) -> WienerHopfResult:
    """mu = mu0(0) delta_0 + (1 - mu0(0)) (mx + reflected mx - mx * reflected mx)."""
    pmf = _ladder_input(mu0, n_max)
    masses = pmf.exact_dict() if pmf.exact is not None else pmf.as_dict()
    if any(k < 0 for k in masses):
        raise ValidationError("Ladder law lives on the non-negative integers")

    top = max(masses)
    for n in range(top):
        if masses.get(n, 0) < masses.get(n + 1, 0):
            raise ValidationError(f"mu0 must be non-increasing: mu0({n}) < mu0({n + 1})")
    p0 = masses.get(0, 0)
    if p0 >= 1 or top == 0:
        raise ValidationError("Degenerate ladder law: no mass on the positive integers")

    if pmf.exact is not None and top <= EXACT_ATOM_LIMIT:
        times = {k: p / (1 - p0) for k, p in masses.items() if k >= 1}
        auto = {k: sum((times.get(j + k, 0) * p for j, p in times.items()), sympy.Integer(0))
                for k in range(top)}
        mu: Dict[int, Mass] = {0: p0 - (1 - p0) * auto[0]}
        for k in range(1, top + 1):
            mu[k] = mu[-k] = (1 - p0) * (times.get(k, 0) - auto.get(k, 0))
        negatives = [k for k, p in mu.items() if p < 0]
        if negatives:
            raise NumericError(f"Constructed law has negative masses at {negatives}")
        mu_pmf = LatticePmf.from_mapping(mu)
        times_pmf = LatticePmf.from_mapping(times)
        remainder = 0.0
        total = float(sum(mu.values()))
    else:
        t = np.zeros(top + 1)
        for k, p in masses.items():
            if k >= 1:
                t[k] = float(p) / (1.0 - float(p0))
        auto = signal.convolve(t, t[::-1])[:top + 1][::-1]
        half = (1.0 - float(p0)) * (t - auto)
        half[0] = float(p0) - (1.0 - float(p0)) * auto[0]
        if half.min() < -MASS_TOLERANCE:
            raise NumericError(f"Constructed law has a negative mass {half.min():.3g}")
        half = np.clip(half, 0.0, None)
        mu = {0: float(half[0])}
        for k in range(1, top + 1):
            if half[k] > 0:
                mu[k] = mu[-k] = float(half[k])
        cut = 1.0 - t.sum()
        remainder = (1.0 - float(p0)) * cut + pmf.remainder
        total = math.fsum(mu.values())
        mu_pmf = LatticePmf.from_mapping(mu, remainder=remainder)
        times_pmf = LatticePmf.from_mapping({k: float(v) for k, v in enumerate(t) if v > 0},
                                            remainder=cut)

    validity = {
        "nonnegative": True,
        "total_mass": total,
        "symmetric": all(mu.get(-k) == p for k, p in mu.items()),
    }
    logger.info(f"Wiener-Hopf construction on {top + 1} ladder atoms: mu(0)={float(mu[0]):.6g}, "
                f"total mass {total:.15g}")
    return WienerHopfResult(mu0=pmf, mu_times=times_pmf, mu=mu_pmf, remainder=remainder,
                            validity=validity)


def near_sharp_construct(b: float = 1.0, n_max: int = 4096) -> WienerHopfResult:
    """Symmetric law built from the ladder law logpow(a=1/2, b), cut at n_max.

    Its half-moment is only logarithmically infinite, yet the reflected walk
    is transient for b > 1/2.
    """
    return wiener_hopf_construct(log_power_law(0.5, b), n_max)


def _ladder_input(mu0, n_max: int) -> LatticePmf:
    if isinstance(mu0, LatticePmf):
        return mu0
    if isinstance(mu0, IncrementLaw):
        if not mu0.is_lattice or mu0.is_signed:
            raise ValidationError(f"Ladder law must be a half-line lattice law, got {mu0}")
        return lattice_pmf(mu0, n_max)

    exact = {int(k): _as_fraction(v) for k, v in mu0.items()}
    if all(v is not None for v in exact.values()):
        if sum(exact.values()) != 1:
            raise ValidationError("Ladder law masses must sum to 1")
        return LatticePmf.from_mapping(exact)
    floats = {int(k): float(v) for k, v in mu0.items()}
    if abs(math.fsum(floats.values()) - 1.0) > MASS_TOLERANCE:
        raise ValidationError("Ladder law masses must sum to 1")
    return LatticePmf.from_mapping(floats)


# =============================================================================
# LADDER HEIGHTS
# =============================================================================

@dataclass(frozen=True, eq=False)
class LadderSample:
    """Non-strict ascending ladder heights from consecutive excursions of S."""
    heights: np.ndarray
    censored: int
    max_steps: int

    @property
    def epochs(self) -> int:
        return len(self.heights)

    def pmf(self) -> Dict[int, float]:
        values, counts = np.unique(self.heights, return_counts=True)
        return {int(v): c / len(self.heights) for v, c in zip(values.tolist(), counts.tolist())}


@dataclass(frozen=True)
class LadderDecomposition:
    """mu_bar = u delta_0 + (1 - u) mu_plus."""
    u: float
    mu_plus: Dict[int, float]


def ladder_height_empirical(m: IncrementLaw, epochs: int, stream: SeededStream,
                            max_steps: int = DEFAULT_MAX_STEPS) -> LadderSample:
    """First ``epochs`` ladder increments of S, one excursion per epoch.

    Excursions are independent by the strong Markov property, so running them
    side by side gives the same law as one long path. Each excursion is cut at
    ``max_steps``; censored ones are dropped and counted.
    """
    if epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {epochs}")
    if not m.is_lattice:
        raise ValidationError(f"ladder_height_empirical needs a lattice law, got {m}")
    if drift_report(m).case == DriftCase.NEGATIVE:
        raise NumericError(f"{m} drifts to -inf: ladder epochs are finite in number")

    rng = stream.generator()
    heights = np.full(epochs, np.nan)
    level = np.zeros(epochs)
    active = np.arange(epochs)
    steps = 0

    while active.size and steps < max_steps:
        block = min(LADDER_BLOCK, max_steps - steps)
        paths = level[active, None] + np.cumsum(
            m.sample(rng, active.size * block).reshape(active.size, block), axis=1)
        hit = paths >= 0
        done = hit.any(axis=1)
        first = hit.argmax(axis=1)
        heights[active[done]] = paths[done, first[done]]
        level[active[~done]] = paths[~done, -1]
        active = active[~done]
        steps += block

    censored = int(active.size)
    if censored > CENSORED_LIMIT * epochs:
        raise NumericError(f"Ladder watchdog: {censored}/{epochs} excursions exceeded {max_steps} steps")
    if censored:
        logger.warning(f"⚠️ {censored} of {epochs} ladder excursions censored at {max_steps} steps")

    kept = heights[~np.isnan(heights)]
    logger.info(f"Collected {kept.size} ladder heights for {m}")
    return LadderSample(heights=kept, censored=censored, max_steps=max_steps)


def ladder_decomposition(pmf: Union[Mapping[int, float], LatticePmf]) -> LadderDecomposition:
    """Split a ladder-height law into its atom at 0 and its renormalized positive part."""
    masses = pmf.as_dict() if isinstance(pmf, LatticePmf) else {int(k): float(v) for k, v in pmf.items()}
    u = masses.get(0, 0.0)
    positive = {k: p for k, p in masses.items() if k >= 1}
    rest = math.fsum(positive.values())
    if rest <= 0:
        return LadderDecomposition(u=u, mu_plus={})
    return LadderDecomposition(u=u, mu_plus={k: p / rest for k, p in positive.items()})


@dataclass(frozen=True)
class WienerHopfCheck:
    tv: float
    epochs: int
    censored: int
    empirical: Dict[int, float]

    def to_dict(self) -> Dict[str, object]:
        return {"tv": self.tv, "epochs": self.epochs, "censored": self.censored,
                "empirical": {str(k): v for k, v in sorted(self.empirical.items())}}


def wiener_hopf_verify(result: WienerHopfResult, epochs: int, stream: SeededStream,
                       max_steps: int = DEFAULT_MAX_STEPS) -> WienerHopfCheck:
    """TV distance between simulated ladder heights under mu and the target mu0."""
    sample = ladder_height_empirical(result.as_law(), epochs, stream, max_steps)
    empirical = sample.pmf()
    tv = total_variation(empirical, result.mu0)
    logger.info(f"Wiener-Hopf round trip: TV {tv:.4g} over {sample.epochs} epochs")
    return WienerHopfCheck(tv=tv, epochs=sample.epochs, censored=sample.censored, empirical=empirical)


# =============================================================================
# EMBEDDED LADDER WALK
# =============================================================================

@dataclass(frozen=True)
class EmbeddedEquivalence:
    """Agreement between X and the walk driven by ladder increments."""
    epochs: int
    ladder_values_match: bool
    reflections_match: bool
    minimum_holds: bool

    @property
    def holds(self) -> bool:
        return self.ladder_values_match and self.reflections_match and self.minimum_holds


def embedded_equivalence(path: WalkPath, x0: float) -> EmbeddedEquivalence:
    """Compare X (from S's increments) with X_bar at the non-strict ladder epochs."""
    if path.mode != WalkMode.CLASSICAL:
        raise ValidationError("embedded_equivalence needs a classical path")

    X = path_from_increments(path.increments, WalkMode.REFLECTED, x0, law=path.law)
    X_bar = embedded_ladder_walk(path, x0)
    epochs = ladder_trace(path, LadderMode.NONSTRICT_ASCENDING).epochs

    values_match = bool(np.array_equal(X.values[epochs], X_bar.values))

    r_X, r_bar = reflection_trace(X), reflection_trace(X_bar)
    reflections_match = (bool(np.array_equal(r_X.values, r_bar.values))
                         and bool(np.array_equal(r_X.times, epochs[r_bar.times])))

    bounds = np.append(epochs, len(X.values))
    minimum_holds = all(
        X.values[lo:hi].min() >= X.values[lo] for lo, hi in zip(bounds[:-1], bounds[1:])
    )
    return EmbeddedEquivalence(epochs=len(epochs) - 1, ladder_values_match=values_match,
                               reflections_match=reflections_match, minimum_holds=minimum_holds)


# =============================================================================
# SYMMETRIC FOLD
# =============================================================================

@dataclass(frozen=True)
class AbsEquivalence:
    window: int
    discrepancy: Mass
    exact: bool


def symmetric_abs_equivalence(m: IncrementLaw, window: int = 20) -> AbsEquivalence:
    """max |K_abs(x,y) - p(x,y)| over 0 <= x, y <= window.

    K_abs(x, B) = mu(-x+B) + mu(-x-B) - mu(-x) delta_0(B) is the kernel of |S_n|;
    p is the reflected-walk kernel x -> |x - Y|.
    """
    if not m.is_lattice or not m.is_signed:
        raise ValidationError(f"symmetric_abs_equivalence needs a signed lattice law, got {m}")
    if not m.is_symmetric:
        raise ValidationError(f"{m} is not symmetric")

    if m.exact:
        mu = m.pmf_exact
        worst = sympy.Integer(0)
        for x in range(window + 1):
            for y in range(window + 1):
                k_abs = mu(y - x) + mu(-y - x) - (mu(-x) if y == 0 else 0)
                p = mu(x) if y == 0 else mu(x - y) + mu(x + y)
                worst = max(worst, abs(k_abs - p))
        return AbsEquivalence(window=window, discrepancy=worst, exact=True)

    xs = np.arange(window + 1)[:, None]
    ys = np.arange(window + 1)[None, :]
    k_abs = m.pmf_array(ys - xs) + m.pmf_array(-ys - xs) - np.where(ys == 0, m.pmf_array(-xs), 0.0)
    p = np.where(ys == 0, m.pmf_array(xs + 0 * ys), m.pmf_array(xs - ys) + m.pmf_array(xs + ys))
    return AbsEquivalence(window=window, discrepancy=float(np.abs(k_abs - p).max()), exact=False)


# =============================================================================
# CHARACTERISTIC FUNCTION DIAGNOSTIC
# =============================================================================

class CharVerdict(str, Enum):
    RECURRENT = "recurrent_indicated"
    TRANSIENT = "transient_indicated"
    ABSTAIN = "abstain"


@dataclass(frozen=True, eq=False)
class CharDiagnostic:
    t_grid: np.ndarray
    one_minus_chf: np.ndarray
    slope: float
    margin: float
    verdict: CharVerdict

    def to_dict(self) -> Dict[str, object]:
        return {
            "slope": self.slope,
            "margin": self.margin,
            "verdict": self.verdict.value,
            "t_min": float(self.t_grid[0]),
            "t_max": float(self.t_grid[-1]),
            "points": len(self.t_grid),
        }


def char_slope_diagnostic(m: IncrementLaw, t_min: float = 1e-4, t_max: float = 1e-2,
                          points: int = 32) -> CharDiagnostic:
    """Log-log slope of 1 - chf(t) near 0; slope >= 1 indicates recurrence."""
    if not m.is_lattice or not m.is_signed or not m.is_symmetric:
        raise ValidationError(f"char_slope_diagnostic needs a symmetric signed lattice law, got {m}")
    if not 0 < t_min < t_max < math.pi:
        raise ValidationError(f"Grid must satisfy 0 < t_min < t_max < pi, got {t_min}, {t_max}")
    if points < 2:
        raise ValidationError(f"points must be >= 2, got {points}")

    t = np.geomspace(t_min, t_max, points)
    gap = _one_minus_chf(m, t)
    if np.any(gap <= 0):
        raise NumericError(f"1 - chf(t) <= 0 on the grid for {m}")

    slope = float(np.polyfit(np.log(t), np.log(gap), 1)[0])
    margin = abs(slope - 1.0)
    if margin < ABSTAIN_MARGIN:
        verdict = CharVerdict.ABSTAIN
    else:
        verdict = CharVerdict.RECURRENT if slope >= 1.0 else CharVerdict.TRANSIENT
    logger.info(f"Characteristic slope for {m}: {slope:.4f} ({verdict.value})")
    return CharDiagnostic(t_grid=t, one_minus_chf=gap, slope=slope, margin=margin, verdict=verdict)


def _one_minus_chf(m: IncrementLaw, t: np.ndarray) -> np.ndarray:
    """sum_k mu(k) (1 - cos kt), written with sin^2 to keep small values accurate."""
    if m.is_finite_support:
        ks = np.array([k for k, _ in m.atoms], dtype=float)
        ps = np.array([p for _, p in m.atoms], dtype=float)
        return (ps[None, :] * 2.0 * np.sin(np.outer(t, ks) / 2.0) ** 2).sum(axis=1)

    if m.kind != LawKind.SIGNED_SYMMETRIC_POWER_LAW:
        raise ValidationError(f"No characteristic function for {m}")
    return np.array([_sympow_gap(m.a, float(v)) for v in t])


def _sympow_gap(a: float, t: float) -> float:
    """1 - chf(t) = (zeta(s) - sum_k cos(kt)/k^s) / zeta(s) with s = 1 + a.

    The cosine series is evaluated through Hurwitz zeta values:
    sum_k cos(2 pi k x)/k^s = (2 pi)^s / (4 Gamma(s) cos(pi s/2)) [zeta(1-s, x) + zeta(1-s, 1-x)].
    """
    with mpmath.workdps(40):
        s = mpmath.mpf(1) + mpmath.mpf(a)
        if mpmath.almosteq(mpmath.cos(mpmath.pi * s / 2), 0, 1e-30):
            s += mpmath.mpf('1e-20')
        x = mpmath.mpf(t) / (2 * mpmath.pi)
        cosine_sum = ((2 * mpmath.pi) ** s / (4 * mpmath.gamma(s) * mpmath.cos(mpmath.pi * s / 2))
                      * (mpmath.zeta(1 - s, x) + mpmath.zeta(1 - s, 1 - x)))
        zeta_s = mpmath.zeta(s)
        return float((zeta_s - cosine_sum) / zeta_s)


def _as_fraction(v) -> Optional[Fraction]:
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, sympy.Rational):
        return Fraction(int(v.p), int(v.q))
    if isinstance(v, (int, Fraction)) and not isinstance(v, bool):
        return Fraction(v)
    return None
