"""
ReflectLab - Continuous Theory
==============================
Non-lattice laws: the invariant density H(x) = 1 - F(x) of the reflected
walk, the density h(x) = int mu((x, x+y]) mu(dy) of the process of
reflections, the quadratic-tail integral int H^2 and the resulting
classification.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import integrate

from core import NumericError, ValidationError
from lattice_theory import ClassificationReport, Evidence, verdict_for
from measures import INFINITE, ExtendedReal, IncrementLaw, LawKind, moments

logger = logging.getLogger('reflectlab.continuous_theory')

QUAD_TARGET = 1e-8
TAIL_QUANTILE = 1.0 - 1e-12
DEFAULT_POINTS = 512
DEFAULT_X_MAX = 1e4


class TailMethod(str, Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "adaptive_quadrature_with_tail_bound"


@dataclass(frozen=True)
class TailIntegralReport:
    value: ExtendedReal
    method: TailMethod
    error: float = 0.0

    @property
    def is_finite(self) -> bool:
        return self.value.is_finite

    def to_dict(self) -> Dict[str, object]:
        out = self.value.to_dict()
        out["method"] = self.method.value
        if self.method == TailMethod.QUADRATURE:
            out["error"] = self.error
        return out


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """nu and rho densities sampled on an increasing grid."""
    grid: np.ndarray
    nu_density: np.ndarray
    rho_density: np.ndarray
    quadrature_error: np.ndarray

    HEADER = ("x", "nu_density", "rho_density", "quad_error")

    def to_rows(self) -> List[Tuple[float, float, float, float]]:
        return list(zip(self.grid.tolist(), self.nu_density.tolist(),
                        self.rho_density.tolist(), self.quadrature_error.tolist()))


# =============================================================================
# DENSITIES
# =============================================================================

def nu_density(m: IncrementLaw, x):
    """H(x) = 1 - F(x); vectorized over x."""
    _require_continuous(m, "nu_density")
    out = np.asarray(m.frozen.sf(np.asarray(x, dtype=float)), dtype=float)
    return float(out) if out.ndim == 0 else out


def rho_density(m: IncrementLaw, x):
    """h(x) = int (H(x) - H(x+y)) mu(dy); vectorized over x."""
    _require_continuous(m, "rho_density")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    values, _ = _rho_with_error(m, xs)
    return float(values[0]) if np.ndim(x) == 0 else values


def _rho_with_error(m: IncrementLaw, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if np.any(xs < 0):
        raise ValidationError("Densities live on [0, inf)")
    if m.kind == LawKind.CONTINUOUS_EXPONENTIAL:
        return 0.5 * np.exp(-m.rate * xs), np.zeros(xs.shape)

    frozen = m.frozen
    H = frozen.sf(xs)
    lo, hi = frozen.support()
    upper = min(hi, float(frozen.ppf(TAIL_QUANTILE)))
    tail_mass = float(frozen.sf(upper))

    def integrand(y):
        return (H - frozen.sf(xs + y)) * frozen.pdf(y)

    values, err = integrate.quad_vec(integrand, lo, upper, epsabs=QUAD_TARGET / 10, epsrel=1e-12,
                                     norm='max', points=_breakpoints(m, lo, upper))
    # beyond the cut the integrand is at most H(x) f(y)
    errors = err + H * tail_mass
    if np.any(errors > QUAD_TARGET):
        raise NumericError(f"rho density quadrature for {m} missed the {QUAD_TARGET} target "
                           f"(worst error {errors.max():.3g})")

    values = np.clip(values, 0.0, H)
    values[xs >= m.support_max] = 0.0
    return values, errors


def density_grid(m: IncrementLaw, x_max: float = DEFAULT_X_MAX,
                 points: int = DEFAULT_POINTS) -> DensityGrid:
    """Densities on 0 plus log-spaced points up to min(N, x_max)."""
    _require_continuous(m, "density_grid")
    if points < 2:
        raise ValidationError(f"points must be >= 2, got {points}")
    top = min(m.support_max, float(x_max))
    start = min(top, float(m.frozen.median())) * 1e-3
    grid = np.concatenate(([0.0], np.geomspace(start, top, points - 1)))

    nu = np.minimum.accumulate(nu_density(m, grid))
    rho, errors = _rho_with_error(m, grid)
    logger.info(f"Density grid for {m}: {points} points on [0, {top:g}], "
                f"max quadrature error {errors.max():.3g}")
    return DensityGrid(grid=grid, nu_density=nu, rho_density=np.minimum(rho, nu),
                       quadrature_error=errors)


# =============================================================================
# QUADRATIC TAIL
# =============================================================================

def quadratic_tail_integral(m: IncrementLaw) -> TailIntegralReport:
    """int_0^inf H(x)^2 dx in closed form; finiteness from the family exponent."""
    _require_continuous(m, "quadratic_tail_integral")
    if m.kind == LawKind.CONTINUOUS_EXPONENTIAL:
        value = ExtendedReal(1.0 / (2.0 * m.rate))
    elif m.kind == LawKind.CONTINUOUS_UNIFORM:
        value = ExtendedReal(m.lo + (m.hi - m.lo) / 3.0)
    elif m.alpha > 0.5:
        value = ExtendedReal(m.scale / (2.0 * m.alpha - 1.0))
    else:
        value = INFINITE
    return TailIntegralReport(value=value, method=TailMethod.CLOSED_FORM)


def quadratic_tail_quadrature(m: IncrementLaw) -> TailIntegralReport:
    """Numeric int H^2, only attempted when the closed form says it is finite."""
    closed = quadratic_tail_integral(m)
    if not closed.is_finite:
        return closed

    frozen = m.frozen
    value, error = _integrate_pieces(lambda x: float(frozen.sf(x)) ** 2, m)
    return TailIntegralReport(value=ExtendedReal(value), method=TailMethod.QUADRATURE, error=error)


def rho_total_mass(m: IncrementLaw) -> Tuple[ExtendedReal, float]:
    """(int h, error) by quadrature of the rho density."""
    _require_continuous(m, "rho_total_mass")
    if not quadratic_tail_integral(m).is_finite:
        return INFINITE, 0.0
    value, error = _integrate_pieces(lambda x: float(_rho_with_error(m, np.array([x]))[0][0]), m)
    if error > 1e-6:
        raise NumericError(f"rho total mass for {m} has error {error:.3g}")
    return ExtendedReal(value), error


def _integrate_pieces(fun, m: IncrementLaw) -> Tuple[float, float]:
    """int_0^inf fun over the law's breakpoints, the last piece running to infinity."""
    frozen = m.frozen
    lo, hi = frozen.support()
    upper = min(hi, float(frozen.ppf(TAIL_QUANTILE)))
    edges = [0.0] + [p for p in _breakpoints(m, 0.0, upper)] + [upper]
    if math.isinf(hi):
        edges.append(math.inf)

    total, error = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        piece, err = integrate.quad(fun, a, b, epsabs=QUAD_TARGET / 10, limit=200)
        total += piece
        error += err
    return total, error


def _breakpoints(m: IncrementLaw, lo: float, upper: float) -> List[float]:
    if m.kind == LawKind.CONTINUOUS_UNIFORM:
        return [p for p in (m.lo, m.hi) if lo < p < upper]
    start = float(m.frozen.median()) * 1e-3
    return [p for p in np.geomspace(start, upper, 24).tolist() if lo < p < upper]


# =============================================================================
# CLASSIFICATION AND OCCUPATION
# =============================================================================

def classify_continuous(m: IncrementLaw) -> ClassificationReport:
    """Quadratic-tail verdict for a continuous law."""
    _require_continuous(m, "classify_continuous")
    tail = quadratic_tail_integral(m)
    report = moments(m)
    evidence = [
        Evidence("quadratic_tail", tail.to_dict()),
        Evidence("mean", report.mean.to_dict()),
        Evidence("half_moment", report.half_moment.to_dict()),
        Evidence("half_moment_implies_quad_tail", report.half_moment.is_finite),
    ]
    verdict = verdict_for(tail.value, report.mean)
    logger.info(f"Classified {m}: {verdict.value}")
    return ClassificationReport(model=str(m), quad_tail=tail.value, mean=report.mean,
                                verdict=verdict, evidence=evidence)


def nu_histogram_distance(m: IncrementLaw, values: Sequence[float], bins: int = 100,
                          window: Tuple[float, float] = (0.0, 10.0)) -> float:
    """TV distance between the occupation of ``values`` and nu / E(Y)."""
    _require_continuous(m, "nu_histogram_distance")
    mean = moments(m).mean
    if not mean.is_finite:
        raise ValidationError(f"{m} has infinite mean; nu cannot be normalized")
    frozen = m.frozen
    return _occupation_distance(values, bins, window,
                                lambda a, b: integrate.quad(frozen.sf, a, b)[0] / mean.value)


def rho_histogram_distance(m: IncrementLaw, values: Sequence[float], bins: int = 100,
                           window: Tuple[float, float] = (0.0, 10.0)) -> float:
    """TV distance between the reflection values and rho normalized to mass 1."""
    _require_continuous(m, "rho_histogram_distance")
    total = quadratic_tail_integral(m).value
    if not total.is_finite:
        raise ValidationError(f"{m} has an infinite rho mass")
    return _occupation_distance(
        values, bins, window,
        lambda a, b: integrate.quad(lambda x: rho_density(m, x), a, b)[0] / total.value,
    )


def _occupation_distance(values: Sequence[float], bins: int, window: Tuple[float, float],
                         bin_mass) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("No values to histogram")
    edges = np.linspace(window[0], window[1], bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    empirical = counts / values.size
    expected = np.array([bin_mass(a, b) for a, b in zip(edges[:-1], edges[1:])])
    outside = abs((1.0 - empirical.sum()) - (1.0 - expected.sum()))
    return 0.5 * (float(np.abs(empirical - expected).sum()) + outside)


def _require_continuous(m: IncrementLaw, what: str) -> None:
    if not m.is_continuous:
        raise ValidationError(f"{what} needs a continuous law, got {m}")
