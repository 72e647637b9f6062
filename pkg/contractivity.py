"""
ReflectLab - Contractivity
==========================
Coupled reflected paths driven by the same increments, attractor estimates
from long runs, and the escape-based transience vote.
"""

import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core import ValidationError
from measures import IncrementLaw, moments
from simulate import (
    SeededStream, WalkMode, iter_classical_chunks, iter_reflected_chunks, path_from_increments,
)

logger = logging.getLogger('reflectlab.contractivity')

# Desk-scale threshold for "the coupled paths have met"; see DESIGN.md.
CALIBRATED_THRESHOLD = 1e-3
DEFAULT_THRESHOLDS = (CALIBRATED_THRESHOLD, 1e-6)

TRANSIENT_FRACTION = 0.95
RECURRENT_FRACTION = 0.05
MIN_VOTE_PATHS = 30
FALLBACK_M = 50.0


# =============================================================================
# CONTRACTION TRACES
# =============================================================================

@dataclass(frozen=True, eq=False)
class ContractionTrace:
    x0: float
    y0: float
    x_values: np.ndarray
    y_values: np.ndarray
    first_below: Dict[float, Optional[int]] = field(default_factory=dict)

    @property
    def D(self) -> np.ndarray:
        return np.abs(self.x_values - self.y_values)

    def to_rows(self) -> List[Tuple[int, float]]:
        return list(enumerate(self.D.tolist()))


def contraction_trace(m: IncrementLaw, x0: float, y0: float, n: int, stream: SeededStream,
                      thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> ContractionTrace:
    """D_n = |X_n^x - X_n^y| for two reflected paths sharing one increment sequence."""
    if x0 < 0 or y0 < 0:
        raise ValidationError(f"Starting points must be >= 0, got {x0}, {y0}")
    if n < 0:
        raise ValidationError(f"Step count must be >= 0, got {n}")

    increments = m.sample(stream.generator(), n)
    X = path_from_increments(increments, WalkMode.REFLECTED, x0, law=m)
    Y = path_from_increments(increments, WalkMode.REFLECTED, y0, law=m)
    D = np.abs(X.values - Y.values)

    first_below: Dict[float, Optional[int]] = {}
    for threshold in thresholds:
        hits = np.nonzero(D < threshold)[0]
        first_below[float(threshold)] = int(hits[0]) if hits.size else None

    logger.debug(f"Contraction {x0} vs {y0} over {n} steps: final D={D[-1]:.3g}")
    return ContractionTrace(x0=float(x0), y0=float(y0), x_values=X.values, y_values=Y.values,
                            first_below=first_below)


def contraction_violations(trace: ContractionTrace, slack_ulps: int = 4) -> List[int]:
    """Steps n with D_{n+1} > D_n + slack, slack measured in ulps of the path magnitude."""
    D = trace.D
    scale = np.maximum(np.maximum(trace.x_values[1:], trace.y_values[1:]), D[:-1])
    slack = slack_ulps * np.spacing(scale)
    return np.nonzero(D[1:] > D[:-1] + slack)[0].tolist()


# =============================================================================
# ATTRACTOR
# =============================================================================

@dataclass(frozen=True, eq=False)
class AttractorEstimate:
    """Occupation of X_{burn_in+1..n}; lattice laws also keep the exact visited states."""
    edges: np.ndarray
    counts: np.ndarray
    visited_states: Optional[Tuple[float, ...]] = None

    @property
    def visited_bins(self) -> np.ndarray:
        return np.nonzero(self.counts)[0]

    def covers(self, lo: float, hi: float) -> bool:
        """True when every bin inside [lo, hi] was visited."""
        centres = 0.5 * (self.edges[:-1] + self.edges[1:])
        inside = (centres >= lo) & (centres <= hi)
        return bool(np.all(self.counts[inside] > 0))

    def to_rows(self) -> List[Tuple[float, float, int]]:
        return list(zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.counts.tolist()))


def attractor_estimate(m: IncrementLaw, x0: float, n: int, stream: SeededStream,
                       burn_in: int = 0, bins: int = 100,
                       window: Optional[Tuple[float, float]] = None) -> AttractorEstimate:
    """Histogram (and, on a lattice, the state set) of the path after burn-in."""
    if n <= burn_in:
        raise ValidationError(f"Need n > burn_in, got n={n}, burn_in={burn_in}")
    if window is None:
        window = (0.0, m.support_max if math.isfinite(m.support_max) else 10.0)
    edges = np.linspace(window[0], window[1], bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    visited = set() if m.is_lattice else None

    for start, values in iter_reflected_chunks(m, x0, n, stream):
        skip = max(0, burn_in + 1 - start)
        kept = values[skip:]
        if not kept.size:
            continue
        counts += np.histogram(kept, bins=edges)[0]
        if visited is not None:
            visited.update(np.unique(kept).tolist())

    return AttractorEstimate(edges=edges, counts=counts,
                             visited_states=tuple(sorted(visited)) if visited is not None else None)


# =============================================================================
# TRANSIENCE VOTE
# =============================================================================

class VoteVerdict(str, Enum):
    TRANSIENT = "transient_indicated"
    RECURRENT = "recurrent_indicated"
    ABSTAIN = "abstain"


@dataclass(frozen=True)
class TransienceVote:
    paths: int
    n: int
    M: float
    escaped: int
    verdict: VoteVerdict
    thresholds: Tuple[float, float] = (TRANSIENT_FRACTION, RECURRENT_FRACTION)

    @property
    def escape_fraction(self) -> float:
        return self.escaped / self.paths

    def to_dict(self) -> Dict[str, object]:
        return {
            "paths": self.paths,
            "n": self.n,
            "M": self.M,
            "escape_fraction": self.escape_fraction,
            "verdict": self.verdict.value,
        }


@dataclass(frozen=True)
class _VoteTask:
    law: IncrementLaw
    x0: float
    n: int
    M: float
    seed: int
    stream_id: int


def default_escape_level(m: IncrementLaw, x0: float = 0.0) -> float:
    """10 times the upper quartile of |Y| when E(Y+) is finite, else 50; always above x0."""
    if moments(m).pos_mean.is_finite:
        level = 10.0 * max(m.abs_quantile(0.75), 1.0)
    else:
        level = FALLBACK_M
    return max(level, x0 + 1.0)


def _escaped(task: _VoteTask) -> int:
    """1 when the path stays above M over its whole second half."""
    stream = SeededStream(task.seed, task.stream_id)
    half = task.n // 2
    low = math.inf if half > 0 else task.x0

    # |x0 + S_n| has the reflected walk's kernel when the law is symmetric
    if task.law.is_signed and task.law.is_symmetric:
        chunks = ((s, np.abs(task.x0 + v)) for s, v in iter_classical_chunks(task.law, task.n, stream))
    else:
        chunks = iter_reflected_chunks(task.law, task.x0, task.n, stream)

    for start, values in chunks:
        offset = max(0, half - start)
        if offset < len(values):
            low = min(low, float(values[offset:].min()))
            if low <= task.M:
                return 0
    return int(low > task.M)


def transience_vote(m: IncrementLaw, x0: float, n: int, paths: int, seed: int,
                    M: Optional[float] = None, workers: int = 1) -> TransienceVote:
    """Escape-fraction vote over ``paths`` independent reflected paths (path i on stream (seed, i))."""
    if paths < MIN_VOTE_PATHS:
        raise ValidationError(f"A vote needs at least {MIN_VOTE_PATHS} paths, got {paths}")
    if M is None:
        M = default_escape_level(m, x0)
    if not M > x0:
        raise ValidationError(f"Escape level M={M} must exceed x0={x0}")

    tasks = [_VoteTask(m, float(x0), n, float(M), seed, i) for i in range(paths)]
    logger.info(f"Transience vote: {paths} paths x {n} steps of {m}, M={M:g}, {workers} worker(s)")
    if workers > 1:
        with multiprocessing.Pool(processes=workers) as pool:
            escaped = sum(pool.map(_escaped, tasks))
    else:
        escaped = sum(_escaped(t) for t in tasks)

    fraction = escaped / paths
    if fraction >= TRANSIENT_FRACTION:
        verdict = VoteVerdict.TRANSIENT
    elif fraction <= RECURRENT_FRACTION:
        verdict = VoteVerdict.RECURRENT
    else:
        verdict = VoteVerdict.ABSTAIN
    logger.info(f"Escape fraction {fraction:.3f}: {verdict.value}")
    return TransienceVote(paths=paths, n=n, M=float(M), escaped=escaped, verdict=verdict)


def votes_agree(first: TransienceVote, second: TransienceVote) -> bool:
    """0-1 consistency: two votes agree unless both decided and differ."""
    if VoteVerdict.ABSTAIN in (first.verdict, second.verdict):
        return True
    return first.verdict == second.verdict
