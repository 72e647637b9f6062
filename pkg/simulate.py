"""
ReflectLab - Simulation
=======================
Seeded trajectories of the classical walk S_n and of the reflected walk
X_{n+1} = |X_n - Y_{n+1}|, with reflection times, ladder epochs and parallel
ensembles aggregated through integer counters.
"""

import logging
import multiprocessing
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core import ValidationError
from measures import IncrementLaw

logger = logging.getLogger('reflectlab.simulate')

# Increments are drawn and folded in blocks of this many steps.
CHUNK_SIZE = 1 << 16

_MASK64 = (1 << 64) - 1


# =============================================================================
# RANDOM STREAMS
# =============================================================================

@dataclass(frozen=True)
class SeededStream:
    """Counter-based stream: Philox4x64-10 keyed by (seed, stream_id).

    The key fully determines the sequence, so path i of an ensemble can be
    regenerated on any worker without coordinating state.
    """
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream_id: int) -> 'SeededStream':
        return replace(self, stream_id=stream_id)


# =============================================================================
# PATHS AND TRACES
# =============================================================================

class WalkMode(str, Enum):
    REFLECTED = "reflected"
    CLASSICAL = "classical"


class LadderMode(str, Enum):
    NONSTRICT_ASCENDING = "nonstrict_ascending"
    STRICT_ASCENDING = "strict_ascending"
    STRICT_DESCENDING = "strict_descending"


@dataclass(frozen=True, eq=False)
class WalkPath:
    """X_0..X_n (reflected) or S_0..S_n (classical) with the increment record."""
    mode: WalkMode
    x0: float
    values: np.ndarray
    increments: np.ndarray
    law: Optional[IncrementLaw] = None

    @property
    def steps(self) -> int:
        return len(self.increments)

    def to_rows(self) -> List[Tuple[int, float]]:
        return list(enumerate(self.values.tolist()))


@dataclass(frozen=True, eq=False)
class ReflectionTrace:
    """Reflection times r(1) < r(2) < ... and R_k = X_{r(k)}."""
    times: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def to_rows(self) -> List[Tuple[int, int, float]]:
        return [(k, int(t), float(r)) for k, (t, r) in
                enumerate(zip(self.times.tolist(), self.values.tolist()), start=1)]


@dataclass(frozen=True, eq=False)
class LadderTrace:
    """Ladder epochs lambda(0)=0 < lambda(1) < ..., heights S_lambda(k) and increments."""
    mode: LadderMode
    epochs: np.ndarray
    heights: np.ndarray
    increments: np.ndarray

    def to_rows(self) -> List[Tuple[int, int, float, Optional[float]]]:
        rows = []
        for k, (epoch, height) in enumerate(zip(self.epochs.tolist(), self.heights.tolist())):
            rows.append((k, int(epoch), float(height),
                         float(self.increments[k - 1]) if k else None))
        return rows


def _reflect(x0: float, increments: np.ndarray) -> np.ndarray:
    """Fold increments through x -> |x - y| starting at x0."""
    x = float(x0)
    out = [x]
    append = out.append
    for y in increments.tolist():
        x = abs(x - y)
        append(x)
    return np.array(out, dtype=float)


def path_from_increments(increments: Sequence[float], mode: WalkMode = WalkMode.REFLECTED,
                         x0: float = 0.0, law: Optional[IncrementLaw] = None) -> WalkPath:
    """Build a path from an explicit increment record."""
    mode = WalkMode(mode)
    inc = np.asarray(increments, dtype=float)

    if mode == WalkMode.REFLECTED:
        if x0 < 0:
            raise ValidationError(f"Reflected walk needs x0 >= 0, got {x0}")
        values = _reflect(x0, inc)
    else:
        if x0 != 0:
            raise ValidationError("Classical walk starts at S_0 = 0")
        values = np.cumsum(np.concatenate(([0.0], inc)))

    return WalkPath(mode=mode, x0=float(x0), values=values, increments=inc, law=law)


def sample_path(m: IncrementLaw, mode: WalkMode, x0: float, n: int,
                stream: SeededStream) -> WalkPath:
    """Simulate n steps of the reflected or classical walk driven by m."""
    if n < 0:
        raise ValidationError(f"Step count must be >= 0, got {n}")
    increments = m.sample(stream.generator(), n)
    return path_from_increments(increments, mode, x0, law=m)


def reflection_trace(path: WalkPath) -> ReflectionTrace:
    """Reflection times: steps with X_{n-1} - Y_n <= 0 (reaching 0 counts)."""
    if path.mode != WalkMode.REFLECTED:
        raise ValidationError("reflection_trace needs a reflected path")
    flips = path.values[:-1] - path.increments <= 0
    times = np.nonzero(flips)[0] + 1
    return ReflectionTrace(times=times, values=path.values[times])


def ladder_trace(path: WalkPath, mode: LadderMode = LadderMode.NONSTRICT_ASCENDING) -> LadderTrace:
    """Ladder epochs of a classical path."""
    if path.mode != WalkMode.CLASSICAL:
        raise ValidationError("ladder_trace needs a classical path")

    mode = LadderMode(mode)
    S = path.values
    if mode == LadderMode.STRICT_DESCENDING:
        record = np.minimum.accumulate(S)[:-1]
        hit = S[1:] < record
    else:
        record = np.maximum.accumulate(S)[:-1]
        hit = S[1:] >= record if mode == LadderMode.NONSTRICT_ASCENDING else S[1:] > record

    epochs = np.concatenate(([0], np.nonzero(hit)[0] + 1))
    heights = S[epochs]
    return LadderTrace(mode=mode, epochs=epochs, heights=heights, increments=np.diff(heights))


def embedded_ladder_walk(path: WalkPath, x0: float) -> WalkPath:
    """Reflected walk driven by the non-strict ladder increments of a classical path."""
    trace = ladder_trace(path, LadderMode.NONSTRICT_ASCENDING)
    return path_from_increments(trace.increments, WalkMode.REFLECTED, x0, law=path.law)


# =============================================================================
# STREAMING
# =============================================================================

def iter_reflected_chunks(m: IncrementLaw, x0: float, n: int, stream: SeededStream,
                          chunk: int = CHUNK_SIZE) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (first index, X values) blocks covering X_1..X_n without storing the path."""
    rng = stream.generator()
    x, done = float(x0), 0
    while done < n:
        k = min(chunk, n - done)
        values = _reflect(x, m.sample(rng, k))[1:]
        x = float(values[-1])
        yield done + 1, values
        done += k


def iter_classical_chunks(m: IncrementLaw, n: int, stream: SeededStream,
                          chunk: int = CHUNK_SIZE) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (first index, S values) blocks covering S_1..S_n."""
    rng = stream.generator()
    s, done = 0.0, 0
    while done < n:
        k = min(chunk, n - done)
        values = np.cumsum(np.concatenate(([s], m.sample(rng, k))))[1:]
        s = float(values[-1])
        yield done + 1, values
        done += k


# =============================================================================
# ENSEMBLES
# =============================================================================

@dataclass(frozen=True)
class EnsembleReport:
    """Integer counters summed over paths; independent of worker count."""
    paths: int
    steps: int
    edges: Tuple[float, ...]
    counts: Tuple[int, ...]
    interval: Tuple[float, float]
    returns: int
    threshold: float
    escaped: int

    @property
    def escape_fraction(self) -> float:
        return self.escaped / self.paths

    def occupation(self) -> np.ndarray:
        """Per-bin visit frequencies among all recorded values X_0..X_n."""
        return np.array(self.counts, dtype=float) / (self.paths * (self.steps + 1))

    def to_dict(self) -> Dict[str, object]:
        return {
            "paths": self.paths,
            "steps": self.steps,
            "bins": [{"lo": lo, "hi": hi, "count": c}
                     for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)],
            "returns": {"interval": list(self.interval), "count": self.returns},
            "escape": {"threshold": self.threshold, "fraction": self.escape_fraction},
        }


@dataclass(frozen=True)
class _PathTask:
    law: IncrementLaw
    x0: float
    n: int
    seed: int
    stream_id: int
    edges: np.ndarray = field(compare=False)
    interval: Tuple[float, float]
    threshold: float


def _path_counters(task: _PathTask) -> Tuple[np.ndarray, int, int]:
    """Counters for one path: bin counts, interval returns, escape indicator."""
    lo, hi = task.interval
    counts, _ = np.histogram([task.x0], bins=task.edges)
    returns = 0
    second_half_start = task.n // 2
    second_half_min = task.x0 if second_half_start == 0 else np.inf

    stream = SeededStream(task.seed, task.stream_id)
    for start, values in iter_reflected_chunks(task.law, task.x0, task.n, stream):
        counts = counts + np.histogram(values, bins=task.edges)[0]
        returns += int(np.count_nonzero((values >= lo) & (values <= hi)))
        offset = max(0, second_half_start - start)
        if offset < len(values):
            second_half_min = min(second_half_min, float(values[offset:].min()))

    escaped = int(second_half_min > task.threshold)
    return counts.astype(np.int64), returns, escaped


def ensemble_run(m: IncrementLaw, x0: float, n: int, paths: int, seed: int,
                 window: Tuple[float, float] = (0.0, 10.0), bins: int = 100,
                 interval: Tuple[float, float] = (0.0, 1.0), threshold: float = 50.0,
                 workers: int = 1) -> EnsembleReport:
    """Run ``paths`` reflected paths (path i on stream (seed, i)) and sum their counters."""
    if paths < 1:
        raise ValidationError(f"paths must be >= 1, got {paths}")
    if n < 0:
        raise ValidationError(f"Step count must be >= 0, got {n}")

    edges = np.linspace(window[0], window[1], bins + 1)
    tasks = [_PathTask(m, float(x0), n, seed, i, edges, tuple(interval), float(threshold))
             for i in range(paths)]

    logger.info(f"Running ensemble: {paths} paths x {n} steps of {m} on {workers} worker(s)")
    if workers > 1 and paths > 1:
        with multiprocessing.Pool(processes=workers) as pool:
            results = pool.map(_path_counters, tasks)
    else:
        results = [_path_counters(t) for t in tasks]

    counts = np.zeros(bins, dtype=np.int64)
    returns = escaped = 0
    for c, r, e in results:
        counts += c
        returns += r
        escaped += e

    return EnsembleReport(
        paths=paths, steps=n, edges=tuple(edges.tolist()), counts=tuple(counts.tolist()),
        interval=(float(interval[0]), float(interval[1])), returns=returns,
        threshold=float(threshold), escaped=escaped,
    )
