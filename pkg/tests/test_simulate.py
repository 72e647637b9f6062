#!/usr/bin/env python3
"""
Simulation tests: seeded streams, hand-worked paths, ladder epochs and ensembles.
"""

import sys
import os

import numpy as np
import pytest

# Add parent directory for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

try:
    from core import ValidationError
    from measures import parse_law, total_variation
    from simulate import (
        LadderMode, SeededStream, WalkMode, embedded_ladder_walk, ensemble_run, iter_classical_chunks,
        iter_reflected_chunks, ladder_trace, path_from_increments, reflection_trace, sample_path,
    )
except ImportError as e:
    print(f"❌ Failed to import modules: {e}")
    sys.exit(1)


UNIFORM_12 = "lat:pmf(d=1;1:0.5,2:0.5)"


class TestStreams:
    """Counter-based random streams."""

    def test_same_key_same_sequence(self):
        """(seed, stream_id) fully determines the draws."""
        a = SeededStream(42, 3).generator().random(5)
        b = SeededStream(42, 3).generator().random(5)
        c = SeededStream(42, 4).generator().random(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_child_keeps_seed(self):
        """child() only swaps the stream id."""
        child = SeededStream(9).child(5)
        assert child == SeededStream(9, 5)

    def test_full_width_seed(self):
        """Seeds up to 2^64 - 1 are accepted."""
        draws = SeededStream(2 ** 64 - 1).generator().random(3)
        assert draws.shape == (3,)


class TestHandWorkedPaths:
    """Paths built from explicit increments."""

    def test_reflected_path_and_reflections(self):
        """X_{n+1} = |X_n - Y_{n+1}|; reaching 0 counts as a reflection."""
        path = path_from_increments([1, 2, 2, 1], WalkMode.REFLECTED, x0=0)
        assert path.values.tolist() == [0.0, 1.0, 1.0, 1.0, 0.0]

        trace = reflection_trace(path)
        assert trace.times.tolist() == [1, 2, 3, 4]
        assert trace.values.tolist() == [1.0, 1.0, 1.0, 0.0]

    def test_reflection_only_when_crossing(self):
        """Steps that stay on the positive side are not reflections."""
        path = path_from_increments([2, 1, 4], WalkMode.REFLECTED, x0=5)
        assert path.values.tolist() == [5.0, 3.0, 2.0, 2.0]
        trace = reflection_trace(path)
        assert trace.to_rows() == [(1, 3, 2.0)]

    def test_classical_path(self):
        """S_0 = 0 and S_n is the partial sum."""
        path = path_from_increments([1, -2, 1, 3], WalkMode.CLASSICAL)
        assert path.values.tolist() == [0.0, 1.0, -1.0, 0.0, 3.0]
        with pytest.raises(ValidationError):
            path_from_increments([1], WalkMode.CLASSICAL, x0=1)

    def test_negative_start_rejected(self):
        """The reflected walk lives on the half-line."""
        with pytest.raises(ValidationError):
            path_from_increments([1], WalkMode.REFLECTED, x0=-1)

    def test_ladder_modes(self):
        """Ties count for non-strict ascending epochs only."""
        path = path_from_increments([1, -1, 1], WalkMode.CLASSICAL)

        nonstrict = ladder_trace(path, LadderMode.NONSTRICT_ASCENDING)
        assert nonstrict.epochs.tolist() == [0, 1, 3]
        assert nonstrict.increments.tolist() == [1.0, 0.0]

        strict = ladder_trace(path, LadderMode.STRICT_ASCENDING)
        assert strict.epochs.tolist() == [0, 1]

        descending = ladder_trace(path, LadderMode.STRICT_DESCENDING)
        assert descending.epochs.tolist() == [0]

        with pytest.raises(ValidationError):
            ladder_trace(path_from_increments([1], WalkMode.REFLECTED))

    def test_embedded_ladder_walk(self):
        """X_bar follows X at the ladder epochs."""
        path = path_from_increments([1, -1, 1], WalkMode.CLASSICAL)
        X = path_from_increments(path.increments, WalkMode.REFLECTED, 0)
        X_bar = embedded_ladder_walk(path, 0)
        assert X.values.tolist() == [0.0, 1.0, 2.0, 1.0]
        assert X_bar.values.tolist() == [0.0, 1.0, 1.0]


class TestSampling:
    """Seeded simulation."""

    def test_sample_path_is_reproducible(self):
        """Same seed, same path."""
        m = parse_law("cont:exp(rate=1)")
        a = sample_path(m, WalkMode.REFLECTED, 1.0, 100, SeededStream(7))
        b = sample_path(m, WalkMode.REFLECTED, 1.0, 100, SeededStream(7))
        assert np.array_equal(a.values, b.values)
        assert a.steps == 100
        assert np.all(a.values >= 0)

    def test_chunks_match_whole_path(self):
        """Streaming in chunks reproduces the stored path."""
        m = parse_law("int:sympow(a=1.5)")
        whole = sample_path(m, WalkMode.REFLECTED, 2.0, 50, SeededStream(3))
        chunks = list(iter_reflected_chunks(m, 2.0, 50, SeededStream(3), chunk=7))
        assert [start for start, _ in chunks][:3] == [1, 8, 15]
        assert np.array_equal(np.concatenate([v for _, v in chunks]), whole.values[1:])

        classical = sample_path(m, WalkMode.CLASSICAL, 0.0, 50, SeededStream(3))
        streamed = np.concatenate([v for _, v in iter_classical_chunks(m, 50, SeededStream(3), chunk=9)])
        assert np.array_equal(streamed, classical.values[1:])

    def test_occupation_law(self):
        """uniform{1,2}: state frequencies approach nu normalized, (1/3, 1/2, 1/6)."""
        m = parse_law(UNIFORM_12)
        path = sample_path(m, WalkMode.REFLECTED, 0.0, 1_000_000, SeededStream(2024))
        counts = np.bincount(path.values.astype(int), minlength=3)
        empirical = {k: c / len(path.values) for k, c in enumerate(counts.tolist())}
        assert total_variation(empirical, {0: 1 / 3, 1: 1 / 2, 2: 1 / 6}) < 0.02


class TestEnsembles:
    """Parallel ensembles aggregate integer counters."""

    def test_counts_cover_every_value(self):
        """Each path contributes steps + 1 values to the histogram."""
        m = parse_law(UNIFORM_12)
        report = ensemble_run(m, 0.0, 200, paths=5, seed=1, window=(0.0, 3.0), bins=3)
        assert sum(report.counts) == 5 * 201
        assert report.occupation().sum() == pytest.approx(1.0)
        assert report.escape_fraction == 0.0

    @pytest.mark.parametrize("workers", [4, 8])
    def test_worker_count_does_not_change_results(self, workers):
        """Aggregates match the single-worker run for 4 and 8 workers."""
        m = parse_law("cont:exp(rate=1)")
        serial = ensemble_run(m, 1.0, 500, paths=16, seed=99, workers=1)
        parallel = ensemble_run(m, 1.0, 500, paths=16, seed=99, workers=workers)
        assert serial == parallel

    def test_report_schema(self):
        """to_dict exposes bins, returns and escape."""
        report = ensemble_run(parse_law(UNIFORM_12), 0.0, 10, paths=2, seed=5,
                              window=(0.0, 3.0), bins=3, interval=(0.0, 0.5))
        data = report.to_dict()
        assert set(data) == {"paths", "steps", "bins", "returns", "escape"}
        assert len(data["bins"]) == 3
        assert data["returns"]["interval"] == [0.0, 0.5]

    def test_invalid_ensemble(self):
        """paths must be positive."""
        with pytest.raises(ValidationError):
            ensemble_run(parse_law(UNIFORM_12), 0.0, 10, paths=0, seed=1)
