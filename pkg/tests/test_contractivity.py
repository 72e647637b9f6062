#!/usr/bin/env python3
"""
Contractivity tests: coupled paths, attractor estimates and the transience vote.
"""

import sys
import os

import numpy as np
import pytest

# Add parent directory for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

try:
    from core import ValidationError
    from contractivity import (
        CALIBRATED_THRESHOLD, TransienceVote, VoteVerdict, attractor_estimate, contraction_trace,
        contraction_violations, default_escape_level, transience_vote, votes_agree,
    )
    from lattice_theory import quadratic_tail_sum
    from measures import log_power_law, moments, parse_law, symmetric_power_law
    from simulate import SeededStream
except ImportError as e:
    print(f"❌ Failed to import modules: {e}")
    sys.exit(1)


UNIFORM_12 = "lat:pmf(d=1;1:0.5,2:0.5)"
EXP = "cont:exp(rate=1)"


class TestContraction:
    """Two reflected paths driven by the same increments."""

    def test_distance_never_grows(self):
        """D_{n+1} <= D_n up to rounding."""
        trace = contraction_trace(parse_law(EXP), 0.0, 5.0, 5000, SeededStream(1))
        assert trace.D[0] == 5.0
        assert contraction_violations(trace) == []

    def test_paths_meet_for_exponential_increments(self):
        """Most runs get within the calibrated threshold in 2 * 10^4 steps."""
        m = parse_law(EXP)
        met = 0
        for i in range(20):
            trace = contraction_trace(m, 0.0, 5.0, 20_000, SeededStream(2, i))
            if trace.first_below[CALIBRATED_THRESHOLD] is not None:
                met += 1
        assert met >= 18

    @pytest.mark.slow
    def test_meeting_rate_over_one_hundred_pairs(self):
        """Pairs started at 0 and 1 meet within 10^5 steps in at least 90 of 100 runs."""
        m = parse_law(EXP)
        met = 0
        for i in range(100):
            trace = contraction_trace(m, 0.0, 1.0, 100_000, SeededStream(10, i))
            assert set(trace.first_below) == {CALIBRATED_THRESHOLD, 1e-6}
            if trace.first_below[CALIBRATED_THRESHOLD] is not None:
                met += 1
        assert met >= 90

    def test_different_classes_never_meet(self):
        """Integer and half-integer starts stay exactly 1/2 apart."""
        trace = contraction_trace(parse_law(UNIFORM_12), 0.0, 0.5, 1000, SeededStream(3))
        assert np.all(trace.D == 0.5)
        assert trace.first_below == {1e-3: None, 1e-6: None}

    def test_rows(self):
        """Rows are (n, D_n) starting at n = 0."""
        trace = contraction_trace(parse_law(UNIFORM_12), 0.0, 0.5, 3, SeededStream(3))
        assert trace.to_rows() == [(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5)]

    def test_validation(self):
        """Starts are non-negative."""
        with pytest.raises(ValidationError):
            contraction_trace(parse_law(EXP), -1.0, 0.0, 10, SeededStream(1))


class TestAttractor:
    """Occupation after burn-in."""

    def test_lattice_states(self):
        """uniform{1,2} from 0 keeps to {0, 1, 2}."""
        estimate = attractor_estimate(parse_law(UNIFORM_12), 0.0, 1000, SeededStream(4), burn_in=10)
        assert estimate.visited_states == (0.0, 1.0, 2.0)
        assert int(estimate.counts.sum()) == 990

    def test_single_value_after_burn_in(self):
        """n = burn_in + 1 keeps exactly one value."""
        estimate = attractor_estimate(parse_law(UNIFORM_12), 0.0, 11, SeededStream(4), burn_in=10)
        assert int(estimate.counts.sum()) == 1
        with pytest.raises(ValidationError):
            attractor_estimate(parse_law(UNIFORM_12), 0.0, 10, SeededStream(4), burn_in=10)

    def test_continuous_cover(self):
        """exp(1) fills the bins near the origin."""
        estimate = attractor_estimate(parse_law(EXP), 5.0, 50_000, SeededStream(5), burn_in=100,
                                      bins=20, window=(0.0, 4.0))
        assert estimate.visited_states is None
        assert estimate.covers(0.0, 4.0)
        assert len(estimate.to_rows()) == 20


class TestTransienceVote:
    """Escape above M over the second half of each path."""

    def test_heavy_symmetric_law_escapes(self):
        """sympow(0.5) runs away."""
        vote = transience_vote(symmetric_power_law(0.5), 0.0, 20_000, 40, seed=6, M=50.0)
        assert vote.verdict == VoteVerdict.TRANSIENT

    def test_exponential_stays(self):
        """exp(1) is positive recurrent: nobody escapes."""
        vote = transience_vote(parse_law(EXP), 0.0, 20_000, 30, seed=7)
        assert vote.verdict == VoteVerdict.RECURRENT
        assert vote.escaped == 0

    def test_null_recurrent_law_does_not_vote_transient(self):
        """sympow(1.5) is recurrent; the vote must not claim otherwise."""
        vote = transience_vote(symmetric_power_law(1.5), 0.0, 20_000, 40, seed=8, M=200.0)
        assert vote.verdict != VoteVerdict.TRANSIENT
        assert vote.escape_fraction < 0.95

    @pytest.mark.slow
    def test_symmetric_power_law_frontier(self):
        """100 paths x 10^5 steps, M = 50: a = 0.5 escapes, a = 1.5 stays undecided."""
        transient = transience_vote(symmetric_power_law(0.5), 0.0, 100_000, 100, seed=1, M=50.0, workers=4)
        assert transient.verdict == VoteVerdict.TRANSIENT

        recurrent = transience_vote(symmetric_power_law(1.5), 0.0, 100_000, 100, seed=1, M=50.0, workers=4)
        assert recurrent.verdict == VoteVerdict.ABSTAIN
        assert votes_agree(transient, recurrent)

    @pytest.mark.slow
    def test_log_power_law_never_votes_recurrent(self):
        """logpow(1/2, 1) at n = 10^6: infinite half-moment and quadratic tail, no recurrence claim."""
        m = log_power_law(0.5, 1.0)
        assert not moments(m).half_moment.is_finite
        assert not quadratic_tail_sum(m).is_finite

        vote = transience_vote(m, 0.0, 1_000_000, 30, seed=12, workers=4)
        assert vote.M == 50.0
        assert vote.verdict != VoteVerdict.RECURRENT

    def test_reproducible_across_workers(self):
        """Same seed, same vote, whatever the worker count."""
        m = parse_law(EXP)
        serial = transience_vote(m, 0.0, 2000, 30, seed=9, workers=1)
        again = transience_vote(m, 0.0, 2000, 30, seed=9, workers=1)
        parallel = transience_vote(m, 0.0, 2000, 30, seed=9, workers=2)
        assert serial == again == parallel

    def test_validation(self):
        """At least 30 paths and M above the start."""
        with pytest.raises(ValidationError):
            transience_vote(parse_law(EXP), 0.0, 100, 29, seed=1)
        with pytest.raises(ValidationError):
            transience_vote(parse_law(EXP), 5.0, 100, 30, seed=1, M=5.0)

    def test_default_escape_level(self):
        """10 q75(|Y|) for finite E(Y+), 50 otherwise, always above x0."""
        assert default_escape_level(parse_law(UNIFORM_12)) == 20.0
        assert default_escape_level(symmetric_power_law(0.5)) == 50.0
        assert default_escape_level(symmetric_power_law(0.5), x0=100.0) == 101.0

    def test_schema_and_agreement(self):
        """to_dict fields; abstentions never contradict."""
        decided = TransienceVote(paths=30, n=10, M=5.0, escaped=30, verdict=VoteVerdict.TRANSIENT)
        recurrent = TransienceVote(paths=30, n=10, M=5.0, escaped=0, verdict=VoteVerdict.RECURRENT)
        abstain = TransienceVote(paths=30, n=10, M=5.0, escaped=15, verdict=VoteVerdict.ABSTAIN)
        assert decided.to_dict() == {"paths": 30, "n": 10, "M": 5.0, "escape_fraction": 1.0,
                                     "verdict": "transient_indicated"}
        assert votes_agree(decided, abstain)
        assert not votes_agree(decided, recurrent)
