#!/usr/bin/env python3
"""
Signed-walk tests: drift cases, Wiener-Hopf construction, ladder heights,
the embedded ladder walk, the symmetric fold and the characteristic slope.
"""

import sys
import os
from fractions import Fraction

import pytest
import sympy

# Add parent directory for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

try:
    from core import NumericError, ValidationError
    from general_walk import (
        CharVerdict, DriftCase, char_slope_diagnostic, drift_report, embedded_equivalence,
        ladder_decomposition, ladder_height_empirical, near_sharp_construct, symmetric_abs_equivalence,
        wiener_hopf_construct, wiener_hopf_verify,
    )
    from measures import parse_law, symmetric_power_law
    from simulate import SeededStream, WalkMode, sample_path
except ImportError as e:
    print(f"❌ Failed to import modules: {e}")
    sys.exit(1)


SRW = "int:pmf(-1:1/2,1:1/2)"
R = sympy.Rational


class TestDrift:
    """Drift cases and the moment conditions."""

    def test_balanced_finite_law(self):
        """The simple walk is balanced and satisfies the 3/2-moment condition."""
        report = drift_report(parse_law(SRW))
        assert report.case == DriftCase.BALANCED
        assert report.recurrence_sufficient
        assert report.to_dict()["case"] == "b"

    def test_positive_and_negative_drift(self):
        """E(Y+) > E(Y-) is case a; the reverse drifts to -inf."""
        assert drift_report(parse_law("int:pmf(-1:1/4,2:3/4)")).case == DriftCase.POSITIVE
        assert drift_report(parse_law("int:pmf(-1:1/4,2:3/4)")).recurrence_sufficient
        assert drift_report(parse_law("int:pmf(-2:3/4,1:1/4)")).case == DriftCase.NEGATIVE

    def test_symmetric_power_laws(self):
        """sympow: balanced for a > 1, sufficient only once E|Y|^{3/2} is finite."""
        low = drift_report(symmetric_power_law(1.2))
        assert low.case == DriftCase.BALANCED
        assert not low.recurrence_sufficient

        assert drift_report(symmetric_power_law(1.6)).recurrence_sufficient

        heavy = drift_report(symmetric_power_law(0.5))
        assert heavy.case == DriftCase.SYMMETRIC
        assert not heavy.recurrence_sufficient

    def test_continuous_law_rejected(self):
        """Drift cases are for lattice laws."""
        with pytest.raises(ValidationError):
            drift_report(parse_law("cont:exp(rate=1)"))


class TestWienerHopf:
    """Symmetric laws from ladder-height laws."""

    def test_two_atom_ladder_gives_simple_walk(self):
        """mu0 = (1/2, 1/2) builds the simple symmetric walk exactly."""
        result = wiener_hopf_construct({0: Fraction(1, 2), 1: Fraction(1, 2)})
        assert result.exact
        assert result.mu.exact_dict() == {-1: R(1, 2), 1: R(1, 2)}
        assert result.validity["symmetric"]
        assert result.remainder == 0.0

    def test_three_atom_ladder(self):
        """mu0 uniform on {0,1,2} gives mu(+-1) = 1/6, mu(+-2) = 1/3."""
        result = wiener_hopf_construct({0: Fraction(1, 3), 1: Fraction(1, 3), 2: Fraction(1, 3)})
        assert result.mu.exact_dict() == {-2: R(1, 3), -1: R(1, 6), 1: R(1, 6), 2: R(1, 3)}
        assert float(result.validity["total_mass"]) == pytest.approx(1.0)

    def test_rows_cover_both_sides(self):
        """mu0 is blank on the negative side."""
        result = wiener_hopf_construct({0: Fraction(1, 2), 1: Fraction(1, 2)})
        assert result.to_rows() == [(-1, None, 0.5), (0, 0.5, 0.0), (1, 0.5, 0.5)]

    def test_float_input(self):
        """Float masses go through the convolution backend."""
        result = wiener_hopf_construct({0: 0.5, 1: 0.25, 2: 0.25})
        assert not result.exact
        masses = result.mu.as_dict()
        assert sum(masses.values()) == pytest.approx(1.0)
        assert masses[1] == pytest.approx(masses[-1])

    def test_near_sharp_example(self):
        """A truncated logpow(1/2, 1) ladder law gives a valid symmetric law."""
        result = near_sharp_construct(1.0, n_max=512)
        assert not result.exact
        assert result.validity["symmetric"]
        assert result.remainder > 0
        masses = result.mu.as_dict()
        assert min(masses.values()) >= 0
        assert float(result.validity["total_mass"]) <= 1.0 + 1e-12

    def test_invalid_ladder_laws(self):
        """Increasing or degenerate ladder laws are refused."""
        with pytest.raises(ValidationError):
            wiener_hopf_construct({0: Fraction(1, 4), 1: Fraction(3, 4)})
        with pytest.raises(ValidationError):
            wiener_hopf_construct({0: 1})
        with pytest.raises(ValidationError):
            wiener_hopf_construct({0: Fraction(1, 2), 1: Fraction(1, 4)})

    def test_round_trip_through_simulation(self):
        """Ladder heights of the constructed walk reproduce mu0."""
        result = wiener_hopf_construct({0: Fraction(1, 2), 1: Fraction(1, 2)})
        check = wiener_hopf_verify(result, 2000, SeededStream(31))
        assert check.tv < 0.05
        assert check.epochs + check.censored == 2000
        assert set(check.to_dict()) == {"tv", "epochs", "censored", "empirical"}


class TestLadderHeights:
    """Empirical ladder heights."""

    def test_heights_are_non_negative(self):
        """Non-strict ladder heights live on {0, 1, ...}."""
        sample = ladder_height_empirical(parse_law("int:pmf(-1:1/4,2:3/4)"), 500, SeededStream(4))
        assert sample.epochs == 500
        assert sample.censored == 0
        assert sample.heights.min() >= 0
        assert sum(sample.pmf().values()) == pytest.approx(1.0)

    def test_negative_drift_raises(self):
        """Finitely many ladder epochs is a numeric failure."""
        with pytest.raises(NumericError):
            ladder_height_empirical(parse_law("int:pmf(-2:3/4,1:1/4)"), 100, SeededStream(4))

    def test_decomposition(self):
        """mu_bar = u delta_0 + (1 - u) mu_plus."""
        split = ladder_decomposition({0: 0.25, 1: 0.5, 2: 0.25})
        assert split.u == 0.25
        assert split.mu_plus == pytest.approx({1: 2 / 3, 2: 1 / 3})


class TestEmbeddedWalk:
    """X observed at ladder epochs is the walk driven by ladder increments."""

    @pytest.mark.parametrize("spec", [SRW, "int:sympow(a=1.2)"])
    @pytest.mark.parametrize("x0", [0.0, 3.0])
    def test_equivalence_on_simulated_paths(self, spec, x0):
        """Values, reflections and the between-epoch minimum all agree."""
        m = parse_law(spec)
        for i in range(20):
            path = sample_path(m, WalkMode.CLASSICAL, 0.0, 2000, SeededStream(11, i))
            check = embedded_equivalence(path, x0)
            assert check.holds, f"path {i}"

    def test_reflected_path_rejected(self):
        """The comparison starts from S."""
        path = sample_path(parse_law(SRW), WalkMode.REFLECTED, 0.0, 10, SeededStream(1))
        with pytest.raises(ValidationError):
            embedded_equivalence(path, 0.0)


class TestSymmetricFold:
    """|S_n| is the reflected walk for symmetric laws."""

    def test_simple_walk_exact(self):
        """Exact kernels agree exactly."""
        result = symmetric_abs_equivalence(parse_law(SRW))
        assert result.exact
        assert result.discrepancy == 0

    def test_symmetric_power_law(self):
        """Float kernels agree to rounding."""
        assert symmetric_abs_equivalence(symmetric_power_law(1.5)).discrepancy <= 1e-12

    def test_asymmetric_law_rejected(self):
        """Only symmetric laws fold."""
        with pytest.raises(ValidationError):
            symmetric_abs_equivalence(parse_law("int:pmf(-1:1/4,2:3/4)"))


class TestCharacteristicSlope:
    """Small-t behaviour of 1 - chf."""

    def test_simple_walk_slope_two(self):
        """1 - cos t ~ t^2 / 2."""
        diag = char_slope_diagnostic(parse_law(SRW))
        assert diag.slope == pytest.approx(2.0, abs=0.05)
        assert diag.verdict == CharVerdict.RECURRENT

    def test_symmetric_power_law_slopes(self):
        """1 - chf(t) ~ c t^a for a < 2."""
        recurrent = char_slope_diagnostic(symmetric_power_law(1.5))
        assert recurrent.slope == pytest.approx(1.5, abs=0.1)
        assert recurrent.verdict == CharVerdict.RECURRENT

        transient = char_slope_diagnostic(symmetric_power_law(0.5))
        assert transient.slope == pytest.approx(0.5, abs=0.1)
        assert transient.verdict == CharVerdict.TRANSIENT
        assert transient.to_dict()["points"] == 32

    def test_grid_validation(self):
        """The grid has to sit inside (0, pi)."""
        with pytest.raises(ValidationError):
            char_slope_diagnostic(parse_law(SRW), t_min=0.1, t_max=0.01)
        with pytest.raises(ValidationError):
            char_slope_diagnostic(parse_law("int:pmf(-1:1/4,2:3/4)"))
