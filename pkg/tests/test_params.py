"""
Tests for the params module.
"""

import math

import pytest
from hypothesis import given, settings, strategies as st

from src.errors import CapacityError, ParameterError, QuasiSquareError
from src.models import ModelParams
from src.params import (
    check_theta,
    critical_energy,
    critical_length,
    derive,
    empty_resistance,
    format_derived,
    lambda_value,
    lattice_side,
    quasi_square_sequence,
    resistance,
    supercritical_sequence,
    theta_window,
    time_scale,
)


def test_critical_length_examples():
    assert critical_length(1.0, 1.6) == 3
    assert critical_length(1.0, 1.8) == 5
    assert critical_length(1.0, 1.9) == 10


@pytest.mark.parametrize("delta", [1.5, 1.2, 2.0, 2.3])
def test_critical_length_rejects_regime_violation(delta):
    with pytest.raises(ParameterError):
        critical_length(1.0, delta)


def test_critical_energy_example():
    assert critical_energy(1.0, 1.6) == pytest.approx(4.8, abs=1e-12)


def test_resistance_values():
    assert resistance(2, 2, 1.0, 1.6) == pytest.approx(2.0)
    assert resistance(2, 3, 1.0, 1.6) == pytest.approx(2.0)
    # large quasi-squares saturate at 2Δ - U
    assert resistance(9, 9, 1.0, 1.6) == pytest.approx(2.2)


@pytest.mark.parametrize("dims", [(3, 2), (2, 4), (0, 1)])
def test_resistance_rejects_non_quasi_square(dims):
    with pytest.raises(QuasiSquareError):
        resistance(*dims, 1.0, 1.6)


def test_empty_resistance():
    assert empty_resistance(1.0, 1.6, 2.0) == pytest.approx(2.4)


def test_quasi_square_sequences():
    assert quasi_square_sequence(3) == [(2, 2), (2, 3), (3, 3)]
    assert quasi_square_sequence(4) == [(2, 2), (2, 3), (3, 3), (3, 4), (4, 4)]
    assert supercritical_sequence(3, 4) == [(3, 3), (3, 4), (4, 4)]
    assert supercritical_sequence(3, 3) == [(3, 3)]


def test_theta_window_and_check():
    lo, hi = theta_window(1.0, 1.6)
    assert lo == pytest.approx(1.6)
    assert hi == pytest.approx(2.6)
    check_theta(ModelParams(Delta=1.6, Theta=2.4))
    with pytest.raises(ParameterError, match="Theta"):
        check_theta(ModelParams(Delta=1.6, Theta=3.0))
    with pytest.raises(ParameterError, match="required"):
        check_theta(ModelParams(Delta=1.6))


def test_lambda_choices():
    assert lambda_value(2.0) == 1.0
    assert lambda_value(math.exp(4.0)) == pytest.approx(2.0)
    assert lambda_value(2.0, "log-log") == 1.0
    assert lambda_value(math.exp(math.exp(2.0)), "log-log") == pytest.approx(2.0)


def test_time_scale():
    assert time_scale(2.0, 3.0) == pytest.approx(math.exp(6.0))


class TestDerive:
    """Test cases for the derived constant table."""

    def test_reference_point(self):
        derived = derive(ModelParams(U=1.0, Delta=1.6, Theta=2.4, beta=10.0))
        assert derived.ell_c == 3
        assert derived.eps == pytest.approx(0.4)
        assert derived.Gamma == pytest.approx(4.8)
        assert derived.gamma == pytest.approx(0.2)
        assert derived.theta == pytest.approx(2.0)
        assert derived.max_volume == 8
        assert derived.a_beta == pytest.approx(math.exp(-4.0))
        assert derived.r_empty == pytest.approx(2.0)
        assert derived.nucleation_exponent == pytest.approx(2.4)
        assert derived.c_star == pytest.approx(5.8)
        assert derived.resistance_of(2, 3) == pytest.approx(2.0)

    def test_tuning_defaults_inside_bound(self):
        params = ModelParams(Delta=1.95)
        bound = (2.0 - 1.95) / 4.0
        for name in ("alpha", "d", "kappa", "delta"):
            assert 0 < getattr(params, name) < bound

    def test_tuning_out_of_range(self):
        with pytest.raises(ValueError, match="kappa"):
            ModelParams(Delta=1.6, kappa=0.5)

    def test_without_theta(self):
        derived = derive(ModelParams(Delta=1.6))
        assert derived.a_beta is None
        assert derived.r_empty is None

    def test_format_derived_rows(self):
        rows = dict(format_derived(derive(ModelParams(Delta=1.6, Theta=2.4))))
        assert rows["ell_c"] == "3"
        assert rows["Gamma"] == "4.8"


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=51, max_value=199))
def test_formula_identities_on_grid(hundredths):
    """γ > 0, both θ identities and r(ℓ_c − 1, ℓ_c) = θ over the Δ grid."""
    Delta = hundredths / 100.0
    derived = derive(ModelParams(U=1.0, Delta=Delta))
    lc = derived.ell_c
    assert derived.gamma > 0
    assert derived.theta == pytest.approx(2 * Delta - 1.0 - derived.gamma, abs=1e-12)
    assert derived.theta == pytest.approx(2.0 + (lc - 3) * (2.0 - Delta), abs=1e-12)
    assert resistance(lc - 1, lc, 1.0, Delta) == pytest.approx(derived.theta, abs=1e-12)


class TestLatticeSide:
    """Test cases for the realised lattice side."""

    def test_side_and_effective_theta(self):
        size = lattice_side(2.4, 3.0, ell_c=3)
        assert size.L == 37
        assert size.theta_eff == pytest.approx(math.log(37 * 37) / 3.0)

    def test_raised_to_twice_critical_length(self):
        assert lattice_side(2.4, 0.5, ell_c=3).L == 6

    def test_capacity(self):
        with pytest.raises(CapacityError) as info:
            lattice_side(2.4, 10.0, max_side=1024)
        assert info.value.cap == 1024

    def test_nonpositive_beta(self):
        with pytest.raises(ParameterError):
            lattice_side(2.4, 0.0)
