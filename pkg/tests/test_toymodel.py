"""
Tests for the toymodel module.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.errors import ParameterError
from src.kmc import make_rng
from src.models import ChainMode, ChainSpec, ModelParams
from src.params import derive
from src.toymodel import (
    absorption_prob,
    absorption_prob_linear,
    build_xi,
    mean_absorption_time,
    minimal_beta,
    simulate_xi,
    simulate_zeta,
    solve_table,
    success_probability_within,
    transition_matrix,
)


def reference_chain(beta: float, Theta=None) -> ChainSpec:
    return build_xi(ModelParams(U=1.0, Delta=1.6, Theta=Theta, beta=beta))


def two_step_chain(up: float, down: float, a_beta=None) -> ChainSpec:
    """(0,0) ← (2,2) → (2,3), a single transient state."""
    return ChainSpec(
        states=[(0, 0), (2, 2), (2, 3)],
        up=[0.0, up, 0.0],
        down=[0.0, down, 0.0],
        absorbing=[True, False, True],
        a_beta=a_beta,
    )


class TestBuildXi:
    """Test cases for the chain constructor."""

    def test_reference_probabilities(self):
        spec = reference_chain(10.0)
        assert spec.states == [(0, 0), (2, 2), (2, 3), (3, 3)]
        assert spec.up[1] == pytest.approx(math.exp(-6.0))
        assert spec.down[1] == pytest.approx(math.exp(-4.0))
        assert spec.down[2] == pytest.approx(math.exp(-4.0))
        assert spec.absorbing == [True, False, False, True]
        assert spec.a_beta is None

    def test_arrival_mean(self):
        spec = reference_chain(10.0, Theta=2.4)
        assert spec.a_beta == pytest.approx(math.exp(-4.0))
        assert spec.a_beta == pytest.approx(derive(ModelParams(Delta=1.6, Theta=2.4, beta=10.0)).a_beta)

    def test_cycling_restart(self):
        params = ModelParams(Delta=1.6, Theta=2.0, beta=5.0)
        spec = build_xi(params, ChainMode.CYCLING)
        assert not spec.absorbing[0]
        assert spec.up[0] == pytest.approx(math.exp(-0.8 * 5.0))

    def test_cycling_needs_theta(self):
        with pytest.raises(ParameterError, match="Theta"):
            build_xi(ModelParams(Delta=1.6, beta=5.0), ChainMode.CYCLING)

    def test_too_hot_names_minimal_beta(self):
        params = ModelParams(Delta=1.6, beta=0.5)
        with pytest.raises(ParameterError, match="minimal admissible beta"):
            build_xi(params)
        beta_min = minimal_beta(params)
        spec = build_xi(params, beta=beta_min + 1e-9)
        assert max(u + d for u, d in zip(spec.up, spec.down)) <= 1.0
        assert math.exp(-0.6 * beta_min) + math.exp(-0.4 * beta_min) == pytest.approx(1.0)

    def test_cycling_never_admissible(self):
        with pytest.raises(ParameterError, match="3\\*Delta"):
            minimal_beta(ModelParams(Delta=1.6, Theta=2.9), ChainMode.CYCLING)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ChainSpec(states=[(0, 0), (2, 2)], up=[0.0, 0.8], down=[0.0, 0.5],
                      absorbing=[True, False])


class TestAbsorption:
    """Test cases for the exact solvers."""

    @pytest.mark.parametrize("beta", [5.0, 10.0, 20.0, 40.0])
    def test_closed_form_reference(self, beta):
        expected = 1.0 / (1.0 + math.exp(0.2 * beta) + math.exp(0.4 * beta))
        assert absorption_prob(reference_chain(beta), (2, 2)) == pytest.approx(expected, rel=1e-10)

    def test_reference_value(self):
        assert absorption_prob(reference_chain(10.0), (2, 2)) == pytest.approx(0.015876, abs=5e-7)

    def test_rate_recovery(self):
        beta = 40.0
        h = absorption_prob(reference_chain(beta), (2, 2))
        assert abs(-math.log(h) / beta - 0.4) <= 0.02

    def test_absorbing_starts(self):
        spec = reference_chain(10.0)
        assert absorption_prob(spec, (0, 0)) == 0.0
        assert absorption_prob(spec, (3, 3)) == 1.0
        assert mean_absorption_time(spec, (3, 3)) == 0.0

    def test_single_transient_state(self):
        spec = two_step_chain(0.3, 0.7)
        assert absorption_prob(spec, 1) == pytest.approx(0.3)
        assert mean_absorption_time(spec, 1) == pytest.approx(1.0)

    def test_zero_up_probability(self):
        spec = ChainSpec(
            states=[(0, 0), (2, 2), (2, 3), (3, 3)],
            up=[0.0, 0.2, 0.0, 0.0],
            down=[0.0, 0.1, 0.3, 0.0],
            absorbing=[True, False, False, True],
        )
        assert absorption_prob(spec, 1) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("solver", [absorption_prob, mean_absorption_time])
    def test_history_mode_required(self, solver):
        spec = build_xi(ModelParams(Delta=1.6, Theta=2.0, beta=5.0), ChainMode.CYCLING)
        with pytest.raises(ValueError, match="history-mode"):
            solver(spec, (2, 2))

    def test_cycling_chain_always_nucleates(self):
        spec = build_xi(ModelParams(Delta=1.6, Theta=2.0, beta=5.0), ChainMode.CYCLING)
        assert success_probability_within(spec, (0, 0), 10**6) == pytest.approx(1.0, abs=1e-6)

    def test_monotone_in_start(self):
        spec = build_xi(ModelParams(Delta=1.8, beta=6.0))
        values = [absorption_prob(spec, i) for i in range(len(spec.states))]
        assert values == sorted(values)
        assert values[0] == 0.0 and values[-1] == 1.0

    def test_transition_matrix_rows(self):
        P = transition_matrix(reference_chain(5.0))
        assert np.allclose(P.sum(axis=1), 1.0)
        assert P[0, 0] == 1.0 and P[-1, -1] == 1.0

    def test_success_within_converges_to_h(self):
        spec = reference_chain(3.0)
        within = [success_probability_within(spec, (2, 2), n) for n in (1, 10, 100, 10_000)]
        assert within == sorted(within)
        assert within[0] == 0.0
        assert within[-1] == pytest.approx(absorption_prob(spec, (2, 2)), rel=1e-8)

    def test_solve_table(self):
        rows = solve_table(reference_chain(10.0))
        assert [r["state"] for r in rows] == ["0x0", "2x2", "2x3", "3x3"]
        assert rows[1]["h"] == pytest.approx(0.015876, abs=5e-7)
        assert rows[0]["mean_steps"] == 0.0


@settings(max_examples=60, deadline=None)
@given(
    hundredths=st.integers(min_value=51, max_value=85),
    offset=st.floats(min_value=0.0, max_value=5.0),
)
def test_closed_form_matches_linear_solve(hundredths, offset):
    params = ModelParams(U=1.0, Delta=hundredths / 100.0)
    beta = minimal_beta(params) + 1e-6 + offset
    spec = build_xi(params, beta=beta)
    for i in spec.transient:
        assert absorption_prob(spec, i) == pytest.approx(absorption_prob_linear(spec, i), rel=1e-6)


class TestSimulation:
    """Test cases for the Monte Carlo runners."""

    def test_xi_matches_solvers(self):
        spec = reference_chain(3.0)
        rng = make_rng(21)
        runs = [simulate_xi(spec, (2, 2), rng) for _ in range(20_000)]
        steps = np.array([s for s, _, _ in runs], dtype=float)
        top = np.array([final == 3 for _, final, _ in runs])
        h = absorption_prob(spec, (2, 2))
        assert top.mean() == pytest.approx(h, abs=4 * math.sqrt(h * (1 - h) / len(runs)))
        assert steps.mean() == pytest.approx(mean_absorption_time(spec, (2, 2)), rel=0.05)
        assert not any(truncated for _, _, truncated in runs)

    def test_xi_single_step(self):
        steps, final, truncated = simulate_xi(two_step_chain(0.3, 0.7), 1, make_rng(0))
        assert steps == 1
        assert final in (0, 2)
        assert not truncated

    def test_xi_truncation(self):
        spec = two_step_chain(1e-9, 1e-9)
        steps, final, truncated = simulate_xi(spec, 1, make_rng(0), max_steps=10)
        assert truncated and steps == 10 and final == 1

    def test_zeta_without_arrivals_truncates(self):
        result = simulate_zeta(reference_chain(10.0), make_rng(0), 1000, a_beta=0.0)
        assert result.truncated
        assert result.steps is None
        assert result.arrivals == 0

    def test_zeta_without_deaths_succeeds(self):
        spec = ChainSpec(
            states=[(0, 0), (2, 2), (2, 3), (3, 3)],
            up=[0.0, 0.5, 0.5, 0.0],
            down=[0.0, 0.0, 0.0, 0.0],
            absorbing=[True, False, False, True],
            a_beta=1.0,
        )
        result = simulate_zeta(spec, make_rng(3), 10_000)
        assert not result.truncated
        assert result.successes >= 1
        assert result.failures == 0
        assert result.steps >= 2

    def test_zeta_accepts_parameters(self):
        params = ModelParams(Delta=1.6, Theta=2.4, beta=6.0)
        result = simulate_zeta(params, make_rng(4), 10**7)
        assert not result.truncated
        assert result.arrivals >= result.successes + result.failures

    def test_zeta_needs_arrival_mean(self):
        with pytest.raises(ParameterError):
            simulate_zeta(reference_chain(10.0), make_rng(0), 10)


def _mean_zeta_steps(replicas: int, seed: int) -> float:
    spec = reference_chain(10.0, Theta=2.4)
    rng = make_rng(seed)
    results = [simulate_zeta(spec, rng, 10**7) for _ in range(replicas)]
    assert not any(r.truncated for r in results)
    return float(np.mean([r.steps for r in results]))


def test_zeta_success_time_scale():
    target = 1.0 / (math.exp(-4.0) * absorption_prob(reference_chain(10.0), (2, 2)))
    assert target == pytest.approx(3.4e3, rel=0.02)
    assert target / 3 <= _mean_zeta_steps(100, seed=8) <= 3 * target


@pytest.mark.slow
def test_zeta_success_time_scale_full():
    target = 1.0 / (math.exp(-4.0) * absorption_prob(reference_chain(10.0), (2, 2)))
    assert target / 3 <= _mean_zeta_steps(1000, seed=9) <= 3 * target
