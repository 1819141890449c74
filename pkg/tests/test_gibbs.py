"""
Tests for the gibbs module.
"""

import math
import logging
from collections import Counter
from unittest.mock import patch

import numpy as np
import pytest

from src import gibbs
from src.errors import CapacityError, ParameterError
from src.geometry import max_cluster_volume
from src.gibbs import (
    CANONICAL,
    GRAND,
    RESTRICTED,
    MuRSampler,
    config_code,
    config_from_code,
    enumerate_for,
    enumerate_measure,
    sample_many,
    sample_muR,
    sampler_transition_matrix,
    sampling_floor,
    total_variation,
)
from src.kmc import make_rng
from src.lattice import Configuration, energy
from src.models import ModelParams
from src.params import derive


def test_code_round_trip_on_example():
    config = Configuration.from_sites(3, [(0, 1), (2, 2)])
    code = config_code(config)
    assert code == (1 << 1) | (1 << 8)
    assert config_from_code(code, 3).sites() == config.sites()


class TestEnumeration:
    """Test cases for exact measures."""

    def test_grand_canonical_weights(self):
        beta, U, Delta = 0.7, 1.0, 1.6
        measure = enumerate_measure(3, GRAND, U=U, beta=beta, Delta=Delta)
        assert measure.codes.size == 512
        probabilities = measure.as_dict()
        Z = sum(
            math.exp(-beta * (energy(config_from_code(c, 3), U) + Delta * bin(c).count("1")))
            for c in range(512)
        )
        for code in (0, 0b11, 0b111000111, 511):
            config = config_from_code(code, 3)
            expected = math.exp(-beta * (energy(config, U) + Delta * config.N)) / Z
            assert probabilities[code] == pytest.approx(expected)
        assert measure.probabilities.sum() == pytest.approx(1.0)

    def test_canonical_slice(self):
        measure = enumerate_measure(3, CANONICAL, beta=1.0, N=4)
        assert measure.codes.size == math.comb(9, 4)
        assert all(bin(int(c)).count("1") == 4 for c in measure.codes)
        assert measure.N == 4

    def test_restricted_support(self):
        measure = enumerate_measure(3, RESTRICTED, beta=1.0, Delta=1.6, max_volume=4)
        kept = set(measure.codes.tolist())
        for code in range(512):
            inside = max_cluster_volume(config_from_code(code, 3)) <= 4
            assert (code in kept) == inside

    def test_density_and_probability(self):
        measure = enumerate_measure(2, GRAND, beta=2.0, Delta=1.8)
        mean = sum(p * bin(c).count("1") for c, p in measure.as_dict().items()) / 4
        assert measure.density() == pytest.approx(mean)
        empty = Configuration.empty(2)
        assert measure.probability(empty) == pytest.approx(measure.as_dict()[0])

    def test_as_frame(self):
        frame = enumerate_measure(2, CANONICAL, N=1).as_frame()
        assert list(frame.columns) == ["code", "weight"]
        assert len(frame) == 4

    def test_enumerate_for_uses_R_bound(self):
        params = ModelParams(Delta=1.6, beta=1.0)
        measure = enumerate_for(params, 3, RESTRICTED)
        assert 511 not in set(measure.codes.tolist())
        assert measure.codes.size == 511

    def test_capacity(self):
        with patch.object(gibbs.SimulationConfig, "MAX_ENUM_SITES", 9):
            with pytest.raises(CapacityError) as info:
                enumerate_measure(4, GRAND)
        assert info.value.cap == 9

    @pytest.mark.parametrize("kwargs", [
        {"mode": "microcanonical"},
        {"mode": CANONICAL},
        {"mode": CANONICAL, "N": 10},
        {"mode": RESTRICTED},
    ])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ParameterError):
            enumerate_measure(3, **kwargs)


def test_total_variation():
    measure = enumerate_measure(2, CANONICAL, beta=1.0, N=2)
    assert total_variation(measure.as_dict(), measure) == pytest.approx(0.0, abs=1e-12)
    assert total_variation({0: 1.0}, measure) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        total_variation({}, measure)


class TestSampler:
    """Test cases for the μ_R sampler."""

    def test_transition_matrix_is_reversible(self):
        codes, P, pi = sampler_transition_matrix(3, 1.0, 1.6, 1.2, max_volume=4)
        assert np.allclose(P.sum(axis=1), 1.0)
        assert (P >= -1e-15).all()
        flux = pi[:, None] * P
        assert np.allclose(flux, flux.T, atol=1e-15)
        assert np.allclose(pi @ P, pi)

    def test_matrix_depends_on_the_acceptance_rule(self):
        # a rule that ignores the bonds is reversible for another measure
        def bond_blind(sampler, i):
            return 1.0 if sampler.config._occ[i] else math.exp(-sampler.beta * sampler.Delta)

        with patch.object(MuRSampler, "metropolis", bond_blind):
            _, P, pi = sampler_transition_matrix(3, 1.0, 1.6, 1.2, max_volume=4)
        flux = pi[:, None] * P
        assert not np.allclose(flux, flux.T, atol=1e-12)

    def test_matrix_rejects_moves_out_of_R(self):
        with patch.object(MuRSampler, "leaves_R", return_value=False):
            with pytest.raises(ValueError, match="out of R"):
                sampler_transition_matrix(3, 1.0, 1.6, 1.2, max_volume=4)

    def test_one_step_frequencies_match_matrix_row(self):
        codes, P, _ = sampler_transition_matrix(3, 1.0, 1.6, 1.2, max_volume=4)
        start = Configuration.from_sites(3, [(0, 0), (0, 1), (1, 1)])
        row = P[list(codes).index(config_code(start))]
        sampler = MuRSampler(3, 1.0, 1.6, 1.2, 4, make_rng(8), burn_in=0, thinning=1)
        trials = 20_000
        counts = Counter()
        for _ in range(trials):
            sampler.config = start.copy()
            sampler._run(1)
            counts[sampler.state_code()] += 1
        for k, code in enumerate(codes.tolist()):
            assert counts[code] / trials == pytest.approx(row[k], abs=0.015), code

    def test_acceptance_of_a_blocked_addition(self):
        # a fifth particle next to the 2x2 square would exceed max_volume = 4
        start = Configuration.from_sites(3, [(0, 0), (0, 1), (1, 0), (1, 1)])
        sampler = MuRSampler(3, 1.0, 1.6, 1.2, 4, make_rng(0), initial=start)
        i = start.index((2, 0))
        assert sampler.leaves_R(i)
        assert sampler.acceptance(i) == 0.0
        assert sampler.metropolis(i) == 1.0
        # a corner of the square has two bonds to break
        assert sampler.acceptance(start.index((0, 0))) == pytest.approx(math.exp(-1.2 * 0.4))

    def test_draws_stay_in_R(self):
        params = ModelParams(Delta=1.6, beta=2.0)
        derived = derive(params)
        draws = sample_many(params, 8, 5, make_rng(0))
        assert len(draws) == 5
        for config in draws:
            assert max_cluster_volume(config) <= derived.max_volume
            assert sorted(config.particles()) == list(range(config.N))

    def test_reproducible(self):
        params = ModelParams(Delta=1.6, beta=1.0)
        a = sample_muR(params, 6, make_rng(9))
        b = sample_muR(params, 6, make_rng(9))
        assert a == b

    def test_small_lattice_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="src.gibbs"):
            sample_muR(ModelParams(Delta=1.6, beta=1.0), 4, make_rng(1), burn_in=10, thinning=4)
        assert any("below 2*ell_c" in r.getMessage() for r in caplog.records)

    def test_acceptance_rate(self):
        sampler = MuRSampler(3, 1.0, 1.6, 1.0, 4, make_rng(2), burn_in=50, thinning=9)
        sampler.draw()
        assert sampler.proposals == 59
        assert 0.0 < sampler.acceptance_rate <= 1.0


def _sampler_tv(L, beta, max_volume, draws, seed, sweeps=1):
    sampler = MuRSampler(L, 1.0, 1.6, beta, max_volume, make_rng(seed), thinning=sweeps * L * L)
    counts = Counter(sampler.step_code() for _ in range(draws))
    measure = enumerate_measure(L, RESTRICTED, beta=beta, Delta=1.6, max_volume=max_volume)
    return total_variation(counts, measure), sampling_floor(measure, draws)


class TestSamplingFloor:
    """Test cases for the finite-sample total-variation floor."""

    def test_two_point_measure(self):
        measure = gibbs.ExactMeasure(L=1, mode=GRAND, codes=np.array([0, 1]), weights=np.array([1.0, 1.0]),
                                     partition=2.0)
        # counts ~ Poisson(1): E|X - 1| = 2/e per state
        assert sampling_floor(measure, 2) == pytest.approx(math.exp(-1.0))

    def test_canonical_4x4(self):
        measure = enumerate_measure(4, CANONICAL, U=1.0, beta=1.0, N=3)
        assert measure.codes.size == 560
        assert sampling_floor(measure, 1_000_000) == pytest.approx(0.0088499, rel=1e-4)

    def test_restricted_4x4(self):
        measure = enumerate_measure(4, RESTRICTED, U=1.0, beta=1.0, Delta=1.6, max_volume=8)
        assert measure.codes.size == 42011
        assert measure.partition == pytest.approx(377.639307, rel=1e-8)
        # even exact draws sit this far from the measure at 10^6 samples
        assert sampling_floor(measure, 1_000_000) == pytest.approx(0.0683043, rel=1e-4)

    def test_rejects_empty_sample(self):
        with pytest.raises(ValueError):
            sampling_floor(enumerate_measure(2, CANONICAL, beta=1.0, N=1), 0)


def test_sampler_matches_exact_measure():
    tv, floor = _sampler_tv(2, 1.0, 3, 20_000, seed=4)
    assert tv < 0.05
    assert tv - floor < 0.03


@pytest.mark.slow
def test_sampler_matches_exact_measure_on_4x4():
    tv, floor = _sampler_tv(4, 1.0, 8, 1_000_000, seed=5, sweeps=4)
    assert tv - floor < 0.03
