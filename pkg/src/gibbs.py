"""
Exact Gibbs measures on tiny tori and the μ_R initial-condition sampler.

Enumeration is vectorised over integer configuration codes, bit x*L + y
standing for site (x, y). The sampler is a single-site birth/death
Metropolis chain that rejects any proposal leaving R.
"""

import math
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import poisson

from src.config import SimulationConfig
from src.errors import CapacityError, ParameterError
from src.geometry import cluster_at
from src.lattice import Configuration, neighbour_table
from src.models import ModelParams
from src.params import derive

logger = logging.getLogger(__name__)

CANONICAL = "canonical"
GRAND = "grand-canonical"
RESTRICTED = "restricted"
MODES = (CANONICAL, GRAND, RESTRICTED)

_CHUNK = 1 << 18


@dataclass
class ExactMeasure:
    """
    Normalised weight table of an exact measure.

    Attributes:
        L: Lattice side
        mode: canonical, grand-canonical or restricted
        codes: Configuration codes in the support
        weights: Unnormalised weight of each code
        partition: Sum of the weights
        N: Particle number in canonical mode
    """
    L: int
    mode: str
    codes: np.ndarray
    weights: np.ndarray
    partition: float
    N: Optional[int] = None

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.partition

    def as_dict(self) -> Dict[int, float]:
        return dict(zip(self.codes.tolist(), self.probabilities.tolist()))

    def probability(self, config: Configuration) -> float:
        code = config_code(config)
        hits = np.flatnonzero(self.codes == code)
        return float(self.probabilities[hits[0]]) if hits.size else 0.0

    def density(self) -> float:
        """Mean occupation per site."""
        counts = _popcount(self.codes)
        return float(np.dot(self.probabilities, counts)) / (self.L * self.L)

    def as_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"code": self.codes, "weight": self.weights})


def config_code(config: Configuration) -> int:
    """Integer code of a configuration, bit x*L + y per occupied site."""
    return sum(1 << i for i in config._where.values())


def config_from_code(code: int, L: int) -> Configuration:
    """Configuration with ids 0..N-1 in site order."""
    sites = [divmod(i, L) for i in range(L * L) if code >> i & 1]
    return Configuration.from_sites(L, sites)


def bond_pairs(L: int) -> np.ndarray:
    """Unordered nearest-neighbour pairs (i < j) of flat indices."""
    pairs = {(min(i, j), max(i, j)) for i, row in enumerate(neighbour_table(L)) for j in row}
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def _popcount(codes: np.ndarray) -> np.ndarray:
    counts = np.zeros(codes.shape, dtype=np.int64)
    work = codes.copy()
    while np.any(work):
        counts += (work & 1).astype(np.int64)
        work >>= 1
    return counts


def _bits(codes: np.ndarray, n: int) -> np.ndarray:
    return ((codes[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)


def _bond_counts(bits: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    if pairs.size == 0:
        return np.zeros(bits.shape[0], dtype=np.int64)
    return (bits[:, pairs[:, 0]] & bits[:, pairs[:, 1]]).sum(axis=1)


def _max_cluster_volumes(bits: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Largest connected component per row, by min-label propagation."""
    rows, n = bits.shape
    labels = np.where(bits, np.arange(n), n)
    while True:
        changed = False
        for i, j in pairs:
            both = bits[:, i] & bits[:, j]
            low = np.minimum(labels[:, i], labels[:, j])
            if np.any(both & ((labels[:, i] != low) | (labels[:, j] != low))):
                labels[both, i] = low[both]
                labels[both, j] = low[both]
                changed = True
        if not changed:
            break
    largest = np.zeros(rows, dtype=np.int64)
    for k in range(n):
        largest = np.maximum(largest, (labels == k).sum(axis=1))
    return largest


def enumerate_measure(
    L: int,
    mode: str,
    U: float = 1.0,
    beta: float = 1.0,
    Delta: float = 0.0,
    N: Optional[int] = None,
    max_volume: Optional[int] = None,
) -> ExactMeasure:
    """
    Exact measure on the L×L torus by enumerating every configuration.

    Args:
        L: Lattice side (L² ≤ NUCLEATION_MAX_ENUM_SITES)
        mode: canonical (weight e^{-βH} on the N-particle slice),
            grand-canonical (e^{-β(H + Δ|η|)}) or restricted
            (grand-canonical on configurations in R)
        U, beta, Delta: Model constants
        N: Particle number for canonical mode
        max_volume: Largest admissible cluster volume for restricted mode

    Raises:
        CapacityError: If L² exceeds the enumeration bound.
        ParameterError: If the mode or its arguments are invalid.
    """
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    n = L * L
    cap = SimulationConfig.MAX_ENUM_SITES
    if n > cap:
        raise CapacityError(f"cannot enumerate 2^{n} configurations (bound: {cap} sites)", cap=cap)
    if mode == CANONICAL and (N is None or not 0 <= N <= n):
        raise ParameterError(f"canonical mode needs 0 <= N <= {n}, got {N}")
    if mode == RESTRICTED and max_volume is None:
        raise ParameterError("restricted mode needs max_volume")

    pairs = bond_pairs(L)
    if mode == CANONICAL:
        all_codes = np.array(
            [sum(1 << i for i in combo) for combo in combinations(range(n), N)], dtype=np.int64
        )
        chunks = [all_codes[k:k + _CHUNK] for k in range(0, all_codes.size, _CHUNK)]
    else:
        chunks = [np.arange(k, min(k + _CHUNK, 1 << n), dtype=np.int64) for k in range(0, 1 << n, _CHUNK)]

    kept_codes: List[np.ndarray] = []
    kept_log_weights: List[np.ndarray] = []
    for codes in chunks:
        bits = _bits(codes, n)
        log_w = beta * U * _bond_counts(bits, pairs).astype(float)
        if mode != CANONICAL:
            log_w -= beta * Delta * bits.sum(axis=1)
        if mode == RESTRICTED:
            keep = _max_cluster_volumes(bits, pairs) <= max_volume
            codes, log_w = codes[keep], log_w[keep]
        kept_codes.append(codes)
        kept_log_weights.append(log_w)

    codes = np.concatenate(kept_codes)
    weights = np.exp(np.concatenate(kept_log_weights))
    measure = ExactMeasure(L=L, mode=mode, codes=codes, weights=weights,
                           partition=float(weights.sum()), N=N)
    logger.info(f"Enumerated {codes.size} configurations on L={L} in {mode} mode")
    return measure


def enumerate_for(params: ModelParams, L: int, mode: str, N: Optional[int] = None) -> ExactMeasure:
    """enumerate_measure with constants (and the R bound) taken from params."""
    derived = derive(params)
    return enumerate_measure(
        L, mode, U=params.U, beta=params.beta, Delta=params.Delta, N=N,
        max_volume=derived.max_volume if mode == RESTRICTED else None,
    )


def total_variation(counts: Mapping[int, float], measure: ExactMeasure) -> float:
    """
    Total-variation distance between empirical counts (code → count or
    weight) and an exact measure.
    """
    total = float(sum(counts.values()))
    if total <= 0:
        raise ValueError("empirical counts are empty")
    exact = measure.as_dict()
    keys = set(exact) | set(counts)
    return 0.5 * sum(abs(counts.get(k, 0.0) / total - exact.get(k, 0.0)) for k in keys)



def sampling_floor(measure: ExactMeasure, n_samples: int) -> float:
    """
    Expected total-variation distance between ``n_samples`` exact
    independent draws and the measure itself.

    Per state the count is taken as Poisson(n·p), whose mean absolute
    deviation is 2·n·p·P(X = ⌊n·p⌋).
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    p = measure.probabilities
    lam = n_samples * p
    return float(np.sum(p * poisson.pmf(np.floor(lam), lam)))


class MuRSampler:
    """
    Single-site birth/death Metropolis chain for μ_R.

    A proposal toggles a uniformly chosen site and is accepted with
    probability min{1, e^{-β(ΔH + Δ·Δ|η|)}}; additions that create a
    cluster larger than ``max_volume`` are rejected, removals never leave R.
    """

    def __init__(
        self,
        L: int,
        U: float,
        Delta: float,
        beta: float,
        max_volume: int,
        rng: np.random.Generator,
        burn_in: Optional[int] = None,
        thinning: Optional[int] = None,
        initial: Optional[Configuration] = None,
    ):
        self.L = L
        self.U = U
        self.Delta = Delta
        self.beta = beta
        self.max_volume = max_volume
        self.rng = rng
        self.burn_in = burn_in if burn_in is not None else 10 * L * L
        self.thinning = thinning if thinning is not None else L * L
        self.config = initial.copy() if initial is not None else Configuration.empty(L)
        self.proposals = 0
        self.accepted = 0
        self._burnt = False

    def metropolis(self, i: int) -> float:
        """Metropolis acceptance of toggling flat site ``i``, ignoring R."""
        config = self.config
        neighbours = config.occupied_neighbours(i)
        if config._occ[i]:
            log_ratio = self.beta * (self.Delta - self.U * neighbours)
        else:
            log_ratio = self.beta * (self.U * neighbours - self.Delta)
        return 1.0 if log_ratio >= 0 else math.exp(log_ratio)

    def leaves_R(self, i: int) -> bool:
        """True when adding a particle at empty site ``i`` creates a cluster above max_volume."""
        config = self.config
        if config._occ[i] or not config.occupied_neighbours(i):
            return False
        site = config.site(i)
        config.add_particle(site)
        too_big = len(cluster_at(config, site, limit=self.max_volume + 1)) > self.max_volume
        config.remove_particle(site)
        return too_big

    def acceptance(self, i: int) -> float:
        """Probability that a toggle proposal at flat site ``i`` is accepted."""
        return 0.0 if self.leaves_R(i) else self.metropolis(i)

    def _toggle(self, i: int) -> None:
        site = self.config.site(i)
        if self.config._occ[i]:
            self.config.remove_particle(site)
        else:
            self.config.add_particle(site)

    def _run(self, n_proposals: int) -> None:
        n = self.L * self.L
        sites = self.rng.integers(0, n, size=n_proposals)
        uniforms = self.rng.random(n_proposals)
        for i, u in zip(sites.tolist(), uniforms.tolist()):
            # R is only checked once the energy test has passed
            if u < self.metropolis(i) and not self.leaves_R(i):
                self._toggle(i)
                self.accepted += 1
        self.proposals += n_proposals

    def burn(self) -> None:
        logger.info(
            f"Sampler burn-in: {self.burn_in} proposals, thinning {self.thinning} on L={self.L}"
        )
        self._run(self.burn_in)
        self._burnt = True

    def state_code(self) -> int:
        return config_code(self.config)

    def step_code(self) -> int:
        """Advance by one thinning interval and return the configuration code."""
        if not self._burnt:
            self.burn()
        self._run(self.thinning)
        return self.state_code()

    def draw(self) -> Configuration:
        """Next thinned draw, with ids relabelled 0..N-1 in site order."""
        if not self._burnt:
            self.burn()
        self._run(self.thinning)
        return Configuration.from_sites(self.L, self.config.sites())

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0


def sample_muR(
    params: ModelParams,
    L: int,
    rng: np.random.Generator,
    burn_in: Optional[int] = None,
    thinning: Optional[int] = None,
) -> Configuration:
    """
    One draw from μ_R on the L×L torus.

    Args:
        params: Model parameters (β taken from here)
        L: Lattice side, normally at least 2ℓ_c
        rng: Random generator
        burn_in: Proposals before the draw (default 10·L²)
        thinning: Proposals per draw (default L²)
    """
    derived = derive(params)
    if L < 2 * derived.ell_c:
        logger.warning(f"Sampling mu_R on L={L} below 2*ell_c={2 * derived.ell_c}")
    sampler = MuRSampler(L, params.U, params.Delta, params.beta, derived.max_volume, rng,
                         burn_in=burn_in, thinning=thinning)
    return sampler.draw()


def sample_many(
    params: ModelParams,
    L: int,
    count: int,
    rng: np.random.Generator,
    burn_in: Optional[int] = None,
    thinning: Optional[int] = None,
) -> List[Configuration]:
    """``count`` thinned draws from a single chain."""
    derived = derive(params)
    sampler = MuRSampler(L, params.U, params.Delta, params.beta, derived.max_volume, rng,
                         burn_in=burn_in, thinning=thinning)
    return [sampler.draw() for _ in range(count)]


def sampler_transition_matrix(
    L: int,
    U: float,
    Delta: float,
    beta: float,
    max_volume: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Exact transition matrix of the birth/death sampler on R.

    Each row is built from ``MuRSampler.acceptance`` evaluated on the
    state, with proposals uniform over the L² sites.

    Returns:
        tuple: (state codes, transition matrix P, μ_R probabilities)
    """
    measure = enumerate_measure(L, RESTRICTED, U=U, beta=beta, Delta=Delta, max_volume=max_volume)
    n = L * L
    index = {int(code): k for k, code in enumerate(measure.codes.tolist())}
    sampler = MuRSampler(L, U, Delta, beta, max_volume, np.random.default_rng(0))
    P = np.zeros((len(index), len(index)))
    for code, k in index.items():
        sampler.config = config_from_code(code, L)
        for i in range(n):
            accept = sampler.acceptance(i)
            if accept == 0.0:
                continue
            target = index.get(code ^ (1 << i))
            if target is None:
                raise ValueError(f"sampler accepts a move out of R from state {code}")
            P[k, target] += accept / n
        P[k, k] = 1.0 - P[k].sum()
    return measure.codes, P, measure.probabilities
