"""
Birth-death caricature of nucleation.

The chain ξ walks the quasi-square sequence (0,0), (2,2), (2,3), ...,
(ℓ_c,ℓ_c) with resistance-driven up/down probabilities; ζ superposes
independent ξ histories started by Poisson arrivals. Exact absorption
solvers sit next to Monte Carlo runners used as their oracles.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve
from scipy.optimize import brentq
from scipy.special import logsumexp

from src.errors import ParameterError
from src.models import ChainMode, ChainSpec, ModelParams
from src.params import derive, empty_resistance, quasi_square_sequence, resistance

logger = logging.getLogger(__name__)

State = Union[int, Tuple[int, int]]


def _chain_probabilities(
    params: ModelParams,
    mode: ChainMode,
    beta: float,
) -> Tuple[List[Tuple[int, int]], List[float], List[float], List[bool]]:
    derived = derive(params)
    U, Delta = params.U, params.Delta
    states = [(0, 0)] + quasi_square_sequence(derived.ell_c)
    up, down, absorbing = [], [], []
    for k, state in enumerate(states):
        if k == len(states) - 1:
            up.append(0.0)
            down.append(0.0)
            absorbing.append(True)
        elif k == 0:
            if mode == ChainMode.HISTORY:
                up.append(0.0)
                absorbing.append(True)
            else:
                if params.Theta is None:
                    raise ParameterError("the cycling chain needs Theta for r(0,0)")
                r_empty = empty_resistance(U, Delta, params.Theta)
                up.append(math.exp(-(r_empty - Delta) * beta))
                absorbing.append(False)
            down.append(0.0)
        else:
            up.append(math.exp(-(Delta - U) * beta))
            down.append(math.exp(-(resistance(*state, U, Delta) - Delta) * beta))
            absorbing.append(False)
    return states, up, down, absorbing


def minimal_beta(params: ModelParams, mode: ChainMode = ChainMode.HISTORY) -> float:
    """
    Smallest β at which u + d ≤ 1 holds at every state.

    Raises:
        ParameterError: If no β satisfies it (cycling chain with Θ ≥ 3Δ − 2U).
    """
    if mode == ChainMode.CYCLING and params.Theta is not None:
        if empty_resistance(params.U, params.Delta, params.Theta) <= params.Delta:
            raise ParameterError("u((0,0)) >= 1 for every beta: Theta must be below 3*Delta - 2U")

    def excess(beta: float) -> float:
        _, up, down, _ = _chain_probabilities(params, mode, beta)
        return max(u + d for u, d in zip(up, down)) - 1.0

    lo, hi = 1e-9, 1.0
    while excess(hi) > 0:
        hi *= 2.0
    if excess(lo) <= 0:
        return lo
    return brentq(excess, lo, hi, xtol=1e-12)


def build_xi(
    params: ModelParams,
    mode: ChainMode = ChainMode.HISTORY,
    beta: Optional[float] = None,
) -> ChainSpec:
    """
    Birth-death chain on quasi-square dimensions.

    Transient states move up with e^{-(Δ-U)β} and down with
    e^{-(r(s)-Δ)β}; (ℓ_c,ℓ_c) is absorbing. In history mode (0,0) is
    absorbing, in cycling mode it restarts with e^{-(r(0,0)-Δ)β}.

    Raises:
        ParameterError: If u + d > 1 somewhere, naming the minimal β.
    """
    beta = params.beta if beta is None else beta
    mode = ChainMode(mode)
    states, up, down, absorbing = _chain_probabilities(params, mode, beta)
    for state, u, d in zip(states, up, down):
        if u + d > 1.0:
            raise ParameterError(
                f"u + d = {u + d:.4g} > 1 at {state} for beta={beta}; "
                f"the minimal admissible beta is {minimal_beta(params, mode):.6g}"
            )
    a_beta = None
    if params.Theta is not None:
        a_beta = math.exp((params.Theta - 3.0 * params.Delta + 2.0 * params.U) * beta)
    return ChainSpec(states=states, up=up, down=down, absorbing=absorbing,
                     mode=mode, beta=beta, a_beta=a_beta)


def _index(spec: ChainSpec, start: State) -> int:
    return start if isinstance(start, int) else spec.index(start)


def _require_history(spec: ChainSpec) -> None:
    if spec.mode != ChainMode.HISTORY:
        raise ParameterError("absorption quantities need a history-mode chain")


def _scaled_system(spec: ChainSpec) -> Tuple[List[int], np.ndarray, np.ndarray, np.ndarray]:
    """
    I - Q over transient states, each row divided by its leaving
    probability u + d, with the matching success vector and holding times.
    """
    transient = spec.transient
    pos = {state: k for k, state in enumerate(transient)}
    last = len(spec.states) - 1
    A = np.eye(len(transient))
    success = np.zeros(len(transient))
    holding = np.zeros(len(transient))
    for k, i in enumerate(transient):
        u, d = spec.up[i], spec.down[i]
        leave = u + d
        if leave <= 0.0:
            raise ParameterError(f"transient state {spec.states[i]} can never be left")
        if i + 1 in pos:
            A[k, pos[i + 1]] -= u / leave
        elif i + 1 == last:
            success[k] = u / leave
        if i - 1 in pos:
            A[k, pos[i - 1]] -= d / leave
        holding[k] = 1.0 / leave
    return transient, A, success, holding


def absorption_prob_linear(spec: ChainSpec, start: State) -> float:
    """P_start(hit (ℓ_c,ℓ_c) before (0,0)) by solving (I - Q)h = b."""
    _require_history(spec)
    i = _index(spec, start)
    if spec.absorbing[i]:
        return 1.0 if i == len(spec.states) - 1 else 0.0
    transient, A, success, _ = _scaled_system(spec)
    h = solve(A, success)
    return float(h[transient.index(i)])


def _absorption_prob_closed(spec: ChainSpec, i: int) -> float:
    m = len(spec.states) - 2
    up = np.array(spec.up[1:m + 1])
    down = np.array(spec.down[1:m + 1])
    with np.errstate(divide="ignore"):
        log_rho = np.log(down) - np.log(up)
    log_p = np.concatenate(([0.0], np.cumsum(log_rho)))[:m + 1]
    return float(np.exp(logsumexp(log_p[:i]) - logsumexp(log_p)))


def absorption_prob(spec: ChainSpec, start: State) -> float:
    """
    Gambler's-ruin probability of reaching (ℓ_c,ℓ_c) before (0,0).

    With transient states 1..m and ρ_j = d_j/u_j, P_0 = 1 and
    P_i = ρ_1···ρ_i, the value from state k is Σ_{i<k} P_i / Σ_{i≤m} P_i.
    The linear solve is run alongside and a disagreement is logged.
    """
    _require_history(spec)
    i = _index(spec, start)
    if spec.absorbing[i]:
        return 1.0 if i == len(spec.states) - 1 else 0.0
    if any(u <= 0.0 for u in spec.up[1:-1]):
        return absorption_prob_linear(spec, i)
    closed = _absorption_prob_closed(spec, i)
    linear = absorption_prob_linear(spec, i)
    if not math.isclose(closed, linear, rel_tol=1e-8, abs_tol=1e-300):
        logger.warning(f"Absorption probability mismatch at {spec.states[i]}: {closed} vs {linear}")
    return closed


def mean_absorption_time(spec: ChainSpec, start: State) -> float:
    """
    Expected number of steps (self-loops included) until absorption.

    Raises:
        ParameterError: If the chain is not in history mode.
    """
    _require_history(spec)
    i = _index(spec, start)
    if spec.absorbing[i]:
        return 0.0
    transient, A, _, holding = _scaled_system(spec)
    t = solve(A, holding)
    return float(t[transient.index(i)])


def transition_matrix(spec: ChainSpec) -> np.ndarray:
    n = len(spec.states)
    P = np.zeros((n, n))
    for i in range(n):
        if spec.absorbing[i]:
            P[i, i] = 1.0
            continue
        if i + 1 < n:
            P[i, i + 1] = spec.up[i]
        if i > 0:
            P[i, i - 1] = spec.down[i]
        P[i, i] = 1.0 - spec.up[i] - spec.down[i]
    return P


def success_probability_within(spec: ChainSpec, start: State, n_steps: int) -> float:
    """Probability of being absorbed at (ℓ_c,ℓ_c) within n_steps steps."""
    P = np.linalg.matrix_power(transition_matrix(spec), n_steps)
    return float(P[_index(spec, start), -1])


def simulate_xi(
    spec: ChainSpec,
    start: State,
    rng: np.random.Generator,
    max_steps: int = 10**12,
) -> Tuple[int, int, bool]:
    """
    One history of ξ, jumping over self-loops with geometric holding times.

    Returns:
        tuple: (steps taken, final state index, truncated flag)
    """
    i = _index(spec, start)
    steps = 0
    while not spec.absorbing[i]:
        u, d = spec.up[i], spec.down[i]
        steps += int(rng.geometric(u + d))
        if steps > max_steps:
            return max_steps, i, True
        i = i + 1 if rng.random() * (u + d) < u else i - 1
    return steps, i, False


@dataclass
class ZetaState:
    """Live histories per chain state, plus the step counter."""
    live: np.ndarray
    a_beta: float
    step: int = 0
    success: bool = False

    @property
    def n_live(self) -> int:
        return int(self.live.sum())


@dataclass
class ZetaResult:
    """Outcome of one ζ run; steps is None when truncated."""
    steps: Optional[int]
    truncated: bool
    successes: int
    failures: int
    arrivals: int
    max_live: int
    census: Dict[Tuple[int, int], int] = field(default_factory=dict)


def simulate_zeta(
    spec: Union[ChainSpec, ModelParams],
    rng: np.random.Generator,
    max_steps: int,
    a_beta: Optional[float] = None,
) -> ZetaResult:
    """
    Run ζ until a history first reaches (ℓ_c,ℓ_c).

    Each step advances every live history by one ξ-step, drops the ones
    that died at (0,0), then adds Poisson(a(β)) new histories at (2,2).
    While nothing is alive the wait for the next arrival is drawn directly.

    Args:
        spec: History-mode chain, or parameters to build one from
        rng: Random generator
        max_steps: Step budget; exceeding it truncates the run
        a_beta: Arrival mean (default spec.a_beta)
    """
    if isinstance(spec, ModelParams):
        spec = build_xi(spec, ChainMode.HISTORY)
    _require_history(spec)
    a = spec.a_beta if a_beta is None else a_beta
    if a is None or a < 0:
        raise ParameterError("simulate_zeta needs a nonnegative arrival mean a(beta)")
    n = len(spec.states)
    entry = 1
    state = ZetaState(live=np.zeros(n, dtype=np.int64), a_beta=a)
    p_arrival = -math.expm1(-a)
    successes = failures = arrivals = max_live = 0
    probabilities = [
        (spec.up[i], spec.down[i], max(0.0, 1.0 - spec.up[i] - spec.down[i])) for i in range(n)
    ]

    while state.step < max_steps:
        if state.n_live == 0:
            if p_arrival <= 0.0:
                state.step = max_steps
                break
            gap = int(rng.geometric(p_arrival))
            if state.step + gap > max_steps:
                state.step = max_steps
                break
            state.step += gap
            k = 0
            while k == 0:
                k = int(rng.poisson(a))
            state.live[entry] += k
            arrivals += k
            max_live = max(max_live, state.n_live)
            continue

        state.step += 1
        moved = np.zeros(n, dtype=np.int64)
        for i in range(1, n - 1):
            count = state.live[i]
            if count:
                ups, downs, stays = rng.multinomial(count, probabilities[i])
                moved[i + 1] += ups
                moved[i - 1] += downs
                moved[i] += stays
        failures += int(moved[0])
        moved[0] = 0
        if moved[-1] > 0:
            successes += int(moved[-1])
            state.live = moved
            state.success = True
            break
        k = int(rng.poisson(a))
        moved[entry] += k
        arrivals += k
        state.live = moved
        max_live = max(max_live, state.n_live)

    census = {spec.states[i]: int(c) for i, c in enumerate(state.live) if c}
    return ZetaResult(
        steps=state.step if state.success else None,
        truncated=not state.success,
        successes=successes,
        failures=failures,
        arrivals=arrivals,
        max_live=max_live,
        census=census,
    )


def solve_table(spec: ChainSpec) -> List[Dict[str, object]]:
    """h and mean absorption time for every state of a history chain."""
    rows = []
    for i, state in enumerate(spec.states):
        rows.append({
            "state": f"{state[0]}x{state[1]}",
            "h": absorption_prob(spec, i),
            "mean_steps": mean_absorption_time(spec, i),
        })
    return rows
