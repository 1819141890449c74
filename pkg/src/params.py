"""
Scalar formulas of the lattice-gas model.

Critical length and energy, quasi-square resistances, the derived exponent
table, λ(β) and the realised lattice side for a volume exponent. Every other
module takes its constants from here.
"""

import math
import logging
from typing import Callable, Dict, List, Optional, Tuple

from src.config import SimulationConfig
from src.errors import CapacityError, ParameterError, QuasiSquareError
from src.models import DerivedParams, LatticeSize, ModelParams

logger = logging.getLogger(__name__)

# U/(2U - Δ) is rounded before taking the ceiling so that values such as
# Δ = 1.8 land on the integer the user meant.
_ROUND_DIGITS = 6


def _check_regime(U: float, Delta: float) -> None:
    if U <= 0:
        raise ParameterError(f"U must be positive, got {U}")
    if Delta <= 1.5 * U:
        raise ParameterError(f"Delta={Delta} must exceed 3U/2={1.5 * U}")
    if Delta >= 2.0 * U:
        raise ParameterError(f"Delta={Delta} must be below 2U={2.0 * U}")


def critical_length(U: float, Delta: float) -> int:
    """
    Critical side length ℓ_c = ⌈U / (2U − Δ)⌉.

    Raises:
        ParameterError: If Δ is outside (3U/2, 2U) or ℓ_c ≤ 2.
    """
    _check_regime(U, Delta)
    ell_c = math.ceil(round(U / (2.0 * U - Delta), _ROUND_DIGITS))
    if ell_c <= 2:
        raise ParameterError(
            f"critical length {ell_c} at Delta={Delta}: the regime requires ell_c > 2"
        )
    return ell_c


def critical_energy(U: float, Delta: float) -> float:
    """Energy Γ of the critical droplet in the local model."""
    lc = critical_length(U, Delta)
    return -U * ((lc - 1) ** 2 + lc * (lc - 2) + 1) + Delta * (lc * (lc - 1) + 2)


def resistance(l1: int, l2: int, U: float, Delta: float) -> float:
    """
    Resistance of the ℓ1×ℓ2 quasi-square.

    Raises:
        QuasiSquareError: Unless 1 ≤ ℓ1 ≤ ℓ2 ≤ ℓ1 + 1.
    """
    if not (1 <= l1 <= l2 <= l1 + 1):
        raise QuasiSquareError(f"({l1}, {l2}) is not a quasi-square")
    return min((2.0 * U - Delta) * l1 - U + 2.0 * Delta - U, 2.0 * Delta - U)


def empty_resistance(U: float, Delta: float, Theta: float) -> float:
    """r(0,0) = 4Δ − 2U − Θ, resistance of a configuration with no droplet."""
    return 4.0 * Delta - 2.0 * U - Theta


def theta_window(U: float, Delta: float) -> Tuple[float, float]:
    """Open interval (Δ, Γ − (2Δ − U)) of admissible volume exponents."""
    return Delta, critical_energy(U, Delta) - (2.0 * Delta - U)


def check_theta(params: ModelParams) -> None:
    """
    Raises:
        ParameterError: If Θ is missing or outside the admissible window.
    """
    if params.Theta is None:
        raise ParameterError("Theta is required for a lattice experiment")
    lo, hi = theta_window(params.U, params.Delta)
    if not lo < params.Theta < hi:
        raise ParameterError(
            f"Theta={params.Theta} must lie in (Delta, Gamma - (2Delta - U)) = ({lo:.6g}, {hi:.6g})"
        )


def quasi_square_sequence(ell_c: int) -> List[Tuple[int, int]]:
    """(2,2), (2,3), (3,3), ... up to (ℓ_c, ℓ_c) via (ℓ1,ℓ2) → (ℓ2, ℓ1+1)."""
    sequence = [(2, 2)]
    while sequence[-1] != (ell_c, ell_c):
        l1, l2 = sequence[-1]
        sequence.append((l2, l1 + 1))
    return sequence


def supercritical_sequence(ell_c: int, target_side: int) -> List[Tuple[int, int]]:
    """(ℓ_c, ℓ_c), (ℓ_c, ℓ_c+1), ... up to (target, target)."""
    sequence = [(ell_c, ell_c)]
    while sequence[-1] != (target_side, target_side):
        l1, l2 = sequence[-1]
        sequence.append((l2, l1 + 1))
    return sequence


def _sqrt_log(beta: float) -> float:
    return math.sqrt(max(1.0, math.log(beta)))


def _log_log(beta: float) -> float:
    if beta <= math.e:
        return 1.0
    return max(1.0, math.log(math.log(beta)))


LAMBDA_FUNCTIONS: Dict[str, Callable[[float], float]] = {
    "sqrt-log": _sqrt_log,
    "log-log": _log_log,
}


def lambda_value(beta: float, choice: str = "sqrt-log") -> float:
    """λ(β), floored at 1 where the logarithms are not yet meaningful."""
    return LAMBDA_FUNCTIONS[choice](beta)


def time_scale(C: float, beta: float) -> float:
    """T_C = e^{Cβ}."""
    return math.exp(C * beta)


def derive(params: ModelParams) -> DerivedParams:
    """
    Compute every derived constant for a parameter set.

    Args:
        params: Validated model parameters

    Returns:
        DerivedParams: ε, ℓ_c, Γ, γ, θ, D, Δ⁺, S, a(β), λ(β), r(·,·) and friends

    Raises:
        ParameterError: If the regime is violated or the θ identities disagree.
    """
    U, Delta, beta = params.U, params.Delta, params.beta
    eps = 2.0 * U - Delta
    ell_c = critical_length(U, Delta)
    Gamma = critical_energy(U, Delta)
    gamma = (Delta - U) - (ell_c - 2) * eps
    theta = 2.0 * Delta - U - gamma

    theta_alt = 2.0 * U + (ell_c - 3) * eps
    if not math.isclose(theta, theta_alt, rel_tol=1e-12, abs_tol=1e-12):
        raise ParameterError(f"theta identities disagree: {theta} != {theta_alt}")
    if gamma <= 0:
        raise ParameterError(f"gamma={gamma} must be positive")

    r_table = {}
    for l1 in range(1, ell_c + 1):
        for l2 in (l1, l1 + 1):
            r_table[f"{l1}x{l2}"] = resistance(l1, l2, U, Delta)

    a_beta = None
    r_empty = None
    nucleation_exponent = None
    if params.Theta is not None:
        a_beta = math.exp((params.Theta - 3.0 * Delta + 2.0 * U) * beta)
        r_empty = empty_resistance(U, Delta, params.Theta)
        nucleation_exponent = Gamma - params.Theta

    return DerivedParams(
        U=U,
        Delta=Delta,
        beta=beta,
        Theta=params.Theta,
        eps=eps,
        ell_c=ell_c,
        Gamma=Gamma,
        gamma=gamma,
        theta=theta,
        D=U + params.d,
        Delta_plus=Delta + params.alpha,
        S=(4.0 * Delta - theta) / 3.0 - params.alpha,
        alpha=params.alpha,
        d=params.d,
        kappa=params.kappa,
        delta=params.delta,
        a_beta=a_beta,
        lambda_beta=lambda_value(beta, params.lambda_choice),
        r_table=r_table,
        r_empty=r_empty,
        max_volume=ell_c * (ell_c - 1) + 2,
        c_star=params.C_star if params.C_star is not None else Gamma + 1.0,
        nucleation_exponent=nucleation_exponent,
        theta_window=theta_window(U, Delta),
    )


def lattice_side(
    Theta: float,
    beta: float,
    ell_c: int = 3,
    max_side: Optional[int] = None,
) -> LatticeSize:
    """
    Side L = round(e^{Θβ/2}) of the torus realising |Λ| ≈ e^{Θβ}.

    Args:
        Theta: Volume exponent
        beta: Inverse temperature (> 0)
        ell_c: Critical length; L is raised to at least 2ℓ_c
        max_side: Memory cap (default SimulationConfig.MAX_LATTICE_SIDE)

    Returns:
        LatticeSize: L and Θ_eff = ln(L²)/β

    Raises:
        ParameterError: If β ≤ 0.
        CapacityError: If L exceeds the cap.
    """
    if beta <= 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    cap = max_side if max_side is not None else SimulationConfig.MAX_LATTICE_SIDE

    exponent = Theta * beta / 2.0
    if exponent > math.log(cap + 1):
        raise CapacityError(f"lattice side e^{exponent:.3g} exceeds the cap {cap}", cap=cap)
    L = int(round(math.exp(exponent)))
    if L < 2 * ell_c:
        logger.warning(f"Lattice side {L} raised to 2*ell_c={2 * ell_c}")
        L = 2 * ell_c
    if L > cap:
        raise CapacityError(f"lattice side {L} exceeds the cap {cap}", cap=cap)

    return LatticeSize(L=L, theta_eff=math.log(L * L) / beta, beta=beta)


def format_derived(derived: DerivedParams) -> List[Tuple[str, str]]:
    """Rows (name, value) describing a DerivedParams for tables."""
    rows = [
        ("U", f"{derived.U:g}"),
        ("Delta", f"{derived.Delta:g}"),
        ("beta", f"{derived.beta:g}"),
        ("Theta", "-" if derived.Theta is None else f"{derived.Theta:g}"),
        ("eps = 2U - Delta", f"{derived.eps:.6g}"),
        ("ell_c", str(derived.ell_c)),
        ("Gamma", f"{derived.Gamma:.6g}"),
        ("gamma", f"{derived.gamma:.6g}"),
        ("theta", f"{derived.theta:.6g}"),
        ("D = U + d", f"{derived.D:.6g}"),
        ("Delta+ = Delta + alpha", f"{derived.Delta_plus:.6g}"),
        ("S", f"{derived.S:.6g}"),
        ("alpha / d / kappa / delta",
         f"{derived.alpha:.4g} / {derived.d:.4g} / {derived.kappa:.4g} / {derived.delta:.4g}"),
        ("lambda(beta)", f"{derived.lambda_beta:.6g}"),
        ("a(beta)", "-" if derived.a_beta is None else f"{derived.a_beta:.6g}"),
        ("r(0,0)", "-" if derived.r_empty is None else f"{derived.r_empty:.6g}"),
        ("max cluster volume in R", str(derived.max_volume)),
        ("Theta window", f"({derived.theta_window[0]:.6g}, {derived.theta_window[1]:.6g})"),
        ("Gamma - Theta", "-" if derived.nucleation_exponent is None
         else f"{derived.nucleation_exponent:.6g}"),
        ("C*", f"{derived.c_star:.6g}"),
    ]
    rows.extend((f"r({key})", f"{value:.6g}") for key, value in derived.r_table.items())
    return rows
