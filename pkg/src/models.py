"""
Data models module.

This module provides the Pydantic models for physical parameters, derived
constants, toy-chain specifications, experiment plans and the records and
reports produced by the nucleation harness.
"""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

LAMBDA_CHOICES = ("sqrt-log", "log-log")

# Nominal tuning exponents in units of U; clipped to half the admissible bound.
_NOMINAL_TUNING = {"alpha": 0.05, "d": 0.1, "kappa": 0.1, "delta": 0.05}


class ModelParams(BaseModel):
    """
    Physical constants of the Kawasaki lattice gas.

    Attributes:
        U: Binding energy between neighbouring particles (> 0)
        Delta: Activation energy per particle, strictly inside (3U/2, 2U)
        beta: Inverse temperature (> 0)
        Theta: Volume exponent, |Λ| = e^{Θβ}; required for lattice experiments
        alpha, d, kappa, delta: Small positive tuning exponents
        lambda_choice: Name of the slowly growing function λ(β)
        C_star: Horizon multiplier for T* = e^{C* β}; defaults to Γ + 1
    """
    U: float = Field(1.0, gt=0, description="Binding energy")
    Delta: float = Field(..., description="Activation energy")
    beta: float = Field(1.0, gt=0, description="Inverse temperature")
    Theta: Optional[float] = Field(None, description="Volume exponent")
    alpha: Optional[float] = None
    d: Optional[float] = None
    kappa: Optional[float] = None
    delta: Optional[float] = None
    lambda_choice: str = Field("sqrt-log", description="Identifier of λ(β)")
    C_star: Optional[float] = Field(None, gt=0)

    @field_validator("lambda_choice")
    @classmethod
    def _known_lambda(cls, value: str) -> str:
        if value not in LAMBDA_CHOICES:
            raise ValueError(
                f"lambda_choice must be one of {', '.join(LAMBDA_CHOICES)}, got {value!r}"
            )
        return value

    @model_validator(mode="after")
    def _check_regime(self) -> "ModelParams":
        if not 1.5 * self.U < self.Delta < 2.0 * self.U:
            raise ValueError(
                f"Delta={self.Delta} violates the metastable regime 3U/2 < Delta < 2U "
                f"(U={self.U})"
            )
        bound = (2.0 * self.U - self.Delta) / 4.0
        for name, nominal in _NOMINAL_TUNING.items():
            value = getattr(self, name)
            if value is None:
                setattr(self, name, min(nominal * self.U, bound / 2.0))
            elif not 0.0 < value < bound:
                raise ValueError(
                    f"{name}={value} must lie in (0, (2U - Delta)/4) = (0, {bound:.6g})"
                )
        return self

    def with_beta(self, beta: float) -> "ModelParams":
        """Return a copy at another inverse temperature."""
        return self.model_validate({**self.model_dump(), "beta": beta})


class DerivedParams(BaseModel):
    """
    Quantities derived from ModelParams; the single source of the formulas'
    values for every other module.
    """
    U: float
    Delta: float
    beta: float
    Theta: Optional[float] = None
    eps: float = Field(..., description="2U - Delta")
    ell_c: int = Field(..., ge=3, description="Critical side length")
    Gamma: float = Field(..., description="Critical droplet energy")
    gamma: float = Field(..., gt=0, description="Gap exponent")
    theta: float = Field(..., description="Resistance of the largest subcritical quasi-square")
    D: float
    Delta_plus: float
    S: float
    alpha: float
    d: float
    kappa: float
    delta: float
    a_beta: Optional[float] = Field(None, description="Mean arrivals per toy step")
    lambda_beta: float
    r_table: Dict[str, float] = Field(default_factory=dict)
    r_empty: Optional[float] = Field(None, description="r(0,0) = 4Δ − 2U − Θ")
    max_volume: int = Field(..., description="Largest cluster volume inside R")
    c_star: float
    nucleation_exponent: Optional[float] = Field(None, description="Γ − Θ")
    theta_window: Tuple[float, float]

    def resistance_of(self, l1: int, l2: int) -> float:
        """Look up r(ℓ1, ℓ2) in the precomputed table."""
        return self.r_table[f"{l1}x{l2}"]


class LatticeSize(BaseModel):
    """Side length realised for (Θ, β) and the effective volume exponent."""
    L: int = Field(..., ge=2)
    theta_eff: float
    beta: float


class StopRule(BaseModel):
    """
    When a simulation run stops. Any condition that fires ends the run.

    Attributes:
        horizon: Model-time horizon
        cluster_volume: Stop as soon as a cluster reaches this volume
        exit_R: True when cluster_volume encodes the exit from R
        max_events: Event-count cap; reaching it marks the log truncated
    """
    horizon: Optional[float] = Field(None, ge=0)
    cluster_volume: Optional[int] = Field(None, ge=2)
    exit_R: bool = False
    max_events: Optional[int] = Field(None, ge=0)

    @classmethod
    def exit_from_R(
        cls,
        derived: DerivedParams,
        horizon: Optional[float] = None,
        max_events: Optional[int] = None,
    ) -> "StopRule":
        return cls(
            horizon=horizon,
            cluster_volume=derived.max_volume + 1,
            exit_R=True,
            max_events=max_events,
        )


class ChainMode(str, Enum):
    CYCLING = "cycling"
    HISTORY = "history"


class ChainSpec(BaseModel):
    """
    Birth-death chain on quasi-square dimensions.

    Attributes:
        states: Ordered states, (0, 0) first and (ℓ_c, ℓ_c) last
        up: Probability of moving to the next state
        down: Probability of moving to the previous state
        absorbing: Absorbing flags
        mode: cycling ((0,0) restarts) or history ((0,0) absorbing)
        beta: Inverse temperature the probabilities were built for
        a_beta: Mean Poisson arrivals per step for the aggregated chain
    """
    states: List[Tuple[int, int]]
    up: List[float]
    down: List[float]
    absorbing: List[bool]
    mode: ChainMode = ChainMode.HISTORY
    beta: Optional[float] = None
    a_beta: Optional[float] = None

    @model_validator(mode="after")
    def _check_probabilities(self) -> "ChainSpec":
        n = len(self.states)
        if n < 2 or not len(self.up) == len(self.down) == len(self.absorbing) == n:
            raise ValueError("states, up, down and absorbing must have equal length >= 2")
        for state, u, d in zip(self.states, self.up, self.down):
            if u < 0 or d < 0:
                raise ValueError(f"negative transition probability at {state}")
            if u + d > 1.0 + 1e-12:
                raise ValueError(f"u + d = {u + d:.6g} exceeds 1 at state {state}")
        for state, u, d, flag in zip(self.states, self.up, self.down, self.absorbing):
            if flag and (u != 0.0 or d != 0.0):
                raise ValueError(f"absorbing state {state} must have u = d = 0")
        if self.up[-1] != 0.0 or self.down[0] != 0.0:
            raise ValueError("the chain cannot leave its end states outward")
        return self

    def index(self, state: Tuple[int, int]) -> int:
        return self.states.index(tuple(state))

    @property
    def transient(self) -> List[int]:
        return [i for i, flag in enumerate(self.absorbing) if not flag]


class ExitMode(str, Enum):
    GROWTH = "growth"
    COALESCENCE = "coalescence"
    TRUNCATED = "truncated"


class ExperimentPlan(BaseModel):
    """
    A nucleation-time study.

    Attributes:
        params: Model parameters (Theta required)
        betas: Inverse temperatures to study
        replicas: Replicas per β
        master_seed: Root of the per-replica seed tree
        sample_period: Observer sampling period in model time (None: events only)
        horizon: Fixed horizon; default e^{(Γ − Θ_eff + 3δ)β}
        max_events: Per-replica event cap
        output_dir: Directory receiving records.csv and summary.json
        deltas: δ values for the tube event (default: params.delta)
        target_side: Side of the supercritical square to follow after the exit
        box_trigger_volume: Cluster volume that centres Λ_{R^c}
            (default ℓ_c(ℓ_c−1)+3, the exit trigger)
        write_logs: Keep gzip trajectory logs per replica
        workers: Worker processes (default: NUCLEATION_WORKERS)
    """
    params: ModelParams
    betas: List[float] = Field(..., min_length=1)
    replicas: int = Field(..., ge=1)
    master_seed: int = Field(0, ge=0)
    sample_period: Optional[float] = Field(None, gt=0)
    horizon: Optional[float] = Field(None, ge=0)
    max_events: Optional[int] = Field(None, ge=1)
    output_dir: str = "results"
    deltas: List[float] = Field(default_factory=list)
    target_side: Optional[int] = Field(None, ge=3)
    box_trigger_volume: Optional[int] = Field(None, ge=2)
    write_logs: bool = False
    workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_plan(self) -> "ExperimentPlan":
        if self.params.Theta is None:
            raise ValueError("an experiment plan needs Theta")
        if any(b <= 0 for b in self.betas):
            raise ValueError("every beta must be positive")
        if not self.deltas:
            self.deltas = [self.params.delta]
        return self


class TubeReport(BaseModel):
    """Tube-of-trajectories analysis of one growth exit."""
    center: Optional[Tuple[float, float]] = None
    box_side: int = 0
    tube: Dict[str, float] = Field(default_factory=dict)
    T_delta_pass: Dict[str, bool] = Field(default_factory=dict)
    subcritical_pass: Dict[str, bool] = Field(default_factory=dict)
    missing: Dict[str, List[str]] = Field(default_factory=dict)
    aborted: bool = False


class NucleationRecord(BaseModel):
    """
    Outcome of one replica.

    Attributes:
        beta, replica: Position in the study
        L, theta_eff, N: Lattice side, realised volume exponent, particles
        tau_exit: First exit time from R (inf when truncated)
        exit_mode: growth, coalescence or truncated
        trigger_volume: Volume of the cluster created by the exit move
        center_x, center_y: Baricenter of the cluster that centres Λ_{R^c}
        tube: τ^last for subcritical and τ^first for supercritical dimensions
        T_delta_pass: Full tube event per δ
        subcritical_pass: Subcritical chain only, per δ
        tube_missing: Stages that broke the chain at the first δ
        analysis_aborted: Geometry could not be unwrapped on the torus
        events: Events simulated (both phases)
        follow_stop: Why the growth follow-up ended (quasi_square, horizon, max_events)
        note: Reason for truncation or abort
    """
    beta: float
    replica: int
    L: int
    theta_eff: float
    N: int
    tau_exit: float = math.inf
    exit_mode: ExitMode = ExitMode.TRUNCATED
    trigger_volume: Optional[int] = None
    center_x: Optional[float] = None
    center_y: Optional[float] = None
    tube: Dict[str, float] = Field(default_factory=dict)
    T_delta_pass: Dict[str, bool] = Field(default_factory=dict)
    subcritical_pass: Dict[str, bool] = Field(default_factory=dict)
    tube_missing: List[str] = Field(default_factory=list)
    analysis_aborted: bool = False
    events: int = 0
    follow_stop: Optional[str] = None
    note: Optional[str] = None


class BetaSummary(BaseModel):
    """Nucleation-time statistics at one β."""
    beta: float
    n_total: int
    n_used: int
    n_truncated: int
    median_tau: Optional[float] = None
    q25_tau: Optional[float] = None
    q75_tau: Optional[float] = None
    mean_theta_eff: float
    coalescence_fraction: Optional[float] = None
    tube_pass_rate: Optional[float] = None
    subcritical_pass_rate: Optional[float] = None


class ScalingReport(BaseModel):
    """Regression of ln(median τ_exit) against β."""
    per_beta: List[BetaSummary] = Field(default_factory=list)
    slope: Optional[float] = None
    intercept: Optional[float] = None
    target_exponent: Optional[float] = None
    medians_increasing: Optional[bool] = None
    coalescence_nonincreasing: Optional[bool] = None
    subcritical_pass_nondecreasing: Optional[bool] = None
    fit_omitted_reason: Optional[str] = None


class HistoryEvent(BaseModel):
    """Birth, death or success of a nucleation attempt."""
    time: float
    epoch: int
    kind: str
    history_id: int
    dims: Optional[Tuple[int, int]] = None


class HistoryRecord(BaseModel):
    """Lifetime summary of one history."""
    history_id: int
    birth_time: float
    end_time: Optional[float] = None
    outcome: str = "alive"
    max_dims: Optional[Tuple[int, int]] = None
    epochs: int = 0


class HistoryCensus(BaseModel):
    """Offline cloud/history reconstruction of a trajectory."""
    events: List[HistoryEvent] = Field(default_factory=list)
    histories: List[HistoryRecord] = Field(default_factory=list)
    epoch_times: List[float] = Field(default_factory=list)
    radii: List[float] = Field(default_factory=list)
    cloud_counts: List[int] = Field(default_factory=list)
    min_cloud_distance: List[Optional[float]] = Field(default_factory=list)
    skipped_epochs: List[int] = Field(default_factory=list)
