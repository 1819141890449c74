"""
Nucleation experiments and trajectory analysis.

Replicas start from μ_R, run until the exit from R and, after a growth
exit, a little longer so the supercritical part of the tube can be seen.
Records are written as one CSV row per replica plus a JSON summary.
Offline analyses (exit classification, tube detection, cloud histories)
work from logged trajectories only.
"""

import json
import math
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from src.config import SimulationConfig
from src.errors import CapacityError, ClassificationError, WrapAmbiguityError
from src.geometry import (
    Rectangle,
    aggregate_clouds,
    cluster_at,
    clusterise,
    cloud_schedule,
    in_R,
)
from src.gibbs import sample_muR
from src.kmc import (
    QuasiSquareSighting,
    QuasiSquareTimeline,
    SleepTracker,
    TrajectoryLog,
    make_rng,
    replay,
    replay_with,
    replica_seed_sequence,
    run_until,
    write_log,
)
from src.lattice import Configuration, neighbour_table
from src.models import (
    BetaSummary,
    DerivedParams,
    ExitMode,
    ExperimentPlan,
    HistoryCensus,
    HistoryEvent,
    HistoryRecord,
    NucleationRecord,
    ScalingReport,
    StopRule,
    TubeReport,
)
from src.params import derive, lattice_side, quasi_square_sequence, supercritical_sequence

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.csv"
SUMMARY_FILE = "summary.json"
PLAN_FILE = "plan.json"
LOG_DIR = "logs"

_JSON_COLUMNS = ("tube", "T_delta_pass", "subcritical_pass", "tube_missing")


def dims_key(dims: Tuple[int, int]) -> str:
    return f"{dims[0]}x{dims[1]}"


def delta_key(delta: float) -> str:
    return f"{delta:g}"


# Plan defaults


def default_horizon(derived: DerivedParams, theta_eff: float) -> float:
    """e^{(Γ − Θ_eff + 3δ)β}."""
    return math.exp((derived.Gamma - theta_eff + 3.0 * derived.delta) * derived.beta)


def default_target_side(derived: DerivedParams) -> int:
    """max(ℓ_c + 2, ⌊√(λ(β)/8)⌋)."""
    return max(derived.ell_c + 2, int(math.floor(math.sqrt(derived.lambda_beta / 8.0))))


def box_side(derived: DerivedParams, L: int) -> int:
    """Side of Λ_{R^c}: area min(e^{θβ}, L²/4)."""
    area = min(math.exp(derived.theta * derived.beta), L * L / 4.0)
    return max(1, int(math.floor(math.sqrt(area))))


def centered_box(center: Tuple[float, float], side: int, L: int) -> Rectangle:
    x0 = int(math.floor(center[0] - (side - 1) / 2.0 + 0.5))
    y0 = int(math.floor(center[1] - (side - 1) / 2.0 + 0.5))
    return Rectangle(x0 % L, y0 % L, side, side)


# Exit classification


def _components(config: Configuration, sites: Set[int]) -> List[Set[int]]:
    """Connected components of a set of flat indices."""
    nbr = neighbour_table(config.L)
    left = set(sites)
    parts = []
    while left:
        seed = left.pop()
        part = {seed}
        stack = [seed]
        while stack:
            i = stack.pop()
            for j in nbr[i]:
                if j in left:
                    left.discard(j)
                    part.add(j)
                    stack.append(j)
        parts.append(part)
    return parts


def classify_move(
    pre: Configuration,
    frm: Tuple[int, int],
    to: Tuple[int, int],
    derived: DerivedParams,
) -> ExitMode:
    """
    Classify the move that takes a configuration out of R.

    The cluster formed at ``to``, minus the moved particle, is split into
    its connected pieces; the exit is a coalescence iff at least two of the
    pieces are real clusters (volume ≥ 2).

    Raises:
        ClassificationError: If the move does not create a cluster of
            volume at least ℓ_c(ℓ_c − 1) + 3.
    """
    post = pre.copy()
    i_from, i_to = post.index(frm), post.index(to)
    post.exchange(i_from, i_to)
    cluster = cluster_at(post, to)
    if len(cluster) < derived.max_volume + 1:
        logger.error(f"Move {frm} -> {to} builds a cluster of volume {len(cluster)} only")
        raise ClassificationError(
            f"move {frm} -> {to} leaves R only if it builds volume {derived.max_volume + 1}, "
            f"got {len(cluster)}"
        )
    pieces = _components(post, cluster - {i_to})
    real = [p for p in pieces if len(p) >= 2]
    return ExitMode.COALESCENCE if len(real) >= 2 else ExitMode.GROWTH


def find_exit(log: TrajectoryLog, derived: DerivedParams) -> Tuple[int, Configuration]:
    """
    Locate the first move that leaves R.

    Returns:
        tuple: (index of the record, configuration just before it)

    Raises:
        ClassificationError: If the trajectory never leaves R.
    """
    threshold = derived.max_volume + 1
    for k, (config, record, changed) in enumerate(replay(log)):
        if not changed:
            continue
        if len(cluster_at(config, record.to, limit=threshold)) >= threshold:
            pre = config.copy()
            pre.exchange(pre.index(record.to), pre.index(record.frm))
            return k, pre
    raise ClassificationError("trajectory never leaves R")


def classify_exit(log: TrajectoryLog, derived: DerivedParams) -> ExitMode:
    """Growth or coalescence for the first exit from R of a logged trajectory."""
    k, pre = find_exit(log, derived)
    record = log.records[k]
    return classify_move(pre, record.frm, record.to, derived)


# Tube of typical trajectories


def tube_times(
    entries: Sequence[Tuple[float, Tuple[QuasiSquareSighting, ...], int]],
    tau: float,
    box: Rectangle,
    L: int,
    subcritical: Sequence[Tuple[int, int]],
    supercritical: Sequence[Tuple[int, int]],
    end_time: Optional[float] = None,
) -> Dict[str, float]:
    """
    τ^last for subcritical and τ^first for supercritical dimensions.

    An inventory entry holds from its time until the next entry. A
    subcritical quasi-square seen in the box during [t_k, t_{k+1}) gives
    τ^last ≥ min(t_{k+1}, τ); a supercritical one seen in an entry at or
    after τ gives τ^first ≤ t_k. Missing dimensions map to ∓inf.
    """
    last = {dims: -math.inf for dims in subcritical}
    first = {dims: math.inf for dims in supercritical}
    for k, (t, sightings, _) in enumerate(entries):
        t_next = entries[k + 1][0] if k + 1 < len(entries) else (end_time if end_time is not None else math.inf)
        inside = {
            s.dims for s in sightings
            if box.contains(Rectangle(s.x0, s.y0, s.w, s.h), L)
        }
        if t < tau:
            for dims in inside & set(last):
                last[dims] = max(last[dims], min(t_next, tau))
        else:
            for dims in inside & set(first):
                first[dims] = min(first[dims], t)
    times = {dims_key(d): v for d, v in last.items()}
    times.update({dims_key(d): v for d, v in first.items()})
    return times


def evaluate_tube(
    times: Dict[str, float],
    tau: float,
    derived: DerivedParams,
    delta: float,
    target_side: Optional[int] = None,
) -> Tuple[bool, bool, List[str]]:
    """
    Evaluate the tube event for one δ.

    The chain is τ − e^{(θ+δ)β} < τ^last_(2,2) < … < τ^last_(ℓc−1,ℓc) ≤ τ
    ≤ τ_(ℓc,ℓc) < … < τ_(target,target) < τ + e^{(2Δ−U+δ)β}.

    Returns:
        tuple: (full chain holds, subcritical part holds, failed stages)
    """
    beta = derived.beta
    target = target_side or default_target_side(derived)
    sub = [dims_key(d) for d in quasi_square_sequence(derived.ell_c)[:-1]]
    sup = [dims_key(d) for d in supercritical_sequence(derived.ell_c, target)]
    lower = tau - math.exp((derived.theta + delta) * beta)
    upper = tau + math.exp((2.0 * derived.Delta - derived.U + delta) * beta)

    missing = [key for key in sub if not math.isfinite(times.get(key, math.nan))]
    if times.get(sub[0], -math.inf) <= lower and sub[0] not in missing:
        missing.append(f"window:{sub[0]}")
    for a, b in zip(sub, sub[1:]):
        if not times.get(a, -math.inf) < times.get(b, -math.inf) and a not in missing and b not in missing:
            missing.append(f"order:{a}<{b}")
    sub_pass = not missing

    missing.extend(key for key in sup if not math.isfinite(times.get(key, math.nan)))
    for a, b in zip(sup, sup[1:]):
        if not times.get(a, math.inf) < times.get(b, math.inf) and a not in missing and b not in missing:
            missing.append(f"order:{a}<{b}")
    if times.get(sup[-1], math.inf) >= upper and sup[-1] not in missing:
        missing.append(f"window:{sup[-1]}")
    return not missing, sub_pass, missing


def tube_report(
    timeline: QuasiSquareTimeline,
    tau: float,
    derived: DerivedParams,
    L: int,
    deltas: Iterable[float],
    target_side: Optional[int] = None,
    end_time: Optional[float] = None,
) -> TubeReport:
    """Tube times around the trigger recorded by a timeline, evaluated per δ."""
    deltas = list(deltas)
    if timeline.trigger_ambiguous or timeline.trigger_center is None:
        logger.warning("Trigger cluster cannot be unwrapped; tube analysis aborted")
        return TubeReport(aborted=True)
    target = target_side or default_target_side(derived)
    side = box_side(derived, L)
    box = centered_box(timeline.trigger_center, side, L)
    times = tube_times(
        timeline.entries, tau, box, L,
        quasi_square_sequence(derived.ell_c)[:-1],
        supercritical_sequence(derived.ell_c, target),
        end_time=end_time,
    )
    report = TubeReport(center=timeline.trigger_center, box_side=side, tube=times)
    for delta in deltas:
        full, sub, missing = evaluate_tube(times, tau, derived, delta, target)
        report.T_delta_pass[delta_key(delta)] = full
        report.subcritical_pass[delta_key(delta)] = sub
        report.missing[delta_key(delta)] = missing
    return report


def detect_tube(
    log: TrajectoryLog,
    derived: DerivedParams,
    deltas: Optional[Iterable[float]] = None,
    target_side: Optional[int] = None,
    trigger_volume: Optional[int] = None,
) -> TubeReport:
    """
    Tube analysis of a logged trajectory.

    Raises:
        ClassificationError: If the trajectory does not leave R by growth.
    """
    if classify_exit(log, derived) != ExitMode.GROWTH:
        raise ClassificationError("tube detection needs a growth exit")
    k, _ = find_exit(log, derived)
    tau = log.records[k].t
    timeline = QuasiSquareTimeline(trigger_volume or derived.max_volume + 1)
    final = replay_with(log, [timeline])
    return tube_report(timeline, tau, derived, final.L,
                       deltas if deltas is not None else [derived.delta],
                       target_side, end_time=log.final_time)


# Replicas


def _truncated(beta: float, replica: int, L: int, theta_eff: float, N: int, events: int, note: str) -> NucleationRecord:
    return NucleationRecord(beta=beta, replica=replica, L=L, theta_eff=theta_eff, N=N,
                            events=events, note=note)


def run_replica(plan: ExperimentPlan, beta_index: int, replica: int) -> Tuple[NucleationRecord, Optional[TrajectoryLog]]:
    """
    Simulate one replica of a study.

    The first phase runs from a μ_R draw until the exit from R or the
    horizon. After a growth exit a second phase follows the droplet for
    e^{(2Δ−U+δ_max)β} or until the target square is seen in the box
    around the trigger cluster.

    Returns:
        tuple: (record, trajectory log or None when nothing was simulated)
    """
    beta = plan.betas[beta_index]
    params = plan.params.with_beta(beta)
    derived = derive(params)
    try:
        size = lattice_side(params.Theta, beta, derived.ell_c)
    except CapacityError as e:
        logger.warning(f"Replica beta={beta} #{replica} skipped: {e}")
        return _truncated(beta, replica, 0, math.nan, 0, 0, f"capacity: {e}"), None
    L = size.L

    rng = make_rng(replica_seed_sequence(plan.master_seed, beta_index, replica))
    config = sample_muR(params, L, rng)
    if not in_R(config, derived):
        logger.error(f"Initial configuration of replica {replica} lies outside R")
        raise ValueError("mu_R sampler returned a configuration outside R")
    N = config.N

    horizon = plan.horizon if plan.horizon is not None else default_horizon(derived, size.theta_eff)
    max_events = plan.max_events or SimulationConfig.MAX_EVENTS
    timeline = QuasiSquareTimeline(plan.box_trigger_volume or derived.max_volume + 1,
                                   interval=plan.sample_period)

    log = run_until(config, StopRule.exit_from_R(derived, horizon, max_events), rng, beta,
                    params.U, observers=[timeline])
    record = _truncated(beta, replica, L, size.theta_eff, N, len(log), log.stop_reason)
    if log.stop_reason != "exit_R":
        logger.info(f"Replica beta={beta} #{replica} truncated ({log.stop_reason}) after {len(log)} events")
        return record, log

    last = log.records[-1]
    tau = last.t
    pre = config.copy()
    pre.exchange(pre.index(last.to), pre.index(last.frm))
    record.tau_exit = tau
    record.exit_mode = classify_move(pre, last.frm, last.to, derived)
    record.trigger_volume = len(cluster_at(config, last.to))
    record.note = None

    if record.exit_mode == ExitMode.GROWTH:
        target = plan.target_side or default_target_side(derived)
        window = math.exp((2.0 * derived.Delta - derived.U + max(plan.deltas)) * beta)
        box = None
        if timeline.trigger_center is not None and not timeline.trigger_ambiguous:
            box = centered_box(timeline.trigger_center, box_side(derived, L), L)
        timeline.stop_at((target, target), L, box)
        follow = StopRule(horizon=tau + window, max_events=max(0, max_events - len(log)))
        run_until(config, follow, rng, beta, params.U, observers=[timeline], log=log)
        record.follow_stop = log.stop_reason
        # the written log keeps the exit from R as its stop
        log.stop_reason, log.truncated = "exit_R", False
        tube = tube_report(timeline, tau, derived, L, plan.deltas, target, end_time=log.final_time)
        record.tube = tube.tube
        record.T_delta_pass = tube.T_delta_pass
        record.subcritical_pass = tube.subcritical_pass
        record.tube_missing = tube.missing.get(delta_key(plan.deltas[0]), [])
        record.analysis_aborted = tube.aborted
    if timeline.trigger_center is not None:
        record.center_x, record.center_y = timeline.trigger_center
    record.events = len(log)
    logger.info(f"Replica beta={beta} #{replica}: tau_exit={tau:.6g} ({record.exit_mode.value})")
    return record, log


def log_path(output_dir: Union[str, Path], beta: float, replica: int) -> Path:
    return Path(output_dir) / LOG_DIR / f"beta{beta:g}_rep{replica}.log.gz"


def _run_task(plan: ExperimentPlan, beta_index: int, replica: int) -> NucleationRecord:
    beta = plan.betas[beta_index]
    try:
        record, log = run_replica(plan, beta_index, replica)
    except ValueError as e:
        logger.error(f"Replica beta={beta} #{replica} failed: {e}")
        return _truncated(beta, replica, 0, math.nan, 0, 0, f"error: {e}")
    if plan.write_logs and log is not None:
        path = log_path(plan.output_dir, beta, replica)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_log(log, path)
    return record


def run_nucleation(plan: ExperimentPlan, workers: Optional[int] = None) -> List[NucleationRecord]:
    """
    Run every (β, replica) pair of a plan and write the study directory.

    Args:
        plan: Experiment plan
        workers: Worker processes (default plan.workers, then NUCLEATION_WORKERS)

    Returns:
        list: Records sorted by (β, replica).
    """
    workers = workers or plan.workers or SimulationConfig.WORKERS
    tasks = [(bi, r) for bi in range(len(plan.betas)) for r in range(plan.replicas)]
    logger.info(f"Starting study: {len(plan.betas)} betas x {plan.replicas} replicas on {workers} worker(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_task, plan, bi, r) for bi, r in tasks]
            records = [f.result() for f in futures]
    else:
        records = [_run_task(plan, bi, r) for bi, r in tasks]

    records.sort(key=lambda rec: (rec.beta, rec.replica))
    report = scaling_fit(records, Gamma=derive(plan.params).Gamma)
    write_study(plan, records, report)
    return records


# Records on disk


def records_frame(records: Iterable[NucleationRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        row = record.model_dump()
        row["exit_mode"] = record.exit_mode.value
        for column in _JSON_COLUMNS:
            row[column] = json.dumps(row[column], sort_keys=True)
        rows.append(row)
    return pd.DataFrame(rows, columns=list(NucleationRecord.model_fields))


def write_study(plan: ExperimentPlan, records: List[NucleationRecord], report: ScalingReport) -> Path:
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(out / RECORDS_FILE, index=False)
    (out / SUMMARY_FILE).write_text(report.model_dump_json(indent=2), encoding="utf-8")
    (out / PLAN_FILE).write_text(plan.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote {len(records)} records to {out}")
    return out


def read_records(directory: Union[str, Path]) -> List[NucleationRecord]:
    """Load the records.csv of a study directory."""
    df = pd.read_csv(Path(directory) / RECORDS_FILE, keep_default_na=False, na_values=[""])
    df = df.astype(object).where(df.notna(), None)
    records = []
    for row in df.to_dict(orient="records"):
        for column in _JSON_COLUMNS:
            row[column] = json.loads(row[column]) if row[column] else None
        row = {k: v for k, v in row.items() if v is not None}
        row.setdefault("theta_eff", math.nan)
        records.append(NucleationRecord(**row))
    return records


def read_plan(directory: Union[str, Path]) -> ExperimentPlan:
    return ExperimentPlan.model_validate_json((Path(directory) / PLAN_FILE).read_text(encoding="utf-8"))


def reevaluate(records: List[NucleationRecord], derived_for: Dict[float, DerivedParams], delta: float,
               target_side: Optional[int] = None) -> List[NucleationRecord]:
    """Re-evaluate the tube event of stored records for another δ."""
    out = []
    for record in records:
        record = record.model_copy(deep=True)
        if record.exit_mode == ExitMode.GROWTH and record.tube and not record.analysis_aborted:
            full, sub, missing = evaluate_tube(record.tube, record.tau_exit, derived_for[record.beta],
                                               delta, target_side)
            record.T_delta_pass[delta_key(delta)] = full
            record.subcritical_pass[delta_key(delta)] = sub
            record.tube_missing = missing
        out.append(record)
    return out


def analyze_study(directory: Union[str, Path], delta: Optional[float] = None) -> ScalingReport:
    """ScalingReport of a study directory, optionally for a new δ."""
    plan = read_plan(directory)
    records = read_records(directory)
    derived_for = {b: derive(plan.params.with_beta(b)) for b in plan.betas}
    if delta is not None:
        records = reevaluate(records, derived_for, delta, plan.target_side)
    return scaling_fit(records, Gamma=derive(plan.params).Gamma,
                       delta=delta if delta is not None else plan.deltas[0])


# Scaling


def _pass_rate(records: List[NucleationRecord], attribute: str, key: Optional[str]) -> Optional[float]:
    flags = []
    for record in records:
        values = getattr(record, attribute)
        if not values or record.analysis_aborted:
            continue
        flags.append(values.get(key) if key in values else next(iter(values.values())))
    return float(np.mean(flags)) if flags else None


def is_monotone(values: Sequence[Optional[float]], increasing: bool) -> Optional[bool]:
    """
    Non-strict trend of the defined values in order.

    Returns:
        bool or None: None when fewer than two values are defined.
    """
    defined = [v for v in values if v is not None and not math.isnan(v)]
    if len(defined) < 2:
        return None
    steps = np.diff(defined)
    return bool(np.all(steps >= 0) if increasing else np.all(steps <= 0))


def scaling_fit(
    records: Sequence[NucleationRecord],
    Gamma: Optional[float] = None,
    min_records: int = 20,
    delta: Optional[float] = None,
) -> ScalingReport:
    """
    Per-β statistics of τ_exit and a least-squares fit of ln(median τ) on β.

    The coalescence fraction and the subcritical pass rate are checked for
    a nonincreasing and a nondecreasing trend over every β. The fit uses the β values with at least ``min_records`` non-truncated
    records and is omitted, with a reason, when fewer than two qualify.
    """
    key = delta_key(delta) if delta is not None else None
    by_beta: Dict[float, List[NucleationRecord]] = {}
    for record in records:
        by_beta.setdefault(record.beta, []).append(record)

    report = ScalingReport()
    fitted, thetas = [], []
    for beta in sorted(by_beta):
        group = by_beta[beta]
        used = [r for r in group if r.exit_mode != ExitMode.TRUNCATED and math.isfinite(r.tau_exit)]
        taus = np.array([r.tau_exit for r in used])
        theta_effs = [r.theta_eff for r in group if math.isfinite(r.theta_eff)]
        summary = BetaSummary(
            beta=beta,
            n_total=len(group),
            n_used=len(used),
            n_truncated=len(group) - len(used),
            mean_theta_eff=float(np.mean(theta_effs)) if theta_effs else math.nan,
        )
        if used:
            summary.median_tau = float(np.median(taus))
            summary.q25_tau, summary.q75_tau = (float(q) for q in np.quantile(taus, [0.25, 0.75]))
            summary.coalescence_fraction = sum(r.exit_mode == ExitMode.COALESCENCE for r in used) / len(used)
            growth = [r for r in used if r.exit_mode == ExitMode.GROWTH]
            summary.tube_pass_rate = _pass_rate(growth, "T_delta_pass", key)
            summary.subcritical_pass_rate = _pass_rate(growth, "subcritical_pass", key)
        report.per_beta.append(summary)
        if len(used) >= min_records:
            fitted.append(summary)
            thetas.extend(r.theta_eff for r in used)

    report.coalescence_nonincreasing = is_monotone(
        [s.coalescence_fraction for s in report.per_beta], increasing=False)
    report.subcritical_pass_nondecreasing = is_monotone(
        [s.subcritical_pass_rate for s in report.per_beta], increasing=True)

    if len(fitted) < 2:
        report.fit_omitted_reason = (
            f"need at least two beta values with {min_records} non-truncated records, "
            f"got {len(fitted)}"
        )
        logger.warning(f"Scaling fit omitted: {report.fit_omitted_reason}")
        return report

    x = np.array([s.beta for s in fitted])
    y = np.log([s.median_tau for s in fitted])
    slope, intercept = np.polyfit(x, y, 1)
    report.slope = float(slope)
    report.intercept = float(intercept)
    report.medians_increasing = bool(np.all(np.diff(y) > 0))
    if Gamma is not None:
        report.target_exponent = Gamma - float(np.mean(thetas))
    return report


def truncation_dominated(records: Sequence[NucleationRecord]) -> bool:
    """More than half of the records are truncated."""
    truncated = sum(r.exit_mode == ExitMode.TRUNCATED for r in records)
    return truncated * 2 > len(records)


# Clouds and histories


class CloudHistories(SleepTracker):
    """
    Rebuilds clouds at fixed epochs along a trajectory and follows the
    nucleation attempt inside each of them.

    At epoch j the clusters holding a sleeping particle are grown by r_j
    on every side and merged with g at distance r_j. A cloud is alive while
    it contains a quasi-square with ℓ1 ≥ 2; its history is tracked through
    one of its particles.
    """

    def __init__(self, derived: DerivedParams, period: float, window: Optional[int] = None):
        super().__init__(derived.D, derived.beta, window=window, interval=period)
        self.derived = derived
        self.census = HistoryCensus()
        self.epoch = 0
        self.last_epoch_time = -math.inf
        self._trackers: Dict[int, int] = {}
        self._next_history = 0
        self._radius_capped = False

    def on_start(self, config: Configuration) -> None:
        super().on_start(config)
        self._epoch(config, config.time)

    def on_sample(self, config: Configuration, t: float) -> None:
        super().on_sample(config, t)
        self._epoch(config, t)

    def on_finish(self, config: Configuration) -> None:
        if config.time > self.last_epoch_time:
            self.sweep(config, config.time)
            self._epoch(config, config.time)
        for history_id in list(self._trackers):
            self._close(history_id, None, "alive")

    def _radius(self, L: int) -> float:
        d = self.derived
        r = cloud_schedule(self.epoch, d.theta, d.kappa, d.beta)
        if r > L / 8.0:
            if not self._radius_capped:
                logger.warning(f"Cloud radius {r:.3g} capped at L/8 = {L / 8.0:.3g}")
                self._radius_capped = True
            r = L / 8.0
        return r

    def _history(self, history_id: int) -> HistoryRecord:
        return self.census.histories[history_id]

    def _emit(self, t: float, kind: str, history_id: int, dims: Optional[Tuple[int, int]]) -> None:
        self.census.events.append(HistoryEvent(time=t, epoch=self.epoch, kind=kind,
                                               history_id=history_id, dims=dims))

    def _close(self, history_id: int, t: Optional[float], outcome: str) -> None:
        history = self._history(history_id)
        history.outcome = outcome
        history.end_time = t
        self._trackers.pop(history_id, None)

    def _epoch(self, config: Configuration, t: float) -> None:
        j = self.epoch
        L = config.L
        r = self._radius(L)
        grow = int(math.floor(r))
        self.last_epoch_time = t
        self.epoch += 1
        self.census.epoch_times.append(t)
        self.census.radii.append(r)

        clusters, _ = clusterise(config)
        asleep = self.sleep.sleeping_ids(t)
        seeds = []
        for cluster in clusters:
            pids = {config.pid_at(s) for s in cluster.sites}
            if cluster.rc is None or not pids & asleep:
                continue
            rc = cluster.rc
            seeds.append(Rectangle(rc.x0 - grow, rc.y0 - grow, rc.w + 2 * grow, rc.h + 2 * grow))
        try:
            if any(2 * (max(s.w, s.h) - 1) >= L for s in seeds):
                raise WrapAmbiguityError(f"grown cluster spans half the L={L} torus")
            seeds = [Rectangle(s.x0 % L, s.y0 % L, s.w, s.h) for s in seeds]
            clouds = aggregate_clouds(seeds, max(r, 1.0), L) if seeds else None
        except WrapAmbiguityError as e:
            logger.warning(f"Epoch {j} skipped: {e}")
            self.census.skipped_epochs.append(j)
            self.census.cloud_counts.append(0)
            self.census.min_cloud_distance.append(None)
            return

        rects = clouds.rectangles if clouds is not None else []
        self.census.cloud_counts.append(len(rects))
        distance = clouds.min_distance() if clouds is not None else None
        self.census.min_cloud_distance.append(None if distance is None else float(distance))

        # contents per cloud: smallest quasi-square, success flag, member ids
        content: List[Dict] = [{"qs": [], "success": False, "pids": set()} for _ in rects]
        for cluster in clusters:
            if cluster.rc is None:
                continue
            k = next((n for n, rect in enumerate(rects) if rect.contains(cluster.rc, L)), None)
            if k is None:
                continue
            qs = cluster.quasi_square
            if qs is not None and qs[0] >= 2:
                content[k]["qs"].append((cluster.volume, qs))
            if (qs is not None and qs[0] >= self.derived.ell_c) or cluster.volume > self.derived.max_volume:
                content[k]["success"] = True
            content[k]["pids"].update(config.pid_at(s) for s in cluster.sites)

        claimed: Dict[int, int] = {}
        for history_id in sorted(self._trackers):
            site = config.site_of(self._trackers[history_id])
            k = clouds.containing(site) if clouds is not None else None
            if k is None or not (content[k]["qs"] or content[k]["success"]):
                self._emit(t, "death", history_id, None)
                self._close(history_id, t, "death")
            elif k in claimed:
                self._emit(t, "death", history_id, None)
                self._close(history_id, t, "merged")
            else:
                claimed[k] = history_id

        for k, cell in enumerate(content):
            if not (cell["qs"] or cell["success"]):
                continue
            dims = min(cell["qs"])[1] if cell["qs"] else None
            if k in claimed:
                history_id = claimed[k]
            else:
                history_id = self._next_history
                self._next_history += 1
                self.census.histories.append(HistoryRecord(history_id=history_id, birth_time=t))
                self._trackers[history_id] = min(cell["pids"])
                self._emit(t, "birth", history_id, dims)
            history = self._history(history_id)
            history.epochs += 1
            if dims is not None and (history.max_dims is None or dims > history.max_dims):
                history.max_dims = dims
            if cell["success"]:
                self._emit(t, "success", history_id, dims)
                self._close(history_id, t, "success")


def epoch_period(derived: DerivedParams) -> float:
    """e^{(Δ−α)β}."""
    return math.exp((derived.Delta - derived.alpha) * derived.beta)


def history_decomposition(
    log: TrajectoryLog,
    derived: DerivedParams,
    period: Optional[float] = None,
    window: Optional[int] = None,
) -> HistoryCensus:
    """
    Offline cloud and history reconstruction of a logged trajectory.

    Args:
        log: Trajectory
        derived: Derived parameters at the trajectory's β
        period: Time between analysis epochs (default e^{(Δ−α)β})
        window: Freeness window for the sleep tracking

    Returns:
        HistoryCensus: Events, per-history summaries and per-epoch cloud data.
    """
    observer = CloudHistories(derived, period or epoch_period(derived), window)
    replay_with(log, [observer])
    return observer.census


def summarize_census(census: HistoryCensus) -> Dict[str, object]:
    """Outcome counts and mean lifetime of the closed histories."""
    outcomes: Dict[str, int] = {}
    lifetimes = []
    for history in census.histories:
        outcomes[history.outcome] = outcomes.get(history.outcome, 0) + 1
        if history.end_time is not None:
            lifetimes.append(history.end_time - history.birth_time)
    return {
        "histories": len(census.histories),
        "outcomes": outcomes,
        "mean_lifetime": float(np.mean(lifetimes)) if lifetimes else None,
        "epochs": len(census.epoch_times),
        "skipped_epochs": len(census.skipped_epochs),
    }
