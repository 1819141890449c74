"""
Rejection-free continuous-time simulation of the Kawasaki dynamics.

Candidate moves are bucketed by their energy cost k = [ΔH]₊/U ∈ {0,1,2,3};
a step draws an exponential waiting time from the total rate, picks a bucket
in proportion to count_k · e^{-kUβ} and a uniform member inside it.
"""

import gzip
import math
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from src.errors import FrozenStateError, MoveError, SnapshotParseError
from src.geometry import (
    Cluster,
    Rectangle,
    SleepState,
    clusterise,
    cluster_at,
    effective_window,
    free_particles,
    update_sleep,
)
from src.lattice import Configuration, snapshot_read, snapshot_write, torus_delta
from src.models import StopRule

logger = logging.getLogger(__name__)

N_BUCKETS = 4


def replica_seed_sequence(master_seed: int, beta_index: int, replica: int) -> np.random.SeedSequence:
    """Seed of one replica: the (beta_index, replica) child of the master seed."""
    return np.random.SeedSequence(master_seed, spawn_key=(beta_index, replica))


def make_rng(seed: Union[int, np.random.SeedSequence, None]) -> np.random.Generator:
    """PCG64 generator for a seed or seed sequence."""
    return np.random.default_rng(seed)


class EventList:
    """
    Rate-class buckets of the valid ordered moves (from occupied, to empty).

    Moves are keyed by ``i_from * L² + i_to`` on flat site indices. Each
    bucket is a list with swap-remove, and ``_where`` maps a key to its
    (bucket, position) for O(1) removal.
    """

    def __init__(self, L: int, beta: float, U: float = 1.0):
        self.L = L
        self.n = L * L
        self.beta = beta
        self.U = U
        self.rates = [math.exp(-k * U * beta) for k in range(N_BUCKETS)]
        self.buckets: List[List[int]] = [[] for _ in range(N_BUCKETS)]
        self._where: Dict[int, Tuple[int, int]] = {}

    @classmethod
    def build(cls, config: Configuration, beta: float, U: float = 1.0) -> "EventList":
        events = cls(config.L, beta, U)
        for i in sorted(config._where.values()):
            events.refresh_site(config, i)
        return events

    # bookkeeping

    def _add(self, key: int, k: int) -> None:
        bucket = self.buckets[k]
        self._where[key] = (k, len(bucket))
        bucket.append(key)

    def _remove(self, key: int) -> None:
        k, pos = self._where.pop(key)
        bucket = self.buckets[k]
        last = bucket.pop()
        if pos < len(bucket):
            bucket[pos] = last
            self._where[last] = (k, pos)

    def _set(self, key: int, k: Optional[int]) -> None:
        current = self._where.get(key)
        if current is not None:
            if current[0] == k:
                return
            self._remove(key)
        if k is not None:
            self._add(key, k)

    def refresh_site(self, config: Configuration, i: int) -> None:
        """Re-evaluate every move originating at flat index i."""
        occ, nbr = config._occ, config._nbr
        if not occ[i]:
            for j in nbr[i]:
                if i * self.n + j in self._where:
                    self._remove(i * self.n + j)
            return
        n_from = sum(occ[m] for m in nbr[i])
        for j in nbr[i]:
            key = i * self.n + j
            if occ[j]:
                self._set(key, None)
            else:
                n_to = sum(occ[m] for m in nbr[j]) - 1
                self._set(key, max(0, n_from - n_to))

    def refresh_around(self, config: Configuration, sites: Sequence[int], radius: int = 2) -> None:
        """Rebucket moves originating within ℓ∞ distance ``radius`` of the sites."""
        L, occ = self.L, config._occ
        span = range(-radius, radius + 1)
        region = set(sites)
        for i in sites:
            x, y = divmod(i, L)
            for dx in span:
                row = ((x + dx) % L) * L
                for dy in span:
                    j = row + (y + dy) % L
                    # empty sites own no moves unless they were just vacated
                    if occ[j]:
                        region.add(j)
        for i in sorted(region):
            self.refresh_site(config, i)

    # queries

    @property
    def counts(self) -> List[int]:
        return [len(b) for b in self.buckets]

    @property
    def total_rate(self) -> float:
        return sum(len(b) * r for b, r in zip(self.buckets, self.rates))

    def __len__(self) -> int:
        return len(self._where)

    def moves(self) -> Dict[Tuple[int, int], int]:
        """(i_from, i_to) → bucket, for comparisons with a rebuild."""
        return {divmod(key, self.n): k for key, (k, _) in self._where.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventList):
            return NotImplemented
        return self.L == other.L and self.moves() == other.moves()

    def draw(self, rng: np.random.Generator) -> Tuple[int, int, float]:
        """
        Draw the next move without applying it.

        Returns:
            tuple: (i_from, i_to, dt)

        Raises:
            FrozenStateError: If the total rate is zero.
        """
        total = self.total_rate
        if total <= 0.0:
            raise FrozenStateError("no particle has an empty neighbour")
        dt = rng.exponential(1.0 / total)
        u = rng.random() * total
        k = N_BUCKETS - 1
        for b in range(N_BUCKETS):
            weight = len(self.buckets[b]) * self.rates[b]
            if u < weight:
                k = b
                break
            u -= weight
        bucket = self.buckets[k]
        while not bucket:
            k -= 1
            bucket = self.buckets[k]
        key = bucket[min(int(rng.random() * len(bucket)), len(bucket) - 1)]
        i_from, i_to = divmod(key, self.n)
        return i_from, i_to, dt


def build_event_list(config: Configuration, beta: float, U: float = 1.0) -> EventList:
    """Enumerate every valid move of a configuration into its rate bucket."""
    return EventList.build(config, beta, U)


@dataclass(frozen=True)
class EventRecord:
    """One applied exchange."""
    t: float
    from_x: int
    from_y: int
    to_x: int
    to_y: int
    pid: int
    dH: int
    tags: Tuple[str, ...] = ()

    @property
    def frm(self) -> Tuple[int, int]:
        return self.from_x, self.from_y

    @property
    def to(self) -> Tuple[int, int]:
        return self.to_x, self.to_y

    def to_line(self) -> str:
        fields = [repr(self.t), str(self.from_x), str(self.from_y), str(self.to_x),
                  str(self.to_y), str(self.pid), str(self.dH), *self.tags]
        return " ".join(fields)


@dataclass
class TrajectoryLog:
    """
    Append-only record of a run.

    Attributes:
        initial: Snapshot text of the starting configuration
        records: Applied exchanges, strictly increasing in time
        stop_reason: horizon, exit_R, cluster_volume, max_events, an
            observer's reason (quasi_square) or none
        truncated: True when the event cap ended the run
        final_time: Clock value when the run stopped
    """
    initial: str
    records: List[EventRecord] = field(default_factory=list)
    stop_reason: str = "none"
    truncated: bool = False
    final_time: float = 0.0

    def append(self, record: EventRecord) -> None:
        if self.records and record.t <= self.records[-1].t:
            raise ValueError(f"log times must increase: {record.t} after {self.records[-1].t}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)


class Observer:
    """
    Hook into a running simulation.

    ``on_event`` runs after every applied move; ``on_sample`` runs at the
    multiples of ``interval`` (if set) with the configuration valid at
    that time. Setting ``stop_reason`` ends a ``run_until`` loop after the
    current event.
    """
    interval: Optional[float] = None
    stop_reason: Optional[str] = None

    def on_start(self, config: Configuration) -> None:
        pass

    def on_event(self, config: Configuration, record: EventRecord, clusters_changed: bool) -> None:
        pass

    def on_sample(self, config: Configuration, t: float) -> None:
        pass

    def on_finish(self, config: Configuration) -> None:
        pass


@dataclass(frozen=True)
class QuasiSquareSighting:
    dims: Tuple[int, int]
    x0: int
    y0: int
    w: int
    h: int


class QuasiSquareTimeline(Observer):
    """
    Inventory of quasi-square clusters over time.

    ``entries`` holds (time, sightings, largest volume) each time the
    inventory changes; an entry is valid until the next one. The census is
    retaken after moves that touch a cluster of volume at least
    ``GATE_VOLUME`` and at every sampling time when ``interval`` is set.
    The baricenter of the first cluster reaching ``trigger_volume`` is kept
    as ``trigger_center``.
    """
    GATE_VOLUME = 4

    def __init__(self, trigger_volume: Optional[int] = None, interval: Optional[float] = None):
        self.trigger_volume = trigger_volume
        self.interval = interval
        self.gate = min(self.GATE_VOLUME, trigger_volume or self.GATE_VOLUME)
        self.entries: List[Tuple[float, Tuple[QuasiSquareSighting, ...], int]] = []
        self.trigger_time: Optional[float] = None
        self.trigger_center: Optional[Tuple[float, float]] = None
        self.trigger_ambiguous = False
        self.stop_dims: Optional[Tuple[int, int]] = None
        self.stop_box: Optional[Rectangle] = None
        self.stop_L: Optional[int] = None
        self.stop_reason: Optional[str] = None

    def _snapshot(self, config: Configuration, t: Optional[float] = None) -> None:
        clusters, _ = clusterise(config)
        sightings = tuple(
            QuasiSquareSighting(c.quasi_square, c.rc.x0, c.rc.y0, c.rc.w, c.rc.h)
            for c in clusters if c.quasi_square is not None
        )
        largest = max((c.volume for c in clusters), default=0)
        if self.entries and self.entries[-1][1:] == (sightings, largest):
            return
        self.entries.append((config.time if t is None else t, sightings, largest))
        self._check_trigger(config, clusters)
        self._check_stop()

    def _check_trigger(self, config: Configuration, clusters: List[Cluster]) -> None:
        if self.trigger_volume is None or self.trigger_time is not None:
            return
        big = [c for c in clusters if c.volume >= self.trigger_volume]
        if big:
            cluster = max(big, key=lambda c: c.volume)
            self.trigger_time = config.time
            self.trigger_center = cluster.baricenter
            self.trigger_ambiguous = cluster.wrap_ambiguous

    def _check_stop(self) -> None:
        if self.stop_dims is None or not self.entries:
            return
        L = self.stop_L
        for s in self.entries[-1][1]:
            if s.dims != self.stop_dims:
                continue
            if self.stop_box is None or self.stop_box.contains(Rectangle(s.x0, s.y0, s.w, s.h), L):
                self.stop_reason = "quasi_square"
                return

    def stop_at(self, dims: Tuple[int, int], L: int, box: Optional[Rectangle] = None) -> None:
        """
        Request a stop once a quasi-square of ``dims`` is seen inside ``box``
        (anywhere when None). The latest entry is checked at once.
        """
        self.stop_dims = (min(dims), max(dims))
        self.stop_box = box
        self.stop_L = L
        self.stop_reason = None
        self._check_stop()

    def touches_gate(self, config: Configuration, record: EventRecord) -> bool:
        """
        True when the move touched a cluster of volume at least ``gate``.

        The mover's old cluster lies inside the components meeting its old
        site, and the mover now sits on one of those sites.
        """
        seen: Set[int] = set()
        for site in config.neighbours(record.frm):
            if config.is_occupied(site) and config.index(site) not in seen:
                seen |= cluster_at(config, site, limit=self.gate)
                if len(seen) >= self.gate:
                    return True
        return False

    def on_start(self, config: Configuration) -> None:
        if not self.entries:
            self._snapshot(config)

    def on_event(self, config: Configuration, record: EventRecord, clusters_changed: bool) -> None:
        if clusters_changed and self.touches_gate(config, record):
            self._snapshot(config)

    def on_sample(self, config: Configuration, t: float) -> None:
        self._snapshot(config, t)


class SleepTracker(Observer):
    """
    Maintains a SleepState along a trajectory.

    After each move, loose particles within ℓ∞ distance w + 1 of the two
    changed sites are re-classified; a full peeling sweep runs at every
    sampling time.
    """

    def __init__(self, D: float, beta: float, window: Optional[int] = None, interval: Optional[float] = None):
        self.D = D
        self.beta = beta
        self.window = window
        self.interval = interval
        self.sleep: Optional[SleepState] = None
        self.free: set = set()

    def on_start(self, config: Configuration) -> None:
        self.sleep = SleepState.start(config, self.D, self.beta)
        self.sweep(config, config.time)

    def sweep(self, config: Configuration, t: float) -> None:
        report = free_particles(config, self.window)
        self.free = report.free
        update_sleep(self.sleep, report, t)

    def on_event(self, config: Configuration, record: EventRecord, clusters_changed: bool) -> None:
        t = config.time
        # free until the move, so stamped before the set is refreshed
        for pid in self.free:
            self.sleep.last_free[pid] = t

        L = config.L
        reach = effective_window(self.window, L) + 1
        near = set()
        for pid, site in config.particles().items():
            for ref in (record.frm, record.to):
                if max(abs(torus_delta(ref[0], site.x, L)), abs(torus_delta(ref[1], site.y, L))) <= reach:
                    near.add(pid)
                    break
        local = free_particles(config, self.window, candidates=near, assume_free=self.free - near)
        self.free = (self.free - near) | (local.free & near)
        for pid in self.free:
            self.sleep.last_free[pid] = t
        self.sleep.updated_at = t

    def on_sample(self, config: Configuration, t: float) -> None:
        self.sweep(config, t)


def _cluster_volume_reached(config: Configuration, i_to: int, threshold: int) -> bool:
    return len(cluster_at(config, config.site(i_to), limit=threshold)) >= threshold


def apply_move(config: Configuration, events: EventList, i_from: int, i_to: int, dt: float) -> EventRecord:
    """Apply a drawn move, advance the clock and rebucket around it."""
    n_from = config.occupied_neighbours(i_from, i_to)
    n_to = config.occupied_neighbours(i_to, i_from)
    pid = config.exchange(i_from, i_to)
    config.advance(dt)
    events.refresh_around(config, (i_from, i_to))
    fx, fy = divmod(i_from, config.L)
    tx, ty = divmod(i_to, config.L)
    return EventRecord(config.time, fx, fy, tx, ty, pid, n_from - n_to)


def step(config: Configuration, events: EventList, rng: np.random.Generator) -> Tuple[EventRecord, float]:
    """
    Perform one rejection-free step.

    Returns:
        tuple: (applied event, waiting time)

    Raises:
        FrozenStateError: If no move is possible.
    """
    i_from, i_to, dt = events.draw(rng)
    return apply_move(config, events, i_from, i_to, dt), dt


def clusters_changed(n_from: int, n_to: int) -> bool:
    """A move changes the clusterised part iff the mover had or gains a neighbour."""
    return n_from > 0 or n_to > 0


class _SampleClock:
    """Next sampling time of every observer that has an interval."""

    def __init__(self, observers: Sequence[Observer], t0: float):
        self.observers = [obs for obs in observers if obs.interval]
        self.next = [t0 + obs.interval for obs in self.observers]

    def fire(self, config: Configuration, until: float) -> None:
        """Run on_sample for every sampling time up to ``until``."""
        for k, obs in enumerate(self.observers):
            while self.next[k] <= until:
                obs.on_sample(config, self.next[k])
                self.next[k] += obs.interval


def run_until(
    config: Configuration,
    stop: StopRule,
    rng: np.random.Generator,
    beta: float,
    U: float = 1.0,
    observers: Sequence[Observer] = (),
    events: Optional[EventList] = None,
    log: Optional[TrajectoryLog] = None,
) -> TrajectoryLog:
    """
    Simulate until a stop condition fires.

    The horizon stops the run before any event past it is applied; the
    cluster-volume condition is checked after every move that attaches
    the mover; an observer may end the run by setting its stop_reason; the
    event cap marks the log truncated.

    Args:
        config: Configuration, advanced in place
        stop: Stop rule
        rng: Random generator
        beta: Inverse temperature
        U: Binding energy
        observers: Hooks called per event and at their sampling times
        events: Event list to continue with (rebuilt when None)
        log: Log to append to (a new one when None)

    Returns:
        TrajectoryLog: Records plus the stop reason.
    """
    if log is None:
        log = TrajectoryLog(initial=snapshot_write(config))
    if events is None:
        events = build_event_list(config, beta, U)
    for obs in observers:
        obs.on_start(config)
    clock = _SampleClock(observers, config.time)
    n_events = 0
    horizon = stop.horizon
    threshold = stop.cluster_volume
    volume_reason = "exit_R" if stop.exit_R else "cluster_volume"

    reason = None
    if horizon is not None and horizon <= config.time:
        reason = "horizon"
    elif threshold is not None and _max_volume_at_least(config, threshold):
        reason = volume_reason
    else:
        reason = _observer_stop(observers)

    while reason is None:
        if stop.max_events is not None and n_events >= stop.max_events:
            reason = "max_events"
            log.truncated = True
            break
        i_from, i_to, dt = events.draw(rng)
        t_next = config.time + dt
        if horizon is not None and t_next > horizon:
            clock.fire(config, horizon)
            config.time = max(config.time, horizon)
            reason = "horizon"
            break
        clock.fire(config, t_next)
        n_from = config.occupied_neighbours(i_from, i_to)
        n_to = config.occupied_neighbours(i_to, i_from)
        record = apply_move(config, events, i_from, i_to, dt)
        log.append(record)
        n_events += 1
        changed = clusters_changed(n_from, n_to)
        for obs in observers:
            obs.on_event(config, record, changed)
        if threshold is not None and n_to > 0 and _cluster_volume_reached(config, i_to, threshold):
            reason = volume_reason
        elif reason is None:
            reason = _observer_stop(observers)

    log.stop_reason = reason
    log.final_time = config.time
    for obs in observers:
        obs.on_finish(config)
    return log


def _observer_stop(observers: Sequence[Observer]) -> Optional[str]:
    return next((obs.stop_reason for obs in observers if obs.stop_reason), None)


def _max_volume_at_least(config: Configuration, threshold: int) -> bool:
    clusters, _ = clusterise(config)
    return any(c.volume >= threshold for c in clusters)


def replay(
    log: TrajectoryLog,
    before_move: Optional[Callable[[float, Configuration], None]] = None,
) -> Iterator[Tuple[Configuration, EventRecord, bool]]:
    """
    Re-apply a logged trajectory to its initial snapshot.

    Args:
        log: Trajectory to replay
        before_move: Called with (event time, configuration) before each move

    Yields:
        tuple: (configuration after the move, record, clusters_changed);
            the configuration object is shared and mutated between yields.

    Raises:
        MoveError: If a record does not match the replayed configuration.
    """
    config = snapshot_read(log.initial)
    for record in log.records:
        if before_move is not None:
            before_move(record.t, config)
        i_from, i_to = config.index(record.frm), config.index(record.to)
        if config.pid_at(record.frm) != record.pid or config._occ[i_to]:
            raise MoveError(f"logged move at t={record.t} does not match the configuration")
        n_from = config.occupied_neighbours(i_from, i_to)
        n_to = config.occupied_neighbours(i_to, i_from)
        config.exchange(i_from, i_to)
        config.time = record.t
        yield config, record, clusters_changed(n_from, n_to)


def replay_with(log: TrajectoryLog, observers: Sequence[Observer]) -> Configuration:
    """Drive observers along a logged trajectory; returns the final configuration."""
    config = snapshot_read(log.initial)
    started = False
    clock: Optional[_SampleClock] = None
    final = config

    def before_move(t: float, current: Configuration) -> None:
        nonlocal started, clock
        if not started:
            for obs in observers:
                obs.on_start(current)
            clock = _SampleClock(observers, current.time)
            started = True
        clock.fire(current, t)

    for final, record, changed in replay(log, before_move):
        for obs in observers:
            obs.on_event(final, record, changed)
    if not started:
        before_move(final.time, final)
    clock.fire(final, log.final_time)
    final.time = max(final.time, log.final_time)
    for obs in observers:
        obs.on_finish(final)
    return final

# Log files


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def write_log(log: TrajectoryLog, path: Union[str, Path]) -> None:
    """
    Write a trajectory log; a ``.gz`` suffix selects gzip.

    The file starts with ``#`` header lines (stop reason, truncation, final
    clock and the initial snapshot) followed by one record per line:
    ``t from_x from_y to_x to_y pid dH_over_U [tags...]``.
    """
    path = Path(path)
    with _open(path, "w") as fh:
        fh.write(f"# stop {log.stop_reason}\n")
        fh.write(f"# truncated {int(log.truncated)}\n")
        fh.write(f"# final_time {log.final_time!r}\n")
        for line in log.initial.splitlines():
            fh.write(f"# snapshot {line}\n")
        for record in log.records:
            fh.write(record.to_line() + "\n")
    logger.info(f"Wrote {len(log.records)} events to {path}")


def parse_log(lines: Sequence[str]) -> TrajectoryLog:
    """
    Parse the text of a trajectory log.

    Raises:
        SnapshotParseError: With the offending line number.
    """
    header: Dict[str, str] = {}
    snapshot: List[str] = []
    records: List[EventRecord] = []
    first_snapshot_line = 1
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, _, value = body.partition(" ")
            if key == "snapshot":
                if not snapshot:
                    first_snapshot_line = line_no
                snapshot.append(value)
            else:
                header[key] = value
            continue
        tokens = line.split()
        if len(tokens) < 7:
            raise SnapshotParseError("expected 't from_x from_y to_x to_y pid dH_over_U'", line_no)
        try:
            record = EventRecord(
                float(tokens[0]), *(int(tok) for tok in tokens[1:7]), tags=tuple(tokens[7:]),
            )
        except ValueError:
            raise SnapshotParseError("bad number in event record", line_no)
        if records and record.t <= records[-1].t:
            raise SnapshotParseError("event times must increase", line_no)
        records.append(record)

    if not snapshot:
        raise SnapshotParseError("missing initial snapshot", 1)
    initial = "\n".join(snapshot) + "\n"
    snapshot_read(initial, first_line=first_snapshot_line)
    try:
        final_time = float(header.get("final_time", records[-1].t if records else 0.0))
        truncated = bool(int(header.get("truncated", "0")))
    except ValueError:
        raise SnapshotParseError("bad header value", 1)
    return TrajectoryLog(
        initial=initial,
        records=records,
        stop_reason=header.get("stop", "none"),
        truncated=truncated,
        final_time=final_time,
    )


def read_log(path: Union[str, Path]) -> TrajectoryLog:
    path = Path(path)
    with _open(path, "r") as fh:
        log = parse_log(fh.read().splitlines())
    logger.info(f"Read {len(log.records)} events from {path}")
    return log
