"""
Droplet geometry.

Clusters and quasi-squares, circumscribed rectangles on the torus, the
free/trapped classification by iterative peeling, sleeping bookkeeping,
membership in R and R', thickening, and the cloud aggregation map with its
radius schedule.
"""

import math
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from src.config import SimulationConfig
from src.errors import BookkeepingError, SnapshotParseError, WrapAmbiguityError
from src.lattice import Configuration, Site, snapshot_read, torus_delta
from src.models import DerivedParams

logger = logging.getLogger(__name__)

CLUSTERISED = "clusterised"
FREE = "free"
TRAPPED = "trapped"
STATUSES = (CLUSTERISED, FREE, TRAPPED)


@dataclass(frozen=True)
class Rectangle:
    """
    Axis-aligned lattice rectangle [x0, x0+w-1] × [y0, y0+h-1].

    On a torus the anchor (x0, y0) is normalised to [0, L) and the far
    corner is kept unwrapped, so it may exceed L - 1.
    """
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rectangle sides must be positive, got {self.w}x{self.h}")

    @property
    def width(self) -> int:
        return self.w

    @property
    def height(self) -> int:
        return self.h

    @property
    def min_corner(self) -> Tuple[int, int]:
        return self.x0, self.y0

    @property
    def max_corner(self) -> Tuple[int, int]:
        return self.x0 + self.w - 1, self.y0 + self.h - 1

    @property
    def area(self) -> int:
        return self.w * self.h

    def sites(self, L: Optional[int] = None) -> Set[Site]:
        out = set()
        for dx in range(self.w):
            for dy in range(self.h):
                x, y = self.x0 + dx, self.y0 + dy
                out.add(Site(x % L, y % L) if L else Site(x, y))
        return out

    def contains(self, other: "Rectangle", L: Optional[int] = None) -> bool:
        return (_interval_contains(self.x0, self.w, other.x0, other.w, L)
                and _interval_contains(self.y0, self.h, other.y0, other.h, L))

    def contains_site(self, site: Tuple[int, int], L: Optional[int] = None) -> bool:
        return self.contains(Rectangle(site[0], site[1], 1, 1), L)

    def distance(self, other: "Rectangle", L: Optional[int] = None) -> int:
        """ℓ∞ distance between the two site sets (0 when they overlap)."""
        return max(_interval_gap(self.x0, self.w, other.x0, other.w, L),
                   _interval_gap(self.y0, self.h, other.y0, other.h, L))

    def union(self, other: "Rectangle", L: Optional[int] = None) -> "Rectangle":
        """
        Circumscribed rectangle of both rectangles.

        Raises:
            WrapAmbiguityError: If on the torus the union spans at least L/2.
        """
        x0, w = _interval_union(self.x0, self.w, other.x0, other.w, L)
        y0, h = _interval_union(self.y0, self.h, other.y0, other.h, L)
        return Rectangle(x0, y0, w, h)


def _interval_contains(a: int, wa: int, b: int, wb: int, L: Optional[int]) -> bool:
    offset = b - a if L is None else (b - a) % L
    return 0 <= offset and offset + wb <= wa


def _interval_gap(a: int, wa: int, b: int, wb: int, L: Optional[int]) -> int:
    if L is None:
        return max(0, b - (a + wa - 1), a - (b + wb - 1))
    if (b - a) % L < wa or (a - b) % L < wb:
        return 0
    return min((b - (a + wa - 1)) % L, (a - (b + wb - 1)) % L)


def _interval_union(a: int, wa: int, b: int, wb: int, L: Optional[int]) -> Tuple[int, int]:
    if L is None:
        lo, hi = min(a, b), max(a + wa, b + wb)
        return lo, hi - lo
    from_a = max(wa, (b - a) % L + wb)
    from_b = max(wb, (a - b) % L + wa)
    start, length = (a, from_a) if from_a <= from_b else (b, from_b)
    if 2 * (length - 1) >= L:
        raise WrapAmbiguityError(f"union of intervals spans {length} of {L} sites")
    return start % L, length


def _circular_span(coords: Iterable[int], L: Optional[int]) -> Tuple[int, int]:
    """Smallest interval (start, length) covering the coordinates."""
    values = sorted(set(coords))
    if L is None:
        return values[0], values[-1] - values[0] + 1
    gaps = [(values[0] + L - values[-1], values[0])]
    gaps.extend((values[i + 1] - values[i], values[i + 1]) for i in range(len(values) - 1))
    largest, start = max(gaps)
    return start % L, L - largest + 1


def circumscribed_rectangle(sites: Iterable[Tuple[int, int]], L: Optional[int] = None) -> Rectangle:
    """
    Smallest axis-aligned rectangle containing ``sites``.

    Args:
        sites: Non-empty collection of sites
        L: Torus side, or None for the plane

    Raises:
        WrapAmbiguityError: If on the torus the diameter along an axis is at least L/2.
    """
    sites = list(sites)
    if not sites:
        raise ValueError("circumscribed rectangle of an empty set")
    x0, w = _circular_span((s[0] for s in sites), L)
    y0, h = _circular_span((s[1] for s in sites), L)
    if L is not None and 2 * (max(w, h) - 1) >= L:
        raise WrapAmbiguityError(f"site set of extent {w}x{h} is ambiguous on an L={L} torus")
    return Rectangle(x0, y0, w, h)


@dataclass
class Cluster:
    """A connected set of at least two occupied sites."""
    sites: FrozenSet[Site]
    rc: Optional[Rectangle]
    L: int
    wrap_ambiguous: bool = False

    @property
    def volume(self) -> int:
        return len(self.sites)

    @property
    def quasi_square(self) -> Optional[Tuple[int, int]]:
        if self.rc is None or self.rc.area != self.volume or abs(self.rc.w - self.rc.h) > 1:
            return None
        return min(self.rc.w, self.rc.h), max(self.rc.w, self.rc.h)

    @property
    def baricenter(self) -> Optional[Tuple[float, float]]:
        """Mean of the unwrapped coordinates, normalised to the torus."""
        if self.rc is None:
            return None
        xs = [self.rc.x0 + (s.x - self.rc.x0) % self.L for s in self.sites]
        ys = [self.rc.y0 + (s.y - self.rc.y0) % self.L for s in self.sites]
        return float(np.mean(xs)) % self.L, float(np.mean(ys)) % self.L


def _make_cluster(sites: FrozenSet[Site], L: int) -> Cluster:
    try:
        return Cluster(sites=sites, rc=circumscribed_rectangle(sites, L), L=L)
    except WrapAmbiguityError:
        return Cluster(sites=sites, rc=None, L=L, wrap_ambiguous=True)


def clusterised_mask(config: Configuration) -> np.ndarray:
    """Occupied sites with at least one occupied nearest neighbour."""
    occ = config.occupancy
    if config.L == 1:
        return np.zeros_like(occ)
    near = (np.roll(occ, 1, 0) | np.roll(occ, -1, 0) | np.roll(occ, 1, 1) | np.roll(occ, -1, 1))
    return occ & near


def clusterise(config: Configuration) -> Tuple[List[Cluster], Set[Site]]:
    """
    Connected components of the clusterised part of a configuration.

    Returns:
        tuple: (clusters ordered by their smallest flat index, single sites)
    """
    L = config.L
    occ = config.occupancy
    if L == 1:
        return [], {Site(0, 0)} if occ[0, 0] else set()

    n = L * L
    index = np.arange(n).reshape(L, L)
    rows, cols = [], []
    for axis in (0, 1):
        bonded = occ & np.roll(occ, -1, axis)
        rows.append(index[bonded])
        cols.append(np.roll(index, -1, axis)[bonded])
    rows, cols = np.concatenate(rows), np.concatenate(cols)

    clustered = clusterised_mask(config).ravel()
    singles = {Site(int(i) // L, int(i) % L) for i in np.flatnonzero(occ.ravel() & ~clustered)}
    if rows.size == 0:
        return [], singles

    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    members: Dict[int, List[int]] = {}
    for i in np.flatnonzero(clustered):
        members.setdefault(int(labels[i]), []).append(int(i))
    clusters = [
        _make_cluster(frozenset(Site(i // L, i % L) for i in flat), L)
        for flat in sorted(members.values(), key=min)
    ]
    return clusters, singles


def cluster_at(config: Configuration, site: Tuple[int, int], limit: Optional[int] = None) -> Set[int]:
    """
    Flat indices of the occupied component containing ``site``.

    The search stops early once ``limit`` sites have been collected.
    """
    start = config.index(site)
    if not config._occ[start]:
        return set()
    occ, nbr = config._occ, config._nbr
    seen = {start}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in nbr[i]:
            if occ[j] and j not in seen:
                seen.add(j)
                if limit is not None and len(seen) >= limit:
                    return seen
                queue.append(j)
    return seen


def max_cluster_volume(config: Configuration) -> int:
    """Largest cluster volume, 0 when there is no cluster."""
    clusters, _ = clusterise(config)
    return max((c.volume for c in clusters), default=0)


def quasi_square_census(clusters: Iterable[Cluster]) -> Counter:
    """Number of clusters per quasi-square dimensions."""
    return Counter(c.quasi_square for c in clusters if c.quasi_square is not None)


def in_R(config: Configuration, derived: DerivedParams) -> bool:
    """Every cluster has volume at most ℓ_c(ℓ_c − 1) + 2."""
    return max_cluster_volume(config) <= derived.max_volume


def in_Rprime(config: Configuration, derived: DerivedParams) -> bool:
    """As in_R, except for at most one cluster of volume below λ(β)/8."""
    clusters, _ = clusterise(config)
    violators = [c.volume for c in clusters if c.volume > derived.max_volume]
    if not violators:
        return True
    return len(violators) == 1 and violators[0] < derived.lambda_beta / 8.0


# Freeness


@dataclass
class FreenessReport:
    """
    Peeling classification of every particle.

    Attributes:
        status: Particle id → clusterised, free or trapped
        window: Window radius actually used
        rounds: Particle ids freed in each peeling round
        paths: Escape path (list of sites, start first) of every free particle
        reach: Number of sites a trapped particle could still visit
    """
    status: Dict[int, str]
    window: int
    rounds: List[List[int]] = field(default_factory=list)
    paths: Dict[int, List[Site]] = field(default_factory=dict)
    reach: Dict[int, int] = field(default_factory=dict)

    def ids(self, status: str) -> Set[int]:
        return {pid for pid, s in self.status.items() if s == status}

    @property
    def free(self) -> Set[int]:
        return self.ids(FREE)

    @property
    def trapped(self) -> Set[int]:
        return self.ids(TRAPPED)

    @property
    def clusterised(self) -> Set[int]:
        return self.ids(CLUSTERISED)


def effective_window(window: Optional[int], L: int) -> int:
    """Peeling window, defaulting to the configured one and clamped to (L - 1) // 2."""
    w = window if window is not None else SimulationConfig.FREENESS_WINDOW
    return max(1, min(w, (L - 1) // 2))


def _escape_path(
    config: Configuration,
    start: int,
    obstacles: Set[int],
    w: int,
) -> Tuple[Optional[List[int]], int]:
    """
    Breadth-first search for a single-particle escape to ℓ∞ distance w.

    Every site after the start must be neither an obstacle nor adjacent to
    one; the particle's own start site is not an obstacle.

    Returns:
        tuple: (path of flat indices or None, number of sites reached)
    """
    L, nbr = config.L, config._nbr
    sx, sy = divmod(start, L)
    blocked_cache: Dict[int, bool] = {}

    def blocked(i: int) -> bool:
        if i not in blocked_cache:
            blocked_cache[i] = (i in obstacles) or any(j in obstacles for j in nbr[i])
        return blocked_cache[i]

    parent = {start: -1}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        x, y = divmod(i, L)
        if max(abs(torus_delta(sx, x, L)), abs(torus_delta(sy, y, L))) == w:
            path = []
            while i != -1:
                path.append(i)
                i = parent[i]
            return path[::-1], len(parent)
        for j in nbr[i]:
            if j in parent or blocked(j):
                continue
            jx, jy = divmod(j, L)
            if max(abs(torus_delta(sx, jx, L)), abs(torus_delta(sy, jy, L))) > w:
                continue
            parent[j] = i
            queue.append(j)
    return None, len(parent)


def free_particles(
    config: Configuration,
    window: Optional[int] = None,
    candidates: Optional[Iterable[int]] = None,
    assume_free: Optional[Iterable[int]] = None,
) -> FreenessReport:
    """
    Classify particles as clusterised, free or trapped by iterative peeling.

    Each round, obstacles are the clusterised sites plus every non-clusterised
    particle not yet freed. A particle is freed when it can walk, inside the
    window around its start, to ℓ∞ distance ``window`` without ever standing
    on or next to an obstacle. Rounds repeat until nothing changes.

    Args:
        config: Configuration to classify
        window: Window radius w (default SimulationConfig.FREENESS_WINDOW),
            clamped to (L - 1) // 2 on small tori
        candidates: Restrict the test to these particle ids (event-local
            refresh); other non-clusterised particles keep their role
        assume_free: Non-clusterised particles already known to be free,
            which are not obstacles

    Returns:
        FreenessReport: Status of every particle plus the peeling record.
    """
    w = effective_window(window, config.L)
    mask = clusterised_mask(config).ravel()

    status: Dict[int, str] = {}
    obstacles: Set[int] = set()
    loose: Dict[int, int] = {}
    for pid, site in config.particles().items():
        i = config.index(site)
        if mask[i]:
            status[pid] = CLUSTERISED
            obstacles.add(i)
        else:
            loose[pid] = i

    known = set(assume_free or ()) & set(loose)
    pending = set(loose) if candidates is None else (set(candidates) & set(loose)) - known
    for pid in known:
        status[pid] = FREE
    obstacles.update(i for pid, i in loose.items() if pid not in known)

    report = FreenessReport(status=status, window=w)
    reach: Dict[int, int] = {}
    while pending:
        freed = []
        for pid in sorted(pending):
            start = loose[pid]
            path, reached = _escape_path(config, start, obstacles - {start}, w)
            if path is None:
                reach[pid] = reached
            else:
                freed.append(pid)
                report.paths[pid] = [config.site(i) for i in path]
        if not freed:
            break
        report.rounds.append(freed)
        for pid in freed:
            status[pid] = FREE
            obstacles.discard(loose[pid])
            pending.discard(pid)
            reach.pop(pid, None)

    for pid in pending:
        status[pid] = TRAPPED
    # particles outside the candidate set that were not assumed free keep
    # an unknown role; report them as trapped so the report covers everyone
    for pid in loose:
        status.setdefault(pid, TRAPPED)
    report.reach = {pid: reach.get(pid, 0) for pid in pending}
    return report


def load_fixture(text: str) -> Tuple[Configuration, Dict[int, str]]:
    """
    Parse a fixture: a snapshot followed by ``expect <id> <status>`` lines.

    Lines starting with ``#`` are comments.

    Raises:
        SnapshotParseError: With the offending line number.
    """
    snapshot_lines: List[str] = []
    expectations: Dict[int, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            snapshot_lines.append("")
            continue
        if line.startswith("expect"):
            tokens = line.split()
            if len(tokens) != 3 or tokens[2] not in STATUSES:
                raise SnapshotParseError("expected 'expect <id> <status>'", line_no)
            try:
                expectations[int(tokens[1])] = tokens[2]
            except ValueError:
                raise SnapshotParseError("non-integer particle id", line_no)
            snapshot_lines.append("")
            continue
        snapshot_lines.append(line)
    return snapshot_read("\n".join(snapshot_lines)), expectations


# Sleeping


@dataclass
class SleepState:
    """
    Last time each particle was free.

    A particle is sleeping at time t when t - last_free ≥ threshold, with
    threshold = e^{Dβ}; otherwise it is active.
    """
    threshold: float
    last_free: Dict[int, float] = field(default_factory=dict)
    updated_at: float = 0.0

    @classmethod
    def start(
        cls,
        config: Configuration,
        D: float,
        beta: float,
        clusters: Optional[List[Cluster]] = None,
        t0: Optional[float] = None,
    ) -> "SleepState":
        """
        Initial declaration: particles of quasi-squares with ℓ1 ≥ 2 start
        asleep, everything else starts active.
        """
        t0 = config.time if t0 is None else t0
        threshold = math.exp(D * beta)
        if clusters is None:
            clusters, _ = clusterise(config)
        asleep = set()
        for cluster in clusters:
            qs = cluster.quasi_square
            if qs is not None and qs[0] >= 2:
                asleep.update(config.index(s) for s in cluster.sites)
        last_free = {
            pid: (t0 - threshold if config.index(site) in asleep else t0)
            for pid, site in config.particles().items()
        }
        return cls(threshold=threshold, last_free=last_free, updated_at=t0)

    def add(self, pid: int, t: float) -> None:
        """Register a new particle; it starts active."""
        self.last_free[pid] = t

    def sleeping(self, pid: int, t: float) -> bool:
        if pid not in self.last_free:
            raise BookkeepingError(f"unknown particle id {pid}")
        return t - self.last_free[pid] >= self.threshold

    def active(self, pid: int, t: float) -> bool:
        return not self.sleeping(pid, t)

    def sleeping_ids(self, t: float) -> Set[int]:
        return {pid for pid, last in self.last_free.items() if t - last >= self.threshold}


def update_sleep(sleep: SleepState, report: FreenessReport, t: float) -> SleepState:
    """
    Stamp every currently free particle with time t.

    Raises:
        BookkeepingError: If the report names a particle the state does not know.
        ValueError: If t precedes the previous update.
    """
    if t < sleep.updated_at:
        raise ValueError(f"sleep update at t={t} precedes the previous one at {sleep.updated_at}")
    for pid in report.status:
        if pid not in sleep.last_free:
            raise BookkeepingError(f"unknown particle id {pid}")
    for pid in report.free:
        sleep.last_free[pid] = t
    sleep.updated_at = t
    return sleep


def active_box_diagnostic(
    config: Configuration,
    sleep: SleepState,
    S_exponent: float,
    beta: float,
    t: Optional[float] = None,
) -> int:
    """
    Maximum number of active particles in a tile of side ⌈e^{Sβ/2}⌉.

    The condition "at most three active particles per box" holds iff the
    returned value is ≤ 3.
    """
    t = config.time if t is None else t
    side = max(1, math.ceil(math.exp(S_exponent * beta / 2.0)))
    counts: Counter = Counter()
    for pid, site in config.particles().items():
        if sleep.active(pid, t):
            counts[(site.x // side, site.y // side)] += 1
    return max(counts.values(), default=0)


# Thickening and clouds


def thicken(
    sites: Iterable[Tuple[int, int]],
    s: float,
    beta: float,
    L: int,
) -> Tuple[Set[Site], bool]:
    """
    [A, s]: all sites within ℓ∞ distance e^{sβ/2} of A on the torus.

    Returns:
        tuple: (sites, whole_torus flag set when the radius reaches L/2)
    """
    if s < 0:
        raise ValueError(f"thickening exponent must be nonnegative, got {s}")
    sites = list(sites)
    radius = math.exp(s * beta / 2.0)
    if not sites:
        return set(), False
    if radius >= L / 2.0:
        logger.warning(f"Thickening radius {radius:.3g} covers the L={L} torus")
        return {Site(x, y) for x in range(L) for y in range(L)}, True

    r = int(math.floor(radius))
    mask = np.zeros((L, L), dtype=bool)
    for x, y in sites:
        mask[x % L, y % L] = True
    grown = maximum_filter(mask, size=2 * r + 1, mode="wrap")
    return {Site(int(x), int(y)) for x, y in zip(*np.nonzero(grown))}, False


def ball_rectangle(site: Tuple[int, int], radius: float, L: Optional[int] = None) -> Rectangle:
    """ℓ∞ ball of radius ⌊radius⌋ around a site, as a rectangle."""
    r = int(math.floor(radius))
    x0, y0 = site[0] - r, site[1] - r
    if L is not None:
        x0, y0 = x0 % L, y0 % L
    return Rectangle(x0, y0, 2 * r + 1, 2 * r + 1)


@dataclass
class CloudSet:
    """Fixed point of the merge map: rectangles pairwise at distance ≥ sigma."""
    rectangles: List[Rectangle]
    sigma: float
    L: Optional[int] = None
    iterations: int = 0

    def min_distance(self) -> Optional[int]:
        rects = self.rectangles
        distances = [
            rects[i].distance(rects[j], self.L)
            for i in range(len(rects)) for j in range(i + 1, len(rects))
        ]
        return min(distances, default=None)

    def containing(self, site: Tuple[int, int]) -> Optional[int]:
        for k, rect in enumerate(self.rectangles):
            if rect.contains_site(site, self.L):
                return k
        return None


class _UnionFind:
    def __init__(self, size: int):
        self.parents = list(range(size))

    def find(self, a: int) -> int:
        root = a
        while root != self.parents[root]:
            root = self.parents[root]
        while a != root:
            self.parents[a], a = root, self.parents[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parents[max(ra, rb)] = min(ra, rb)


def _merge_once(rects: List[Rectangle], sigma: float, L: Optional[int]) -> List[Rectangle]:
    uf = _UnionFind(len(rects))
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            if rects[i].distance(rects[j], L) < sigma:
                uf.union(i, j)
    classes: Dict[int, List[Rectangle]] = {}
    for i, rect in enumerate(rects):
        classes.setdefault(uf.find(i), []).append(rect)
    merged = []
    for members in classes.values():
        out = members[0]
        for rect in members[1:]:
            out = out.union(rect, L)
        merged.append(out)
    return merged


def aggregate_clouds(rects: Iterable[Rectangle], sigma: float, L: Optional[int] = None) -> CloudSet:
    """
    Merge rectangles closer than sigma into their circumscribed rectangle,
    class by class, until nothing changes.

    Args:
        rects: Input rectangles
        sigma: Merge distance (> 0)
        L: Torus side, or None for the plane

    Raises:
        WrapAmbiguityError: If on the torus a merged cloud spans L/2 or more.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    current = list(dict.fromkeys(rects))
    iterations = 0
    while True:
        merged = _merge_once(current, sigma, L)
        iterations += 1
        if len(merged) == len(current):
            break
        current = list(dict.fromkeys(merged))
    ordered = sorted(current, key=lambda r: (r.x0, r.y0, r.w, r.h))
    return CloudSet(rectangles=ordered, sigma=sigma, L=L, iterations=iterations)


def cloud_schedule(j: int, theta: float, kappa: float, beta: float) -> float:
    """r_j = exp(β/2 · (θ − κ Σ_{i=0}^{j} 2^{-i}))."""
    if j < 0:
        raise ValueError(f"epoch index must be nonnegative, got {j}")
    return math.exp(beta / 2.0 * (theta - kappa * (2.0 - 2.0 ** (-j))))
