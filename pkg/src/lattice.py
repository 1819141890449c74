"""
Configuration space of the lattice gas.

A periodic L×L torus of occupation variables with stable particle
identities and a continuous clock, exact and incremental energies, and the
plain-text snapshot format.
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from src.errors import MoveError, SnapshotParseError

logger = logging.getLogger(__name__)


class Site(NamedTuple):
    """Lattice site; coordinates are taken modulo L once normalised."""
    x: int
    y: int

    def normalized(self, L: int) -> "Site":
        return Site(self.x % L, self.y % L)


@lru_cache(maxsize=None)
def neighbour_table(L: int) -> Tuple[Tuple[int, ...], ...]:
    """Distinct nearest neighbours of every flat index x*L + y on the torus."""
    table = []
    for x in range(L):
        for y in range(L):
            candidates = (
                ((x + 1) % L) * L + y,
                ((x - 1) % L) * L + y,
                x * L + (y + 1) % L,
                x * L + (y - 1) % L,
            )
            own = x * L + y
            table.append(tuple(dict.fromkeys(c for c in candidates if c != own)))
    return tuple(table)


def torus_delta(a: int, b: int, L: int) -> int:
    """Signed minimum-image difference b − a on a circle of length L."""
    d = (b - a) % L
    return d - L if d > L // 2 else d


def torus_distance(a: Site, b: Site, L: int) -> int:
    """ℓ∞ distance between two sites with the minimum-image convention."""
    return max(abs(torus_delta(a.x, b.x, L)), abs(torus_delta(a.y, b.y, L)))


class Configuration:
    """
    Occupancy of the L×L torus.

    Occupation is stored in a flat bytearray indexed by x*L + y, shared with
    the ``occupancy`` numpy view. Particle identities travel with the
    particles across exchanges. The bond count is kept up to date by every
    mutation so the energy is available in O(1).
    """

    def __init__(self, L: int, time: float = 0.0):
        if L < 1:
            raise ValueError(f"lattice side must be positive, got {L}")
        self.L = L
        self.time = float(time)
        self._occ = bytearray(L * L)
        self._pid: List[int] = [-1] * (L * L)
        self._where: Dict[int, int] = {}
        self._bonds = 0
        self._next_id = 0
        self._nbr = neighbour_table(L)

    # construction

    @classmethod
    def empty(cls, L: int) -> "Configuration":
        return cls(L)

    @classmethod
    def from_sites(
        cls,
        L: int,
        sites: Iterable[Tuple[int, int]],
        ids: Optional[Iterable[int]] = None,
        time: float = 0.0,
    ) -> "Configuration":
        config = cls(L, time=time)
        sites = [Site(*s).normalized(L) for s in sites]
        id_list = list(ids) if ids is not None else [None] * len(sites)
        if len(id_list) != len(sites):
            raise ValueError("ids and sites must have the same length")
        for site, pid in zip(sites, id_list):
            config.add_particle(site, pid)
        return config

    def copy(self) -> "Configuration":
        other = Configuration(self.L, time=self.time)
        other._occ = bytearray(self._occ)
        other._pid = list(self._pid)
        other._where = dict(self._where)
        other._bonds = self._bonds
        other._next_id = self._next_id
        return other

    def translated(self, dx: int, dy: int) -> "Configuration":
        """Copy with every particle shifted by (dx, dy), identities kept."""
        particles = self.particles()
        return Configuration.from_sites(
            self.L,
            [(s.x + dx, s.y + dy) for s in particles.values()],
            ids=particles.keys(),
            time=self.time,
        )

    # indexing

    def index(self, site: Tuple[int, int]) -> int:
        return (site[0] % self.L) * self.L + (site[1] % self.L)

    def site(self, index: int) -> Site:
        return Site(index // self.L, index % self.L)

    # queries

    @property
    def N(self) -> int:
        return len(self._where)

    @property
    def bonds(self) -> int:
        return self._bonds

    @property
    def occupancy(self) -> np.ndarray:
        """L×L boolean view sharing memory with the configuration."""
        return np.frombuffer(self._occ, dtype=np.uint8).reshape(self.L, self.L).view(bool)

    @property
    def particle_id(self) -> np.ndarray:
        """L×L array of particle ids, −1 on empty sites (a copy)."""
        return np.asarray(self._pid, dtype=np.int64).reshape(self.L, self.L)

    def is_occupied(self, site: Tuple[int, int]) -> bool:
        return bool(self._occ[self.index(site)])

    def pid_at(self, site: Tuple[int, int]) -> int:
        return self._pid[self.index(site)]

    def site_of(self, pid: int) -> Site:
        return self.site(self._where[pid])

    def particles(self) -> Dict[int, Site]:
        """Particle id → site, sorted by id."""
        return {pid: self.site(self._where[pid]) for pid in sorted(self._where)}

    def sites(self) -> List[Site]:
        return [self.site(i) for i in sorted(self._where.values())]

    def neighbours(self, site: Tuple[int, int]) -> List[Site]:
        return [self.site(j) for j in self._nbr[self.index(site)]]

    def occupied_neighbours(self, index: int, exclude: int = -1) -> int:
        occ = self._occ
        return sum(occ[j] for j in self._nbr[index] if j != exclude)

    def delta_units(self, i_from: int, i_to: int) -> int:
        """ΔH/U of moving the particle at flat index i_from to i_to (unchecked)."""
        return self.occupied_neighbours(i_from, i_to) - self.occupied_neighbours(i_to, i_from)

    # mutation

    def add_particle(self, site: Tuple[int, int], pid: Optional[int] = None) -> int:
        i = self.index(site)
        if self._occ[i]:
            raise MoveError(f"site {self.site(i)} is already occupied")
        if pid is None:
            pid = self._next_id
        if pid in self._where:
            raise MoveError(f"particle id {pid} is already in use")
        self._bonds += self.occupied_neighbours(i)
        self._occ[i] = 1
        self._pid[i] = pid
        self._where[pid] = i
        self._next_id = max(self._next_id, pid + 1)
        return pid

    def remove_particle(self, site: Tuple[int, int]) -> int:
        i = self.index(site)
        if not self._occ[i]:
            raise MoveError(f"site {self.site(i)} is empty")
        pid = self._pid[i]
        self._occ[i] = 0
        self._pid[i] = -1
        del self._where[pid]
        self._bonds -= self.occupied_neighbours(i)
        return pid

    def exchange(self, i_from: int, i_to: int) -> int:
        """Move the particle at i_from to the empty neighbour i_to (unchecked)."""
        self._bonds -= self.delta_units(i_from, i_to)
        pid = self._pid[i_from]
        self._occ[i_from] = 0
        self._occ[i_to] = 1
        self._pid[i_from] = -1
        self._pid[i_to] = pid
        self._where[pid] = i_to
        return pid

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValueError(f"clock cannot run backwards (dt={dt})")
        self.time += dt

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.L == other.L
            and self.time == other.time
            and self._occ == other._occ
            and self._pid == other._pid
        )

    def __repr__(self) -> str:
        return f"Configuration(L={self.L}, N={self.N}, t={self.time:.6g})"


def bond_count(config: Configuration) -> int:
    """Number of occupied nearest-neighbour pairs, recomputed from scratch."""
    occ = config.occupancy
    L = config.L
    if L == 1:
        return 0
    pairs = int((occ & np.roll(occ, 1, axis=0)).sum() + (occ & np.roll(occ, 1, axis=1)).sum())
    # on a 2-torus both rolls meet the same neighbour
    return pairs // 2 if L == 2 else pairs


def energy(config: Configuration, U: float = 1.0) -> float:
    """H(η) = −U · (number of occupied nearest-neighbour pairs)."""
    return -U * bond_count(config)


def _check_move(config: Configuration, frm: Tuple[int, int], to: Tuple[int, int]) -> Tuple[int, int]:
    i_from, i_to = config.index(frm), config.index(to)
    if i_to not in config._nbr[i_from]:
        raise MoveError(f"{Site(*frm)} and {Site(*to)} are not nearest neighbours")
    if not config._occ[i_from]:
        raise MoveError(f"no particle at {Site(*frm)}")
    if config._occ[i_to]:
        raise MoveError(f"target {Site(*to)} is occupied")
    return i_from, i_to


def delta_energy(config: Configuration, frm: Tuple[int, int], to: Tuple[int, int], U: float = 1.0) -> float:
    """
    Energy change U·(n_from − n_to) of moving the particle at ``frm`` to ``to``.

    Raises:
        MoveError: If the sites are not adjacent, ``frm`` is empty or ``to`` occupied.
    """
    i_from, i_to = _check_move(config, frm, to)
    return U * config.delta_units(i_from, i_to)


def apply_exchange(config: Configuration, frm: Tuple[int, int], to: Tuple[int, int]) -> Configuration:
    """
    Exchange the occupations of ``frm`` and ``to`` in place; the particle
    identity moves with the particle.

    Raises:
        MoveError: As delta_energy.
    """
    i_from, i_to = _check_move(config, frm, to)
    config.exchange(i_from, i_to)
    return config


def snapshot_write(config: Configuration) -> str:
    """Deterministic text snapshot: header line then ``id x y`` sorted by id."""
    lines = [f"L {config.L} N {config.N} t {config.time!r}"]
    lines.extend(f"{pid} {site.x} {site.y}" for pid, site in config.particles().items())
    return "\n".join(lines) + "\n"


def _parse_header(tokens: List[str], line_no: int) -> Tuple[int, int, float]:
    if len(tokens) != 6 or tokens[0] != "L" or tokens[2] != "N" or tokens[4] != "t":
        raise SnapshotParseError("expected header 'L <int> N <int> t <float>'", line_no)
    try:
        return int(tokens[1]), int(tokens[3]), float(tokens[5])
    except ValueError:
        raise SnapshotParseError("bad number in header", line_no)


def snapshot_read(text: str, first_line: int = 1) -> Configuration:
    """
    Parse a snapshot written by snapshot_write.

    Args:
        text: Snapshot text
        first_line: Line number of the header inside a larger file, for errors

    Raises:
        SnapshotParseError: With the offending line number.
    """
    lines = [(first_line + k, line.strip()) for k, line in enumerate(text.splitlines())]
    lines = [(n, line) for n, line in lines if line]
    if not lines:
        raise SnapshotParseError("empty snapshot", first_line)

    header_no, header = lines[0]
    L, N, t = _parse_header(header.split(), header_no)
    if L < 1:
        raise SnapshotParseError(f"lattice side must be positive, got {L}", header_no)
    config = Configuration(L, time=t)

    for line_no, line in lines[1:]:
        tokens = line.split()
        if len(tokens) != 3:
            raise SnapshotParseError("expected 'id x y'", line_no)
        try:
            pid, x, y = (int(tok) for tok in tokens)
        except ValueError:
            raise SnapshotParseError("non-integer particle entry", line_no)
        if not (0 <= x < L and 0 <= y < L) or pid < 0:
            raise SnapshotParseError(f"particle {pid} at ({x}, {y}) is outside the lattice", line_no)
        try:
            config.add_particle(Site(x, y), pid)
        except MoveError as e:
            raise SnapshotParseError(str(e), line_no)

    if config.N != N:
        raise SnapshotParseError(f"header announces N={N} but {config.N} particles follow", header_no)
    return config


def snapshot_save(config: Configuration, path: Union[str, Path]) -> None:
    Path(path).write_text(snapshot_write(config), encoding="utf-8")


def snapshot_load(path: Union[str, Path]) -> Configuration:
    return snapshot_read(Path(path).read_text(encoding="utf-8"))
