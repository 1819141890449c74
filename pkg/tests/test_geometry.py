"""
Tests for the geometry module.
"""

import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.errors import BookkeepingError, WrapAmbiguityError
from src.geometry import (
    CLUSTERISED,
    FREE,
    TRAPPED,
    Rectangle,
    SleepState,
    active_box_diagnostic,
    aggregate_clouds,
    ball_rectangle,
    circumscribed_rectangle,
    cloud_schedule,
    cluster_at,
    clusterise,
    free_particles,
    in_R,
    in_Rprime,
    load_fixture,
    max_cluster_volume,
    quasi_square_census,
    thicken,
    update_sleep,
)
from src.lattice import Configuration, Site
from src.models import ModelParams
from src.params import derive

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def freeness_reference():
    """Reference freeness configuration and its expected statuses."""
    return load_fixture((FIXTURES / "freeness_reference.txt").read_text())


def square(x0, y0, w, h):
    return [(x0 + dx, y0 + dy) for dx in range(w) for dy in range(h)]


class TestRectangle:
    """Test cases for lattice rectangles."""

    def test_corners_and_area(self):
        rect = Rectangle(2, 3, 4, 2)
        assert rect.min_corner == (2, 3)
        assert rect.max_corner == (5, 4)
        assert rect.area == 8
        assert len(rect.sites()) == 8

    def test_invalid_sides(self):
        with pytest.raises(ValueError):
            Rectangle(0, 0, 0, 3)

    def test_distance_plane_and_torus(self):
        a, b = Rectangle(0, 0, 2, 2), Rectangle(9, 0, 1, 1)
        assert a.distance(b) == 8
        assert a.distance(b, L=10) == 1
        assert a.distance(Rectangle(1, 1, 3, 3)) == 0

    def test_contains(self):
        outer = Rectangle(8, 8, 5, 5)
        assert outer.contains(Rectangle(9, 9, 2, 2))
        assert outer.contains(Rectangle(0, 1, 2, 2), L=10)
        assert not outer.contains(Rectangle(12, 12, 2, 2))
        assert outer.contains_site((11, 12))

    def test_union_wrap_ambiguity(self):
        with pytest.raises(WrapAmbiguityError):
            Rectangle(0, 0, 3, 1).union(Rectangle(5, 0, 3, 1), L=10)

    def test_circumscribed_rectangle_across_boundary(self):
        rect = circumscribed_rectangle([(9, 0), (0, 0), (9, 1), (0, 1)], L=10)
        assert rect == Rectangle(9, 0, 2, 2)
        with pytest.raises(WrapAmbiguityError):
            circumscribed_rectangle([(0, 0), (5, 0)], L=10)

    def test_ball_rectangle(self):
        assert ball_rectangle((5, 5), 2.7) == Rectangle(3, 3, 5, 5)
        assert ball_rectangle((0, 0), 1.0, L=10) == Rectangle(9, 9, 3, 3)


class TestClusters:
    """Test cases for clusters and quasi-squares."""

    def test_clusterise(self):
        config = Configuration.from_sites(10, square(1, 1, 2, 2) + [(5, 5), (5, 6), (8, 2)])
        clusters, singles = clusterise(config)
        assert [c.volume for c in clusters] == [4, 2]
        assert [c.quasi_square for c in clusters] == [(2, 2), (1, 2)]
        assert singles == {Site(8, 2)}
        assert quasi_square_census(clusters) == {(2, 2): 1, (1, 2): 1}
        assert max_cluster_volume(config) == 4

    def test_wrapped_square(self):
        config = Configuration.from_sites(10, [(9, 0), (0, 0), (9, 1), (0, 1)])
        clusters, _ = clusterise(config)
        assert len(clusters) == 1
        assert clusters[0].quasi_square == (2, 2)
        assert clusters[0].baricenter == pytest.approx((9.5, 0.5))

    def test_non_quasi_square(self):
        config = Configuration.from_sites(10, square(0, 0, 2, 2) + [(2, 0)])
        clusters, _ = clusterise(config)
        assert clusters[0].quasi_square is None

    def test_cluster_at(self):
        config = Configuration.from_sites(10, square(3, 3, 3, 2))
        assert len(cluster_at(config, (3, 3))) == 6
        assert len(cluster_at(config, (3, 3), limit=4)) == 4
        assert cluster_at(config, (0, 0)) == set()

    def test_membership_in_R(self):
        derived = derive(ModelParams(Delta=1.6, beta=3.0))
        inside = Configuration.from_sites(12, square(2, 2, 2, 3) + [(4, 2), (4, 3)])
        outside = Configuration.from_sites(12, square(2, 2, 3, 3))
        assert in_R(inside, derived)
        assert not in_R(outside, derived)
        assert in_Rprime(inside, derived)
        # λ(β)/8 is far below 9 at this β
        assert not in_Rprime(outside, derived)


class TestFreeness:
    """Test cases for the free/trapped classification."""

    def test_reference_configuration(self, freeness_reference):
        config, expected = freeness_reference
        report = free_particles(config, window=10)
        for pid, status in expected.items():
            assert report.status[pid] == status, pid
        assert report.free == {1, 2, 3, 4, 5, 16}
        assert report.trapped == set(range(6, 16))
        assert len(report.clusterised) == config.N - 16

    def test_reference_cluster_layout(self, freeness_reference):
        config, _ = freeness_reference
        clusters, singles = clusterise(config)
        assert sorted(c.volume for c in clusters) == [9, 15, 15, 32, 104]
        assert len(singles) == 16
        ring = next(c for c in clusters if c.volume == 104)
        assert ring.rc == Rectangle(20, 22, 17, 10)
        assert ring.rc.contains_site(config.site_of(10), config.L)
        block = next(c for c in clusters if c.volume == 32)
        assert block.rc == Rectangle(11, 9, 4, 8)
        # 11..15 step diagonally from the block corner to the ring corner
        assert [tuple(config.site_of(pid)) for pid in range(11, 16)] == [
            (15, 17), (16, 18), (17, 19), (18, 20), (19, 21)]

    def test_peeling_rounds(self, freeness_reference):
        config, _ = freeness_reference
        report = free_particles(config, window=10)
        assert [sorted(r) for r in report.rounds] == [[1, 2, 3, 16], [5], [4]]
        assert report.paths[4][0] == config.site_of(4)
        assert all(report.reach[pid] >= 1 for pid in report.trapped)

    def test_event_local_refresh(self, freeness_reference):
        config, _ = freeness_reference
        report = free_particles(config, window=10, candidates={4}, assume_free={1, 2, 3, 5})
        assert report.status[4] == FREE
        assert report.free == {1, 2, 3, 4, 5}

    def test_isolated_particle_is_free(self):
        config = Configuration.from_sites(12, [(6, 6)])
        assert free_particles(config, window=3).status == {0: FREE}

    def test_statuses_cover_everyone(self, freeness_reference):
        config, _ = freeness_reference
        report = free_particles(config, window=10)
        assert set(report.status) == set(config.particles())
        assert set(report.status.values()) == {CLUSTERISED, FREE, TRAPPED}


class TestSleep:
    """Test cases for sleeping bookkeeping."""

    def make(self):
        config = Configuration.from_sites(12, square(2, 2, 2, 2) + [(8, 8)])
        return config, SleepState.start(config, D=1.1, beta=1.0)

    def test_initial_declaration(self):
        config, sleep = self.make()
        assert sleep.threshold == pytest.approx(math.exp(1.1))
        assert sleep.sleeping_ids(0.0) == {0, 1, 2, 3}
        assert sleep.active(4, 0.0)

    def test_update_and_fall_asleep(self):
        config, sleep = self.make()
        update_sleep(sleep, free_particles(config, window=3), 1.0)
        assert sleep.last_free[4] == 1.0
        assert sleep.active(4, 1.0 + sleep.threshold / 2)
        assert sleep.sleeping(4, 1.0 + 2 * sleep.threshold)

    def test_unknown_particle(self):
        config, sleep = self.make()
        with pytest.raises(BookkeepingError):
            sleep.sleeping(99, 0.0)
        config.add_particle((0, 8))
        with pytest.raises(BookkeepingError):
            update_sleep(sleep, free_particles(config, window=3), 1.0)

    def test_time_cannot_go_back(self):
        config, sleep = self.make()
        update_sleep(sleep, free_particles(config, window=3), 2.0)
        with pytest.raises(ValueError):
            update_sleep(sleep, free_particles(config, window=3), 1.0)

    def test_active_box_diagnostic(self):
        config = Configuration.from_sites(12, [(0, 0), (2, 0), (0, 2), (2, 2)])
        sleep = SleepState.start(config, D=1.1, beta=1.0)
        # tile side ⌈e^{Sβ/2}⌉ = 4 holds all four active particles
        assert active_box_diagnostic(config, sleep, S_exponent=2 * math.log(4), beta=1.0) == 4
        assert active_box_diagnostic(config, sleep, S_exponent=0.0, beta=1.0) == 1


class TestThickening:
    """Test cases for [A, s] and the cloud map."""

    def test_thicken_radius(self):
        sites, whole = thicken([(5, 5)], 2 * math.log(2.5), beta=1.0, L=20)
        assert not whole
        assert len(sites) == 25
        assert Site(7, 3) in sites

    def test_thicken_wraps(self):
        sites, _ = thicken([(0, 0)], 2 * math.log(1.5), beta=1.0, L=20)
        assert Site(19, 19) in sites and Site(1, 1) in sites

    def test_thicken_whole_torus(self):
        sites, whole = thicken([(0, 0)], 10.0, beta=1.0, L=10)
        assert whole
        assert len(sites) == 100

    def test_aggregate_threshold(self):
        rects = [Rectangle(0, 0, 2, 2), Rectangle(4, 0, 2, 2)]
        # the gap between x = 1 and x = 4 is 3
        assert len(aggregate_clouds(rects, sigma=3.0).rectangles) == 2
        merged = aggregate_clouds(rects, sigma=3.5)
        assert merged.rectangles == [Rectangle(0, 0, 6, 2)]

    def test_aggregate_chain_reaction(self):
        # (5, -2) is 5 away from both seeds but 2 away from their union
        rects = [Rectangle(0, 0, 1, 1), Rectangle(3, 3, 1, 1), Rectangle(5, -2, 1, 1)]
        clouds = aggregate_clouds(rects, sigma=3.5)
        assert clouds.rectangles == [Rectangle(0, -2, 6, 6)]
        assert clouds.iterations >= 2
        assert clouds.min_distance() is None

    def test_cloud_schedule(self):
        assert cloud_schedule(0, 2.0, 0.1, 4.0) == pytest.approx(math.exp(2.0 * 1.9))
        assert cloud_schedule(1, 2.0, 0.1, 4.0) == pytest.approx(math.exp(2.0 * (2.0 - 0.15)))
        with pytest.raises(ValueError):
            cloud_schedule(-1, 2.0, 0.1, 4.0)


def _brute_force_merge(rects, sigma, rng):
    """Merge one random close pair at a time until none is left."""
    current = list(dict.fromkeys(rects))
    while True:
        pairs = [
            (i, j) for i in range(len(current)) for j in range(i + 1, len(current))
            if current[i].distance(current[j]) < sigma
        ]
        if not pairs:
            return sorted(current, key=lambda r: (r.x0, r.y0, r.w, r.h))
        i, j = pairs[rng.integers(len(pairs))]
        merged = current[i].union(current[j])
        current = [r for k, r in enumerate(current) if k not in (i, j)] + [merged]
        current = list(dict.fromkeys(current))


rectangles = st.builds(
    Rectangle,
    st.integers(min_value=-20, max_value=20),
    st.integers(min_value=-20, max_value=20),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=6),
)


@settings(max_examples=1000, deadline=None)
@given(
    rects=st.lists(rectangles, min_size=1, max_size=6),
    sigma=st.floats(min_value=0.5, max_value=8.0),
    seed=st.integers(min_value=0, max_value=1000),
)
def test_cloud_map_laws(rects, sigma, seed):
    """Separation, containment, idempotence and merge-order independence."""
    clouds = aggregate_clouds(rects, sigma)
    out = clouds.rectangles
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            assert out[i].distance(out[j]) >= sigma
    for rect in rects:
        assert any(cloud.contains(rect) for cloud in out)
    assert aggregate_clouds(out, sigma).rectangles == out
    assert _brute_force_merge(rects, sigma, np.random.default_rng(seed)) == out

