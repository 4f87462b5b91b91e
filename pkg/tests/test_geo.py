from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ambulo import geo
from ambulo.ingest import GpsTrack, WalkabilityCell

MIN5 = 300_000


def _track(t, speed=None, lat=None, lon=None):
    t = np.asarray(t, dtype=np.int64)
    n = t.size
    return GpsTrack("P1", t,
                    np.full(n, 40.0) if lat is None else np.asarray(lat, float),
                    np.full(n, -80.0) if lon is None else np.asarray(lon, float),
                    np.full(n, np.nan) if speed is None else np.asarray(speed, float))


def _bursty(rng, n_clusters=40):
    times = []
    t = int(rng.integers(0, 10**6))
    for _ in range(n_clusters):
        times.append(t)
        for _ in range(int(rng.integers(0, 5))):
            times.append(times[-1] + int(rng.integers(0, 1500)))
        t = times[-1] + int(rng.integers(500, 400_000))
    times = np.array(times)
    rng.shuffle(times)
    return _track(times, speed=rng.uniform(0, 3, times.size), lat=40 + rng.normal(0, 0.01, times.size))


# ---------------------------------------------------------------- dedup


def test_dedup_hand_trace():
    out = geo.dedup(_track([0, 3, 7, 300_000]))
    assert out.t.tolist() == [0, 300_000]


def test_dedup_sparse_track_unchanged():
    tr = _track(np.arange(20) * MIN5, speed=np.ones(20))
    out = geo.dedup(tr)
    assert np.array_equal(out.t, tr.t) and np.array_equal(out.speed_mps, tr.speed_mps)


@pytest.mark.parametrize("seed", range(25))
def test_dedup_matches_cluster_scan(seed):
    tr = _bursty(np.random.default_rng(seed))
    out = geo.dedup(tr, 1000)
    kept = oracles.dedup_scan(tr.t.tolist(), 1000)
    assert out.t.tolist() == [int(tr.t[i]) for i in kept]
    assert out.lat.tolist() == [float(tr.lat[i]) for i in kept]
    assert np.all(np.diff(out.t) > 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50_000), min_size=1, max_size=80), st.integers(1, 5000))
def test_dedup_idempotent(times, horizon):
    tr = _track(times)
    once = geo.dedup(tr, horizon)
    twice = geo.dedup(once, horizon)
    assert np.array_equal(once.t, twice.t)
    assert np.all(np.diff(once.t) >= horizon) or len(once) < 2


# ---------------------------------------------------------------- speed


def test_haversine_one_degree_latitude():
    d = geo.haversine_m(0.0, 0.0, 1.0, 0.0)
    assert d == pytest.approx(6_371_000 * math.pi / 180, rel=1e-12)
    assert d == pytest.approx(111_194.9, abs=0.1)


def test_speed_over_one_degree_in_an_hour():
    tr = geo.derive_speed(_track([0, 3_600_000], lat=[0.0, 1.0], lon=[0.0, 0.0]))
    assert tr.speed_mps[1] == pytest.approx(6_371_000 * math.pi / 180 / 3600, rel=1e-12)
    # 30.886 is the same figure with the distance first rounded to 111.19 km
    assert tr.speed_mps[1] == pytest.approx(30.886, abs=2e-3)
    assert tr.speed_mps[0] == tr.speed_mps[1]


def test_identical_coordinates_zero_speed():
    tr = geo.derive_speed(_track([0, 60_000, 120_000]))
    assert tr.speed_mps.tolist() == [0.0, 0.0, 0.0]


def test_recorded_speeds_preserved():
    tr = geo.derive_speed(_track([0, 60_000, 120_000], speed=[1.25, np.nan, 0.75], lat=[40, 40.001, 40.002]))
    assert tr.speed_mps[0] == 1.25 and tr.speed_mps[2] == 0.75
    assert tr.speed_mps[1] == pytest.approx(geo.haversine_m(40, -80, 40.001, -80) / 60.0)


# ---------------------------------------------------------------- walking segments


def test_seven_points_six_minutes():
    segs = geo.walking_segments(_track(np.arange(7) * 60_000, speed=np.full(7, 1.0)))
    assert len(segs) == 1
    assert segs[0].end - segs[0].start == 360_000
    assert segs[0].mean_speed_mps == 1.0
    assert segs[0].segment_id == "P1-seg000"


def test_slow_point_splits_run():
    speed = [1.0] * 7 + [0.4] + [1.0] * 3
    segs = geo.walking_segments(_track(np.arange(11) * 60_000, speed=speed))
    assert [(s.index[0], s.index[-1]) for s in segs] == [(0, 6)]
    runs = geo.walking_runs(np.arange(11) * 60_000, np.asarray(speed))
    assert runs == [(0, 6), (8, 10)]


def test_band_edges_inclusive():
    segs = geo.walking_segments(_track(np.arange(4) * MIN5, speed=[0.5, 2.0, 0.5, 2.0]))
    assert len(segs) == 1 and len(segs[0].index) == 4


def test_one_missed_sample_does_not_sever():
    t = np.arange(10) * MIN5
    t = np.delete(t, 4)  # a 10-minute hole at the nominal 5-minute cadence
    segs = geo.walking_segments(_track(t, speed=np.full(t.size, 1.2)))
    assert len(segs) == 1
    # while two missed samples do
    t2 = np.delete(np.arange(10) * MIN5, [4, 5])
    assert len(geo.walking_segments(_track(t2, speed=np.full(t2.size, 1.2)))) == 2


@pytest.mark.parametrize("seed", range(30))
def test_segmentation_matches_scan_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 200
    t = np.cumsum(rng.choice([60_000, 300_000, 600_000, 900_000], n, p=[0.3, 0.5, 0.1, 0.1]))
    speed = np.where(rng.random(n) < 0.7, rng.uniform(0.5, 2.0, n), rng.uniform(0, 4, n))
    speed[rng.random(n) < 0.05] = rng.choice([0.5, 2.0])
    tr = _track(t, speed=speed)
    segs = geo.walking_segments(tr, 0.5, 2.0, 300, 750)
    ref = oracles.walking_scan(t.tolist(), speed.tolist(), 0.5, 2.0, 300, 750)
    assert [(int(s.index[0]), int(s.index[-1])) for s in segs] == ref
    for s in segs:
        assert s.end - s.start >= 300_000
        assert np.all((speed[s.index] >= 0.5) & (speed[s.index] <= 2.0))
        assert np.all(np.diff(t[s.index]) <= 750_000)
    for a, b in zip(segs[:-1], segs[1:]):
        assert a.end < b.start


# ---------------------------------------------------------------- walkability


def _cell(ranks, cid="c", ring=None):
    ring = ring or [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]
    return WalkabilityCell(cid, [ring], None, *ranks)


def test_weights_sum_to_one():
    assert sum(geo.WEIGHTS) == Fraction(1)


def test_uniform_ranks_return_rank():
    for r in [0, 1, 7, 13.5, 20]:
        assert geo.walkability_score(_cell((r, r, r, r))) == r


def test_hand_example():
    assert geo.walkability_score(_cell((3, 3, 6, 6))) == 4.0
    assert geo.walkability_score(_cell((0, 0, 0, 0))) == 0.0


def test_missing_rank_raises():
    with pytest.raises(ValueError):
        geo.walkability_score(_cell((1, 2, None, 4)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 20, allow_nan=False), min_size=4, max_size=4), st.integers(0, 3), st.floats(0, 5))
def test_score_monotone_and_exact(ranks, k, bump):
    base = geo.walkability_score(_cell(ranks))
    exact = sum(w * Fraction(r) for w, r in zip(geo.WEIGHTS, ranks))
    assert abs(base - float(exact)) <= 1e-12 * max(1.0, float(exact))
    up = list(ranks)
    up[k] += bump
    assert geo.walkability_score(_cell(up)) >= base


# ---------------------------------------------------------------- point in polygon / spatial join


def _convex_ring(rng, cx, cy, r):
    ang = np.sort(rng.uniform(0, 2 * np.pi, int(rng.integers(3, 9))))
    rad = r * rng.uniform(0.5, 1.0, ang.size)
    pts = [(float(cx + a * math.cos(t)), float(cy + a * math.sin(t))) for t, a in zip(ang, rad)]
    # the convex hull of star-ordered points keeps the test polygon convex
    from scipy.spatial import ConvexHull

    hull = ConvexHull(np.array(pts))
    ring = [pts[i] for i in hull.vertices]
    return ring + [ring[0]]


def _boundary_distance(px, py, ring):
    best = math.inf
    for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
        dx, dy = bx - ax, by - ay
        u = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)))
        best = min(best, math.hypot(px - ax - u * dx, py - ay - u * dy))
    return best


def test_pip_matches_winding_number_on_random_cases():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(1000):
        ring = _convex_ring(rng, -80.0, 40.0, 0.01)
        px, py = rng.uniform(-80.012, -79.988), rng.uniform(39.988, 40.012)
        if _boundary_distance(px, py, ring) < 1e-9:
            continue
        want = oracles.winding_number(px, py, ring)
        assert bool(geo.points_in_rings([px], [py], [ring])[0]) == want
        joined = geo.spatial_join(_track([0], lat=[py], lon=[px]), [_cell((1, 2, 3, 4), "c0", ring)],
                                  fallback_radius_m=0.0)
        assert (joined.cell_id[0] == "c0") == want
        checked += 1
    assert checked >= 990


def test_boundary_counts_as_inside():
    ring = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]
    assert geo.points_in_rings([0.5, 1.0, 0.0], [0.0, 0.5, 0.0], [ring]).all()


def test_hole_excluded_by_even_odd():
    outer = [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)]
    hole = [(1, 1), (3, 1), (3, 3), (1, 3), (1, 1)]
    got = geo.points_in_rings([2.0, 0.5], [2.0, 0.5], [outer, hole])
    assert got.tolist() == [False, True]


def _square_cell(cid, lon0, lat0, size=0.001, ranks=(3, 3, 6, 6)):
    ring = [(lon0, lat0), (lon0 + size, lat0), (lon0 + size, lat0 + size), (lon0, lat0 + size), (lon0, lat0)]
    return WalkabilityCell(cid, [ring], None, *ranks)


def test_point_at_centroid_joins_cell():
    cell = _square_cell("a", -80.0, 40.0)
    lon, lat = geo.cell_centroid(cell)
    j = geo.spatial_join(_track([0], lat=[lat], lon=[lon]), [cell])
    assert j.cell_id == ["a"] and j.walkability[0] == 4.0


def test_fallback_within_radius():
    cell = _square_cell("a", -80.0, 40.0)
    lon, lat = geo.cell_centroid(cell)
    dlat = 500.0 / (6_371_000 * math.pi / 180)  # 500 m due north of the centroid
    j = geo.spatial_join(_track([0], lat=[lat + dlat], lon=[lon]), [cell], fallback_radius_m=1000)
    assert geo.haversine_m(lat + dlat, lon, lat, lon) == pytest.approx(500.0, rel=1e-9)
    assert j.cell_id == ["a"]


def test_far_point_left_unjoined():
    cell = _square_cell("a", -80.0, 40.0)
    lon, lat = geo.cell_centroid(cell)
    dlat = 5000.0 / (6_371_000 * math.pi / 180)
    j = geo.spatial_join(_track([0], lat=[lat + dlat], lon=[lon]), [cell], fallback_radius_m=1000)
    assert j.cell_id == [None] and np.isnan(j.walkability[0])


def test_walkability_present_iff_cell_present():
    rng = np.random.default_rng(1)
    cells = [_square_cell(f"c{i}{k}", -80 + 0.001 * i, 40 + 0.001 * k, ranks=tuple(rng.integers(1, 20, 4)))
             for i in range(5) for k in range(5)]
    n = 300
    tr = _track(np.arange(n) * 1000, lat=rng.uniform(39.99, 40.02, n), lon=rng.uniform(-80.01, -79.98, n))
    j = geo.spatial_join(tr, cells)
    for cid, w in zip(j.cell_id, j.walkability):
        assert (cid is None) == bool(np.isnan(w))
