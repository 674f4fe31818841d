import math

import numpy as np
import pytest
from scipy.integrate import quad

from agrimap.acceptance import brute_force_counts
from agrimap.errors import EmptyInput, InvalidGeodetic, NoOverlap, TooFewPoints, ZeroRadius
from agrimap.geodesy import WGS84_A, WGS84_E2, enu_to_geodetic, geodetic_to_enu
from agrimap.geometry import TransformSim3, Trajectory
from agrimap.mapping import (
    DensityMode,
    GeoAnchor,
    PointCloud,
    apply_transform,
    approximate_density,
    density_histogram,
    georegister,
    precise_density,
    volume_density,
)
from agrimap.synth import MotionSpec, generate_trajectory, lattice, random_cloud, random_sim3, rng


def _meridian_arc(lat0_deg, lat1_deg):
    def m(phi):
        return WGS84_A * (1 - WGS84_E2) / (1 - WGS84_E2 * math.sin(phi) ** 2) ** 1.5

    return quad(m, math.radians(lat0_deg), math.radians(lat1_deg), epsabs=1e-12)[0]


def test_origin_maps_to_zero():
    np.testing.assert_allclose(geodetic_to_enu(-33.0, -60.0, 25.0, (-33.0, -60.0, 25.0)), 0.0, atol=1e-9)


def test_northward_step_at_equator():
    enu = geodetic_to_enu(1e-5, 0.0, 0.0, (0.0, 0.0, 0.0))
    assert enu[1] == pytest.approx(1.106, abs=1e-3)
    assert enu[1] == pytest.approx(_meridian_arc(0.0, 1e-5), abs=1e-6)
    assert abs(enu[0]) < 1e-9 and abs(enu[2]) < 1e-6


@pytest.mark.parametrize("lat", [-60.0, -33.0, 45.0])
def test_meridian_arc_at_latitude(lat):
    enu = geodetic_to_enu(lat + 1e-4, 10.0, 0.0, (lat, 10.0, 0.0))
    assert enu[1] == pytest.approx(_meridian_arc(lat, lat + 1e-4), abs=1e-5)


def test_enu_round_trip():
    g = rng(1)
    origin = (-33.0, -60.0, 25.0)
    enu = g.uniform(-1000, 1000, (500, 3)) * np.array([1, 1, 0.05])
    back = geodetic_to_enu(*enu_to_geodetic(enu, origin), origin)
    assert np.abs(back - enu).max() < 1e-6


@pytest.mark.parametrize("lat,lon", [(91.0, 0.0), (0.0, 181.0), (float("nan"), 0.0)])
def test_invalid_geodetic(lat, lon):
    with pytest.raises(InvalidGeodetic):
        geodetic_to_enu(lat, lon, 0.0, (0.0, 0.0, 0.0))


def _anchors(traj):
    return [GeoAnchor(float(t), p) for t, p in zip(traj.timestamps, traj.positions)]


def test_georegister_identity():
    gt, _ = generate_trajectory(MotionSpec(kind="loop", frame_count=100))
    reg = georegister(gt, _anchors(gt))
    np.testing.assert_allclose(reg.transform.matrix, np.eye(4), atol=1e-9)
    assert reg.rmse < 1e-9


def test_georegister_recovers_similarity():
    g = rng(2)
    gt, _ = generate_trajectory(MotionSpec(kind="uturn", frame_count=200))
    for _ in range(10):
        s = random_sim3(g)
        reg = georegister(gt, _anchors(apply_transform(gt, s)))
        np.testing.assert_allclose(reg.transform.matrix, s.matrix, atol=1e-9 * max(1.0, np.abs(s.matrix).max()))


def test_georegister_residual_invariant_to_prior_similarity():
    g = rng(3)
    gt, _ = generate_trajectory(MotionSpec(kind="uturn", frame_count=200))
    noisy = [GeoAnchor(a.timestamp, a.position + g.normal(0, 0.02, 3)) for a in _anchors(gt)]
    base = georegister(gt, noisy).rmse
    moved = georegister(apply_transform(gt, random_sim3(g)), noisy).rmse
    assert moved == pytest.approx(base, rel=1e-6)


def test_georegister_no_overlap():
    gt, _ = generate_trajectory(MotionSpec(frame_count=50))
    far = [GeoAnchor(a.timestamp + 1000, a.position) for a in _anchors(gt)]
    with pytest.raises(NoOverlap):
        georegister(gt, far)


def test_apply_transform_properties():
    g = rng(4)
    cloud = random_cloud(50, seed=4)
    ident = apply_transform(cloud, TransformSim3())
    np.testing.assert_array_equal(ident.positions, cloud.positions)
    t = random_sim3(g)
    moved = apply_transform(cloud, t)
    d0 = np.linalg.norm(cloud.positions[:, None] - cloud.positions[None], axis=2)
    d1 = np.linalg.norm(moved.positions[:, None] - moved.positions[None], axis=2)
    np.testing.assert_allclose(d1, t.scale * d0, rtol=1e-9, atol=1e-9)
    back = apply_transform(moved, t.inverse())
    np.testing.assert_allclose(back.positions, cloud.positions, atol=1e-9)
    traj = Trajectory([0, 1, 2], cloud.positions[:3])
    np.testing.assert_allclose(apply_transform(apply_transform(traj, t), t.inverse()).positions, traj.positions, atol=1e-9)


def test_single_point_has_no_neighbours():
    r = precise_density(PointCloud([[0.0, 0.0, 0.0]]))
    assert r.counts.tolist() == [0]


def test_lattice_interior_count():
    pts = lattice(9, 0.05)
    r = precise_density(PointCloud(pts), 0.1)
    centre = np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1))
    offsets = [(i, j, k) for i in range(-2, 3) for j in range(-2, 3) for k in range(-2, 3) if 0 < i * i + j * j + k * k <= 4]
    assert r.counts[centre] == len(offsets) == 32
    np.testing.assert_array_equal(r.counts, brute_force_counts(pts, 0.1))


def test_random_cloud_matches_brute_force():
    cloud = random_cloud(10_000, seed=5)
    np.testing.assert_array_equal(precise_density(cloud, 0.1).counts, brute_force_counts(cloud.positions, 0.1))


def test_density_rigid_and_scale_invariant():
    g = rng(6)
    cloud = random_cloud(3000, seed=6)
    base = precise_density(cloud, 0.1).counts
    rigid = TransformSim3(1.0, random_sim3(g).rotation, g.normal(0, 5, 3))
    np.testing.assert_array_equal(precise_density(apply_transform(cloud, rigid), 0.1).counts, base)
    sim = TransformSim3(2.5, random_sim3(g).rotation, g.normal(0, 5, 3))
    np.testing.assert_array_equal(precise_density(apply_transform(cloud, sim), 0.25).counts, base)


def test_approximate_examples():
    r = approximate_density(PointCloud([[0, 0, 0], [0.3, 0, 0]]))
    np.testing.assert_allclose(r.values, [0.3, 0.3])
    pts = lattice(6, 0.05)
    np.testing.assert_allclose(approximate_density(PointCloud(pts)).values, 0.05, rtol=1e-12)
    with pytest.raises(TooFewPoints):
        approximate_density(PointCloud([[0, 0, 0]]))


def test_approximate_matches_brute_force():
    pts = random_cloud(2000, seed=7).positions
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(axis=2))
    np.fill_diagonal(d, np.inf)
    np.testing.assert_allclose(approximate_density(PointCloud(pts)).values, d.min(axis=1), rtol=1e-12)


def test_volume_density():
    r = precise_density(PointCloud([[0, 0, 0], [0.05, 0, 0]]), 0.1)
    v = volume_density(r)
    assert v.mode is DensityMode.VOLUME
    assert v.values[0] == pytest.approx(1 / (4 / 3 * math.pi * 0.001))
    assert v.values[0] == pytest.approx(238.73, abs=0.01)
    assert volume_density(precise_density(PointCloud([[0, 0, 0]]), 0.1)).values[0] == 0.0
    r2 = precise_density(PointCloud([[0, 0, 0], [0.05, 0, 0]]), 0.2)
    assert volume_density(r2).values[0] == v.values[0] / 8


def test_volume_from_approximate_matches_unit_count():
    cloud = random_cloud(200, seed=8)
    a = approximate_density(cloud)
    v = volume_density(a)
    np.testing.assert_allclose(v.values, 1.0 / (4 / 3 * np.pi * a.values**3), rtol=1e-12)


def test_duplicate_points_have_zero_radius():
    with pytest.raises(ZeroRadius):
        volume_density(approximate_density(PointCloud([[0, 0, 0], [0, 0, 0], [1, 1, 1]])))


def test_histogram_examples():
    h = density_histogram(np.full(17, 3.0), 5)
    assert sorted(h.counts.tolist()) == [0, 0, 0, 0, 17]
    h = density_histogram(np.arange(100), 10)
    assert h.counts.tolist() == [10] * 10
    with pytest.raises(EmptyInput):
        density_histogram([], 10)


def test_histogram_matches_scan():
    v = rng(9).normal(size=1000)
    h = density_histogram(v, 13)
    counts = [0] * 13
    for x in v:
        i = int(np.searchsorted(h.edges, x, side="right")) - 1
        counts[min(i, 12)] += 1
    assert h.counts.tolist() == counts
