import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agrimap.depth_filter import (
    DepthMeasurement,
    FilterGrid,
    Status,
    extract_points,
    gaussian_update,
    grid_bayes_oracle,
    init_filter,
    measurement_variance,
    simulate_plane,
    step_grid,
    update,
)
from agrimap.errors import DegenerateBaseline, InvalidRange
from agrimap.geometry import CameraIntrinsics, PoseSE3, bearings, triangulate_rays
from agrimap.synth import DEFAULT_INTRINSICS, HALF_INTRINSICS, generate_measurement_stream, rng

K300 = CameraIntrinsics(300.0, 300.0, 336.0, 188.0, 672, 376)


def run(state, ms):
    for m in ms:
        state = update(state, m)
    return state


def test_init_example():
    s = init_filter(5.0, 0.5, 50.0)
    assert s.mu == 5.0
    assert s.sigma == pytest.approx(8.25)
    assert s.inlier_ratio == 0.5
    assert s.status is Status.ACTIVE


@pytest.mark.parametrize("avg,lo,hi", [(5, 50, 0.5), (5, 5, 5), (60, 0.5, 50), (5, 0.0, 50)])
def test_init_rejects_bad_range(avg, lo, hi):
    with pytest.raises(InvalidRange):
        init_filter(avg, lo, hi)


def _fd_tau(depth, baseline, k):
    """Depth change when the current observation moves by one pixel along the epipolar line."""
    pose = PoseSE3(translation=[-baseline, 0, 0])
    px = np.array([[k.cx, k.cy]])
    x = np.array([0.0, 0.0, depth])
    obs = pose.apply(x)
    u_cur = np.array([[k.fx * obs[0] / obs[2] + k.cx + 1.0, k.cy]])
    point, _, _ = triangulate_rays(bearings(px, k), bearings(u_cur, k), np.array([baseline, 0, 0]))
    return abs(point[0, 2] - depth)


def test_tau_matches_finite_difference_geometry():
    for depth in (2.0, 8.0):
        tau = math.sqrt(measurement_variance([K300.cx, K300.cy], depth, PoseSE3(translation=[-0.2, 0, 0]), K300))
        assert tau == pytest.approx(_fd_tau(depth, 0.2, K300), rel=0.02)


def test_tau_grows_quadratically_with_depth():
    pose = PoseSE3(translation=[-0.2, 0, 0])
    t2 = math.sqrt(measurement_variance([K300.cx, K300.cy], 2.0, pose, K300))
    t8 = math.sqrt(measurement_variance([K300.cx, K300.cy], 8.0, pose, K300))
    # first-order theory gives 16; the exact geometry adds the disparity nonlinearity
    assert t8 / t2 == pytest.approx(16.0, rel=0.15)
    assert t8 / t2 == pytest.approx(_fd_tau(8.0, 0.2, K300) / _fd_tau(2.0, 0.2, K300), rel=0.02)


def test_tau_zero_baseline():
    with pytest.raises(DegenerateBaseline):
        measurement_variance([100, 100], 3.0, PoseSE3(), K300)


@given(
    st.floats(0, 671),
    st.floats(0, 375),
    st.floats(0.5, 50),
    st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 0.05),
)
def test_tau_positive(u, v, depth, c):
    pose = PoseSE3(translation=-np.asarray(c))
    try:
        tau_sq = measurement_variance([u, v], depth, pose, DEFAULT_INTRINSICS)
    except DegenerateBaseline:
        return
    assert tau_sq > 0


def test_consistent_measurements_converge():
    s = init_filter(5.0, 0.5, 50.0, prior_evidence=1.0)
    ms = [DepthMeasurement(3.0, 0.01)] * 50
    s = run(s, ms)
    assert abs(s.mu - 3.0) < 1e-3
    assert s.inlier_ratio > 0.9
    assert s.status is Status.CONVERGED
    oracle = grid_bayes_oracle(ms, 0.5, 50.0)
    assert abs(oracle.depth_mean - 3.0) < 1e-3


def test_inlier_fraction_closed_form_with_default_prior():
    # each update adds at most one to a, so a / (a + b) <= (10 + 50) / (20 + 50)
    s = run(init_filter(5.0, 0.5, 50.0), [DepthMeasurement(3.0, 0.01)] * 50)
    assert s.a + s.b == pytest.approx(70.0)
    assert 0.84 < s.inlier_ratio <= 60.0 / 70.0


def test_gross_outlier_is_downweighted():
    s = run(init_filter(5.0, 0.5, 50.0), [DepthMeasurement(3.0, 0.04)] * 5)
    m = DepthMeasurement(50.0, 0.04)
    robust = update(s, m)
    plain = gaussian_update(s, m)
    assert robust.inlier_ratio < s.inlier_ratio
    assert abs(robust.mu - s.mu) < abs(plain.mu - s.mu)


@pytest.mark.parametrize("tau_sq", [1e200, math.inf])
def test_uninformative_measurement(tau_sq):
    s = run(init_filter(5.0, 0.5, 50.0), [DepthMeasurement(3.0, 0.04)] * 3)
    s2 = update(s, DepthMeasurement(20.0, tau_sq))
    assert abs(s2.mu - s.mu) < 1e-9


def test_diverged_filter_is_frozen():
    s = init_filter(5.0, 0.5, 50.0, prior_evidence=1.0)
    s = run(s, generate_measurement_stream(5.0, 0.0, 0.1, 0.5, 50.0, 100, seed=0))
    assert s.status is Status.DIVERGED
    assert update(s, DepthMeasurement(5.0, 0.01)) == s


def test_oracle_matches_conjugate_result_for_pure_inliers():
    # with rho pinned to 1 the posterior mean is the precision-weighted average
    g = rng(1)
    tau = 0.2
    x = g.normal(4.0, tau, 25)
    ms = [DepthMeasurement(float(v), tau * tau) for v in x]
    oracle = grid_bayes_oracle(ms, 0.5, 50.0)
    assert abs(oracle.depth_mean - x.mean()) < 0.02
    assert abs(oracle.depth_mean - 4.0) < 2 * tau / math.sqrt(len(x))


@pytest.mark.parametrize("k", [5, 10, 20])
def test_oracle_concentrates_on_inliers(k):
    ms = generate_measurement_stream(4.0, 1.0, 0.1, 0.5, 50.0, k, seed=k)
    mean = grid_bayes_oracle(ms, 0.5, 50.0).depth_mean
    assert abs(mean - np.mean([m.d_tilde for m in ms])) < 0.01
    assert abs(mean - 4.0) < 3 * 0.1 / math.sqrt(k)


def test_oracle_detects_pure_outlier_stream():
    ms = generate_measurement_stream(4.0, 0.0, 0.1, 0.5, 50.0, 30, seed=2)
    assert grid_bayes_oracle(ms, 0.5, 50.0).rho_mean < 0.2


@pytest.mark.parametrize("seed", range(10))
def test_filter_agrees_with_oracle(seed):
    ms = generate_measurement_stream(3.0, 0.7, 0.1, 0.5, 50.0, 20, seed=seed)
    s = run(init_filter(5.0, 0.5, 50.0), ms)
    oracle = grid_bayes_oracle(ms, 0.5, 50.0)
    assert abs(s.mu - oracle.depth_mean) / oracle.depth_mean < 0.05


def test_evidence_grows_by_one_per_update():
    s = init_filter(5.0, 0.5, 50.0)
    for m in generate_measurement_stream(3.0, 0.6, 0.2, 0.5, 50.0, 40, seed=4):
        t = update(s, m)
        if t.status is Status.DIVERGED and t.n_updates == s.n_updates:
            break
        assert (t.a + t.b) - (s.a + s.b) == pytest.approx(1.0, abs=1e-12)
        s = t


def test_variance_shrinks_for_consistent_measurements():
    # measurements inside one standard deviation of the current mean
    g = rng(5)
    for _ in range(200):
        s = init_filter(g.uniform(2, 40), 0.5, 50.0)
        for _ in range(10):
            x = s.mu + g.uniform(-1, 1) * s.sigma
            if x <= 0:
                continue
            t = update(s, DepthMeasurement(x, g.uniform(1e-4, 4.0)))
            assert t.sigma_sq <= s.sigma_sq * (1 + 1e-12)
            s = t


@given(st.floats(0.01, 100.0))
def test_update_is_scale_covariant(alpha):
    ms = generate_measurement_stream(3.0, 0.7, 0.1, 0.5, 50.0, 15, seed=6)
    s = run(init_filter(5.0, 0.5, 50.0), ms)
    scaled = run(
        init_filter(5.0 * alpha, 0.5 * alpha, 50.0 * alpha),
        [DepthMeasurement(m.d_tilde * alpha, m.tau_sq * alpha * alpha) for m in ms],
    )
    assert scaled.mu == pytest.approx(alpha * s.mu, rel=1e-9)
    assert scaled.sigma_sq == pytest.approx(alpha * alpha * s.sigma_sq, rel=1e-9)
    assert scaled.a == pytest.approx(s.a, rel=1e-9)


def test_zero_frames_all_active():
    g = FilterGrid(DEFAULT_INTRINSICS.scaled(0.1), PoseSE3(), 5.0, 0.5, 50.0)
    assert g.counts()["active"] == g.width * g.height
    assert len(extract_points(g, g.k, PoseSE3())) == 0


def test_halving_frame_rate_reduces_convergence():
    k = HALF_INTRINSICS
    full = simulate_plane(k, frames=60, baseline_per_frame=0.01, seed=1)
    half = simulate_plane(k, frames=30, baseline_per_frame=0.02, seed=1)
    assert full.accurate_converged_fraction() >= 0.9
    assert half.grid.converged_fraction() < full.grid.converged_fraction()


def test_step_without_measurements_changes_nothing():
    k = DEFAULT_INTRINSICS.scaled(0.1)
    g = FilterGrid(k, PoseSE3(), 5.0, 0.5, 50.0)

    def nothing(grid, pose, wanted):
        shape = wanted.shape
        return np.full(shape, np.nan), np.full(shape, np.inf), np.zeros(shape, bool)

    stats = step_grid(g, PoseSE3(translation=[0.1, 0, 0]), nothing)
    assert stats.measured == 0 and stats.active == g.width * g.height


def test_extract_points_on_converged_plane():
    k = DEFAULT_INTRINSICS.scaled(0.1)
    g = FilterGrid(k, PoseSE3(), 5.0, 0.5, 50.0)
    g.mu[:] = 3.0
    g.status[:] = int(Status.CONVERGED)
    g.status[0, :5] = int(Status.ACTIVE)
    pose = PoseSE3.from_matrix(np.eye(3), [1.0, 2.0, 3.0])
    cloud = extract_points(g, k, pose)
    assert len(cloud) == int((g.status == Status.CONVERGED).sum())
    pts = cloud.positions
    centred = pts - pts.mean(axis=0)
    normal = np.linalg.svd(centred)[2][-1]
    assert np.sqrt(np.mean((centred @ normal) ** 2)) < 1e-6


def test_measurement_stream_degenerate_mixture():
    ms = generate_measurement_stream(4.0, 1.0, 1e-12, 0.5, 50.0, 100, seed=1)
    assert all(abs(m.d_tilde - 4.0) < 1e-9 for m in ms)


def test_measurement_stream_uniform_ks():
    from scipy import stats

    x = [m.d_tilde for m in generate_measurement_stream(4.0, 0.0, 0.1, 0.5, 50.0, 10_000, seed=2)]
    d = stats.kstest(x, stats.uniform(loc=0.5, scale=49.5).cdf).statistic
    assert d < 1.36 / math.sqrt(10_000)


def test_measurement_stream_inlier_fraction():
    _, labels = generate_measurement_stream(4.0, 0.7, 0.1, 0.5, 50.0, 10_000, seed=3, return_labels=True)
    assert abs(labels.mean() - 0.7) < 0.02


def test_measurement_stream_bad_range():
    with pytest.raises(InvalidRange):
        generate_measurement_stream(60.0, 0.7, 0.1, 0.5, 50.0, 10)
