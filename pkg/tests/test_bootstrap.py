import numpy as np
import pytest

from agrimap.bootstrap import (
    Correspondences,
    Model,
    epipolar_errors,
    estimate_fundamental_ransac,
    estimate_homography_ransac,
    fit_homography,
    recover_pose_from_fundamental,
    score_models,
    score_ratio,
    select_initialization,
    transfer_errors,
)
from agrimap.errors import CheiralityAmbiguous, DegenerateBaseline, DegenerateConfiguration, InsufficientCorrespondences, ZeroScores
from agrimap.geometry import rotation_angle_deg
from agrimap.synth import DEFAULT_INTRINSICS, rng, two_view_fixture


def _angle_between(a, b):
    c = abs(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return np.degrees(np.arccos(min(c, 1.0)))


def test_homography_exact_on_plane():
    fx = two_view_fixture("planar", n=200, seed=1)
    res = estimate_homography_ransac(fx.correspondences, seed=0)
    e_fwd, e_bwd = transfer_errors(res.matrix, fx.correspondences)
    assert res.inliers.all()
    assert np.sqrt(e_fwd.max()) < 1e-6 and np.sqrt(e_bwd.max()) < 1e-6


def test_minimal_homography_up_to_scale():
    h = np.array([[1.1, 0.05, 12.0], [-0.02, 0.95, -7.0], [1e-4, -2e-4, 1.0]])
    ref = np.array([[10.0, 20.0], [600.0, 30.0], [500.0, 350.0], [40.0, 300.0]])
    x = np.column_stack([ref, np.ones(4)]) @ h.T
    cur = x[:, :2] / x[:, 2:]
    est = fit_homography(Correspondences(ref, cur))
    est = est / est[2, 2]
    np.testing.assert_allclose(est, h / h[2, 2], atol=1e-9)


def test_homography_outlier_recall():
    for seed in range(5):
        fx = two_view_fixture("planar", n=300, seed=seed, pixel_noise=0.3, outlier_fraction=0.3)
        res = estimate_homography_ransac(fx.correspondences, seed=seed)
        recall = res.inliers[~fx.outliers].mean()
        assert recall >= 0.95


def test_fundamental_exact_on_general_scene():
    fx = two_view_fixture("general", n=200, seed=2)
    res = estimate_fundamental_ransac(fx.correspondences, seed=0)
    e_cur, e_ref = epipolar_errors(res.matrix, fx.correspondences)
    assert np.sqrt(max(e_cur.max(), e_ref.max())) < 1e-6
    assert abs(np.linalg.det(res.matrix)) < 1e-12


def test_fundamental_rank_two_under_noise():
    for seed in range(10):
        fx = two_view_fixture("general", n=150, seed=seed, pixel_noise=1.0, outlier_fraction=0.2)
        res = estimate_fundamental_ransac(fx.correspondences, seed=seed)
        assert abs(np.linalg.det(res.matrix)) < 1e-12


def test_fundamental_outlier_recall():
    for seed in range(5):
        fx = two_view_fixture("general", n=300, seed=seed, pixel_noise=0.3, outlier_fraction=0.3)
        res = estimate_fundamental_ransac(fx.correspondences, seed=seed)
        assert res.inliers[~fx.outliers].mean() >= 0.95


def test_planar_scene_makes_fundamental_degenerate():
    fx = two_view_fixture("planar", n=200, seed=3, pixel_noise=0.5)
    with pytest.raises(DegenerateConfiguration):
        estimate_fundamental_ransac(fx.correspondences, seed=0)


def test_too_few_correspondences():
    c = Correspondences(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(InsufficientCorrespondences):
        estimate_homography_ransac(c)
    c = Correspondences(np.zeros((7, 2)), np.zeros((7, 2)))
    with pytest.raises(InsufficientCorrespondences):
        estimate_fundamental_ransac(c)


def test_ransac_is_deterministic():
    fx = two_view_fixture("general", n=200, seed=4, pixel_noise=0.5, outlier_fraction=0.3)
    a = estimate_fundamental_ransac(fx.correspondences, seed=9)
    b = estimate_fundamental_ransac(fx.correspondences, seed=9)
    assert a.matrix.tobytes() == b.matrix.tobytes()
    assert np.array_equal(a.inliers, b.inliers)


def test_score_ratio_example():
    s = score_ratio(80.0, 20.0)
    assert s.r_h == pytest.approx(0.8)
    assert s.selected_model is Model.HOMOGRAPHY
    with pytest.raises(ZeroScores):
        score_ratio(0.0, 0.0)


@pytest.mark.parametrize("alpha", [1e-6, 0.3, 7.0, 1e6])
def test_score_ratio_scale_invariant(alpha):
    for s_h, s_f in [(80, 20), (20, 80), (1, 3), (5, 4)]:
        assert score_ratio(alpha * s_h, alpha * s_f).selected_model == score_ratio(s_h, s_f).selected_model


def test_threshold_monotonic():
    g = rng(0)
    for _ in range(200):
        s_h, s_f = g.uniform(0, 100, 2)
        t1, t2 = sorted(g.uniform(0, 1, 2))
        if score_ratio(s_h, s_f, t1).selected_model is Model.FUNDAMENTAL:
            assert score_ratio(s_h, s_f, t2).selected_model is Model.FUNDAMENTAL


def test_planar_scene_selects_homography_at_strict_threshold():
    fx = two_view_fixture("planar", n=200, seed=5, pixel_noise=0.5)
    sel = select_initialization(fx.correspondences, fx.k, selection_threshold=0.8)
    assert sel.score.r_h > 0.8
    assert sel.score.selected_model is Model.HOMOGRAPHY


def test_general_scene_selects_fundamental():
    fx = two_view_fixture("general", n=200, seed=6, pixel_noise=0.5)
    sel = select_initialization(fx.correspondences, fx.k)
    assert sel.score.r_h < 0.5
    assert sel.score.selected_model is Model.FUNDAMENTAL


def test_score_models_rejects_out_of_image_points():
    fx = two_view_fixture("general", n=50, seed=7)
    bad = Correspondences(fx.correspondences.ref + 1000.0, fx.correspondences.cur)
    with pytest.raises(ValueError):
        score_models(bad, np.eye(3), None, DEFAULT_INTRINSICS)


def test_pose_recovery_noiseless():
    for seed in range(20):
        fx = two_view_fixture("general", n=200, seed=seed)
        f = estimate_fundamental_ransac(fx.correspondences, seed=seed).matrix
        rel = recover_pose_from_fundamental(f, fx.correspondences, fx.k)
        r_true = fx.pose_ref_to_cur.rotation_matrix
        assert rotation_angle_deg(rel.rotation_matrix, r_true) < 0.5
        assert _angle_between(rel.translation_direction, fx.pose_ref_to_cur.translation) < 1.0
        # sign of the translation is resolved by cheirality, not only its line
        assert np.dot(rel.translation_direction, fx.pose_ref_to_cur.translation) > 0


def test_pose_recovery_zero_baseline():
    fx = two_view_fixture("general", n=200, seed=1, baseline=0.0, max_rotation_deg=0.0)
    c = fx.correspondences
    f = estimate_fundamental_ransac(c, seed=0, check_degeneracy=False).matrix
    with pytest.raises((CheiralityAmbiguous, DegenerateBaseline)):
        recover_pose_from_fundamental(f, c, fx.k)


def test_pose_recovery_with_noise():
    trials, ok = 40, 0
    for seed in range(trials):
        fx = two_view_fixture("general", n=200, seed=100 + seed, pixel_noise=0.5)
        f = estimate_fundamental_ransac(fx.correspondences, seed=seed).matrix
        rel = recover_pose_from_fundamental(f, fx.correspondences, fx.k)
        ok += rotation_angle_deg(rel.rotation_matrix, fx.pose_ref_to_cur.rotation_matrix) < 1.0
    assert ok >= 0.95 * trials
