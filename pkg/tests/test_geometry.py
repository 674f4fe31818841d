import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from agrimap.errors import DegenerateBaseline, NonPositiveDepth
from agrimap.geometry import (
    CameraIntrinsics,
    PoseSE3,
    TransformSim3,
    Trajectory,
    backproject,
    matrix_to_quat,
    project,
    quat_to_matrix,
    rotation_angle_deg,
    triangulate_two_view,
)
from agrimap.synth import DEFAULT_INTRINSICS, random_sim3, rng

K100 = CameraIntrinsics(100.0, 100.0, 336.0, 188.0, 672, 376)


def test_optical_axis_hits_principal_point():
    np.testing.assert_array_equal(project([0, 0, 1], K100), [336, 188])


def test_project_offset_point():
    np.testing.assert_allclose(project([0.5, 0, 1], K100), [386, 188], atol=0)


def test_backproject_examples():
    np.testing.assert_allclose(backproject([336, 188], 2.0, K100), [0, 0, 2])
    np.testing.assert_allclose(backproject([386, 188], 1.0, K100), [0.5, 0, 1])


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_nonpositive_depth_rejected(z):
    with pytest.raises(NonPositiveDepth):
        project([0.1, 0.2, z], K100)
    with pytest.raises(NonPositiveDepth):
        backproject([10, 10], z, K100)


coords = st.floats(-50, 50, allow_nan=False)


@given(coords, coords, st.floats(1e-3, 1e3))
def test_project_backproject_round_trip(x, y, z):
    p = np.array([x, y, z])
    q = backproject(project(p, DEFAULT_INTRINSICS), z, DEFAULT_INTRINSICS)
    assert np.allclose(q, p, rtol=1e-12, atol=1e-12 * max(1.0, abs(x), abs(y)))


@given(st.floats(0, 671.99), st.floats(0, 375.99), st.floats(1e-3, 1e3))
def test_backproject_project_round_trip(u, v, d):
    px = project(backproject([u, v], d, DEFAULT_INTRINSICS), DEFAULT_INTRINSICS)
    assert np.allclose(px, [u, v], rtol=1e-12, atol=1e-9)


def _random_pose(g, baseline=0.2):
    r = Rotation.from_rotvec(g.normal(0, 0.05, 3)).as_matrix()
    d = g.normal(size=3)
    c = baseline * d / np.linalg.norm(d)
    return PoseSE3.from_matrix(r, -r @ c)


def test_noiseless_triangulation_recovers_point():
    g = rng(1)
    k = DEFAULT_INTRINSICS
    for _ in range(200):
        pose = _random_pose(g)
        x = np.array([g.uniform(-1, 1), g.uniform(-0.5, 0.5), g.uniform(2, 10)])
        x_cur = pose.apply(x)
        point, res = triangulate_two_view(project(x, k), project(x_cur, k), pose, k)
        assert np.linalg.norm(point - x) < 1e-9
        assert res < 1e-6


def test_zero_baseline_is_degenerate():
    k = DEFAULT_INTRINSICS
    with pytest.raises(DegenerateBaseline):
        triangulate_two_view([300, 200], [300, 200], PoseSE3(), k)


def test_parallel_rays_are_degenerate():
    # 1 micrometre baseline at 10 m: rays far within the parallel tolerance
    k = DEFAULT_INTRINSICS
    pose = PoseSE3(translation=[-1e-6, 0, 0])
    x = np.array([0.0, 0.0, 10.0])
    with pytest.raises(DegenerateBaseline):
        triangulate_two_view(project(x, k), project(pose.apply(x), k), pose, k)


def _mc_depth_std(depth, trials, g, k, baseline=0.2, sigma=0.5):
    pose = PoseSE3(translation=[-baseline, 0, 0])
    x = np.array([0.0, 0.0, depth])
    u1, u2 = project(x, k), project(pose.apply(x), k)
    zs = []
    for _ in range(trials):
        p, _ = triangulate_two_view(u1 + g.normal(0, sigma, 2), u2 + g.normal(0, sigma, 2), pose, k)
        zs.append(p[2])
    return np.std(zs)


def test_triangulation_noise_matches_first_order_model():
    # depth error std predicted by linearizing z = f b / disparity
    k = DEFAULT_INTRINSICS
    g = rng(7)
    b, sigma = 0.2, 0.5
    for depth in (2.5, 5.0):
        predicted = depth**2 / (k.fx * b) * sigma * math.sqrt(2.0)
        observed = _mc_depth_std(depth, 4000, g, k, b, sigma)
        assert abs(observed / predicted - 1.0) < 0.10


def test_triangulation_error_grows_quadratically_with_depth():
    k = DEFAULT_INTRINSICS
    g = rng(8)
    s5 = _mc_depth_std(5.0, 4000, g, k)
    s25 = _mc_depth_std(2.5, 4000, g, k)
    assert abs((s5 / s25) / 4.0 - 1.0) < 0.10


def test_quaternion_conversion_matches_scipy():
    rot = Rotation.random(50, random_state=3)
    q_xyzw = rot.as_quat()
    q_wxyz = np.column_stack([q_xyzw[:, 3], q_xyzw[:, :3]])
    np.testing.assert_allclose(quat_to_matrix(q_wxyz), rot.as_matrix(), atol=1e-12)
    back = matrix_to_quat(rot.as_matrix())
    assert np.all(back[:, 0] >= 0)
    np.testing.assert_allclose(np.abs(np.sum(back * q_wxyz, axis=1)), 1.0, atol=1e-12)


def test_pose_inverse_and_compose():
    g = rng(4)
    a, b = _random_pose(g, 1.0), _random_pose(g, 2.0)
    x = g.normal(size=(10, 3))
    np.testing.assert_allclose(a.compose(b).apply(x), a.apply(b.apply(x)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(x)), x, atol=1e-12)


def test_sim3_composition_is_associative_with_application():
    g = rng(5)
    for _ in range(50):
        a, b = random_sim3(g), random_sim3(g)
        x = g.normal(size=(20, 3))
        np.testing.assert_allclose(a.compose(b).apply(x), a.apply(b.apply(x)), rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(a.inverse().apply(a.apply(x)), x, atol=1e-9)


def test_sim3_dict_round_trip():
    t = random_sim3(rng(6))
    u = TransformSim3.from_dict(t.to_dict())
    np.testing.assert_array_equal(u.matrix, t.matrix)


def test_rotation_angle():
    r = Rotation.from_euler("z", 30, degrees=True).as_matrix()
    assert rotation_angle_deg(np.eye(3), r) == pytest.approx(30.0)


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        PoseSE3(rotation=[2.0, 0, 0, 0])
    with pytest.raises(ValueError):
        TransformSim3(scale=0.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(-1, 1, 0, 0, 10, 10)
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Trajectory([0.0, 1.0], [[0, 0, 0], [np.nan, 0, 0]])


def test_trajectory_length_and_indexing():
    tr = Trajectory([0, 1, 2], [[0, 0, 0], [3, 4, 0], [3, 4, 1]])
    assert tr.length() == pytest.approx(6.0)
    assert tr[1].timestamp == 1.0
    assert len(list(tr)) == 3


def test_intrinsics_scaling():
    k = DEFAULT_INTRINSICS.scaled(0.5)
    assert (k.fx, k.cx, k.width, k.height) == (175.0, 168.0, 336, 188)
