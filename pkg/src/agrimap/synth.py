"""Seeded synthetic scenes, trajectories and measurement streams.

Every generator draws from ``numpy.random.Generator(PCG64(seed))``, which is
bit-reproducible across platforms, so fixtures written from these functions can
be committed and regenerated exactly.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .bootstrap import Correspondences
from .depth_filter import DepthMeasurement
from .depth_metrics import DepthMap
from .errors import InvalidRange, NoVisiblePoints
from .geodesy import enu_to_geodetic
from .geometry import (
    CameraIntrinsics,
    PoseSE3,
    Trajectory,
    TransformSim3,
    matrix_to_quat,
    project_many,
)
from .mapping import PointCloud


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ZED-like rectified camera at 672x376
DEFAULT_INTRINSICS = CameraIntrinsics(350.0, 350.0, 336.0, 188.0, 672, 376)
# same camera at half resolution, used for the depth-filter plane fixture
HALF_INTRINSICS = DEFAULT_INTRINSICS.scaled(0.5)


class SceneKind(str, enum.Enum):
    PLANAR = "planar"
    GENERAL = "general"
    FRONTO_PARALLEL = "fronto-parallel"
    LATTICE = "lattice"


class MotionKind(str, enum.Enum):
    STRAIGHT = "straight"
    UTURN = "uturn"
    LOOP = "loop"


@dataclass(frozen=True)
class SceneSpec:
    kind: SceneKind = SceneKind.GENERAL
    extent: float = 4.0  # lateral size of the scene, meters
    count: int = 500  # points (lattice: points per axis)
    depth: float = 5.0  # distance of the scene centre along +z, meters
    seed: int = 0
    spacing: float = 0.05  # lattice spacing
    tilt_deg: float = 30.0  # planar scene: tilt of the plane about the x axis

    def __post_init__(self):
        object.__setattr__(self, "kind", SceneKind(self.kind))
        if self.count <= 0 or self.extent <= 0 or self.depth <= 0:
            raise ValueError("scene counts and sizes must be positive")


@dataclass(frozen=True)
class MotionSpec:
    kind: MotionKind = MotionKind.UTURN
    length: float = 100.0
    frame_count: int = 200
    frame_rate: float = 15.0
    height: float = 1.0
    # corruption of the simulated estimate
    translation_noise: float = 0.0  # per-step random walk, meters
    rotation_noise_deg: float = 0.0  # per-step yaw random walk, degrees
    scale: float = 1.0
    scale_drift: float = 0.0  # relative scale change accumulated by the final frame
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", MotionKind(self.kind))
        if not self.length > 0:
            raise ValueError("length must be positive")
        if self.frame_count < 2:
            raise ValueError("need at least two frames")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def baseline_per_frame(self) -> float:
        return self.length / (self.frame_count - 1)


# ---------------------------------------------------------------------------
# trajectories


def _path(kind: MotionKind, length: float, s: np.ndarray):
    """Planar path positions and headings at arc lengths ``s``."""
    if kind == MotionKind.STRAIGHT:
        return np.column_stack([s, np.zeros_like(s)]), np.zeros_like(s)
    if kind == MotionKind.LOOP:
        radius = length / (2.0 * math.pi)
        th = s / radius
        xy = np.column_stack([radius * np.sin(th), radius * (1.0 - np.cos(th))])
        return xy, th
    # two parallel rows joined by a half circle
    turn = 0.2 * length
    radius = turn / math.pi
    leg = 0.4 * length
    xy = np.zeros((len(s), 2))
    heading = np.zeros(len(s))
    a = s <= leg
    xy[a, 0] = s[a]
    b = (s > leg) & (s <= leg + turn)
    th = (s[b] - leg) / radius
    xy[b, 0] = leg + radius * np.sin(th)
    xy[b, 1] = radius * (1.0 - np.cos(th))
    heading[b] = th
    c = s > leg + turn
    xy[c, 0] = leg - (s[c] - leg - turn)
    xy[c, 1] = 2.0 * radius
    heading[c] = math.pi
    return xy, heading


def _camera_rotations(heading: np.ndarray) -> np.ndarray:
    """Camera-to-world rotations for a forward-looking camera (z forward, y down)."""
    fwd = np.column_stack([np.cos(heading), np.sin(heading), np.zeros_like(heading)])
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    down = np.tile(-up, (len(heading), 1))
    return np.stack([right, down, fwd], axis=2)


def generate_trajectory(m: MotionSpec):
    """Ground truth and a corrupted estimate of it, as two trajectories.

    The estimate integrates the ground-truth steps scaled by a (possibly
    drifting) factor and rotated by an accumulated yaw drift, plus a
    translational random walk.
    """
    g = rng(m.seed)
    n = m.frame_count
    s = np.linspace(0.0, m.length, n)
    xy, heading = _path(m.kind, m.length, s)
    pos = np.column_stack([xy, np.full(n, m.height)])
    rots = _camera_rotations(heading)
    ts = np.arange(n) / m.frame_rate
    gt = Trajectory(ts, pos, matrix_to_quat(rots))

    steps = np.diff(pos, axis=0)
    progress = np.arange(1, n) / (n - 1)
    scale = m.scale * (1.0 + m.scale_drift * progress)
    yaw = np.cumsum(g.normal(0.0, math.radians(m.rotation_noise_deg), n - 1)) if m.rotation_noise_deg > 0 else np.zeros(n - 1)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rot_steps = np.column_stack(
        [cy * steps[:, 0] - sy * steps[:, 1], sy * steps[:, 0] + cy * steps[:, 1], steps[:, 2]]
    )
    walk = g.normal(0.0, m.translation_noise, (n - 1, 3)) if m.translation_noise > 0 else np.zeros((n - 1, 3))
    # written as a correction on top of the truth so an uncorrupted estimate is exact
    correction = np.vstack([np.zeros(3), np.cumsum(scale[:, None] * rot_steps - steps + walk, axis=0)])
    est_pos = pos + correction
    yaw_full = np.concatenate([[0.0], yaw])
    drift_r = Rotation.from_euler("z", yaw_full).as_matrix()
    est = Trajectory(ts, est_pos, matrix_to_quat(drift_r @ rots))
    return gt, est


def random_sim3(g: np.random.Generator, scale_range=(0.1, 10.0), translation_scale: float = 100.0) -> TransformSim3:
    """Log-uniform scale, uniformly random rotation, Gaussian translation."""
    s = float(np.exp(g.uniform(np.log(scale_range[0]), np.log(scale_range[1]))))
    q = g.normal(size=4)
    q /= np.linalg.norm(q)
    return TransformSim3(s, q, g.normal(0.0, translation_scale, 3))


# ---------------------------------------------------------------------------
# scenes


def _plane_frame(spec: SceneSpec):
    """Point on the plane and unit normal (camera-1 / world frame)."""
    centre = np.array([0.0, 0.0, spec.depth])
    if spec.kind == SceneKind.FRONTO_PARALLEL:
        return centre, np.array([0.0, 0.0, -1.0])
    t = math.radians(spec.tilt_deg)
    return centre, np.array([0.0, -math.sin(t), -math.cos(t)])


def generate_scene_points(spec: SceneSpec) -> np.ndarray:
    g = rng(spec.seed)
    n = spec.count
    half = spec.extent / 2.0
    if spec.kind == SceneKind.LATTICE:
        return lattice(n, spec.spacing, origin=(-(n - 1) * spec.spacing / 2, -(n - 1) * spec.spacing / 2, spec.depth))
    if spec.kind == SceneKind.GENERAL:
        xy = g.uniform(-half, half, (n, 2))
        z = g.uniform(spec.depth - half, spec.depth + half, n)
        return np.column_stack([xy, z])
    centre, normal = _plane_frame(spec)
    # in-plane basis
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.cross(normal, e1)
    uv = g.uniform(-half, half, (n, 2))
    return centre + uv[:, :1] * e1 + uv[:, 1:] * e2


def lattice(n_per_axis: int, spacing: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Cubic lattice of ``n_per_axis**3`` points, coordinates ``origin + i * spacing``."""
    i = np.arange(n_per_axis)
    gx, gy, gz = np.meshgrid(i, i, i, indexing="ij")
    idx = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]).astype(float)
    return np.asarray(origin, dtype=float) + idx * spacing


def render_plane_depth(spec: SceneSpec, camera_to_world: PoseSE3, k: CameraIntrinsics) -> DepthMap:
    """Exact z-depth of the scene plane at every pixel centre."""
    centre, normal = _plane_frame(spec)
    r = camera_to_world.rotation_matrix
    c = camera_to_world.translation
    vv, uu = np.mgrid[0 : k.height, 0 : k.width]
    rays_cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu, dtype=float)], axis=-1)
    rays_w = rays_cam @ r.T
    denom = rays_w @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        z = ((centre - c) @ normal) / denom
    valid = np.isfinite(z) & (z > 0)
    return DepthMap(np.where(valid, z, 0.0), valid)


def render_points_depth(points_world: np.ndarray, camera_to_world: PoseSE3, k: CameraIntrinsics) -> DepthMap:
    """Nearest-point z-buffer of a point set; pixels without a point are invalid."""
    cam = camera_to_world.inverse().apply(points_world)
    front = cam[:, 2] > 0
    cam = cam[front]
    depth = np.zeros((k.height, k.width))
    if len(cam):
        px = np.floor(project_many(cam, k)).astype(np.int64)
        ok = (px[:, 0] >= 0) & (px[:, 0] < k.width) & (px[:, 1] >= 0) & (px[:, 1] < k.height)
        px, z = px[ok], cam[ok, 2]
        order = np.argsort(-z, kind="stable")  # far first, near overwrites
        depth[px[order, 1], px[order, 0]] = z[order]
    return DepthMap(depth, depth > 0)


@dataclass
class SceneViews:
    points: np.ndarray
    correspondences: List[Correspondences]  # frame i -> frame i+1
    point_ids: List[np.ndarray]
    depth_maps: List[DepthMap]


def generate_scene_views(
    spec: SceneSpec,
    poses: Sequence[PoseSE3],
    k: CameraIntrinsics,
    pixel_noise_sigma: float = 0.0,
    seed: Optional[int] = None,
) -> SceneViews:
    """Project a scene into each camera (poses are camera-to-world)."""
    pts = generate_scene_points(spec)
    g = rng(spec.seed + 1 if seed is None else seed)
    proj, vis = [], []
    for pose in poses:
        cam = pose.inverse().apply(pts)
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = project_many(cam, k)
        uv = uv + g.normal(0.0, pixel_noise_sigma, uv.shape) if pixel_noise_sigma > 0 else uv
        ok = (cam[:, 2] > 0) & np.all(np.isfinite(uv), axis=1) & k.contains(np.nan_to_num(uv, nan=-1.0))
        proj.append(uv)
        vis.append(ok)
    corrs, ids = [], []
    for i in range(len(poses) - 1):
        both = vis[i] & vis[i + 1]
        corrs.append(Correspondences(proj[i][both], proj[i + 1][both]))
        ids.append(np.flatnonzero(both))
    if len(poses) > 1 and not any(len(c) for c in corrs):
        raise NoVisiblePoints("no scene point is visible in two consecutive views")
    if spec.kind in (SceneKind.PLANAR, SceneKind.FRONTO_PARALLEL):
        depths = [render_plane_depth(spec, p, k) for p in poses]
    else:
        depths = [render_points_depth(pts, p, k) for p in poses]
    return SceneViews(pts, corrs, ids, depths)


@dataclass
class TwoViewFixture:
    correspondences: Correspondences
    pose_ref_to_cur: PoseSE3
    k: CameraIntrinsics
    points: np.ndarray  # reference-camera frame
    outliers: np.ndarray = field(default=None)


def two_view_fixture(
    kind="general",
    n: int = 200,
    seed: int = 0,
    pixel_noise: float = 0.0,
    baseline: float = 0.2,
    outlier_fraction: float = 0.0,
    k: CameraIntrinsics = DEFAULT_INTRINSICS,
    depth_range=(2.0, 10.0),
    max_rotation_deg: float = 5.0,
) -> TwoViewFixture:
    """Two calibrated views of a planar or general scene.

    Reference pixels are drawn uniformly over the image and lifted either onto a
    tilted plane (``planar``) or to a uniform random depth (``general``). The
    second camera is displaced by ``baseline`` meters in a random, mostly
    lateral direction and rotated by up to ``max_rotation_deg``.
    """
    kind = SceneKind(kind)
    g = rng(seed)
    axis = g.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(g.uniform(-max_rotation_deg, max_rotation_deg))
    r = Rotation.from_rotvec(axis * angle).as_matrix()
    direction = np.array([g.uniform(-1, 1), g.uniform(-0.3, 0.3), g.uniform(-0.3, 0.3)])
    direction /= np.linalg.norm(direction)
    center = baseline * direction
    pose = PoseSE3.from_matrix(r, -r @ center)

    if kind in (SceneKind.PLANAR, SceneKind.FRONTO_PARALLEL):
        plane = SceneSpec(kind, depth=0.5 * (depth_range[0] + depth_range[1]), tilt_deg=g.uniform(10, 50))
        c0, nrm = _plane_frame(plane)
    px_list, pts_list = [], []
    need = n
    while need > 0:
        m = 4 * need
        px = np.column_stack([g.uniform(0, k.width, m), g.uniform(0, k.height, m)])
        rays = np.column_stack([(px[:, 0] - k.cx) / k.fx, (px[:, 1] - k.cy) / k.fy, np.ones(m)])
        if kind in (SceneKind.PLANAR, SceneKind.FRONTO_PARALLEL):
            lam = (c0 @ nrm) / (rays @ nrm)
        else:
            lam = g.uniform(depth_range[0], depth_range[1], m)
        p = rays * lam[:, None]
        cur = p @ r.T + pose.translation
        ok = (lam > 0) & (cur[:, 2] > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = project_many(cur, k)
        ok &= k.contains(np.nan_to_num(uv, nan=-1.0))
        take = np.flatnonzero(ok)[:need]
        px_list.append(px[take])
        pts_list.append(p[take])
        need -= len(take)
    pts = np.vstack(pts_list)
    ref = project_many(pts, k)
    cur = project_many(pts @ r.T + pose.translation, k)
    if pixel_noise > 0:
        ref = ref + g.normal(0.0, pixel_noise, ref.shape)
        cur = cur + g.normal(0.0, pixel_noise, cur.shape)
    ref = np.clip(ref, 0.0, np.nextafter([k.width, k.height], 0))
    cur = np.clip(cur, 0.0, np.nextafter([k.width, k.height], 0))
    outliers = np.zeros(n, dtype=bool)
    if outlier_fraction > 0:
        n_out = int(round(outlier_fraction * n))
        idx = g.choice(n, n_out, replace=False)
        cur[idx] = np.column_stack([g.uniform(0, k.width, n_out), g.uniform(0, k.height, n_out)])
        outliers[idx] = True
    return TwoViewFixture(Correspondences(ref, cur), pose, k, pts, outliers)


# ---------------------------------------------------------------------------
# depth measurement streams


def generate_measurement_stream(
    true_depth: float,
    rho_true: float,
    tau: float,
    d_min: float,
    d_max: float,
    count: int,
    seed: int = 0,
    return_labels: bool = False,
):
    """Samples of the Gaussian + uniform measurement model.

    Each measurement is ``N(true_depth, tau^2)`` with probability ``rho_true``
    and ``U[d_min, d_max]`` otherwise. Inlier draws that come out non-positive
    are redrawn.
    """
    if not (0 < d_min < true_depth < d_max):
        raise InvalidRange("need 0 < d_min < true_depth < d_max")
    if not 0.0 <= rho_true <= 1.0:
        raise InvalidRange("rho_true must lie in [0, 1]")
    if not tau > 0:
        raise ValueError("tau must be positive")
    g = rng(seed)
    is_inlier = g.random(count) < rho_true
    gauss = g.normal(true_depth, tau, count)
    unif = g.uniform(d_min, d_max, count)
    while np.any(is_inlier & (gauss <= 0)):
        bad = is_inlier & (gauss <= 0)
        gauss[bad] = g.normal(true_depth, tau, int(bad.sum()))
    x = np.where(is_inlier, gauss, unif)
    ms = [DepthMeasurement(float(v), float(tau * tau)) for v in x]
    return (ms, is_inlier) if return_labels else ms


def random_cloud(n: int, extent: float = 1.0, seed: int = 0) -> PointCloud:
    return PointCloud(rng(seed).uniform(0.0, extent, (n, 3)))


# ---------------------------------------------------------------------------
# horizon images and GPS streams


def horizon_image(
    width: int = 672,
    height: int = 376,
    boundary_row: int = 100,
    tilt_rows: float = 0.0,
    seed: int = 0,
    sky_level: float = 210.0,
    field_level: float = 90.0,
    field_texture: float = 25.0,
) -> np.ndarray:
    """uint8 frame with a smooth bright sky above a textured darker field.

    The boundary runs from ``boundary_row - tilt_rows`` at the left edge to
    ``boundary_row + tilt_rows`` at the right edge; sky rows are those above it.
    """
    g = rng(seed)
    cols = np.arange(width)
    edge = boundary_row + tilt_rows * (2.0 * cols / max(width - 1, 1) - 1.0)
    rows = np.arange(height)[:, None]
    # sky darkens slightly towards the horizon
    sky = sky_level - 10.0 * rows / max(height, 1) + g.normal(0.0, 1.0, (height, width))
    field_ = field_level + g.normal(0.0, field_texture, (height, width))
    img = np.where(rows < np.round(edge)[None, :], sky, field_)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def gps_fixes(
    timestamps,
    enu,
    origin=(-33.0, -60.0, 25.0),
    sigma_horizontal: float = 0.01,
    sigma_vertical: float = 0.02,
    seed: int = 0,
) -> np.ndarray:
    """(N, 4) ``timestamp, lat, lon, alt`` rows for noisy ENU positions."""
    enu = np.asarray(enu, dtype=float).reshape(-1, 3)
    g = rng(seed)
    noise = np.column_stack(
        [
            g.normal(0.0, sigma_horizontal, len(enu)),
            g.normal(0.0, sigma_horizontal, len(enu)),
            g.normal(0.0, sigma_vertical, len(enu)),
        ]
    )
    lat, lon, alt = enu_to_geodetic(enu + noise, origin)
    return np.column_stack([np.asarray(timestamps, dtype=float), lat, lon, alt])
