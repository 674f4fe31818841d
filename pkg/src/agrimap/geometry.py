"""Pinhole camera model, rigid/similarity transforms and two-view triangulation.

Conventions:

* quaternions are stored ``(w, x, y, z)``; TUM files use ``(x, y, z, w)`` and
  are reordered by :mod:`agrimap.formats`.
* a :class:`PoseSE3` maps points of its source frame into its target frame,
  ``x_target = R @ x_source + t``. Trajectory poses are camera-to-world, so the
  translation is the camera centre. ``pose_ref_to_cur`` arguments map
  reference-camera coordinates into current-camera coordinates.
* images are assumed rectified (no distortion model).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateBaseline, NegativeDepth, NonPositiveDepth

# rays closer than this to parallel cannot be triangulated usefully
PARALLEL_RAY_TOL_DEG = 0.05


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def quat_to_matrix(q) -> np.ndarray:
    return Rotation.from_quat(np.asarray(q, dtype=float), scalar_first=True).as_matrix()


def matrix_to_quat(r) -> np.ndarray:
    """Rotation matrix (or stack) to unit quaternion(s) with non-negative w."""
    q = Rotation.from_matrix(np.asarray(r, dtype=float)).as_quat(scalar_first=True, canonical=True)
    return q


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def rotation_angle_deg(r_a, r_b) -> float:
    """Geodesic angle between two rotation matrices, in degrees."""
    c = (np.trace(np.asarray(r_a).T @ np.asarray(r_b)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def matrix_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def contains(self, pixels) -> np.ndarray:
        p = np.atleast_2d(pixels)
        return (p[:, 0] >= 0) & (p[:, 0] < self.width) & (p[:, 1] >= 0) & (p[:, 1] < self.height)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the image resized by ``factor``."""
        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            max(1, int(round(self.width * factor))),
            max(1, int(round(self.height * factor))),
        )


@dataclass(frozen=True)
class PoseSE3:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: Optional[float] = None

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        n = np.linalg.norm(q)
        if q.shape != (4,) or not np.isfinite(n) or n == 0:
            raise ValueError("rotation must be a non-zero quaternion (w, x, y, z)")
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"rotation quaternion is not unit norm (|q| = {n!r})")
        object.__setattr__(self, "rotation", _frozen(q))
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def from_matrix(cls, r, t, timestamp=None) -> "PoseSE3":
        return cls(matrix_to_quat(r), t, timestamp)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation_matrix.T + self.translation

    def inverse(self) -> "PoseSE3":
        r = self.rotation_matrix
        return PoseSE3.from_matrix(r.T, -r.T @ self.translation, self.timestamp)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """``self ∘ other``: apply ``other`` first."""
        r = self.rotation_matrix
        return PoseSE3.from_matrix(
            r @ other.rotation_matrix, r @ other.translation + self.translation, other.timestamp
        )

    def as_sim3(self) -> "TransformSim3":
        return TransformSim3(1.0, self.rotation, self.translation)


@dataclass(frozen=True)
class TransformSim3:
    """``x -> scale * R @ x + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be positive")
        object.__setattr__(self, "scale", float(self.scale))
        q = np.asarray(self.rotation, dtype=float)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("rotation must be a unit quaternion (w, x, y, z)")
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(np.asarray(self.translation, dtype=float).reshape(3)))

    @classmethod
    def identity(cls) -> "TransformSim3":
        return cls()

    @classmethod
    def from_matrix(cls, scale, r, t) -> "TransformSim3":
        return cls(scale, matrix_to_quat(r), t)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.scale * (p @ self.rotation_matrix.T) + self.translation

    def compose(self, other: "TransformSim3") -> "TransformSim3":
        """``self ∘ other``: apply ``other`` first."""
        r = self.rotation_matrix
        return TransformSim3.from_matrix(
            self.scale * other.scale,
            r @ other.rotation_matrix,
            self.scale * (r @ other.translation) + self.translation,
        )

    def inverse(self) -> "TransformSim3":
        rt = self.rotation_matrix.T
        return TransformSim3.from_matrix(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation_wxyz": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSim3":
        return cls(d["scale"], d["rotation_wxyz"], d["translation"])


class Trajectory:
    """Time-ordered camera-to-world poses, stored column-wise.

    ``positions`` is (N, 3), ``quaternions`` (N, 4) in (w, x, y, z) order.
    """

    def __init__(self, timestamps, positions, quaternions=None):
        ts = np.asarray(timestamps, dtype=float).reshape(-1)
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        if quaternions is None:
            quat = np.tile([1.0, 0.0, 0.0, 0.0], (len(ts), 1))
        else:
            quat = np.asarray(quaternions, dtype=float).reshape(-1, 4)
        if not (len(ts) == len(pos) == len(quat)):
            raise ValueError("timestamps, positions and quaternions differ in length")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(pos)) and np.all(np.isfinite(quat))):
            raise ValueError("trajectory contains non-finite values")
        self.timestamps = _frozen(ts)
        self.positions = _frozen(pos)
        self.quaternions = _frozen(quat)

    @classmethod
    def from_poses(cls, poses) -> "Trajectory":
        poses = list(poses)
        if any(p.timestamp is None for p in poses):
            raise ValueError("trajectory poses need timestamps")
        return cls(
            [p.timestamp for p in poses],
            [p.translation for p in poses] if poses else np.zeros((0, 3)),
            [p.rotation for p in poses] if poses else np.zeros((0, 4)),
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i) -> PoseSE3:
        return PoseSE3(self.quaternions[i], self.positions[i], float(self.timestamps[i]))

    def __iter__(self) -> Iterator[PoseSE3]:
        for i in range(len(self)):
            yield self[i]

    def rotation_matrices(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros((0, 3, 3))
        return quat_to_matrix(self.quaternions)

    def length(self) -> float:
        """Summed distance between consecutive positions."""
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())

    def subset(self, idx) -> "Trajectory":
        return Trajectory(self.timestamps[idx], self.positions[idx], self.quaternions[idx])

    def __repr__(self) -> str:
        return f"Trajectory(n={len(self)})"


def project(point, k: CameraIntrinsics) -> np.ndarray:
    x, y, z = np.asarray(point, dtype=float)
    if not z > 0:
        raise NonPositiveDepth(f"point has z = {z}")
    return np.array([k.fx * x / z + k.cx, k.fy * y / z + k.cy])


def backproject(pixel, depth: float, k: CameraIntrinsics) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth = {depth}")
    u, v = np.asarray(pixel, dtype=float)
    return np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])


def project_many(points, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized :func:`project`; no depth check."""
    p = np.asarray(points, dtype=float)
    z = p[:, 2]
    return np.column_stack([k.fx * p[:, 0] / z + k.cx, k.fy * p[:, 1] / z + k.cy])


def backproject_many(pixels, depths, k: CameraIntrinsics) -> np.ndarray:
    px = np.asarray(pixels, dtype=float)
    d = np.asarray(depths, dtype=float)
    return np.column_stack([(px[:, 0] - k.cx) / k.fx * d, (px[:, 1] - k.cy) / k.fy * d, d])


def bearings(pixels, k: CameraIntrinsics) -> np.ndarray:
    """Unnormalized rays ``K^-1 [u, v, 1]`` (unit z component)."""
    px = np.atleast_2d(np.asarray(pixels, dtype=float))
    return np.column_stack([(px[:, 0] - k.cx) / k.fx, (px[:, 1] - k.cy) / k.fy, np.ones(len(px))])


def triangulate_rays(f_ref, f_cur_in_ref, center_cur):
    """Least-squares ray intersection for batches of rays.

    Solves ``min |l1 * f_ref - (c + l2 * f_cur)|`` per row and returns the
    midpoint together with the two ray parameters. ``f_*`` are (N, 3), the
    current camera centre ``c`` a 3-vector in the reference frame.
    """
    f1 = np.asarray(f_ref, dtype=float)
    f2 = np.asarray(f_cur_in_ref, dtype=float)
    c = np.asarray(center_cur, dtype=float)
    # cross-product form; avoids the cancellation in the normal equations
    n = np.cross(f1, f2)
    nn = np.einsum("ij,ij->i", n, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = np.einsum("ij,ij->i", np.cross(c, f2), n) / nn
        l2 = np.einsum("ij,ij->i", np.cross(c, f1), n) / nn
    p1 = l1[:, None] * f1
    p2 = c + l2[:, None] * f2
    return 0.5 * (p1 + p2), l1, l2


def ray_angles_deg(f1, f2) -> np.ndarray:
    f1 = np.atleast_2d(f1)
    f2 = np.atleast_2d(f2)
    c = np.einsum("ij,ij->i", f1, f2) / (np.linalg.norm(f1, axis=1) * np.linalg.norm(f2, axis=1))
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def triangulate_two_view(pixel_ref, pixel_cur, pose_ref_to_cur: PoseSE3, k: CameraIntrinsics):
    """Intersect the two viewing rays of a correspondence.

    Returns ``(point_in_ref_frame, residual_px)`` where the residual is the
    larger of the two reprojection errors.
    """
    r = pose_ref_to_cur.rotation_matrix
    t = pose_ref_to_cur.translation
    center_cur = -r.T @ t
    if np.linalg.norm(center_cur) < 1e-12:
        raise DegenerateBaseline("zero baseline")
    f_ref = bearings(pixel_ref, k)
    f_cur = bearings(pixel_cur, k) @ r  # rotate into the reference frame: R^T f
    if ray_angles_deg(f_ref, f_cur)[0] < PARALLEL_RAY_TOL_DEG:
        raise DegenerateBaseline("viewing rays are nearly parallel")
    point, l1, l2 = triangulate_rays(f_ref, f_cur, center_cur)
    if not (l1[0] > 0 and l2[0] > 0):
        raise NegativeDepth("triangulated point lies behind a camera")
    x_ref = point[0]
    x_cur = r @ x_ref + t
    if x_ref[2] <= 0 or x_cur[2] <= 0:
        raise NegativeDepth("triangulated point lies behind a camera")
    e_ref = np.linalg.norm(project(x_ref, k) - np.asarray(pixel_ref, dtype=float))
    e_cur = np.linalg.norm(project(x_cur, k) - np.asarray(pixel_cur, dtype=float))
    return x_ref, float(max(e_ref, e_cur))
