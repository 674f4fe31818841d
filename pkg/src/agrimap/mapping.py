"""Map post-processing: geo-registration, similarity transforms and point density.

Density follows the mass-over-volume idea applied to point clouds:

* precise density counts, for every point, the other points within radius R;
* approximate density takes the nearest-neighbour distance as the radius of a
  sphere holding one point;
* volume density turns either into points per cubic meter,
  ``d = N / (4/3 * pi * R^3)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, TooFewPoints, ZeroRadius
from .geometry import Trajectory, TransformSim3, matrix_to_quat
from .trajectory import associate, umeyama

DEFAULT_DENSITY_RADIUS = 0.1
DEFAULT_HISTOGRAM_BINS = 50
# boundary slack so points at exactly R survive floating-point rounding
RADIUS_RTOL = 1e-9


class PointCloud:
    def __init__(self, positions, colors=None, scalars=None):
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.positions = pos
        self.colors = None
        if colors is not None:
            c = np.asarray(colors)
            if c.shape != (len(pos), 3):
                raise ValueError("colors must be (N, 3)")
            self.colors = c.astype(np.uint8)
        self.scalars = None
        if scalars is not None:
            s = np.asarray(scalars, dtype=float).reshape(-1)
            if len(s) != len(pos):
                raise ValueError("scalar channel length differs from point count")
            self.scalars = s

    def __len__(self) -> int:
        return len(self.positions)

    def with_scalars(self, scalars) -> "PointCloud":
        return PointCloud(self.positions, self.colors, scalars)

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)}, colors={self.colors is not None}, scalars={self.scalars is not None})"


# ---------------------------------------------------------------------------
# transforms


def apply_transform(obj, t: TransformSim3):
    """Map a :class:`PointCloud` or :class:`Trajectory` through ``t``.

    Colors and scalar channels are preserved. Trajectory orientations are
    rotated along with the positions.
    """
    if isinstance(obj, PointCloud):
        return PointCloud(t.apply(obj.positions) if len(obj) else obj.positions, obj.colors, obj.scalars)
    if isinstance(obj, Trajectory):
        if len(obj) == 0:
            return obj
        rots = t.rotation_matrix @ obj.rotation_matrices()
        return Trajectory(obj.timestamps, t.apply(obj.positions), matrix_to_quat(rots))
    raise TypeError(f"cannot transform {type(obj).__name__}")


# ---------------------------------------------------------------------------
# geo-registration


@dataclass(frozen=True)
class GeoAnchor:
    timestamp: float
    position: np.ndarray  # local ENU meters


@dataclass(frozen=True)
class GeoRegistration:
    transform: TransformSim3
    rmse: float
    pairs: int
    residuals: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "residual_rmse": self.rmse,
            "residual_max": float(self.residuals.max()) if len(self.residuals) else 0.0,
            "pairs": self.pairs,
        }


def anchors_as_trajectory(anchors: Sequence[GeoAnchor]) -> Trajectory:
    return Trajectory([a.timestamp for a in anchors], [a.position for a in anchors])


def georegister(camera_centers: Trajectory, anchors: Sequence[GeoAnchor], max_time_offset: float = 0.02) -> GeoRegistration:
    """Similarity mapping the SLAM frame onto the anchors' ENU frame."""
    pairs = associate(camera_centers, anchors_as_trajectory(anchors), max_time_offset)
    src = pairs.est_positions
    dst = pairs.gt_positions
    t = umeyama(src, dst, with_scale=True)
    res = np.linalg.norm(dst - t.apply(src), axis=1)
    return GeoRegistration(t, float(np.sqrt(np.mean(res**2))), len(res), res)


# ---------------------------------------------------------------------------
# density


class DensityMode(str, enum.Enum):
    PRECISE = "PreciseCount"
    APPROX = "ApproxNearestNeighbor"
    VOLUME = "Volume"


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"edges": [float(e) for e in self.edges], "counts": [int(c) for c in self.counts]}


@dataclass
class DensityResult:
    """Per-point density values.

    ``values`` holds neighbour counts (PreciseCount), equivalent radii in
    meters (ApproxNearestNeighbor) or points per m³ (Volume). ``counts`` and
    ``radii`` keep the N and R that produced them.
    """

    mode: DensityMode
    values: np.ndarray
    counts: np.ndarray
    radii: np.ndarray
    radius: Optional[float] = None
    histogram: Optional[Histogram] = None

    def summary(self) -> dict:
        v = self.values
        out = {
            "mode": self.mode.value,
            "radius": self.radius,
            "points": int(len(v)),
        }
        if len(v):
            out.update(min=float(v.min()), max=float(v.max()), mean=float(v.mean()), median=float(np.median(v)))
        if self.histogram is not None:
            out["histogram"] = self.histogram.to_dict()
        return out


def squared_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``|p - q|^2`` for every row of ``points``, summed in x, y, z order."""
    dx = points[:, 0] - q[0]
    dy = points[:, 1] - q[1]
    dz = points[:, 2] - q[2]
    return dx * dx + dy * dy + dz * dz


def within_radius(d2, radius: float):
    return d2 <= radius * radius * (1.0 + RADIUS_RTOL)


def precise_density(
    cloud: PointCloud, radius: float = DEFAULT_DENSITY_RADIUS, bins: int = DEFAULT_HISTOGRAM_BINS
) -> DensityResult:
    """Number of other points within ``radius`` of each point.

    A k-d tree proposes candidates from a slightly enlarged ball; each candidate
    is then accepted with the same squared-distance test a brute-force scan
    uses, so the counts do not depend on the tree's internal arithmetic.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    pts = cloud.positions
    n = len(pts)
    counts = np.zeros(n, dtype=np.int64)
    if n:
        tree = cKDTree(pts)
        candidates = tree.query_ball_point(pts, radius * (1.0 + 1e-6))
        for i, cand in enumerate(candidates):
            cand = np.asarray(cand, dtype=np.int64)
            cand = cand[cand != i]
            if cand.size:
                counts[i] = int(within_radius(squared_distances(pts[cand], pts[i]), radius).sum())
    values = counts.astype(float)
    hist = density_histogram(values, bins) if n else None
    return DensityResult(DensityMode.PRECISE, values, counts, np.full(n, float(radius)), float(radius), hist)


def approximate_density(cloud: PointCloud, bins: int = DEFAULT_HISTOGRAM_BINS) -> DensityResult:
    """Distance from each point to its nearest other point (N fixed at 1)."""
    pts = cloud.positions
    n = len(pts)
    if n < 2:
        raise TooFewPoints("approximate density needs at least 2 points")
    tree = cKDTree(pts)
    # a few candidates per point, re-measured with the canonical distance so
    # near-ties resolve the same way a brute-force scan would
    kq = min(n, 8)
    _, idx = tree.query(pts, k=kq)
    d2 = np.empty((n, kq))
    for j in range(kq):
        diff = pts[idx[:, j]] - pts
        d2[:, j] = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    d2[idx == np.arange(n)[:, None]] = np.inf
    r = np.sqrt(d2.min(axis=1))
    return DensityResult(DensityMode.APPROX, r, np.ones(n, dtype=np.int64), r, None, density_histogram(r, bins))


def sphere_volume(radius):
    return 4.0 / 3.0 * np.pi * np.asarray(radius, dtype=float) ** 3


def volume_density(result: DensityResult, bins: int = DEFAULT_HISTOGRAM_BINS) -> DensityResult:
    """Convert counts and radii into points per cubic meter."""
    if result.mode == DensityMode.VOLUME:
        raise ValueError("result is already a volume density")
    if np.any(result.radii <= 0):
        raise ZeroRadius("volume density needs strictly positive radii (duplicate points?)")
    d = result.counts / sphere_volume(result.radii)
    hist = density_histogram(d, bins) if len(d) else None
    return DensityResult(DensityMode.VOLUME, d, result.counts, result.radii, result.radius, hist)


def density_histogram(values, bin_count: int = DEFAULT_HISTOGRAM_BINS) -> Histogram:
    """Equal-width histogram over [min, max]; the maximum lands in the last bin.

    Values spanning too little range to separate the edges are binned as if
    constant, over [min - 0.5, min + 0.5].
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise EmptyInput("no values to bin")
    if bin_count < 1:
        raise ValueError("bin_count must be at least 1")
    lo, hi = float(v.min()), float(v.max())
    edges = np.linspace(lo, hi, bin_count + 1)
    if lo == hi or np.any(np.diff(edges) <= 0):
        # span too small for distinct edges: bin it like constant data
        counts, edges = np.histogram(v, bins=bin_count, range=(lo - 0.5, lo + 0.5))
    else:
        counts, edges = np.histogram(v, bins=bin_count)
    return Histogram(edges, counts.astype(np.int64))
