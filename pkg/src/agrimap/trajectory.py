"""Absolute trajectory error with rigid or scale-corrected alignment.

The error is position-only: after aligning the estimate onto the ground truth
with a closed-form SE(3) or Sim(3) fit, the RMSE of the remaining position
differences is reported together with its ratio to the ground-truth path
length.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NoOverlap, ZeroSpread
from .geometry import Trajectory, TransformSim3

DEFAULT_MAX_TIME_OFFSET = 0.02
TIME_SLACK = 1e-9


class Alignment(str, enum.Enum):
    SE3 = "se3"
    SIM3 = "sim3"


@dataclass(frozen=True)
class AssociatedPairs:
    est_index: np.ndarray
    gt_index: np.ndarray
    est_positions: np.ndarray
    gt_positions: np.ndarray
    est_timestamps: np.ndarray
    gt_timestamps: np.ndarray
    max_time_offset: float

    def __len__(self) -> int:
        return len(self.est_index)


@dataclass(frozen=True)
class AteReport:
    rmse: float
    mean: float
    median: float
    max: float
    trajectory_length: float
    ratio: float  # percent
    alignment: Alignment
    recovered_scale: float
    pairs: int

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean": self.mean,
            "median": self.median,
            "max": self.max,
            "trajectory_length": self.trajectory_length,
            "ratio_percent": self.ratio,
            "alignment": self.alignment.value,
            "recovered_scale": self.recovered_scale,
            "pairs": self.pairs,
        }


def associate(est: Trajectory, gt: Trajectory, max_time_offset: float = DEFAULT_MAX_TIME_OFFSET) -> AssociatedPairs:
    """Greedy one-to-one nearest-timestamp matching.

    All candidate pairs within ``max_time_offset`` are ranked by time
    difference and accepted in that order unless either pose is already taken.
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoOverlap("empty trajectory")
    te = est.timestamps
    tg = gt.timestamps
    # decimal timestamps rarely subtract exactly; a nanosecond of slack keeps
    # offsets equal to the tolerance inside it
    tol = max_time_offset + TIME_SLACK
    lo = np.searchsorted(tg, te - tol, side="left")
    hi = np.searchsorted(tg, te + tol, side="right")
    counts = hi - lo
    ei = np.repeat(np.arange(len(te)), counts)
    gi = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)]) if counts.sum() else np.zeros(0, dtype=int)
    diff = np.abs(te[ei] - tg[gi])
    keep = diff <= tol
    ei, gi, diff = ei[keep], gi[keep], diff[keep]
    if len(ei) == 0:
        raise NoOverlap(f"no timestamps match within {max_time_offset} s")
    order = np.lexsort((gi, ei, diff))
    used_e = np.zeros(len(te), dtype=bool)
    used_g = np.zeros(len(tg), dtype=bool)
    out_e, out_g = [], []
    for j in order:
        a, b = ei[j], gi[j]
        if used_e[a] or used_g[b]:
            continue
        used_e[a] = used_g[b] = True
        out_e.append(a)
        out_g.append(b)
    out_e = np.array(out_e, dtype=np.int64)
    out_g = np.array(out_g, dtype=np.int64)
    s = np.argsort(tg[out_g], kind="stable")
    out_e, out_g = out_e[s], out_g[s]
    return AssociatedPairs(
        out_e,
        out_g,
        est.positions[out_e],
        gt.positions[out_g],
        te[out_e],
        tg[out_g],
        float(max_time_offset),
    )


def pairs_from_arrays(est_positions, gt_positions) -> AssociatedPairs:
    """Pairs built by index, for callers that already have matched positions."""
    e = np.asarray(est_positions, dtype=float).reshape(-1, 3)
    g = np.asarray(gt_positions, dtype=float).reshape(-1, 3)
    if e.shape != g.shape:
        raise ValueError("position arrays differ in shape")
    idx = np.arange(len(e))
    return AssociatedPairs(idx, idx, e, g, idx.astype(float), idx.astype(float), 0.0)


def umeyama(src, dst, with_scale: bool = True) -> TransformSim3:
    """Least-squares similarity (or rigid) transform mapping ``src`` onto ``dst``.

    Minimizes ``sum |dst_i - (s R src_i + t)|^2`` in closed form. Raises
    :class:`DegenerateGeometry` when either point set is collinear or
    coincident, since the rotation about that line is then undetermined.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("point sets must both be (N, 3)")
    n = len(src)
    if n < 3:
        raise DegenerateGeometry(f"need at least 3 position pairs, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = float((xs**2).sum()) / n
    if var_s == 0.0:
        raise ZeroSpread("all estimated positions coincide")
    for name, x in (("estimated", xs), ("reference", xd)):
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateGeometry(f"{name} positions are collinear or coincident")
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    r = u @ np.diag(sign) @ vt
    s = float((d * sign).sum() / var_s) if with_scale else 1.0
    t = mu_d - s * (r @ mu_s)
    return TransformSim3.from_matrix(s, r, t)


def align_se3(pairs: AssociatedPairs) -> TransformSim3:
    return umeyama(pairs.est_positions, pairs.gt_positions, with_scale=False)


def align_sim3(pairs: AssociatedPairs) -> TransformSim3:
    return umeyama(pairs.est_positions, pairs.gt_positions, with_scale=True)


def align(pairs: AssociatedPairs, mode) -> TransformSim3:
    mode = Alignment(mode)
    return align_sim3(pairs) if mode == Alignment.SIM3 else align_se3(pairs)


def ate_ratio(rmse: float, length: float) -> float:
    """ATE as a percentage of trajectory length."""
    if length <= 0:
        return float("inf") if rmse > 0 else 0.0
    return 100.0 * rmse / length


def residuals(pairs: AssociatedPairs, transform: TransformSim3) -> np.ndarray:
    return np.linalg.norm(pairs.gt_positions - transform.apply(pairs.est_positions), axis=1)


def compute_ate(pairs: AssociatedPairs, transform: TransformSim3, alignment=Alignment.SIM3) -> AteReport:
    err = residuals(pairs, transform)
    # path length over the matched ground-truth poses, in time order
    order = np.argsort(pairs.gt_timestamps, kind="stable")
    g = pairs.gt_positions[order]
    length = float(np.linalg.norm(np.diff(g, axis=0), axis=1).sum()) if len(g) > 1 else 0.0
    rmse = float(np.sqrt(np.mean(err**2)))
    return AteReport(
        rmse=rmse,
        mean=float(np.mean(err)),
        median=float(np.median(err)),
        max=float(np.max(err)),
        trajectory_length=length,
        ratio=ate_ratio(rmse, length),
        alignment=Alignment(alignment),
        recovered_scale=transform.scale,
        pairs=len(err),
    )


def evaluate_ate(est: Trajectory, gt: Trajectory, mode, max_time_offset: float = DEFAULT_MAX_TIME_OFFSET):
    """Associate, align and score in one call; returns ``(report, transform, pairs)``."""
    pairs = associate(est, gt, max_time_offset)
    t = align(pairs, mode)
    return compute_ate(pairs, t, mode), t, pairs
