"""Depth-map evaluation with per-image median scaling.

Metrics over jointly valid pixels, prediction ``d`` and ground truth ``g``::

    abs_rel  = mean(|d - g| / g)
    sq_rel   = mean((d - g)^2 / g)
    rmse     = sqrt(mean((d - g)^2))
    rmse_log = sqrt(mean((ln d - ln g)^2))
    acc_n    = mean(max(d / g, g / d) < 1.25^n),  n = 1, 2, 3
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoValidPixels, ZeroMedian

DEFAULT_MIN_DEPTH = 0.1
DEFAULT_MAX_DEPTH = 80.0
ACCURACY_BASE = 1.25


class DepthMap:
    """Dense depth image in meters with a validity mask.

    Pixels that are non-finite or non-positive are always invalid, whatever the
    mask passed in says.
    """

    def __init__(self, depth, valid=None):
        d = np.asarray(depth)
        if d.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if not np.issubdtype(d.dtype, np.floating):
            d = d.astype(float)
        ok = np.isfinite(d) & (d > 0)
        if valid is not None:
            v = np.asarray(valid, dtype=bool)
            if v.shape != d.shape:
                raise ValueError("mask shape differs from depth shape")
            ok &= v
        self.depth = d
        self.valid = ok

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self):
        return self.depth.shape

    def __repr__(self) -> str:
        return f"DepthMap({self.width}x{self.height}, valid={int(self.valid.sum())})"


@dataclass(frozen=True)
class DepthEvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    acc_1: float
    acc_2: float
    acc_3: float
    valid_pixel_count: int
    applied_scale: float = 1.0

    def to_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rmse": self.rmse,
            "rmse_log": self.rmse_log,
            "acc_1": self.acc_1,
            "acc_2": self.acc_2,
            "acc_3": self.acc_3,
            "valid_pixel_count": self.valid_pixel_count,
            "applied_scale": self.applied_scale,
        }

    METRICS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "acc_1", "acc_2", "acc_3")


def _check_pair(pred: DepthMap, gt: DepthMap):
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")


def evaluation_mask(pred: DepthMap, gt: DepthMap, min_depth=None, max_depth=None) -> np.ndarray:
    _check_pair(pred, gt)
    mask = pred.valid & gt.valid
    if min_depth is not None:
        mask &= gt.depth >= min_depth
    if max_depth is not None:
        mask &= gt.depth <= max_depth
    return mask


def median_scale(pred: DepthMap, gt: DepthMap, mask: Optional[np.ndarray] = None):
    """Rescale ``pred`` so its median over the joint mask matches the ground truth.

    Returns ``(scaled_prediction, applied_scale)``. Invalid prediction pixels are
    carried over unscaled.
    """
    if mask is None:
        mask = evaluation_mask(pred, gt)
    if not mask.any():
        raise NoValidPixels("no jointly valid pixels")
    med_pred = float(np.median(pred.depth[mask]))
    if med_pred == 0:
        raise ZeroMedian("prediction median is zero")
    scale = float(np.median(gt.depth[mask])) / med_pred
    out = pred.depth.astype(float, copy=True)
    out[pred.valid] *= scale
    return DepthMap(out, pred.valid), scale


def evaluate(
    pred_scaled: DepthMap,
    gt: DepthMap,
    min_depth: Optional[float] = DEFAULT_MIN_DEPTH,
    max_depth: Optional[float] = DEFAULT_MAX_DEPTH,
    applied_scale: float = 1.0,
) -> DepthEvalReport:
    mask = evaluation_mask(pred_scaled, gt, min_depth, max_depth)
    n = int(mask.sum())
    if n == 0:
        raise NoValidPixels("no jointly valid pixels inside the depth range")
    d = pred_scaled.depth[mask].astype(float)
    g = gt.depth[mask].astype(float)
    diff = d - g
    ratio = np.maximum(d / g, g / d)
    log_diff = np.log(d) - np.log(g)
    return DepthEvalReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean(log_diff**2))),
        acc_1=float(np.mean(ratio < ACCURACY_BASE)),
        acc_2=float(np.mean(ratio < ACCURACY_BASE**2)),
        acc_3=float(np.mean(ratio < ACCURACY_BASE**3)),
        valid_pixel_count=n,
        applied_scale=float(applied_scale),
    )


def evaluate_median_scaled(
    pred: DepthMap,
    gt: DepthMap,
    min_depth: Optional[float] = DEFAULT_MIN_DEPTH,
    max_depth: Optional[float] = DEFAULT_MAX_DEPTH,
) -> DepthEvalReport:
    """Median-scale over the evaluation mask, then evaluate."""
    mask = evaluation_mask(pred, gt, min_depth, max_depth)
    scaled, scale = median_scale(pred, gt, mask)
    return evaluate(scaled, gt, min_depth, max_depth, applied_scale=scale)


def aggregate(reports) -> dict:
    """Unweighted per-image mean of each metric, in input order."""
    reports = list(reports)
    if not reports:
        raise NoValidPixels("no reports to aggregate")
    out = {}
    for name in DepthEvalReport.METRICS:
        total = 0.0
        for r in reports:
            total += getattr(r, name)
        out[name] = total / len(reports)
    out["images"] = len(reports)
    return out
