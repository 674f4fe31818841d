"""Sky/field boundary detection and keypoint suppression above the horizon.

Far points near the horizon carry almost no parallax, so they are masked out
before tracking. The sky is assumed to occupy the top of the frame and to be
brighter and smoother than the field below it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DROP_THRESHOLD = 30.0
DEFAULT_SKY_ROUGHNESS = 8.0
DEFAULT_OFFSET_FRACTION = 0.05
WINDOW = 3
MIN_HEIGHT = 16


@dataclass(frozen=True)
class HorizonParams:
    # minimum brightness drop (gray levels) between the WINDOW rows above and below
    drop_threshold: float = DEFAULT_DROP_THRESHOLD
    # mean absolute row-to-row change allowed inside the sky region
    sky_roughness: float = DEFAULT_SKY_ROUGHNESS


@dataclass(frozen=True)
class HorizonMask:
    boundary_row: int
    offset_rows: int
    width: int
    height: int

    @property
    def cutoff(self) -> int:
        """First admitted row."""
        return min(self.boundary_row + self.offset_rows, self.height)

    @property
    def mask(self) -> np.ndarray:
        """(height, width) bool array, True where suppressed."""
        m = np.zeros((self.height, self.width), dtype=bool)
        m[: self.cutoff] = True
        return m


def to_luma(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim == 3:
        a = a[..., :3].astype(float) @ np.array([0.299, 0.587, 0.114])
    elif a.ndim != 2:
        raise ValueError("expected a 2-D gray or 3-D color image")
    return a.astype(float)


def column_boundaries(img, params: HorizonParams = HorizonParams()) -> np.ndarray:
    """Per-column sky/field boundary row, 0 where the column shows no sky.

    For each column the first run of rows whose brightness drop exceeds the
    threshold is located and its strongest row taken as the boundary. The
    column only counts as sky if the rows above that point are smooth.
    """
    g = to_luma(img)
    h, w = g.shape
    # drop[r] = mean(rows r-WINDOW..r-1) - mean(rows r..r+WINDOW-1), r in [WINDOW, h-WINDOW]
    c = np.vstack([np.zeros((1, w)), np.cumsum(g, axis=0)])
    r = np.arange(WINDOW, h - WINDOW + 1)
    above = (c[r] - c[r - WINDOW]) / WINDOW
    below = (c[r + WINDOW] - c[r]) / WINDOW
    drop = above - below
    strong = drop > params.drop_threshold
    rough = np.abs(np.diff(g, axis=0))
    rough_c = np.vstack([np.zeros((1, w)), np.cumsum(rough, axis=0)])

    out = np.zeros(w, dtype=np.int64)
    for col in range(w):
        hits = np.flatnonzero(strong[:, col])
        if hits.size == 0:
            continue
        start = hits[0]
        end = start
        while end + 1 < len(r) and strong[end + 1, col]:
            end += 1
        peak = start + int(np.argmax(drop[start : end + 1, col]))
        row = int(r[peak])
        # rows [0, start_row) must look like sky
        start_row = int(r[start])
        sky_rows = max(start_row - 1, 1)
        roughness = rough_c[sky_rows, col] / sky_rows
        if roughness <= params.sky_roughness:
            out[col] = row
    return out


def estimate_horizon(img, params: HorizonParams = HorizonParams()) -> int:
    """Median over columns of the per-column boundary, clamped to the image."""
    g = to_luma(img)
    h = g.shape[0]
    if h < MIN_HEIGHT:
        raise ValueError(f"image must be at least {MIN_HEIGHT} rows tall")
    rows = column_boundaries(g, params)
    return int(min(max(int(np.round(np.median(rows))), 0), h - 1))


def default_offset(height: int) -> int:
    return int(round(DEFAULT_OFFSET_FRACTION * height))


def build_mask(boundary_row: int, offset_rows: int, width: int, height: int) -> HorizonMask:
    if not 0 <= boundary_row <= height:
        raise ValueError("boundary_row must lie within [0, height]")
    if offset_rows < 0:
        raise ValueError("offset_rows must be non-negative")
    return HorizonMask(int(boundary_row), int(offset_rows), int(width), int(height))


def filter_keypoints(points, mask: HorizonMask) -> np.ndarray:
    """Keep keypoints (u, v) whose row v is at or below the mask cutoff, in order."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return p[p[:, 1] >= mask.cutoff]
