"""Monocular two-view initialization: homography vs. fundamental matrix.

Both models are estimated with seeded RANSAC over Hartley-normalized
correspondences, scored with truncated chi-square sums in the style of
ORB-SLAM, and compared through ``r_h = s_h / (s_h + s_f)``. Homography is
chosen only when ``r_h`` exceeds the selection threshold; agricultural scenes
are rarely planar, so the threshold is raised to 0.5 (or 0.8) to favour the
fundamental matrix.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    CheiralityAmbiguous,
    DegenerateConfiguration,
    InsufficientCorrespondences,
    ZeroScores,
)
from .geometry import (
    PARALLEL_RAY_TOL_DEG,
    CameraIntrinsics,
    matrix_to_quat,
    quat_to_matrix,
    ray_angles_deg,
    triangulate_rays,
)

# chi-square 95% quantiles at unit pixel sigma: 2 dof (transfer), 1 dof (epipolar)
CHI2_2DOF = 5.991
CHI2_1DOF = 3.841

DEFAULT_H_THRESHOLD = math.sqrt(CHI2_2DOF)
DEFAULT_F_THRESHOLD = math.sqrt(CHI2_1DOF)
DEFAULT_ITERATIONS = 200
DEFAULT_CONFIDENCE = 0.99
DEFAULT_SELECTION_THRESHOLD = 0.5

# fraction of F inliers explained by one homography above which F is ambiguous
PLANAR_DEGENERACY_FRACTION = 0.9


class Model(str, enum.Enum):
    HOMOGRAPHY = "Homography"
    FUNDAMENTAL = "Fundamental"


@dataclass(frozen=True)
class Correspondences:
    ref: np.ndarray
    cur: np.ndarray

    def __post_init__(self):
        ref = np.asarray(self.ref, dtype=float).reshape(-1, 2)
        cur = np.asarray(self.cur, dtype=float).reshape(-1, 2)
        if ref.shape != cur.shape:
            raise ValueError("reference and current pixel arrays differ in shape")
        if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(cur))):
            raise ValueError("correspondences contain non-finite pixels")
        object.__setattr__(self, "ref", ref)
        object.__setattr__(self, "cur", cur)

    def __len__(self) -> int:
        return len(self.ref)

    def subset(self, mask) -> "Correspondences":
        return Correspondences(self.ref[mask], self.cur[mask])


@dataclass(frozen=True)
class TwoViewScore:
    s_h: float
    s_f: float
    r_h: float
    selected_model: Model
    selection_threshold: float = DEFAULT_SELECTION_THRESHOLD

    def to_dict(self) -> dict:
        return {
            "s_h": self.s_h,
            "s_f": self.s_f,
            "r_h": self.r_h,
            "selected_model": self.selected_model.value,
            "selection_threshold": self.selection_threshold,
        }


@dataclass(frozen=True)
class RelativePose:
    rotation: np.ndarray  # (w, x, y, z), maps reference to current camera
    translation_direction: np.ndarray
    num_cheirality_inliers: int

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)


@dataclass(frozen=True)
class RansacResult:
    matrix: np.ndarray
    inliers: np.ndarray
    iterations: int


# ---------------------------------------------------------------------------
# normalization and minimal solvers


def hartley_normalization(points: np.ndarray):
    """Return (normalized homogeneous points, 3x3 transform)."""
    centroid = points.mean(axis=0)
    d = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    t = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    h = np.column_stack([points, np.ones(len(points))]) @ t.T
    return h, t


def _to_h(points):
    return np.column_stack([points, np.ones(len(points))])


def _dlt_homography(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """DLT on normalized homogeneous points, x2 ~ H x1."""
    n = len(x1)
    a = np.zeros((2 * n, 9))
    u, v = x1[:, 0], x1[:, 1]
    up, vp = x2[:, 0], x2[:, 1]
    a[0::2, 0:3] = x1
    a[0::2, 6] = -up * u
    a[0::2, 7] = -up * v
    a[0::2, 8] = -up
    a[1::2, 3:6] = x1
    a[1::2, 6] = -vp * u
    a[1::2, 7] = -vp * v
    a[1::2, 8] = -vp
    _, _, vt = np.linalg.svd(a)
    return vt[-1].reshape(3, 3)


def _eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Linear F (no rank enforcement) on normalized points, x2^T F x1 = 0."""
    a = np.column_stack(
        [
            x2[:, 0] * x1[:, 0],
            x2[:, 0] * x1[:, 1],
            x2[:, 0],
            x2[:, 1] * x1[:, 0],
            x2[:, 1] * x1[:, 1],
            x2[:, 1],
            x1[:, 0],
            x1[:, 1],
            np.ones(len(x1)),
        ]
    )
    _, _, vt = np.linalg.svd(a)
    return vt[-1].reshape(3, 3)


def _enforce_rank2(f: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(f)
    s[2] = 0.0
    return u @ np.diag(s) @ vt


def _normalize_matrix(m: np.ndarray) -> np.ndarray:
    m = m / np.linalg.norm(m)
    # fixed sign for reproducible output
    idx = np.argmax(np.abs(m))
    return m if m.flat[idx] > 0 else -m


def fit_homography(c: Correspondences) -> np.ndarray:
    """Least-squares normalized DLT homography (x_cur ~ H x_ref)."""
    if len(c) < 4:
        raise InsufficientCorrespondences(f"need 4 correspondences, got {len(c)}")
    x1, t1 = hartley_normalization(c.ref)
    x2, t2 = hartley_normalization(c.cur)
    hn = _dlt_homography(x1, x2)
    return _normalize_matrix(np.linalg.inv(t2) @ hn @ t1)


def fit_fundamental(c: Correspondences) -> np.ndarray:
    """Least-squares normalized 8-point F with rank-2 enforcement."""
    if len(c) < 8:
        raise InsufficientCorrespondences(f"need 8 correspondences, got {len(c)}")
    x1, t1 = hartley_normalization(c.ref)
    x2, t2 = hartley_normalization(c.cur)
    fn = _enforce_rank2(_eight_point(x1, x2))
    # second projection removes the rounding left by denormalization
    return _normalize_matrix(_enforce_rank2(t2.T @ fn @ t1))


# ---------------------------------------------------------------------------
# residuals


def transfer_errors(h: np.ndarray, c: Correspondences):
    """Squared forward (ref->cur) and backward transfer errors in pixels²."""
    x1 = _to_h(c.ref)
    x2 = _to_h(c.cur)
    with np.errstate(divide="ignore", invalid="ignore"):
        p2 = x1 @ h.T
        p2 = p2[:, :2] / p2[:, 2:3]
        hinv = np.linalg.inv(h)
        p1 = x2 @ hinv.T
        p1 = p1[:, :2] / p1[:, 2:3]
    e_fwd = ((p2 - c.cur) ** 2).sum(axis=1)
    e_bwd = ((p1 - c.ref) ** 2).sum(axis=1)
    e_fwd[~np.isfinite(e_fwd)] = np.inf
    e_bwd[~np.isfinite(e_bwd)] = np.inf
    return e_fwd, e_bwd


def epipolar_errors(f: np.ndarray, c: Correspondences):
    """Squared point-to-epipolar-line distances in the current and reference image."""
    x1 = _to_h(c.ref)
    x2 = _to_h(c.cur)
    l2 = x1 @ f.T  # lines in the current image
    l1 = x2 @ f  # lines in the reference image
    num = np.einsum("ij,ij->i", x2, l2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        e_cur = num / (l2[:, 0] ** 2 + l2[:, 1] ** 2)
        e_ref = num / (l1[:, 0] ** 2 + l1[:, 1] ** 2)
    e_cur[~np.isfinite(e_cur)] = np.inf
    e_ref[~np.isfinite(e_ref)] = np.inf
    return e_cur, e_ref


def _collinear(x: np.ndarray, tol: float = 1e-6) -> bool:
    """True if any three of the homogeneous points are (nearly) collinear."""
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if abs(np.linalg.det(x[[i, j, k]])) < tol:
                    return True
    return False


def _required_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    if inlier_ratio <= 0:
        return math.inf
    p_good = inlier_ratio**sample_size
    if p_good >= 1.0:
        return 0
    if p_good <= 0.0:
        return math.inf
    return math.log1p(-confidence) / math.log1p(-p_good)


# ---------------------------------------------------------------------------
# RANSAC


def estimate_homography_ransac(
    c: Correspondences,
    iterations: int = DEFAULT_ITERATIONS,
    inlier_threshold: float = DEFAULT_H_THRESHOLD,
    seed: int = 0,
    confidence: float = DEFAULT_CONFIDENCE,
) -> RansacResult:
    """Homography maximizing the symmetric-transfer inlier count.

    A correspondence is an inlier when both its forward and backward transfer
    errors are within ``inlier_threshold`` pixels.
    """
    n = len(c)
    if n < 4:
        raise InsufficientCorrespondences(f"need 4 correspondences, got {n}")
    x1, t1 = hartley_normalization(c.ref)
    x2, t2 = hartley_normalization(c.cur)
    t2inv = np.linalg.inv(t2)
    thr2 = inlier_threshold**2
    rng = np.random.Generator(np.random.PCG64(seed))

    best = None
    best_key = (-1, 0.0)
    needed = float(iterations)
    it = 0
    degenerate_samples = 0
    while it < min(iterations, needed):
        it += 1
        idx = rng.choice(n, 4, replace=False)
        if _collinear(x1[idx]) or _collinear(x2[idx]):
            degenerate_samples += 1
            continue
        h = t2inv @ _dlt_homography(x1[idx], x2[idx]) @ t1
        if abs(np.linalg.det(h)) < 1e-12 * np.linalg.norm(h) ** 3:
            degenerate_samples += 1
            continue
        e_fwd, e_bwd = transfer_errors(h, c)
        inl = (e_fwd <= thr2) & (e_bwd <= thr2)
        key = (int(inl.sum()), -float(np.sum(np.minimum(e_fwd + e_bwd, 2 * thr2))))
        if key > best_key:
            best_key, best = key, (h, inl)
            needed = _required_iterations(key[0] / n, 4, confidence)
    if best is None:
        raise DegenerateConfiguration("every minimal sample was collinear")

    h, inl = best
    # refine on the consensus set while it keeps growing
    for _ in range(3):
        if inl.sum() < 4:
            break
        h_ref = fit_homography(c.subset(inl))
        e_fwd, e_bwd = transfer_errors(h_ref, c)
        inl_ref = (e_fwd <= thr2) & (e_bwd <= thr2)
        if inl_ref.sum() < inl.sum():
            break
        same = np.array_equal(inl_ref, inl)
        h, inl = h_ref, inl_ref
        if same:
            break
    return RansacResult(_normalize_matrix(h), inl, it)


def estimate_fundamental_ransac(
    c: Correspondences,
    iterations: int = DEFAULT_ITERATIONS,
    inlier_threshold: float = DEFAULT_F_THRESHOLD,
    seed: int = 0,
    confidence: float = DEFAULT_CONFIDENCE,
    check_degeneracy: bool = True,
) -> RansacResult:
    """Rank-2 fundamental matrix maximizing the epipolar inlier count.

    Raises :class:`DegenerateConfiguration` when a single homography explains
    the consensus set (planar scene or pure rotation), because F is then not
    identifiable.
    """
    n = len(c)
    if n < 8:
        raise InsufficientCorrespondences(f"need 8 correspondences, got {n}")
    x1, t1 = hartley_normalization(c.ref)
    x2, t2 = hartley_normalization(c.cur)
    thr2 = inlier_threshold**2
    rng = np.random.Generator(np.random.PCG64(seed))

    best = None
    best_key = (-1, 0.0)
    needed = float(iterations)
    it = 0
    while it < min(iterations, needed):
        it += 1
        idx = rng.choice(n, 8, replace=False)
        fn = _enforce_rank2(_eight_point(x1[idx], x2[idx]))
        f = t2.T @ fn @ t1
        e_cur, e_ref = epipolar_errors(f, c)
        inl = (e_cur <= thr2) & (e_ref <= thr2)
        key = (int(inl.sum()), -float(np.sum(np.minimum(e_cur + e_ref, 2 * thr2))))
        if key > best_key:
            best_key, best = key, (f, inl)
            needed = _required_iterations(key[0] / n, 8, confidence)
    f, inl = best
    for _ in range(3):
        if inl.sum() < 8:
            break
        f_ref = fit_fundamental(c.subset(inl))
        e_cur, e_ref = epipolar_errors(f_ref, c)
        inl_ref = (e_cur <= thr2) & (e_ref <= thr2)
        if inl_ref.sum() < inl.sum():
            break
        same = np.array_equal(inl_ref, inl)
        f, inl = f_ref, inl_ref
        if same:
            break
    f = _normalize_matrix(_enforce_rank2(f))

    if check_degeneracy and inl.sum() >= 4:
        sub = c.subset(inl)
        try:
            h = estimate_homography_ransac(sub, iterations, DEFAULT_H_THRESHOLD, seed, confidence)
        except DegenerateConfiguration:
            h = None
        if h is not None and h.inliers.mean() >= PLANAR_DEGENERACY_FRACTION:
            raise DegenerateConfiguration(
                f"{h.inliers.mean():.0%} of the epipolar inliers fit one homography "
                "(planar scene or pure rotation)"
            )
    return RansacResult(f, inl, it)


# ---------------------------------------------------------------------------
# scoring and selection


def score_homography(h: np.ndarray, c: Correspondences, sigma: float = 1.0) -> float:
    e_fwd, e_bwd = transfer_errors(h, c)
    score = 0.0
    for chi in (e_fwd / sigma**2, e_bwd / sigma**2):
        ok = chi <= CHI2_2DOF
        score += float(np.sum(CHI2_2DOF - chi[ok]))
    return score


def score_fundamental(f: np.ndarray, c: Correspondences, sigma: float = 1.0) -> float:
    # 1-dof rejection threshold but 2-dof score offset, as in ORB-SLAM, so
    # both models are rewarded on the same scale
    e_cur, e_ref = epipolar_errors(f, c)
    score = 0.0
    for chi in (e_cur / sigma**2, e_ref / sigma**2):
        ok = chi <= CHI2_1DOF
        score += float(np.sum(CHI2_2DOF - chi[ok]))
    return score


def score_ratio(s_h: float, s_f: float, selection_threshold: float = DEFAULT_SELECTION_THRESHOLD) -> TwoViewScore:
    if s_h < 0 or s_f < 0:
        raise ValueError("scores must be non-negative")
    if s_h + s_f <= 0:
        raise ZeroScores("both model scores are zero")
    r_h = s_h / (s_h + s_f)
    model = Model.HOMOGRAPHY if r_h > selection_threshold else Model.FUNDAMENTAL
    return TwoViewScore(float(s_h), float(s_f), float(r_h), model, selection_threshold)


def score_models(
    c: Correspondences,
    h_matrix: Optional[np.ndarray],
    f_matrix: Optional[np.ndarray],
    k: Optional[CameraIntrinsics] = None,
    selection_threshold: float = DEFAULT_SELECTION_THRESHOLD,
    sigma: float = 1.0,
) -> TwoViewScore:
    """Score both models on all correspondences and pick one.

    A model passed as ``None`` (its estimator reported a degenerate
    configuration) scores zero.
    """
    if k is not None and not (np.all(k.contains(c.ref)) and np.all(k.contains(c.cur))):
        raise ValueError("correspondences fall outside the image")
    s_h = score_homography(h_matrix, c, sigma) if h_matrix is not None else 0.0
    s_f = score_fundamental(f_matrix, c, sigma) if f_matrix is not None else 0.0
    return score_ratio(s_h, s_f, selection_threshold)


@dataclass(frozen=True)
class InitSelection:
    score: TwoViewScore
    homography: Optional[RansacResult]
    fundamental: Optional[RansacResult]


def select_initialization(
    c: Correspondences,
    k: Optional[CameraIntrinsics] = None,
    selection_threshold: float = DEFAULT_SELECTION_THRESHOLD,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    sigma: float = 1.0,
) -> InitSelection:
    """Run both estimators on one correspondence set and score them."""
    try:
        h = estimate_homography_ransac(c, iterations, DEFAULT_H_THRESHOLD * sigma, seed)
    except DegenerateConfiguration:
        h = None
    try:
        f = estimate_fundamental_ransac(c, iterations, DEFAULT_F_THRESHOLD * sigma, seed)
    except DegenerateConfiguration:
        f = None
    score = score_models(
        c,
        h.matrix if h is not None else None,
        f.matrix if f is not None else None,
        k,
        selection_threshold,
        sigma,
    )
    return InitSelection(score, h, f)


# ---------------------------------------------------------------------------
# relative pose


def essential_from_fundamental(f: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    km = k.matrix
    return km.T @ f @ km


def decompose_essential(e: np.ndarray):
    """The four (R, t) hypotheses of an essential matrix, |t| = 1."""
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def count_cheirality(r, t, f_ref, f_cur) -> int:
    """Correspondences triangulating in front of both cameras with usable parallax."""
    center_cur = -r.T @ t
    f_cur_ref = f_cur @ r
    point, l1, l2 = triangulate_rays(f_ref, f_cur_ref, center_cur)
    z_cur = point @ r[2] + t[2]
    ok = (
        np.isfinite(l1)
        & (l1 > 0)
        & (l2 > 0)
        & (point[:, 2] > 0)
        & (z_cur > 0)
        & (ray_angles_deg(f_ref, f_cur_ref) >= PARALLEL_RAY_TOL_DEG)
    )
    return int(ok.sum())


def recover_pose_from_fundamental(
    f_matrix: np.ndarray,
    c: Correspondences,
    k: CameraIntrinsics,
    inlier_threshold: float = DEFAULT_F_THRESHOLD,
    min_margin: int = 2,
) -> RelativePose:
    """Pick the essential-matrix decomposition most points agree with."""
    e_cur, e_ref = epipolar_errors(f_matrix, c)
    thr2 = inlier_threshold**2
    inl = (e_cur <= thr2) & (e_ref <= thr2)
    kinv = k.matrix_inv
    f_ref = _to_h(c.ref[inl]) @ kinv.T
    f_cur = _to_h(c.cur[inl]) @ kinv.T
    e = essential_from_fundamental(f_matrix, k)
    hyps = decompose_essential(e)
    counts = [count_cheirality(r, t, f_ref, f_cur) for r, t in hyps]
    order = np.argsort(counts)[::-1]
    best, second = counts[order[0]], counts[order[1]]
    if best == 0 or best - second < min_margin:
        raise CheiralityAmbiguous(f"cheirality counts {counts} do not single out a pose")
    r, t = hyps[order[0]]
    return RelativePose(matrix_to_quat(r), t / np.linalg.norm(t), best)
