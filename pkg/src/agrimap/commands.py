"""Subcommand registry shared by the command line and the pipeline runner.

Each command declares its parameters once. The CLI turns the declarations
into argparse options; the pipeline validates config dictionaries against
them, so both entry points reject unknown keys and fill the same defaults.
Relative paths are resolved against the context's working directory.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from . import bootstrap, depth_filter, depth_metrics, formats, horizon, mapping, synth, trajectory
from .errors import ConfigError, DegenerateConfiguration
from .geometry import CameraIntrinsics, PoseSE3

log = logging.getLogger(__name__)

REQUIRED = object()
SEED_ENV = "AGRIMAP_SEED"


@dataclass(frozen=True)
class Param:
    name: str
    type: Callable = str
    default: Any = REQUIRED
    help: str = ""
    multiple: bool = False
    positional: bool = False
    choices: Optional[Tuple] = None
    # "in" or "out" marks file parameters
    io: str = ""


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    params: Tuple[Param, ...]
    run: Callable

    def param(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


@dataclass
class Context:
    workdir: Path
    seed: int = 0

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.workdir / p

    def out_path(self, p) -> Path:
        q = self.path(p)
        q.parent.mkdir(parents=True, exist_ok=True)
        return q


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _coerce(p: Param, v):
    if p.type is bool:
        if isinstance(v, bool):
            return v
        raise ConfigError(f"{p.name}: expected true/false, got {v!r}")
    if p.type in (int, float) and isinstance(v, bool):
        raise ConfigError(f"{p.name}: expected a number, got {v!r}")
    if p.type is int and isinstance(v, float) and not v.is_integer():
        raise ConfigError(f"{p.name}: expected an integer, got {v!r}")
    if p.type is str and not isinstance(v, (str, os.PathLike)):
        raise ConfigError(f"{p.name}: expected a string, got {v!r}")
    try:
        out = p.type(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{p.name}: cannot interpret {v!r} as {p.type.__name__}") from None
    if isinstance(out, float) and not math.isfinite(out):
        raise ConfigError(f"{p.name}: value must be finite")
    if p.choices is not None and out not in p.choices:
        raise ConfigError(f"{p.name}: {out!r} is not one of {', '.join(map(str, p.choices))}")
    return out


def resolve_params(cmd: Command, given: Dict[str, Any], seed: int) -> Dict[str, Any]:
    """Validate ``given`` against the command's declarations and fill defaults."""
    known = {p.name for p in cmd.params}
    unknown = sorted(set(given) - known)
    if unknown:
        raise ConfigError(f"{cmd.name}: unknown parameter(s) {', '.join(unknown)}")
    out = {}
    for p in cmd.params:
        if p.name in given and given[p.name] is not None:
            v = given[p.name]
            if p.multiple:
                if not isinstance(v, (list, tuple)):
                    v = [v]
                if not v:
                    raise ConfigError(f"{cmd.name}: {p.name} needs at least one value")
                out[p.name] = [_coerce(p, x) for x in v]
            else:
                out[p.name] = _coerce(p, v)
        elif p.name == "seed":
            out[p.name] = seed
        elif p.default is REQUIRED:
            raise ConfigError(f"{cmd.name}: missing required parameter {p.name}")
        else:
            out[p.name] = p.default
    return out


def _digests(ctx: Context, named: Dict[str, Any]) -> Dict[str, str]:
    out = {}
    for name, v in named.items():
        if v is None:
            continue
        if isinstance(v, list):
            for i, x in enumerate(v):
                out[f"{name}[{i}]"] = formats.file_digest(ctx.path(x))
        else:
            out[name] = formats.file_digest(ctx.path(v))
    return out


def execute(cmd: Command, params: Dict[str, Any], ctx: Context, stamp: bool = True) -> formats.ReportEnvelope:
    """Run a command on resolved parameters and wrap the result."""
    for p in cmd.params:
        v = params.get(p.name)
        if p.io == "in" and v is not None:
            for x in v if isinstance(v, list) else [v]:
                if not ctx.path(x).is_file():
                    raise formats.FormatError("no such input file", path=str(x))
    payload = cmd.run(params, ctx)
    inputs = {p.name: params[p.name] for p in cmd.params if p.io == "in"}
    outputs = {p.name: params[p.name] for p in cmd.params if p.io == "out" and params.get(p.name) is not None}
    if outputs:
        payload["outputs"] = _digests(ctx, outputs)
    return formats.ReportEnvelope(
        kind=cmd.name,
        payload=payload,
        parameters=params,
        inputs=_digests(ctx, inputs),
        generated_at=formats.now_utc() if stamp else None,
    )


# ---------------------------------------------------------------------------
# ate


def _mean_std(values):
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def run_ate(p, ctx):
    gt = formats.read_tum(ctx.path(p["gt"]))
    runs = []
    for path in p["est"]:
        est = formats.read_tum(ctx.path(path))
        report, transform, _ = trajectory.evaluate_ate(est, gt, p["align"], p["max_time_offset"])
        d = report.to_dict()
        d["estimate"] = str(path)
        d["transform"] = transform.to_dict()
        runs.append(d)
    rmse, rmse_std = _mean_std([r["rmse"] for r in runs])
    ratio, ratio_std = _mean_std([r["ratio_percent"] for r in runs])
    return {
        "alignment": p["align"],
        "run_count": len(runs),
        "rmse": rmse,
        "rmse_std": rmse_std,
        "ratio_percent": ratio,
        "ratio_percent_std": ratio_std,
        "runs": runs,
    }


ATE = Command(
    "ate",
    "absolute trajectory error of one or more estimates against ground truth (averaged over runs)",
    (
        Param("est", multiple=True, help="estimated trajectory (TUM); repeat to average several runs", io="in"),
        Param("gt", help="ground-truth trajectory (TUM)", io="in"),
        Param("align", default="sim3", choices=("se3", "sim3"), help="alignment before scoring"),
        Param("max_time_offset", float, 0.02, help="timestamp association tolerance, seconds"),
    ),
    run_ate,
)


# ---------------------------------------------------------------------------
# depth-eval


def run_depth_eval(p, ctx):
    if len(p["pred"]) != len(p["gt"]):
        raise ConfigError("depth-eval: --pred and --gt need the same number of files")
    reports = []
    for pred_path, gt_path in zip(p["pred"], p["gt"]):
        pred = formats.read_pfm(ctx.path(pred_path))
        gt = formats.read_pfm(ctx.path(gt_path))
        if p["median_scaling"]:
            r = depth_metrics.evaluate_median_scaled(pred, gt, p["min_depth"], p["max_depth"])
        else:
            r = depth_metrics.evaluate(pred, gt, p["min_depth"], p["max_depth"])
        d = r.to_dict()
        d["prediction"] = str(pred_path)
        reports.append((r, d))
    return {"images": [d for _, d in reports], "aggregate": depth_metrics.aggregate([r for r, _ in reports])}


DEPTH_EVAL = Command(
    "depth-eval",
    "standard monocular depth metrics for prediction / ground-truth PFM pairs",
    (
        Param("pred", multiple=True, help="predicted depth map (PFM)", io="in"),
        Param("gt", multiple=True, help="ground-truth depth map (PFM), paired by order", io="in"),
        Param("min_depth", float, depth_metrics.DEFAULT_MIN_DEPTH, help="ignore ground truth below this depth"),
        Param("max_depth", float, depth_metrics.DEFAULT_MAX_DEPTH, help="ignore ground truth beyond this depth"),
        Param("median_scaling", bool, True, help="rescale predictions by the median ratio first"),
    ),
    run_depth_eval,
)


# ---------------------------------------------------------------------------
# mask


def run_mask(p, ctx):
    img = formats.read_image(ctx.path(p["image"]))
    luma = horizon.to_luma(img)
    h, w = luma.shape
    params = horizon.HorizonParams(p["drop_threshold"], p["sky_roughness"])
    boundary = horizon.estimate_horizon(luma, params)
    offset = horizon.default_offset(h) if p["offset"] is None else p["offset"]
    m = horizon.build_mask(boundary, offset, w, h)
    out = {"boundary_row": boundary, "offset_rows": offset, "cutoff_row": m.cutoff, "width": w, "height": h}
    if p["out_mask"] is not None:
        formats.write_image(ctx.out_path(p["out_mask"]), m.mask.astype(np.uint8) * 255)
    if p["keypoints"] is not None:
        pts = formats.read_keypoints(ctx.path(p["keypoints"]))
        kept = horizon.filter_keypoints(pts, m)
        out.update(keypoints=len(pts), kept=len(kept))
        if p["out_keypoints"] is not None:
            formats.write_keypoints(ctx.out_path(p["out_keypoints"]), kept)
    elif p["out_keypoints"] is not None:
        raise ConfigError("mask: --out-keypoints needs --keypoints")
    return out


MASK = Command(
    "mask",
    "estimate the sky/field boundary and mask keypoints above it",
    (
        Param("image", positional=True, help="input frame (PGM/PNG)", io="in"),
        Param("offset", int, None, help="rows masked below the boundary (default 5%% of the height)"),
        Param("drop_threshold", float, horizon.DEFAULT_DROP_THRESHOLD, help="minimum brightness drop at the boundary"),
        Param("sky_roughness", float, horizon.DEFAULT_SKY_ROUGHNESS, help="maximum mean row change inside the sky"),
        Param("out_mask", default=None, help="write the mask as an image (255 = suppressed)", io="out"),
        Param("keypoints", default=None, help="keypoint CSV with header u,v", io="in"),
        Param("out_keypoints", default=None, help="write the admitted keypoints here", io="out"),
    ),
    run_mask,
)


# ---------------------------------------------------------------------------
# init-select


def run_init_select(p, ctx):
    c = formats.read_correspondences(ctx.path(p["corr"]))
    intr = [p[k] for k in ("fx", "fy", "cx", "cy")]
    k = None
    if any(v is not None for v in intr):
        if any(v is None for v in intr):
            raise ConfigError("init-select: give all of fx, fy, cx, cy or none")
        width = p["width"] or int(math.floor(2 * p["cx"])) + 1
        height = p["height"] or int(math.floor(2 * p["cy"])) + 1
        k = CameraIntrinsics(p["fx"], p["fy"], p["cx"], p["cy"], width, height)
    sel = bootstrap.select_initialization(c, k, p["threshold"], p["iterations"], p["seed"], p["sigma"])
    out = {
        "correspondences": len(c),
        "score": sel.score.to_dict(),
        "homography_inliers": int(sel.homography.inliers.sum()) if sel.homography is not None else 0,
        "fundamental_inliers": int(sel.fundamental.inliers.sum()) if sel.fundamental is not None else 0,
    }
    if k is not None and sel.score.selected_model == bootstrap.Model.FUNDAMENTAL:
        if sel.fundamental is None:
            raise DegenerateConfiguration("fundamental model selected but not estimated")
        rel = bootstrap.recover_pose_from_fundamental(sel.fundamental.matrix, c, k)
        out["relative_pose"] = {
            "rotation_wxyz": rel.rotation,
            "translation_direction": rel.translation_direction,
            "cheirality_inliers": rel.num_cheirality_inliers,
        }
    return out


INIT_SELECT = Command(
    "init-select",
    "score homography against fundamental matrix for map initialization",
    (
        Param("corr", help="correspondence CSV (u_ref,v_ref,u_cur,v_cur)", io="in"),
        Param("fx", float, None, help="focal length x; with fy, cx, cy enables pose recovery"),
        Param("fy", float, None),
        Param("cx", float, None),
        Param("cy", float, None),
        Param("width", int, None, help="image width (defaults to just over 2 cx)"),
        Param("height", int, None, help="image height (defaults to just over 2 cy)"),
        Param("threshold", float, bootstrap.DEFAULT_SELECTION_THRESHOLD, help="select the homography above this R_H"),
        Param("iterations", int, bootstrap.DEFAULT_ITERATIONS, help="RANSAC iterations per model"),
        Param("sigma", float, 1.0, help="pixel noise standard deviation"),
        Param("seed", int, None, help="RANSAC seed"),
    ),
    run_init_select,
)


# ---------------------------------------------------------------------------
# depth-filter-sim


def run_depth_filter_sim(p, ctx):
    k = synth.DEFAULT_INTRINSICS.scaled(p["resolution_scale"])
    res = depth_filter.simulate_plane(
        k,
        plane_depth=p["depth"],
        frames=p["frames"],
        baseline_per_frame=p["baseline"],
        rho_true=p["rho"],
        pixel_sigma=p["pixel_sigma"],
        d_min=p["d_min"],
        d_max=p["d_max"],
        average_scene_depth=p["average_depth"],
        seed=p["seed"],
    )
    g = res.grid
    conv = g.status == depth_filter.Status.CONVERGED
    err = np.abs(g.mu - res.true_depth) / res.true_depth
    out = {
        "pixels": int(g.mu.size),
        "counts": g.counts(),
        "converged_fraction": g.converged_fraction(),
        "accurate_converged_fraction": res.accurate_converged_fraction(0.02),
        "converged_median_relative_error": float(np.median(err[conv])) if conv.any() else None,
        "converged_per_frame": [s.converged for s in res.stats],
    }
    if p["out"] is not None:
        formats.write_ply(ctx.out_path(p["out"]), depth_filter.extract_points(g, k, PoseSE3()))
    return out


DEPTH_FILTER_SIM = Command(
    "depth-filter-sim",
    "run the per-pixel depth filter on a synthetic fronto-parallel plane",
    (
        Param("depth", float, 3.0, help="plane depth, meters"),
        Param("frames", int, 60, help="frames after the reference"),
        Param("baseline", float, 0.01, help="sideways camera motion per frame, meters"),
        Param("rho", float, 0.7, help="probability that a measurement is an inlier"),
        Param("pixel_sigma", float, 0.5, help="matching noise, pixels"),
        Param("d_min", float, 0.5),
        Param("d_max", float, 50.0),
        Param("average_depth", float, None, help="filter initialization depth (default 1.5 x depth)"),
        Param("resolution_scale", float, 0.5, help="camera resolution relative to 672x376"),
        Param("seed", int, None),
        Param("out", default=None, help="write converged points as PLY", io="out"),
    ),
    run_depth_filter_sim,
)


# ---------------------------------------------------------------------------
# georef


def run_georef(p, ctx):
    traj = formats.read_tum(ctx.path(p["traj"]))
    fixes = formats.read_gps_fixes(ctx.path(p["gps"]))
    if len(fixes) == 0:
        raise formats.ParseError("GPS file has no fixes", path=str(p["gps"]))
    origin = tuple(float(v) for v in fixes[0, 1:])
    anchors = formats.read_gps_csv(ctx.path(p["gps"]), origin)
    reg = mapping.georegister(traj, anchors, p["max_time_offset"])
    out = reg.to_dict()
    out["origin"] = {"lat": origin[0], "lon": origin[1], "alt": origin[2]}
    if p["out_traj"] is not None:
        formats.write_tum(ctx.out_path(p["out_traj"]), mapping.apply_transform(traj, reg.transform))
    if p["cloud"] is not None:
        cloud = mapping.apply_transform(formats.read_ply(ctx.path(p["cloud"])), reg.transform)
        if p["out_cloud"] is not None:
            formats.write_ply(ctx.out_path(p["out_cloud"]), cloud)
    elif p["out_cloud"] is not None:
        raise ConfigError("georef: --out-cloud needs --cloud")
    return out


GEOREF = Command(
    "georef",
    "register a SLAM trajectory (and optionally its map) to GPS fixes in local ENU",
    (
        Param("traj", help="camera trajectory (TUM)", io="in"),
        Param("gps", help="GPS CSV with header timestamp,lat,lon,alt", io="in"),
        Param("max_time_offset", float, 0.02, help="timestamp association tolerance, seconds"),
        Param("out_traj", default=None, help="write the registered trajectory (TUM, ENU)", io="out"),
        Param("cloud", default=None, help="point cloud (PLY) in the SLAM frame", io="in"),
        Param("out_cloud", default=None, help="write the registered cloud here", io="out"),
    ),
    run_georef,
)


# ---------------------------------------------------------------------------
# density


def run_density(p, ctx):
    cloud = formats.read_ply(ctx.path(p["cloud"]))
    if p["mode"] == "approx":
        res = mapping.approximate_density(cloud, p["bins"])
    else:
        res = mapping.precise_density(cloud, p["radius"], p["bins"])
        if p["mode"] == "volume":
            res = mapping.volume_density(res, p["bins"])
    if p["out"] is not None:
        formats.write_ply(ctx.out_path(p["out"]), cloud.with_scalars(res.values))
    return res.summary()


DENSITY = Command(
    "density",
    "per-point density of a point cloud, written to the PLY 'density' channel",
    (
        Param("cloud", positional=True, help="input point cloud (PLY)", io="in"),
        Param("radius", float, mapping.DEFAULT_DENSITY_RADIUS, help="neighbourhood radius, meters"),
        Param("mode", default="precise", choices=("precise", "approx", "volume"), help="counting method"),
        Param("bins", int, mapping.DEFAULT_HISTOGRAM_BINS, help="histogram bins in the summary"),
        Param("out", default=None, help="write the cloud with its density channel", io="out"),
    ),
    run_density,
)


# ---------------------------------------------------------------------------
# synth

SYNTH_KINDS = ("trajectory", "two-view", "lattice", "cloud", "depth", "gps", "horizon")


def run_synth(p, ctx):
    kind = p["kind"]
    out = ctx.out_path(p["out"])
    seed = p["seed"]
    info = {"kind": kind}
    if kind == "trajectory":
        spec = synth.MotionSpec(
            kind=p["motion"],
            length=p["length"],
            frame_count=p["frames"],
            frame_rate=p["frame_rate"],
            translation_noise=p["translation_noise"],
            rotation_noise_deg=p["rotation_noise_deg"],
            scale=p["scale"],
            scale_drift=p["scale_drift"],
            seed=seed,
        )
        gt, est = synth.generate_trajectory(spec)
        formats.write_tum(out, est)
        if p["out_gt"] is not None:
            formats.write_tum(ctx.out_path(p["out_gt"]), gt)
        info.update(poses=len(gt), length=gt.length())
    elif kind == "two-view":
        fx = synth.two_view_fixture(
            p["scene"],
            n=p["points"] or 200,
            seed=seed,
            pixel_noise=p["pixel_noise"],
            baseline=p["baseline"],
            outlier_fraction=p["outlier_fraction"],
        )
        formats.write_correspondences(out, fx.correspondences)
        k = fx.k
        info.update(
            correspondences=len(fx.correspondences),
            intrinsics={"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
            rotation_wxyz=fx.pose_ref_to_cur.rotation,
            translation=fx.pose_ref_to_cur.translation,
        )
    elif kind == "lattice":
        cloud = mapping.PointCloud(synth.lattice(p["n"], p["spacing"]))
        formats.write_ply(out, cloud)
        info.update(points=len(cloud))
    elif kind == "cloud":
        cloud = synth.random_cloud(p["points"] or 10_000, p["extent"], seed)
        formats.write_ply(out, cloud)
        info.update(points=len(cloud))
    elif kind == "depth":
        k = synth.DEFAULT_INTRINSICS.scaled(p["resolution_scale"])
        d = np.full((k.height, k.width), p["depth"])
        if p["depth_noise"] > 0:
            d = d * np.exp(synth.rng(seed).normal(0.0, p["depth_noise"], d.shape))
        formats.write_pfm(out, depth_metrics.DepthMap(d * p["depth_scale"]))
        info.update(width=k.width, height=k.height)
    elif kind == "gps":
        if p["traj"] is None:
            raise ConfigError("synth gps: --traj is required")
        traj = formats.read_tum(ctx.path(p["traj"]))
        fixes = synth.gps_fixes(
            traj.timestamps,
            traj.positions,
            (p["origin_lat"], p["origin_lon"], p["origin_alt"]),
            p["sigma_h"],
            p["sigma_v"],
            seed,
        )
        formats.write_gps_csv(out, fixes)
        info.update(fixes=len(fixes))
    elif kind == "horizon":
        img = synth.horizon_image(p["width"], p["height"], p["boundary"], p["tilt"], seed)
        formats.write_image(out, img)
        info.update(width=p["width"], height=p["height"], boundary_row=p["boundary"])
    return info


SYNTH = Command(
    "synth",
    "write a seeded synthetic fixture",
    (
        Param("kind", positional=True, choices=SYNTH_KINDS, help="fixture type"),
        Param("out", help="output file (trajectory: the estimate)", io="out"),
        Param("seed", int, None),
        # trajectory
        Param("motion", default="uturn", choices=("straight", "uturn", "loop"), help="trajectory: path shape"),
        Param("length", float, 100.0, help="trajectory: path length, meters"),
        Param("frames", int, 200, help="trajectory: pose count"),
        Param("frame_rate", float, 15.0, help="trajectory: poses per second"),
        Param("scale", float, 1.0, help="trajectory: scale of the estimate"),
        Param("scale_drift", float, 0.0, help="trajectory: relative scale change by the last pose"),
        Param("translation_noise", float, 0.0, help="trajectory: random-walk step, meters"),
        Param("rotation_noise_deg", float, 0.0, help="trajectory: yaw random-walk step, degrees"),
        Param("out_gt", default=None, help="trajectory: write the ground truth here", io="out"),
        # two-view / cloud
        Param("scene", default="general", choices=("planar", "general"), help="two-view: scene structure"),
        Param("points", int, None, help="two-view: correspondences (200); cloud: points (10000)"),
        Param("pixel_noise", float, 0.0, help="two-view: pixel noise sigma"),
        Param("outlier_fraction", float, 0.0, help="two-view: fraction of random matches"),
        Param("baseline", float, 0.2, help="two-view: camera displacement, meters"),
        Param("extent", float, 1.0, help="cloud: cube side, meters"),
        # lattice
        Param("n", int, 20, help="lattice: points per axis"),
        Param("spacing", float, 0.05, help="lattice: spacing, meters"),
        # depth
        Param("depth", float, 3.0, help="depth: plane depth, meters"),
        Param("depth_noise", float, 0.0, help="depth: log-normal noise sigma"),
        Param("depth_scale", float, 1.0, help="depth: global scale applied to the map"),
        Param("resolution_scale", float, 0.5, help="depth: resolution relative to 672x376"),
        # gps
        Param("traj", default=None, help="gps: trajectory whose positions are ENU meters", io="in"),
        Param("sigma_h", float, 0.01, help="gps: horizontal noise, meters"),
        Param("sigma_v", float, 0.02, help="gps: vertical noise, meters"),
        Param("origin_lat", float, -33.0),
        Param("origin_lon", float, -60.0),
        Param("origin_alt", float, 25.0),
        # horizon
        Param("boundary", int, 100, help="horizon: sky rows above this row"),
        Param("tilt", float, 0.0, help="horizon: boundary rise/fall at the edges, rows"),
        Param("width", int, 672, help="horizon: image width"),
        Param("height", int, 376, help="horizon: image height"),
    ),
    run_synth,
)


# ---------------------------------------------------------------------------
# verify


def run_verify(p, ctx):
    from .acceptance import CHECKS, run_checks

    ids = p["criteria"] or sorted(CHECKS)
    bad = [i for i in ids if i not in CHECKS]
    if bad:
        raise ConfigError(f"verify: unknown criteria {bad}")
    results = run_checks(ids, seed=p["seed"])
    return {"criteria": [r.to_dict() for r in results], "passed": all(r.passed for r in results)}


VERIFY = Command(
    "verify",
    "run the acceptance checks against their oracles",
    (
        Param("criteria", int, None, multiple=True, help="criterion numbers to run (default: all)"),
        Param("seed", int, None),
    ),
    run_verify,
)


COMMANDS: Dict[str, Command] = {
    c.name: c for c in (ATE, DEPTH_EVAL, MASK, INIT_SELECT, DEPTH_FILTER_SIM, GEOREF, DENSITY, SYNTH, VERIFY)
}
