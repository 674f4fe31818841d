"""Readers and writers for the external file formats.

TUM trajectories, PLY point clouds, PFM depth maps, 8-bit images, GPS and
correspondence CSV files, and JSON report envelopes. Every reader raises a
:class:`~agrimap.errors.FormatError` subclass carrying the path and the line
or byte offset of the problem; no other exception escapes a reader.

Text writers use the shortest round-tripping decimal form of each float, so
``read(write(x)) == x`` exactly.
"""
from __future__ import annotations

import csv
import datetime
import hashlib
import json
import math
import os
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .bootstrap import Correspondences
from .depth_metrics import DepthMap
from .errors import (
    FormatError,
    MalformedHeader,
    NonMonotonicTimestamps,
    ParseError,
    UnsupportedFormat,
)
from .geodesy import geodetic_to_enu
from .geometry import Trajectory
from .mapping import GeoAnchor, PointCloud

QUAT_NORM_TOL = 1e-6
TUM_HEADER = "# timestamp tx ty tz qx qy qz qw"
GPS_COLUMNS = ["timestamp", "lat", "lon", "alt"]
CORRESPONDENCE_COLUMNS = ["u_ref", "v_ref", "u_cur", "v_cur"]
KEYPOINT_COLUMNS = ["u", "v"]


class FormatWarning(UserWarning):
    pass


def _name(src) -> Optional[str]:
    if isinstance(src, (str, os.PathLike)):
        return os.fspath(src)
    return getattr(src, "name", None)


@contextmanager
def _open(src, mode):
    """Open a path, or pass an already open stream through untouched."""
    if isinstance(src, (str, os.PathLike)):
        try:
            f = open(src, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": ""}))
        except OSError as e:
            raise FormatError(f"cannot open: {e.strerror or e}", path=os.fspath(src)) from e
        with f:
            yield f
    else:
        yield src


def _num(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# TUM trajectories


def read_tum(src) -> Trajectory:
    """Parse ``timestamp tx ty tz qx qy qz qw`` lines; '#' lines are comments.

    Quaternions whose norm is off by more than 1e-6 are renormalized with a
    warning. Timestamps must strictly increase.
    """
    path = _name(src)
    ts, pos, quat = [], [], []
    with _open(src, "r") as f:
        try:
            lines = list(f)
        except UnicodeDecodeError as e:
            raise ParseError("file is not UTF-8 text", path=path) from e
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, found {len(parts)}", path=path, line=lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(f"not a number: {e}", path=path, line=lineno) from e
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", path=path, line=lineno)
        qx, qy, qz, qw = vals[4:]
        q = np.array([qw, qx, qy, qz])
        n = float(np.linalg.norm(q))
        if n == 0.0:
            raise ParseError("zero quaternion", path=path, line=lineno)
        if abs(n - 1.0) > QUAT_NORM_TOL:
            warnings.warn(f"{path or '<stream>'}:{lineno}: quaternion norm {n:.9g} renormalized", FormatWarning)
            q = q / n
        if ts and not vals[0] > ts[-1]:
            raise NonMonotonicTimestamps(
                f"timestamp {parts[0]} does not exceed the previous one", path=path, line=lineno
            )
        ts.append(vals[0])
        pos.append(vals[1:4])
        quat.append(q)
    if not ts:
        return Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
    return Trajectory(ts, pos, quat)


def write_tum(dst, traj: Trajectory, header: bool = True) -> None:
    with _open(dst, "w") as f:
        if header:
            f.write(TUM_HEADER + "\n")
        for t, p, q in zip(traj.timestamps, traj.positions, traj.quaternions):
            w, x, y, z = q
            f.write(" ".join(_num(v) for v in (t, p[0], p[1], p[2], x, y, z, w)) + "\n")


# ---------------------------------------------------------------------------
# PLY point clouds

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_MAX_HEADER = 1 << 16


@dataclass
class _PlyHeader:
    fmt: str
    count: int
    props: List[tuple]  # (name, numpy code)
    data_start: int
    trailing: List[tuple]  # (element name, count) after the vertex element


def _parse_ply_header(buf: bytes, path) -> _PlyHeader:
    end = buf.find(b"end_header", 0, _PLY_MAX_HEADER)
    if not buf.startswith(b"ply"):
        raise MalformedHeader("missing 'ply' magic", path=path, line=1)
    if end < 0:
        raise MalformedHeader("no end_header within the first 64 KiB", path=path, offset=min(len(buf), _PLY_MAX_HEADER))
    nl = buf.find(b"\n", end)
    data_start = len(buf) if nl < 0 else nl + 1
    try:
        text = buf[:end].decode("ascii")
    except UnicodeDecodeError as e:
        raise MalformedHeader("header is not ASCII", path=path, offset=e.start) from e

    fmt = None
    elements = []  # [name, count, props, lineno]
    for lineno, raw in enumerate(text.replace("\r", "").split("\n")[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        key = tok[0]
        if key == "format":
            if len(tok) != 3 or tok[2] != "1.0":
                raise MalformedHeader(f"bad format line {raw!r}", path=path, line=lineno)
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormat(f"PLY encoding {tok[1]!r} is not supported", path=path, line=lineno)
            fmt = tok[1]
        elif key == "element":
            if len(tok) != 3:
                raise MalformedHeader(f"bad element line {raw!r}", path=path, line=lineno)
            try:
                count = int(tok[2])
            except ValueError:
                raise MalformedHeader(f"bad element count {tok[2]!r}", path=path, line=lineno) from None
            if count < 0:
                raise MalformedHeader("negative element count", path=path, line=lineno)
            elements.append([tok[1], count, [], lineno])
        elif key == "property":
            if not elements:
                raise MalformedHeader("property before any element", path=path, line=lineno)
            if len(tok) >= 2 and tok[1] == "list":
                if elements[-1][0] == "vertex":
                    raise UnsupportedFormat("list properties on vertices", path=path, line=lineno)
                elements[-1][2].append(("list", None))
                continue
            if len(tok) != 3:
                raise MalformedHeader(f"bad property line {raw!r}", path=path, line=lineno)
            code = _PLY_TYPES.get(tok[1])
            if code is None:
                raise MalformedHeader(f"unknown property type {tok[1]!r}", path=path, line=lineno)
            elements[-1][2].append((tok[2], code))
        else:
            raise MalformedHeader(f"unexpected header keyword {key!r}", path=path, line=lineno)
    if fmt is None:
        raise MalformedHeader("missing format line", path=path)

    vertex = None
    trailing = []
    for name, count, props, lineno in elements:
        if name == "vertex":
            if vertex is not None:
                raise MalformedHeader("duplicate vertex element", path=path, line=lineno)
            vertex = (count, props, lineno)
        elif vertex is None and count > 0:
            raise UnsupportedFormat(f"element {name!r} precedes the vertex data", path=path, line=lineno)
        elif vertex is not None:
            trailing.append((name, count))
    if vertex is None:
        raise MalformedHeader("no vertex element", path=path)
    count, props, lineno = vertex
    names = [p[0] for p in props]
    if len(set(names)) != len(names):
        raise MalformedHeader("duplicate vertex property", path=path, line=lineno)
    for axis in "xyz":
        if axis not in names:
            raise MalformedHeader(f"vertex element lacks property {axis!r}", path=path, line=lineno)
        if dict(props)[axis] not in ("f4", "f8"):
            raise UnsupportedFormat(f"vertex {axis!r} must be float or double", path=path, line=lineno)
    return _PlyHeader(fmt, count, props, data_start, trailing)


def read_ply(src) -> PointCloud:
    """Read an ascii or binary little-endian PLY vertex list.

    Positions come from ``x y z``, colors from ``red green blue`` (uchar) and
    the scalar channel from ``density``. Other vertex properties are skipped
    with a warning; elements after the vertices (faces etc.) are ignored.
    """
    path = _name(src)
    with _open(src, "rb") as f:
        try:
            buf = f.read()
        except OSError as e:
            raise FormatError(f"read failed: {e}", path=path) from e
    if isinstance(buf, str):
        buf = buf.encode("utf-8")
    hdr = _parse_ply_header(buf, path)
    names = [p[0] for p in hdr.props]

    if hdr.fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + c) for n, c in hdr.props])
        need = dtype.itemsize * hdr.count
        have = len(buf) - hdr.data_start
        if have < need:
            raise ParseError(
                f"vertex data truncated: need {need} bytes, found {have}", path=path, offset=hdr.data_start + have
            )
        data = np.frombuffer(buf, dtype=dtype, count=hdr.count, offset=hdr.data_start)
        cols = {n: data[n] for n in names}

        def where(i):
            return {"offset": hdr.data_start + int(i) * dtype.itemsize}

    else:
        body = buf[hdr.data_start :]
        header_lines = buf[: hdr.data_start].count(b"\n")
        try:
            lines = body.decode("ascii").splitlines()
        except UnicodeDecodeError as e:
            raise ParseError("ascii body contains non-ASCII bytes", path=path, offset=hdr.data_start + e.start) from e
        rows, row_lines = [], []
        li = 0
        while len(rows) < hdr.count:
            if li >= len(lines):
                raise ParseError(
                    f"expected {hdr.count} vertices, found {len(rows)}", path=path, line=header_lines + li + 1
                )
            tok = lines[li].split()
            li += 1
            if not tok:
                continue
            if len(tok) != len(names):
                raise ParseError(
                    f"expected {len(names)} values, found {len(tok)}", path=path, line=header_lines + li
                )
            try:
                rows.append([float(t) for t in tok])
                row_lines.append(header_lines + li)
            except ValueError as e:
                raise ParseError(f"not a number: {e}", path=path, line=header_lines + li) from e
        arr = np.array(rows, dtype=float).reshape(-1, len(names))

        def where(i):
            return {"line": row_lines[int(i)]}

        cols = {}
        for i, (n, c) in enumerate(hdr.props):
            col = arr[:, i]
            if np.dtype(c).kind in "iu":
                info = np.iinfo(c)
                bad = (col != np.round(col)) | (col < info.min) | (col > info.max)
                if np.any(bad):
                    raise ParseError(
                        f"property {n!r} holds values outside its integer type", path=path, **where(np.argmax(bad))
                    )
            cols[n] = col.astype(c)

    known = {"x", "y", "z", "density"}
    rgb = [n for n in ("red", "green", "blue") if n in cols]
    colors = None
    if len(rgb) == 3 and all(dict(hdr.props)[n] == "u1" for n in rgb):
        colors = np.stack([cols[n] for n in rgb], axis=1)
        known |= set(rgb)
    skipped = [n for n in names if n not in known]
    if skipped:
        warnings.warn(f"{path or '<stream>'}: skipping PLY properties {skipped}", FormatWarning)
    if hdr.trailing:
        warnings.warn(f"{path or '<stream>'}: ignoring elements {[t[0] for t in hdr.trailing]}", FormatWarning)
    pos = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(float)
    finite = np.all(np.isfinite(pos), axis=1)
    if not np.all(finite):
        raise ParseError("non-finite vertex position", path=path, **where(np.argmin(finite)))
    scalars = cols["density"].astype(float) if "density" in cols else None
    return PointCloud(pos, colors, scalars)


def write_ply(dst, cloud: PointCloud, binary: bool = True) -> None:
    """Write positions (double), optional uchar RGB and optional ``density`` (double)."""
    props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.colors is not None:
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if cloud.scalars is not None:
        props += [("density", "f8")]
    ply_name = {"f8": "double", "u1": "uchar"}
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(cloud)}"]
    head += [f"property {ply_name[c]} {n}" for n, c in props]
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")

    if binary:
        data = np.empty(len(cloud), dtype=np.dtype([(n, "<" + c) for n, c in props]))
        data["x"], data["y"], data["z"] = cloud.positions.T
        if cloud.colors is not None:
            data["red"], data["green"], data["blue"] = cloud.colors.T
        if cloud.scalars is not None:
            data["density"] = cloud.scalars
        body = data.tobytes()
    else:
        lines = []
        for i in range(len(cloud)):
            vals = [_num(v) for v in cloud.positions[i]]
            if cloud.colors is not None:
                vals += [str(int(v)) for v in cloud.colors[i]]
            if cloud.scalars is not None:
                vals.append(_num(cloud.scalars[i]))
            lines.append(" ".join(vals))
        body = ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")
    with _open(dst, "wb") as f:
        f.write(header + body)


# ---------------------------------------------------------------------------
# PFM depth maps


def _pfm_header_line(buf: bytes, pos: int, path, what: str):
    nl = buf.find(b"\n", pos, pos + 256)
    if nl < 0:
        raise MalformedHeader(f"missing {what} line", path=path, offset=pos)
    try:
        return buf[pos:nl].decode("ascii").strip(), nl + 1
    except UnicodeDecodeError:
        raise MalformedHeader(f"non-ASCII {what} line", path=path, offset=pos) from None


def read_pfm(src) -> DepthMap:
    """Read a single-channel ``Pf`` file into a top-down float32 :class:`DepthMap`.

    A negative scale marks little-endian data. Non-positive and non-finite
    depths are invalid.
    """
    path = _name(src)
    with _open(src, "rb") as f:
        buf = f.read()
    magic, pos = _pfm_header_line(buf, 0, path, "magic")
    if magic == "PF":
        raise UnsupportedFormat("color PFM is not a depth map", path=path, line=1)
    if magic != "Pf":
        raise MalformedHeader(f"bad magic {magic[:8]!r}", path=path, line=1)
    dims, pos = _pfm_header_line(buf, pos, path, "size")
    try:
        w, h = (int(v) for v in dims.split())
    except ValueError:
        raise MalformedHeader(f"bad size line {dims[:32]!r}", path=path, line=2) from None
    if w <= 0 or h <= 0:
        raise MalformedHeader("image size must be positive", path=path, line=2)
    scale_txt, pos = _pfm_header_line(buf, pos, path, "scale")
    try:
        scale = float(scale_txt)
    except ValueError:
        raise MalformedHeader(f"bad scale {scale_txt[:32]!r}", path=path, line=3) from None
    if scale == 0.0 or not math.isfinite(scale):
        raise MalformedHeader("scale must be finite and non-zero", path=path, line=3)
    need = 4 * w * h
    if len(buf) - pos < need:
        raise ParseError(f"pixel data truncated: need {need} bytes, found {len(buf) - pos}", path=path, offset=len(buf))
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    img = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    # stored bottom row first
    depth = np.flipud(img).astype(np.float32)
    return DepthMap(depth)


def write_pfm(dst, depth) -> None:
    """Write little-endian float32; invalid pixels are stored as 0."""
    if isinstance(depth, DepthMap):
        d = np.where(depth.valid, depth.depth, 0.0)
    else:
        d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError("depth must be 2-D")
    h, w = d.shape
    body = np.ascontiguousarray(np.flipud(d.astype("<f4"))).tobytes()
    with _open(dst, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + body)


# ---------------------------------------------------------------------------
# images


def read_image(src) -> np.ndarray:
    """8-bit gray (H, W) or color (H, W, 3) array from PGM/PNG/any Pillow format."""
    from PIL import Image, UnidentifiedImageError

    path = _name(src)
    try:
        with Image.open(src) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
            return np.asarray(im).copy()
    except FileNotFoundError as e:
        raise FormatError("cannot open: no such file", path=path) from e
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as e:
        raise ParseError(f"unreadable image: {e}", path=path) from e


def write_image(dst, img) -> None:
    """Save a uint8 gray or RGB array; the format follows the file extension."""
    from PIL import Image

    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = np.clip(np.round(a), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(dst)


# ---------------------------------------------------------------------------
# CSV files


def _read_csv(src, columns):
    path = _name(src)
    with _open(src, "r") as f:
        reader = csv.reader(f)
        try:
            rows = list(reader)
        except (csv.Error, UnicodeDecodeError) as e:
            raise ParseError(f"unreadable CSV: {e}", path=path, line=reader.line_num or 1) from e
    if not rows:
        raise MalformedHeader("empty file", path=path, line=1)
    head = [c.strip() for c in rows[0]]
    if head != columns:
        raise MalformedHeader(f"expected header {','.join(columns)}, found {','.join(head)}", path=path, line=1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, found {len(row)}", path=path, line=lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError as e:
            raise ParseError(f"not a number: {e}", path=path, line=lineno) from e
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", path=path, line=lineno)
        out.append((lineno, vals))
    return path, out


def read_gps_fixes(src) -> np.ndarray:
    """Raw (N, 4) ``timestamp, lat, lon, alt`` rows, checked for time order."""
    path, rows = _read_csv(src, GPS_COLUMNS)
    prev = None
    for lineno, vals in rows:
        if prev is not None and not vals[0] > prev:
            raise NonMonotonicTimestamps(f"timestamp {vals[0]!r} does not exceed {prev!r}", path=path, line=lineno)
        if abs(vals[1]) > 90.0 or abs(vals[2]) > 180.0:
            raise ParseError("latitude/longitude out of range", path=path, line=lineno)
        prev = vals[0]
    return np.array([v for _, v in rows], dtype=float).reshape(-1, 4)


def read_gps_csv(src, origin=None) -> List[GeoAnchor]:
    """GPS fixes as ENU anchors relative to ``origin`` (default: the first fix)."""
    fixes = read_gps_fixes(src)
    if len(fixes) == 0:
        return []
    if origin is None:
        origin = tuple(fixes[0, 1:])
    enu = geodetic_to_enu(fixes[:, 1], fixes[:, 2], fixes[:, 3], origin)
    return [GeoAnchor(float(t), e) for t, e in zip(fixes[:, 0], enu)]


def write_gps_csv(dst, fixes) -> None:
    fixes = np.asarray(fixes, dtype=float).reshape(-1, 4)
    with _open(dst, "w") as f:
        f.write(",".join(GPS_COLUMNS) + "\n")
        for row in fixes:
            f.write(",".join(_num(v) for v in row) + "\n")


def read_correspondences(src) -> Correspondences:
    _, rows = _read_csv(src, CORRESPONDENCE_COLUMNS)
    a = np.array([v for _, v in rows], dtype=float).reshape(-1, 4)
    return Correspondences(a[:, :2], a[:, 2:])


def write_correspondences(dst, c: Correspondences) -> None:
    with _open(dst, "w") as f:
        f.write(",".join(CORRESPONDENCE_COLUMNS) + "\n")
        for r, q in zip(c.ref, c.cur):
            f.write(",".join(_num(v) for v in (r[0], r[1], q[0], q[1])) + "\n")


def read_keypoints(src) -> np.ndarray:
    _, rows = _read_csv(src, KEYPOINT_COLUMNS)
    return np.array([v for _, v in rows], dtype=float).reshape(-1, 2)


def write_keypoints(dst, points) -> None:
    with _open(dst, "w") as f:
        f.write(",".join(KEYPOINT_COLUMNS) + "\n")
        for u, v in np.asarray(points, dtype=float).reshape(-1, 2):
            f.write(f"{_num(u)},{_num(v)}\n")


# ---------------------------------------------------------------------------
# JSON reports

TIMESTAMP_FIELD = "generated_at"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def plain(obj):
    """Recursively turn numpy scalars/arrays, enums and tuples into JSON types."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if hasattr(obj, "value") and hasattr(obj, "name") and not isinstance(obj, (str, int, float)):
        return plain(obj.value)
    if isinstance(obj, os.PathLike):
        return os.fspath(obj)
    return obj


@dataclass
class ReportEnvelope:
    """A tagged payload plus everything needed to reproduce it.

    ``generated_at`` is the only field that differs between identical runs.
    """

    kind: str
    payload: dict
    parameters: dict = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    tool: str = "agrimap"
    version: str = __version__
    generated_at: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "version": self.version,
            "kind": self.kind,
            "parameters": plain(self.parameters),
            "inputs": dict(self.inputs),
            "payload": plain(self.payload),
            TIMESTAMP_FIELD: self.generated_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ReportEnvelope":
        need = {"tool", "version", "kind", "parameters", "inputs", "payload"}
        missing = need - set(d)
        if missing:
            raise ParseError(f"report lacks fields {sorted(missing)}")
        return cls(
            kind=d["kind"],
            payload=d["payload"],
            parameters=d["parameters"],
            inputs=d["inputs"],
            tool=d["tool"],
            version=d["version"],
            generated_at=d.get(TIMESTAMP_FIELD),
        )

    @classmethod
    def from_json(cls, text: str) -> "ReportEnvelope":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, line=e.lineno) from e
        if not isinstance(d, dict):
            raise ParseError("report must be a JSON object")
        return cls.from_dict(d)


def now_utc() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def make_report(kind: str, payload: dict, parameters: dict, inputs=None, stamp: bool = True) -> ReportEnvelope:
    """Envelope with digests of the named input files."""
    digests = {}
    for name, p in (inputs or {}).items():
        digests[name] = file_digest(p)
    return ReportEnvelope(
        kind=kind,
        payload=payload,
        parameters=parameters,
        inputs=digests,
        generated_at=now_utc() if stamp else None,
    )


def write_report(dst, env: ReportEnvelope) -> None:
    with _open(dst, "w") as f:
        f.write(env.to_json())


def read_report(src) -> ReportEnvelope:
    path = _name(src)
    with _open(src, "r") as f:
        text = f.read()
    try:
        return ReportEnvelope.from_json(text)
    except ParseError as e:
        raise ParseError(str(e), path=path, line=e.line) from e


def strip_timestamp(text: str) -> str:
    """Report JSON with every labeled timestamp field blanked, for comparisons."""

    def walk(o):
        if isinstance(o, dict):
            return {k: (None if k == TIMESTAMP_FIELD else walk(v)) for k, v in o.items()}
        if isinstance(o, list):
            return [walk(v) for v in o]
        return o

    return json.dumps(walk(json.loads(text)), sort_keys=True, indent=2)

