import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from agrimap import formats
from agrimap.bootstrap import Correspondences
from agrimap.depth_metrics import DepthMap
from agrimap.errors import FormatError, MalformedHeader, NonMonotonicTimestamps, ParseError, UnsupportedFormat
from agrimap.geometry import Trajectory
from agrimap.mapping import PointCloud
from agrimap.synth import rng


def tum(text):
    return formats.read_tum(io.StringIO(text))


def test_tum_identity_line():
    t = tum("1.0 0 0 0 0 0 0 1\n")
    assert len(t) == 1 and t.timestamps[0] == 1.0
    np.testing.assert_array_equal(t.quaternions[0], [1, 0, 0, 0])
    np.testing.assert_array_equal(t.positions[0], [0, 0, 0])


def test_tum_comments_skipped():
    t = tum("# header\n# more\n\n1.0 1 2 3 0 0 0 1\n# mid\n2.0 4 5 6 0 0 0 1\n")
    assert t.timestamps.tolist() == [1.0, 2.0]


@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_tum_round_trip(n, seed):
    g = rng(seed)
    q = g.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1)[:, None]
    t = Trajectory(np.cumsum(g.uniform(1e-3, 1, n)) + g.uniform(0, 2e9), g.normal(0, 1e3, (n, 3)), q)
    buf = io.StringIO()
    formats.write_tum(buf, t)
    back = tum(buf.getvalue())
    np.testing.assert_array_equal(back.timestamps, t.timestamps)
    np.testing.assert_array_equal(back.positions, t.positions)
    assert np.abs(back.quaternions - t.quaternions).max() <= 1e-12


@pytest.mark.parametrize(
    "text,err,line",
    [
        ("1 2 3\n", ParseError, 1),
        ("# c\n1 0 0 0 0 0 0 x\n", ParseError, 2),
        ("1 0 0 0 0 0 0 nan\n", ParseError, 1),
        ("1 0 0 0 0 0 0 0\n", ParseError, 1),
        ("2 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n", NonMonotonicTimestamps, 2),
    ],
)
def test_tum_errors(text, err, line):
    with pytest.raises(err) as e:
        tum(text)
    assert e.value.line == line


def test_tum_renormalizes_with_warning():
    with pytest.warns(formats.FormatWarning):
        t = tum("1 0 0 0 0 0 0 2\n")
    np.testing.assert_array_equal(t.quaternions[0], [1, 0, 0, 0])


def test_tum_missing_file(tmp_path):
    with pytest.raises(FormatError):
        formats.read_tum(tmp_path / "absent.txt")


def ply_bytes(cloud, binary=True):
    buf = io.BytesIO()
    formats.write_ply(buf, cloud, binary)
    return buf.getvalue()


def test_ply_single_point_ascii():
    data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n"
    c = formats.read_ply(io.BytesIO(data))
    assert len(c) == 1
    np.testing.assert_array_equal(c.positions, [[1, 2, 3]])


@pytest.mark.parametrize("binary", [True, False])
def test_ply_channels_round_trip(binary):
    g = rng(1)
    c = PointCloud(g.normal(size=(50, 3)), g.integers(0, 256, (50, 3)), g.uniform(0, 100, 50))
    back = formats.read_ply(io.BytesIO(ply_bytes(c, binary)))
    np.testing.assert_array_equal(back.positions, c.positions)
    np.testing.assert_array_equal(back.colors, c.colors)
    np.testing.assert_array_equal(back.scalars, c.scalars)


def test_ply_binary_bit_exact():
    c = PointCloud(rng(2).normal(0, 100, (10_000, 3)))
    back = formats.read_ply(io.BytesIO(ply_bytes(c)))
    assert back.positions.tobytes() == c.positions.tobytes()


def test_ply_empty_cloud():
    back = formats.read_ply(io.BytesIO(ply_bytes(PointCloud(np.zeros((0, 3))))))
    assert len(back) == 0


@pytest.mark.parametrize(
    "data,err",
    [
        (b"plx\n", MalformedHeader),
        (b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n", UnsupportedFormat),
        (b"ply\nformat ascii 1.0\nelement vertex 1\nproperty list uchar int x\nend_header\n", UnsupportedFormat),
        (b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n", ParseError),
    ],
)
def test_ply_errors(data, err):
    with pytest.raises(err):
        formats.read_ply(io.BytesIO(data))


def test_ply_truncated_binary_reports_offset():
    data = ply_bytes(PointCloud(np.ones((10, 3))))[:-5]
    with pytest.raises(ParseError) as e:
        formats.read_ply(io.BytesIO(data))
    assert e.value.offset is not None


def pfm_bytes(d):
    buf = io.BytesIO()
    formats.write_pfm(buf, d)
    return buf.getvalue()


def test_pfm_constant_round_trip():
    d = np.full((5, 7), 3.25, np.float32)
    back = formats.read_pfm(io.BytesIO(pfm_bytes(d)))
    np.testing.assert_array_equal(back.depth, d)
    assert back.valid.all()


def test_pfm_zeros_invalid():
    d = np.ones((3, 3), np.float32)
    d[1, 2] = 0
    back = formats.read_pfm(io.BytesIO(pfm_bytes(d)))
    assert back.valid.sum() == 8 and not back.valid[1, 2]


def test_pfm_random_bit_exact():
    g = rng(3)
    for _ in range(10):
        d = g.uniform(0.1, 100, (int(g.integers(1, 50)), int(g.integers(1, 50)))).astype(np.float32)
        assert formats.read_pfm(io.BytesIO(pfm_bytes(d))).depth.tobytes() == d.tobytes()


def test_pfm_top_row_first_in_memory():
    d = np.arange(6, dtype=np.float32).reshape(2, 3) + 1
    data = pfm_bytes(d)
    # bottom image row is stored first
    body = np.frombuffer(data[-24:], "<f4")
    np.testing.assert_array_equal(body[:3], d[1])


def test_pfm_big_endian_read():
    d = np.array([[1.5, 2.5]], np.float32)
    data = b"Pf\n2 1\n1.0\n" + d.astype(">f4").tobytes()
    np.testing.assert_array_equal(formats.read_pfm(io.BytesIO(data)).depth, d)


@pytest.mark.parametrize(
    "data,err",
    [
        (b"PF\n1 1\n-1\n" + bytes(12), UnsupportedFormat),
        (b"P5\n1 1\n-1\n", MalformedHeader),
        (b"Pf\n1 x\n-1\n", MalformedHeader),
        (b"Pf\n1 1\n0\n" + bytes(4), MalformedHeader),
        (b"Pf\n2 2\n-1\n" + bytes(4), ParseError),
    ],
)
def test_pfm_errors(data, err):
    with pytest.raises(err):
        formats.read_pfm(io.BytesIO(data))


def test_image_round_trip(tmp_path):
    img = rng(4).integers(0, 256, (20, 30), dtype=np.uint8)
    formats.write_image(tmp_path / "a.png", img)
    np.testing.assert_array_equal(formats.read_image(tmp_path / "a.png"), img)
    rgb = rng(5).integers(0, 256, (20, 30, 3), dtype=np.uint8)
    formats.write_image(tmp_path / "b.png", rgb)
    np.testing.assert_array_equal(formats.read_image(tmp_path / "b.png"), rgb)
    (tmp_path / "c.png").write_bytes(b"not an image")
    with pytest.raises(ParseError):
        formats.read_image(tmp_path / "c.png")


def gps(text):
    return formats.read_gps_csv(io.StringIO(text))


def test_gps_single_row_is_origin():
    (a,) = gps("timestamp,lat,lon,alt\n0.5,-33,-60,25\n")
    assert a.timestamp == 0.5
    np.testing.assert_allclose(a.position, 0.0, atol=1e-9)


def test_gps_northward_step():
    a, b = gps("timestamp,lat,lon,alt\n0,0,0,0\n1,0.00001,0,0\n")
    assert b.position[1] - a.position[1] == pytest.approx(1.106, abs=1e-3)


def test_gps_shuffled_rows():
    with pytest.raises(NonMonotonicTimestamps) as e:
        gps("timestamp,lat,lon,alt\n1,0,0,0\n0,0,0,0\n")
    assert e.value.line == 3


@pytest.mark.parametrize(
    "text,err",
    [
        ("", MalformedHeader),
        ("t,lat,lon,alt\n", MalformedHeader),
        ("timestamp,lat,lon,alt\n0,1,2\n", ParseError),
        ("timestamp,lat,lon,alt\n0,95,0,0\n", ParseError),
        ("timestamp,lat,lon,alt\n0,inf,0,0\n", ParseError),
    ],
)
def test_gps_errors(text, err):
    with pytest.raises(err):
        gps(text)


def test_gps_round_trip():
    fixes = np.column_stack([np.arange(5.0), rng(6).uniform(-30, 30, (5, 3))])
    buf = io.StringIO()
    formats.write_gps_csv(buf, fixes)
    np.testing.assert_array_equal(formats.read_gps_fixes(io.StringIO(buf.getvalue())), fixes)


def test_correspondence_and_keypoint_round_trip():
    g = rng(7)
    c = Correspondences(g.uniform(0, 600, (20, 2)), g.uniform(0, 600, (20, 2)))
    buf = io.StringIO()
    formats.write_correspondences(buf, c)
    back = formats.read_correspondences(io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(back.ref, c.ref)
    np.testing.assert_array_equal(back.cur, c.cur)
    buf = io.StringIO()
    formats.write_keypoints(buf, c.ref)
    np.testing.assert_array_equal(formats.read_keypoints(io.StringIO(buf.getvalue())), c.ref)


def _valid_samples():
    g = rng(8)
    cloud = PointCloud(g.normal(size=(20, 3)), g.integers(0, 256, (20, 3)), g.uniform(size=20))
    traj = Trajectory(np.arange(10.0), g.normal(size=(10, 3)))
    tbuf = io.StringIO()
    formats.write_tum(tbuf, traj)
    return {
        "tum": (formats.read_tum, tbuf.getvalue().encode(), True),
        "ply-bin": (formats.read_ply, ply_bytes(cloud, True), False),
        "ply-ascii": (formats.read_ply, ply_bytes(cloud, False), False),
        "pfm": (formats.read_pfm, pfm_bytes(g.uniform(1, 5, (6, 4)).astype(np.float32)), False),
        "gps": (formats.read_gps_csv, b"timestamp,lat,lon,alt\n0,1,2,3\n1,1.1,2,3\n", True),
    }


SAMPLES = _valid_samples()


@settings(max_examples=300, suppress_health_check=[HealthCheck.too_slow])
@given(st.sampled_from(sorted(SAMPLES)), st.binary(max_size=64), st.integers(0, 10_000), st.integers(0, 3))
def test_fuzzed_inputs_raise_structured_errors(name, junk, pos, op):
    reader, data, text = SAMPLES[name]
    pos %= len(data) + 1
    if op == 0:
        data = data[:pos]
    elif op == 1:
        data = data[:pos] + junk + data[pos:]
    elif op == 2:
        data = data[:pos] + junk + data[pos + len(junk):]
    else:
        data = junk
    src = io.StringIO(data.decode("utf-8", errors="replace")) if text else io.BytesIO(data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            reader(src)
        except FormatError as e:
            assert e.line is not None or e.offset is not None


def test_report_envelope_round_trip():
    env = formats.make_report("ate", {"rmse": np.float64(0.5), "n": np.int64(3)}, {"align": "sim3"})
    text = env.to_json()
    back = formats.ReportEnvelope.from_json(text)
    assert back.to_dict() == json.loads(text)
    assert back.payload["rmse"] == 0.5 and back.payload["n"] == 3


def test_strip_timestamp_blanks_only_timestamps():
    a = formats.make_report("x", {"v": 1}, {}).to_json()
    b = formats.make_report("x", {"v": 1}, {}, stamp=False).to_json()
    assert formats.TIMESTAMP_FIELD in a
    assert formats.strip_timestamp(a) == formats.strip_timestamp(b)
    c = formats.make_report("x", {"v": 2}, {}).to_json()
    assert formats.strip_timestamp(a) != formats.strip_timestamp(c)


def test_file_digest(tmp_path):
    p = tmp_path / "f"
    p.write_bytes(b"abc")
    assert formats.file_digest(p) == "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
