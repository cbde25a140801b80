import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dycoh.volume import (
    MAGIC, FormatError, Grid3, Mask, ScalarVolume, VolumeHeader, read_labels, read_mask, read_scalar,
    read_volume, write_labels, write_mask, write_scalar, write_volume,
)


def test_single_voxel_u8_layout(tmp_path):
    g = Grid3((1, 1, 1))
    path = tmp_path / "one.dycoh"
    write_volume(path, VolumeHeader(g, "u8"), np.array([7], dtype=np.uint8))
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    assert raw[:8] == b"DYCOH\x00\x00\x01"
    assert len(raw) == 8 + 8 + hlen + 1
    assert raw[-1] == 0x07


def test_header_is_sorted_json(tmp_path):
    path = tmp_path / "h.dycoh"
    write_volume(path, VolumeHeader(Grid3((2, 1, 1), (1.0, 2.0, 3.0)), "f32", 1, "odf"), np.zeros(2, np.float32))
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    text = raw[16 : 16 + hlen].decode()
    assert text.index('"channels"') < text.index('"dims"') < text.index('"dtype"') < text.index('"tag"')


def test_payload_size_f64_three_channels(tmp_path):
    g = Grid3((2, 2, 2))
    path = tmp_path / "v.dycoh"
    header = VolumeHeader(g, "f64", channels=3)
    assert header.payload_nbytes == 192
    write_volume(path, header, np.arange(24, dtype=np.float64))
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    assert len(raw) - 16 - hlen == 192


def test_channel_minor_order(tmp_path):
    g = Grid3((2, 1, 1))
    path = tmp_path / "c.dycoh"
    data = np.array([[1, 2, 3], [4, 5, 6]], dtype=np.int32)
    write_volume(path, VolumeHeader(g, "i32", 3), data)
    raw = path.read_bytes()
    vals = np.frombuffer(raw[-24:], dtype="<i4")
    assert vals.tolist() == [1, 2, 3, 4, 5, 6]


@given(
    dims=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
    channels=st.integers(1, 4),
    dtype=st.sampled_from(["u8", "i32", "f32", "f64"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip(tmp_path_factory, dims, channels, dtype, seed):
    g = Grid3(dims, (1.25, 1.25, 1.25))
    rng = np.random.default_rng(seed)
    n = g.n_voxels * channels
    if dtype in ("u8", "i32"):
        payload = rng.integers(0, 200, n).astype({"u8": np.uint8, "i32": np.int32}[dtype])
    else:
        payload = rng.standard_normal(n).astype({"f32": np.float32, "f64": np.float64}[dtype])
    path = tmp_path_factory.mktemp("rt") / "v.dycoh"
    header = VolumeHeader(g, dtype, channels, "scalar")
    write_volume(path, header, payload)
    h2, p2 = read_volume(path)
    assert h2 == header
    assert np.array_equal(p2.ravel(), payload)
    first = path.read_bytes()
    write_volume(path, h2, p2)
    assert path.read_bytes() == first


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.dycoh"
    path.write_bytes(b"XXXX" + b"\x00" * 40)
    with pytest.raises(FormatError, match="magic"):
        read_volume(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "v2.dycoh"
    write_volume(path, VolumeHeader(Grid3((1, 1, 1)), "u8"), np.array([1], np.uint8))
    raw = bytearray(path.read_bytes())
    raw[7] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_volume(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.dycoh"
    write_volume(path, VolumeHeader(Grid3((3, 3, 3)), "f32"), np.ones(27, np.float32))
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="truncated"):
        read_volume(path)


def test_trailing_bytes(tmp_path):
    path = tmp_path / "t.dycoh"
    write_volume(path, VolumeHeader(Grid3((1, 1, 1)), "u8"), np.array([1], np.uint8))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        read_volume(path)


def test_size_and_dtype_mismatch(tmp_path):
    g = Grid3((2, 2, 2))
    with pytest.raises(FormatError):
        write_volume(tmp_path / "x", VolumeHeader(g, "f32"), np.zeros(7, np.float32))
    with pytest.raises(FormatError):
        write_volume(tmp_path / "x", VolumeHeader(g, "f32"), np.zeros(8, np.float64))
    with pytest.raises(FormatError):
        VolumeHeader(g, "f16")


def test_nan_rejected_for_finite_tags(tmp_path):
    g = Grid3((2, 1, 1))
    bad = np.array([0.0, np.nan], np.float32)
    with pytest.raises(FormatError):
        write_volume(tmp_path / "x", VolumeHeader(g, "f32", 1, "peakfield"), bad)
    write_volume(tmp_path / "ok", VolumeHeader(g, "f32", 1, "logjac"), bad)
    _, p = read_volume(tmp_path / "ok")
    assert np.isnan(p[1])


@given(st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)))
def test_index_bijection(dims):
    g = Grid3(dims)
    idx = np.arange(g.n_voxels)
    x, y, z = g.coords(idx)
    assert np.array_equal(g.index(x, y, z), idx)
    assert np.all(g.contains(x, y, z))


def test_linear_index_x_fastest():
    g = Grid3((4, 3, 2))
    assert g.index(1, 0, 0) == 1
    assert g.index(0, 1, 0) == 4
    assert g.index(0, 0, 1) == 12
    assert g.zyx_shape == (2, 3, 4)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid3((0, 1, 1))
    with pytest.raises(ValueError):
        Grid3((1, 1, 1), (1.0, -1.0, 1.0))


def test_typed_wrappers(tmp_path, rng):
    g = Grid3((3, 4, 5), (1.0, 1.5, 2.0))
    m = Mask(g, rng.random(g.n_voxels) > 0.5)
    write_mask(tmp_path / "m.dycoh", m)
    assert np.array_equal(read_mask(tmp_path / "m.dycoh").data, m.data)
    v = ScalarVolume(g, rng.standard_normal(g.n_voxels))
    write_scalar(tmp_path / "s.dycoh", v)
    assert np.array_equal(read_scalar(tmp_path / "s.dycoh").data, v.data)
    labels = rng.integers(-1, 5, g.n_voxels)
    write_labels(tmp_path / "l.dycoh", g, labels)
    g2, l2 = read_labels(tmp_path / "l.dycoh")
    assert g2 == g and np.array_equal(l2, labels)


def test_mask_algebra():
    g = Grid3((4, 1, 1))
    a = Mask(g, [1, 1, 0, 0])
    b = Mask(g, [0, 1, 1, 0])
    assert (a & b).indices.tolist() == [1]
    assert (a - b).indices.tolist() == [0]
    assert Mask.full(g).count == 4 and Mask.empty(g).count == 0
    with pytest.raises(ValueError):
        a & Mask.full(Grid3((2, 2, 1)))
