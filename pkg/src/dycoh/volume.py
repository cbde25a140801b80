"""Voxel grid types and the DYCOH binary container.

File layout (all integers little-endian)::

    bytes 0..7     magic  b"DYCOH\\x00\\x00\\x01" (last byte is the format version)
    bytes 8..15    uint64 length of the JSON header in bytes
    header         UTF-8 JSON object, keys sorted:
                     dims           [nx, ny, nz]
                     voxel_size_mm  [sx, sy, sz]
                     dtype          "u8" | "i32" | "f32" | "f64"
                     channels       int >= 1
                     tag            semantic tag, e.g. "mask", "peakfield"
    payload        raw values, linear-index-major and channel-minor

The linear index of voxel (x, y, z) is ``x + nx * (y + ny * z)``, i.e. x varies
fastest. A flat array of length nx*ny*nz therefore reshapes to ``(nz, ny, nx)``
in C order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DYCOH\x00\x00\x01"

DTYPES = {
    "u8": np.dtype("<u1"),
    "i32": np.dtype("<i4"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
}

# Tags whose payload must be finite. "logjac" may carry NaN for folded voxels.
FINITE_TAGS = frozenset({"mask", "peakfield", "odf", "dispfield", "regions"})


class FormatError(ValueError):
    """Malformed, truncated or inconsistent DYCOH data."""


@dataclass(frozen=True)
class Grid3:
    dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        vs = tuple(float(s) for s in self.voxel_size_mm)
        if len(dims) != 3 or len(vs) != 3:
            raise ValueError("Grid3 needs three dims and three voxel sizes")
        if min(dims) < 1:
            raise ValueError(f"dims must be >= 1, got {dims}")
        if not all(s > 0 and np.isfinite(s) for s in vs):
            raise ValueError(f"voxel sizes must be positive, got {vs}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size_mm", vs)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def zyx_shape(self) -> tuple[int, int, int]:
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    def index(self, x, y, z):
        """Linear index of (x, y, z); works elementwise on arrays."""
        nx, ny, _ = self.dims
        return np.asarray(x) + nx * (np.asarray(y) + ny * np.asarray(z))

    def coords(self, index):
        """Inverse of :meth:`index`; returns (x, y, z)."""
        nx, ny, _ = self.dims
        index = np.asarray(index)
        x = index % nx
        y = (index // nx) % ny
        z = index // (nx * ny)
        return x, y, z

    def contains(self, x, y, z):
        nx, ny, nz = self.dims
        x, y, z = np.asarray(x), np.asarray(y), np.asarray(z)
        return (x >= 0) & (x < nx) & (y >= 0) & (y < ny) & (z >= 0) & (z < nz)

    def centers_mm(self) -> np.ndarray:
        """Voxel centre coordinates in mm, shape (n_voxels, 3)."""
        x, y, z = self.coords(np.arange(self.n_voxels))
        return np.stack([x, y, z], axis=1) * np.asarray(self.voxel_size_mm)


@dataclass(frozen=True)
class Mask:
    grid: Grid3
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool).reshape(-1)
        if data.size != self.grid.n_voxels:
            raise ValueError(
                f"mask has {data.size} voxels, grid expects {self.grid.n_voxels}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def full(cls, grid: Grid3) -> "Mask":
        return cls(grid, np.ones(grid.n_voxels, dtype=bool))

    @classmethod
    def empty(cls, grid: Grid3) -> "Mask":
        return cls(grid, np.zeros(grid.n_voxels, dtype=bool))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.data)

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def __and__(self, other: "Mask") -> "Mask":
        _check_same_grid(self.grid, other.grid)
        return Mask(self.grid, self.data & other.data)

    def __sub__(self, other: "Mask") -> "Mask":
        _check_same_grid(self.grid, other.grid)
        return Mask(self.grid, self.data & ~other.data)


@dataclass(frozen=True)
class ScalarVolume:
    grid: Grid3
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != self.grid.n_voxels:
            raise ValueError(
                f"volume has {data.size} voxels, grid expects {self.grid.n_voxels}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)


def _check_same_grid(a: Grid3, b: Grid3):
    if a.dims != b.dims:
        raise ValueError(f"grid mismatch: {a.dims} vs {b.dims}")


@dataclass(frozen=True)
class VolumeHeader:
    grid: Grid3
    dtype: str
    channels: int = 1
    tag: str = "scalar"

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise FormatError(f"unsupported dtype {self.dtype!r}")
        if int(self.channels) < 1:
            raise FormatError("channels must be >= 1")
        object.__setattr__(self, "channels", int(self.channels))

    @property
    def payload_nbytes(self) -> int:
        return self.grid.n_voxels * self.channels * DTYPES[self.dtype].itemsize

    def to_json(self) -> dict:
        return {
            "channels": self.channels,
            "dims": list(self.grid.dims),
            "dtype": self.dtype,
            "tag": self.tag,
            "voxel_size_mm": list(self.grid.voxel_size_mm),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VolumeHeader":
        try:
            grid = Grid3(tuple(obj["dims"]), tuple(obj["voxel_size_mm"]))
            return cls(grid, obj["dtype"], obj["channels"], obj.get("tag", "scalar"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid header: {exc}") from exc


def _check_finite(header: VolumeHeader, payload: np.ndarray):
    if header.tag in FINITE_TAGS and payload.dtype.kind == "f":
        if not np.all(np.isfinite(payload)):
            raise FormatError(f"non-finite values in a {header.tag!r} volume")


def write_volume(path, header: VolumeHeader, payload: np.ndarray) -> None:
    payload = np.asarray(payload)
    want = DTYPES[header.dtype]
    if payload.dtype.newbyteorder("<") != want:
        raise FormatError(f"payload dtype {payload.dtype} does not match {header.dtype}")
    expected = header.grid.n_voxels * header.channels
    if payload.size != expected:
        raise FormatError(
            f"payload holds {payload.size} values, header dims x channels = {expected}"
        )
    _check_finite(header, payload)
    blob = json.dumps(header.to_json(), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(payload, dtype=want).tobytes())


def read_volume(path) -> tuple[VolumeHeader, np.ndarray]:
    """Read a DYCOH file; the payload comes back as (n,) or (n, channels)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        if raw[:5] == MAGIC[:5]:
            raise FormatError(f"{path}: unsupported format version {raw[7]}")
        raise FormatError(f"{path}: bad magic")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        obj = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header") from exc
    header = VolumeHeader.from_json(obj)
    body = raw[16 + hlen :]
    if len(body) < header.payload_nbytes:
        raise FormatError(
            f"{path}: truncated payload ({len(body)} of {header.payload_nbytes} bytes)"
        )
    if len(body) > header.payload_nbytes:
        raise FormatError(f"{path}: trailing bytes after payload")
    payload = np.frombuffer(body, dtype=DTYPES[header.dtype]).copy()
    if header.channels > 1:
        payload = payload.reshape(header.grid.n_voxels, header.channels)
    _check_finite(header, payload)
    return header, payload


# Convenience wrappers for the typed volumes used across the package.


def write_mask(path, mask: Mask, tag: str = "mask") -> None:
    write_volume(path, VolumeHeader(mask.grid, "u8", 1, tag), mask.data.astype(np.uint8))


def read_mask(path) -> Mask:
    header, payload = read_volume(path)
    if header.channels != 1:
        raise FormatError(f"{path}: a mask must have one channel")
    return Mask(header.grid, payload != 0)


def write_scalar(path, vol: ScalarVolume, tag: str = "scalar", dtype: str = "f64") -> None:
    write_volume(path, VolumeHeader(vol.grid, dtype, 1, tag), vol.data.astype(DTYPES[dtype]))


def read_scalar(path) -> ScalarVolume:
    header, payload = read_volume(path)
    if header.channels != 1:
        raise FormatError(f"{path}: a scalar volume must have one channel")
    return ScalarVolume(header.grid, payload.astype(np.float64))


def write_labels(path, grid: Grid3, labels: np.ndarray) -> None:
    write_volume(path, VolumeHeader(grid, "i32", 1, "regions"), np.asarray(labels, dtype="<i4"))


def read_labels(path) -> tuple[Grid3, np.ndarray]:
    header, payload = read_volume(path)
    return header.grid, payload.astype(np.int64)
