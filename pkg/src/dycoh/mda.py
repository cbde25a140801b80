"""ODF normalisation, multidirectional anisotropy and peak extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sphere import DirectionSet
from .volume import FormatError, Grid3, Mask, VolumeHeader, read_volume, write_volume

MDA_LIMIT = 1.0 / np.sqrt(2.0)
PSI_MIN_FLOOR = 1e-12


class DegenerateODFError(ValueError):
    """ODF with no positive mass (or negative samples)."""


@dataclass(frozen=True)
class ODFField:
    grid: Grid3
    directions: DirectionSet
    values: np.ndarray = field(repr=False)  # (n_voxels, n_directions)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.grid.n_voxels, len(self.directions)):
            raise ValueError(
                f"ODF values have shape {values.shape}, expected "
                f"({self.grid.n_voxels}, {len(self.directions)})"
            )
        object.__setattr__(self, "values", values)

    def write(self, path) -> None:
        header = VolumeHeader(self.grid, "f32", len(self.directions), "odf")
        write_volume(path, header, np.asarray(self.values, dtype=np.float32))

    @classmethod
    def read(cls, path, directions: DirectionSet) -> "ODFField":
        header, payload = read_volume(path)
        if header.tag != "odf":
            raise FormatError(f"{path}: not an odf volume")
        if header.channels != len(directions):
            raise FormatError(
                f"{path}: {header.channels} ODF samples per voxel but the direction set has {len(directions)}"
            )
        return cls(header.grid, directions, payload.reshape(header.grid.n_voxels, -1))


@dataclass
class PeakField:
    """Per-voxel MDA peak vectors, ordered by decreasing magnitude.

    Only the voxels in ``voxels`` (sorted linear indices) are stored; every
    other voxel has no peaks.  Absent peaks are zero rows in ``vectors``.
    """

    grid: Grid3
    k_max: int
    voxels: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)  # (len(voxels), k_max, 3) float32
    counts: np.ndarray = field(repr=False)  # (len(voxels),) number of real peaks
    n_degenerate: int = 0
    n_floored: int = 0

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float32).reshape(
            len(self.voxels), self.k_max, 3
        )
        self.counts = np.asarray(self.counts, dtype=np.int8)
        if len(self.voxels) > 1 and np.any(np.diff(self.voxels) <= 0):
            raise ValueError("PeakField voxels must be strictly increasing")

    @classmethod
    def empty(cls, grid: Grid3, k_max: int = 4) -> "PeakField":
        return cls(grid, k_max, np.zeros(0, np.int64), np.zeros((0, k_max, 3)), np.zeros(0))

    def gather(self, indices, k: int | None = None) -> np.ndarray:
        """Peak vectors at the given linear indices as float64 (n, k, 3)."""
        k = self.k_max if k is None else k
        indices = np.asarray(indices, dtype=np.int64)
        out = np.zeros((len(indices), k, 3), dtype=np.float64)
        if len(self.voxels) == 0:
            return out
        kk = min(k, self.k_max)
        pos = np.searchsorted(self.voxels, indices)
        pos = np.minimum(pos, len(self.voxels) - 1)
        hit = self.voxels[pos] == indices
        out[hit, :kk] = self.vectors[pos[hit], :kk]
        return out

    def dense(self) -> np.ndarray:
        out = np.zeros((self.grid.n_voxels, self.k_max, 3), dtype=np.float32)
        out[self.voxels] = self.vectors
        return out

    def truncate(self, k: int) -> "PeakField":
        return PeakField(
            self.grid, k, self.voxels, self.vectors[:, :k],
            np.minimum(self.counts, k), self.n_degenerate, self.n_floored,
        )

    def write(self, path) -> None:
        header = VolumeHeader(self.grid, "f32", self.k_max * 3, "peakfield")
        write_volume(path, header, self.dense().reshape(self.grid.n_voxels, -1))

    @classmethod
    def read(cls, path, mask: Mask | None = None) -> "PeakField":
        header, payload = read_volume(path)
        if header.tag != "peakfield" or header.channels % 3:
            raise FormatError(f"{path}: not a peakfield volume")
        k_max = header.channels // 3
        dense = payload.reshape(header.grid.n_voxels, k_max, 3)
        present = np.any(dense != 0, axis=2)
        if mask is not None:
            voxels = mask.indices
        else:
            voxels = np.flatnonzero(present.any(axis=1))
        return cls(header.grid, k_max, voxels, dense[voxels], present[voxels].sum(axis=1))


def normalize_odf(odf) -> np.ndarray:
    odf = np.asarray(odf, dtype=np.float64)
    if np.any(odf < 0) or not np.all(np.isfinite(odf)):
        raise DegenerateODFError("ODF samples must be finite and non-negative")
    total = odf.sum()
    if total <= 0:
        raise DegenerateODFError("ODF has zero total mass")
    return odf / total


def _mda_from_mu(mu):
    return np.abs(1.0 - mu) / np.sqrt(1.0 + 2.0 * mu * mu)


def mda_values(odf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """MDA for every direction of one or many normalised ODFs (last axis).

    Returns ``(mda, floored)`` where ``floored`` marks ODFs whose minimum was
    zero and had to be replaced by the smallest positive sample times 1e-12.
    """
    odf = np.asarray(odf, dtype=np.float64)
    psi_min = odf.min(axis=-1, keepdims=True)
    floored = psi_min[..., 0] <= 0
    if np.any(floored):
        pos = np.where(odf > 0, odf, np.inf).min(axis=-1, keepdims=True)
        psi_min = np.where(psi_min > 0, psi_min, pos * PSI_MIN_FLOOR)
    mu = (odf / psi_min) ** (2.0 / 3.0)
    return _mda_from_mu(mu), floored


def mda_value(odf, theta_id: int) -> float:
    mda, _ = mda_values(np.asarray(odf, dtype=np.float64))
    return float(mda[theta_id])


def _peaks_batch(values, table, antipode, k_max):
    """Vectorised peak search over rows of normalised ODFs.

    Returns vertex ids (m, k_max) with -1 for absent peaks and matching MDA.
    """
    m, n = values.shape
    nb = values[:, table]  # (m, n, deg)
    own = values[:, :, None]
    is_self = table == np.arange(n)[:, None]
    ge = np.all(nb <= own, axis=2)
    gt = np.any((nb < own) & ~is_self, axis=2)
    cand = ge & gt
    # exact plateau ties: the lowest vertex id wins
    lower_tied = (nb == own) & ~is_self & (table < np.arange(n)[:, None]) & cand[:, table]
    cand &= ~np.any(lower_tied, axis=2)
    # antipodal duplicates: keep the lower id of each pair
    ids = np.arange(n)
    cand &= ~(cand[:, antipode] & (antipode < ids))

    mda, floored = mda_values(values)
    score = np.where(cand, mda, -np.inf)
    order = np.argsort(-score, axis=1, kind="stable")[:, :k_max]
    top = np.take_along_axis(score, order, axis=1)
    present = np.isfinite(top)
    return np.where(present, order, -1), np.where(present, top, 0.0), floored


def find_local_maxima(odf, ds: DirectionSet, k_max: int = 4):
    """Peaks of a single normalised ODF as ``[(vertex_id, mda), ...]``."""
    ids, mda, _ = _peaks_batch(
        np.asarray(odf, dtype=np.float64)[None], ds.neighbor_table(), ds.antipode, k_max
    )
    return [(int(i), float(v)) for i, v in zip(ids[0], mda[0]) if i >= 0]


def extract_peak_field(
    odf: ODFField, mask: Mask, k_max: int = 4, chunk: int = 2048
) -> PeakField:
    if odf.grid.dims != mask.grid.dims:
        raise ValueError(f"grid mismatch: {odf.grid.dims} vs {mask.grid.dims}")
    if not 1 <= k_max <= 4:
        raise ValueError("k_max must be between 1 and 4")
    voxels = mask.indices
    ds = odf.directions
    table = ds.neighbor_table()
    vectors = np.zeros((len(voxels), k_max, 3), dtype=np.float32)
    counts = np.zeros(len(voxels), dtype=np.int8)
    n_degenerate = n_floored = 0
    for start in range(0, len(voxels), chunk):
        idx = voxels[start : start + chunk]
        raw = np.asarray(odf.values[idx], dtype=np.float64)
        total = raw.sum(axis=1)
        ok = (total > 0) & np.all(raw >= 0, axis=1) & np.all(np.isfinite(raw), axis=1)
        n_degenerate += int((~ok).sum())
        if not ok.any():
            continue
        rows = np.flatnonzero(ok)
        norm = raw[rows] / total[rows, None]
        ids, mda, floored = _peaks_batch(norm, table, ds.antipode, k_max)
        n_floored += int(floored.sum())
        present = ids >= 0
        vec = ds.vectors[np.maximum(ids, 0)] * (mda * present)[..., None]
        vectors[start + rows] = vec
        counts[start + rows] = present.sum(axis=1)
    return PeakField(odf.grid, k_max, voxels, vectors, counts, n_degenerate, n_floored)
