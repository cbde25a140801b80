"""Log-Jacobian volumes from displacement fields and the morphology exclusion mask.

A displacement field stores ``u(v)`` in millimetres for every voxel.  The
Jacobian of the warp ``x -> x + u(x)`` is ``I + grad u``; derivatives use
central differences in the interior and one-sided differences on the grid
boundary (``numpy.gradient`` with edge order 1), scaled by the voxel size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .lattice import LatticeGraph, build_lattice
from .screening import ScreenResult, screen_logjac
from .volume import FormatError, Grid3, Mask, ScalarVolume, VolumeHeader, read_volume, write_volume

DISPFIELD_TAG = "dispfield"


@dataclass(frozen=True)
class DisplacementField:
    grid: Grid3
    u: np.ndarray = field(repr=False)  # (n_voxels, 3), x/y/z components in mm

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64).reshape(-1, 3)
        if len(u) != self.grid.n_voxels:
            raise ValueError(f"displacement has {len(u)} voxels, grid has {self.grid.n_voxels}")
        if not np.all(np.isfinite(u)):
            raise ValueError("displacement field must be finite")
        object.__setattr__(self, "u", u)

    def write(self, path) -> None:
        header = VolumeHeader(self.grid, "f32", channels=3, tag=DISPFIELD_TAG)
        write_volume(path, header, self.u.astype(np.float32))

    @classmethod
    def read(cls, path) -> "DisplacementField":
        header, payload = read_volume(path)
        if header.channels != 3 or header.tag != DISPFIELD_TAG:
            raise FormatError(f"{path}: expected a 3-channel {DISPFIELD_TAG} volume")
        return cls(header.grid, payload.reshape(-1, 3))


@dataclass(frozen=True)
class LogJacobian:
    volume: ScalarVolume
    n_folded: int  # voxels with det J <= 0, stored as NaN


def log_jacobian_field(df: DisplacementField) -> LogJacobian:
    grid = df.grid
    if min(grid.dims) < 3:
        raise ValueError("log-Jacobian needs at least 3 voxels along every axis")
    sx, sy, sz = grid.voxel_size_mm
    shape = grid.zyx_shape
    jac = np.empty(shape + (3, 3))
    for i in range(3):
        comp = df.u[:, i].reshape(shape)
        dz, dy, dx = np.gradient(comp, sz, sy, sx, edge_order=1)
        jac[..., i, 0] = dx
        jac[..., i, 1] = dy
        jac[..., i, 2] = dz
    jac += np.eye(3)
    det = np.linalg.det(jac).ravel()
    folded = det <= 0
    out = np.full(grid.n_voxels, np.nan)
    out[~folded] = np.log(det[~folded])
    return LogJacobian(ScalarVolume(grid, out), int(folded.sum()))


@dataclass(frozen=True)
class ExclusionResult:
    mask: Mask  # voxels flagged for exclusion
    n_flagged: int
    fdr_estimate: float
    screen: ScreenResult = field(repr=False)


def jacobian_exclusion_mask(
    logj: Mapping[str, ScalarVolume],
    pairs_interest: Sequence[tuple[str, str]],
    pairs_control: Sequence[tuple[str, str]],
    mask: Mask,
    p_threshold: float = 1e-3,
) -> ExclusionResult:
    """Flag voxels where interest pairs have more alike log-Jacobians than controls."""
    res = screen_logjac(mask, logj, pairs_interest, pairs_control, p_threshold, "a_less")
    flagged = np.zeros(mask.grid.n_voxels, dtype=bool)
    flagged[res.units[res.significant, 0]] = True
    return ExclusionResult(
        Mask(mask.grid, flagged), int(flagged.sum()), res.summary.fdr_estimate, res
    )


def exclude_voxels(mask: Mask, excluded: Mask) -> Mask:
    """White-matter mask with flagged voxels removed.

    Building the lattice on this mask drops every dyad that touches a
    flagged voxel.
    """
    return mask - excluded


def lattice_without(mask: Mask, excluded: Mask, connectivity: int = 26) -> LatticeGraph:
    return build_lattice(exclude_voxels(mask, excluded), connectivity)
