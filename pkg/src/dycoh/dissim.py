"""Between-subject dissimilarity kernels on MDA peak vectors.

Peak correspondence is by rank only, and an absent peak counts as the zero
vector.  Every directional kernel is blind to the sign of each peak vector,
since an ODF lobe has no direction of travel.

The ``*_batch`` functions take pre-gathered arrays of shape (m, k, 3) and are
what the screening code runs; the scalar functions are thin wrappers for
single voxels or dyads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .mda import PeakField
from .volume import ScalarVolume


class DomainError(ValueError):
    """A voxel outside the mask or a non-finite input value."""


class Kind(str, enum.Enum):
    VOXEL = "voxel"
    CROSS = "cross"
    WITHIN = "within"
    MAGNITUDE = "magnitude"
    LOGJAC = "logjac"


@dataclass(frozen=True)
class DissimVariant:
    kind: Kind = Kind.CROSS
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is not Kind.LOGJAC and not 1 <= int(self.k) <= 4:
            raise ValueError("k must be between 1 and 4")

    @property
    def per_dyad(self) -> bool:
        return self.kind in (Kind.CROSS, Kind.WITHIN)


def vec_dissim(a, b):
    """min(|a - b|, |a + b|) over the last axis."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a - b
    s = a + b
    return np.sqrt(np.minimum(np.einsum("...i,...i", d, d), np.einsum("...i,...i", s, s)))


def voxel_batch(xv, yv):
    return vec_dissim(xv, yv).sum(axis=-1)


def cross_dyad_batch(xu, xv, yu, yv):
    return 0.5 * (vec_dissim(xu, yv).sum(axis=-1) + vec_dissim(xv, yu).sum(axis=-1))


def within_dyad_batch(xu, xv, yu, yv):
    return 0.5 * (vec_dissim(xu, yu).sum(axis=-1) + vec_dissim(xv, yv).sum(axis=-1))


def magnitude_batch(xv, yv):
    return np.abs(np.linalg.norm(xv, axis=-1) - np.linalg.norm(yv, axis=-1)).sum(axis=-1)


def _peaks_at(field: PeakField, v: int, k: int) -> np.ndarray:
    pos = np.searchsorted(field.voxels, v)
    if pos >= len(field.voxels) or field.voxels[pos] != v:
        raise DomainError(f"voxel {v} is outside the peak field's mask")
    return field.gather([v], k)[0]


def voxel_dissim(X: PeakField, Y: PeakField, v: int, k: int = 1) -> float:
    return float(voxel_batch(_peaks_at(X, v, k), _peaks_at(Y, v, k)))


def dyad_cross_dissim(X: PeakField, Y: PeakField, u: int, v: int, k: int = 1) -> float:
    return float(
        cross_dyad_batch(_peaks_at(X, u, k), _peaks_at(X, v, k), _peaks_at(Y, u, k), _peaks_at(Y, v, k))
    )


def dyad_within_dissim(X: PeakField, Y: PeakField, u: int, v: int, k: int = 1) -> float:
    return float(
        within_dyad_batch(_peaks_at(X, u, k), _peaks_at(X, v, k), _peaks_at(Y, u, k), _peaks_at(Y, v, k))
    )


def magnitude_only_dissim(X: PeakField, Y: PeakField, v: int, k: int = 1) -> float:
    return float(magnitude_batch(_peaks_at(X, v, k), _peaks_at(Y, v, k)))


def logjac_dissim(jx: ScalarVolume, jy: ScalarVolume, v: int) -> float:
    a, b = jx.data[v], jy.data[v]
    if not (np.isfinite(a) and np.isfinite(b)):
        raise DomainError(f"non-finite log-Jacobian at voxel {v}")
    return float(abs(a - b))


def dyad_kernel(kind: Kind):
    """Batch kernel ``f(xu, xv, yu, yv)`` for a dyad-level variant."""
    if kind is Kind.CROSS:
        return cross_dyad_batch
    if kind is Kind.WITHIN:
        return within_dyad_batch
    raise ValueError(f"{kind.value} is not a dyad-level variant")


def voxel_kernel(kind: Kind):
    """Batch kernel ``f(xv, yv)`` for a voxel-level variant."""
    if kind is Kind.VOXEL:
        return voxel_batch
    if kind is Kind.MAGNITUDE:
        return magnitude_batch
    raise ValueError(f"{kind.value} is not a voxel-level peak variant")
