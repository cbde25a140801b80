"""Region- and subject-level dissimilarity summaries over discovered regions.

The dissimilarity of two subjects within a region is the median of their
dyad dissimilarities over the region's dyads (midpoint of the two middle
values for an even count).  The subject-level dissimilarity is the mean over
regions.  Voxel-level variants take the median over the region's voxels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dissim import DissimVariant
from .lattice import Region, RegionSet
from .mda import PeakField
from .screening import PeakStack, dyad_dissim_matrix, voxel_dissim_matrix
from .stats import StatsDomainError, cohens_d, pearson_r

Pair = tuple[str, str]


class EmptyRegionError(ValueError):
    pass


def pair_id(pair: Pair) -> str:
    return f"{pair[0]}|{pair[1]}"


def _region_matrix(region: Region, stack: PeakStack, pairs, variant: DissimVariant) -> np.ndarray:
    if variant.per_dyad:
        if region.n_dyads == 0:
            raise EmptyRegionError("region has no dyads")
        return dyad_dissim_matrix(region.dyads, stack, pairs, variant.kind)
    if region.n_voxels == 0:
        raise EmptyRegionError("region has no voxels")
    return voxel_dissim_matrix(region.voxels, stack, pairs, variant.kind)


def _stack_for(regions: Sequence[Region], fields: Mapping[str, PeakField], k: int) -> PeakStack:
    voxels = np.unique(np.concatenate([r.voxels for r in regions])) if regions else np.zeros(0, np.int64)
    return PeakStack(fields, voxels, k)


def region_dissim(X: PeakField, Y: PeakField, region: Region, variant: DissimVariant = DissimVariant()) -> float:
    """Median dissimilarity of X and Y over the dyads of ``region``."""
    stack = _stack_for([region], {"x": X, "y": Y}, variant.k)
    return float(np.median(_region_matrix(region, stack, [("x", "y")], variant)))


def subject_dissim(
    X: PeakField, Y: PeakField, regions: Sequence[Region], variant: DissimVariant = DissimVariant()
) -> float:
    """Mean of the region dissimilarities of X and Y."""
    regions = list(regions)
    if not regions:
        raise EmptyRegionError("need at least one region")
    return float(np.mean([region_dissim(X, Y, r, variant) for r in regions]))


@dataclass
class PairSimilarityMatrix:
    pair_ids: list
    relations: list
    values: np.ndarray = field(repr=False)  # (n_pairs, n_regions)

    @property
    def aggregate(self) -> np.ndarray:
        return self.values.mean(axis=1)

    @property
    def n_regions(self) -> int:
        return self.values.shape[1]

    def rows(self, relations: Sequence[str] | None = None) -> np.ndarray:
        if relations is None:
            return np.arange(len(self.pair_ids))
        keep = set(relations)
        return np.array([i for i, r in enumerate(self.relations) if r in keep], dtype=np.int64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pair_id", "relation"] + [f"region_{i}" for i in range(self.n_regions)] + ["aggregate"])
            for pid, rel, row, agg in zip(self.pair_ids, self.relations, self.values.tolist(), self.aggregate.tolist()):
                w.writerow([pid, rel] + [repr(v) for v in row] + [repr(agg)])

    @classmethod
    def read_csv(cls, path) -> "PairSimilarityMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        n_reg = len(header) - 3
        values = np.array([[float(v) for v in r[2 : 2 + n_reg]] for r in rows]).reshape(len(rows), n_reg)
        return cls([r[0] for r in rows], [r[1] for r in rows], values)


def similarity_matrix(
    fields: Mapping[str, PeakField],
    regions: RegionSet | Sequence[Region],
    pairs: Sequence[Pair],
    relations: Sequence[str],
    variant: DissimVariant = DissimVariant(),
) -> PairSimilarityMatrix:
    """Region dissimilarity of every pair (rows) in every region (columns)."""
    regions = list(regions)
    if not regions:
        raise EmptyRegionError("need at least one region")
    pairs = [tuple(p) for p in pairs]
    stack = _stack_for(regions, fields, variant.k)
    values = np.empty((len(pairs), len(regions)))
    for j, region in enumerate(regions):
        values[:, j] = np.median(_region_matrix(region, stack, pairs, variant), axis=0)
    return PairSimilarityMatrix([pair_id(p) for p in pairs], list(relations), values)


@dataclass(frozen=True)
class RegionStats:
    region_id: int
    n_dyads: int
    n_voxels: int
    effect_size_interest: float
    effect_size_holdout: float = float("nan")


EFFECT_COLUMNS = ("region", "n_dyads", "n_voxels", "effect_size_interest", "effect_size_holdout")


def region_effect_table(
    fields: Mapping[str, PeakField],
    regions: RegionSet | Sequence[Region],
    pairs_interest: Sequence[Pair],
    pairs_control: Sequence[Pair],
    pairs_holdout: Sequence[Pair] = (),
    variant: DissimVariant = DissimVariant(),
) -> list[RegionStats]:
    """Cohen's d of interest (and holdout) against control, per region.

    Positive d means the group is more alike than the controls.
    """
    regions = list(regions)
    groups = [list(pairs_interest), list(pairs_control), list(pairs_holdout)]
    for name, g in zip(("interest", "control"), groups):
        if len(g) < 2:
            raise StatsDomainError(f"{name} group needs at least 2 pairs")
    if groups[2] and len(groups[2]) < 2:
        raise StatsDomainError("holdout group needs at least 2 pairs")
    stack = _stack_for(regions, fields, variant.k)
    out = []
    for rid, region in enumerate(regions):
        med = [np.median(_region_matrix(region, stack, g, variant), axis=0) if g else None for g in groups]
        d_int = cohens_d(med[0], med[1])
        d_hold = cohens_d(med[2], med[1]) if med[2] is not None else float("nan")
        out.append(RegionStats(rid, region.n_dyads, region.n_voxels, d_int, d_hold))
    return out


def write_effect_table(path, table: Sequence[RegionStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EFFECT_COLUMNS)
        for s in table:
            w.writerow([s.region_id, s.n_dyads, s.n_voxels, repr(s.effect_size_interest), repr(s.effect_size_holdout)])


def region_correlation_matrix(sim: PairSimilarityMatrix, relations: Sequence[str] | None = None) -> np.ndarray:
    """Pearson correlation between region columns over subject pairs.

    All pairs are pooled unless ``relations`` restricts the rows.
    """
    rows = sim.rows(relations)
    if len(rows) < 2:
        raise StatsDomainError("need at least 2 subject pairs")
    vals = sim.values[rows]
    n = sim.n_regions
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = pearson_r(vals[:, i], vals[:, j])
    return out


def write_matrix_csv(path, matrix: np.ndarray, prefix: str = "region_") -> None:
    n = matrix.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + [f"{prefix}{i}" for i in range(n)])
        for i, row in enumerate(matrix.tolist()):
            w.writerow([f"{prefix}{i}"] + [repr(v) for v in row])
