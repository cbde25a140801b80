"""White-matter lattice network of voxel dyads and region discovery."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from .volume import Grid3, Mask

CONNECTIVITIES = (6, 18, 26)


def half_stencil(connectivity: int) -> list[tuple[int, int, int]]:
    """Neighbour offsets (dx, dy, dz) with positive linear-index difference."""
    if connectivity not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, got {connectivity}")
    reach = {6: 1, 18: 2, 26: 3}[connectivity]
    out = []
    for dz, dy, dx in product((-1, 0, 1), repeat=3):
        if (dz, dy, dx) > (0, 0, 0) and abs(dx) + abs(dy) + abs(dz) <= reach:
            out.append((dx, dy, dz))
    return out


@dataclass(frozen=True)
class LatticeGraph:
    mask: Mask
    connectivity: int
    dyads: np.ndarray = field(repr=False)  # (m, 2) int64, u < v, lexicographic

    @property
    def grid(self) -> Grid3:
        return self.mask.grid

    @property
    def n_dyads(self) -> int:
        return len(self.dyads)

    @property
    def u(self) -> np.ndarray:
        return self.dyads[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.dyads[:, 1]


def build_lattice(mask: Mask, connectivity: int = 26) -> LatticeGraph:
    offsets = half_stencil(connectivity)
    if mask.count == 0:
        raise ValueError("mask is empty")
    nx, ny, nz = mask.grid.dims
    m3 = mask.data.reshape(nz, ny, nx)
    lin = np.arange(mask.grid.n_voxels, dtype=np.int64).reshape(nz, ny, nx)
    us, vs = [], []
    for dx, dy, dz in offsets:
        src = tuple(slice(max(0, -d), n - max(0, d)) for d, n in ((dz, nz), (dy, ny), (dx, nx)))
        dst = tuple(slice(max(0, d), n - max(0, -d)) for d, n in ((dz, nz), (dy, ny), (dx, nx)))
        both = m3[src] & m3[dst]
        u = lin[src][both]
        us.append(u)
        vs.append(u + dx + nx * (dy + ny * dz))
    u = np.concatenate(us)
    v = np.concatenate(vs)
    order = np.lexsort((v, u))
    dyads = np.stack([u[order], v[order]], axis=1)
    dyads.setflags(write=False)
    return LatticeGraph(mask, connectivity, dyads)


@dataclass(frozen=True)
class Region:
    dyad_index: np.ndarray = field(repr=False)  # rows of LatticeGraph.dyads
    dyads: np.ndarray = field(repr=False)  # (m, 2) voxel pairs
    voxels: np.ndarray = field(repr=False)  # sorted unique voxels

    @property
    def n_dyads(self) -> int:
        return len(self.dyads)

    @property
    def n_voxels(self) -> int:
        return len(self.voxels)


@dataclass(frozen=True)
class RegionSet:
    grid: Grid3
    regions: tuple

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def __getitem__(self, i):
        return self.regions[i]

    @property
    def label_volume(self) -> np.ndarray:
        labels = np.full(self.grid.n_voxels, -1, dtype=np.int32)
        for rid, region in enumerate(self.regions):
            labels[region.voxels] = rid
        return labels

    @property
    def sizes(self) -> list[int]:
        return [r.n_voxels for r in self.regions]


def _as_dyad_index(graph: LatticeGraph, significant) -> np.ndarray:
    significant = np.asarray(significant)
    if significant.dtype == bool:
        if significant.shape != (graph.n_dyads,):
            raise ValueError("boolean selection must have one entry per dyad")
        return np.flatnonzero(significant)
    idx = np.unique(significant.astype(np.int64))
    if len(idx) and (idx[0] < 0 or idx[-1] >= graph.n_dyads):
        raise ValueError("dyad index out of range")
    return idx


def connected_components(graph: LatticeGraph, significant) -> RegionSet:
    """Group significant dyads that share a voxel into regions.

    ``significant`` is a boolean vector over ``graph.dyads`` or an array of
    dyad row indices.  Regions are ordered by unique-voxel count, largest
    first, ties broken by the smallest voxel index they contain.
    """
    idx = _as_dyad_index(graph, significant)
    if len(idx) == 0:
        return RegionSet(graph.grid, ())
    sel = graph.dyads[idx]
    nodes, inv = np.unique(sel.ravel(), return_inverse=True)
    inv = inv.reshape(-1, 2)
    n = len(nodes)
    adj = coo_matrix((np.ones(len(sel)), (inv[:, 0], inv[:, 1])), shape=(n, n))
    n_comp, node_label = _cc(adj, directed=False)
    dyad_label = node_label[inv[:, 0]]

    order = np.argsort(dyad_label, kind="stable")
    bounds = np.searchsorted(dyad_label[order], np.arange(n_comp + 1))
    node_order = np.argsort(node_label, kind="stable")
    node_bounds = np.searchsorted(node_label[node_order], np.arange(n_comp + 1))
    regions = []
    for c in range(n_comp):
        rows = order[bounds[c] : bounds[c + 1]]
        voxels = nodes[node_order[node_bounds[c] : node_bounds[c + 1]]]
        regions.append(Region(idx[rows], sel[rows], np.sort(voxels)))
    regions.sort(key=lambda r: (-r.n_voxels, int(r.voxels[0])))
    return RegionSet(graph.grid, tuple(regions))


def prune_regions(rs: RegionSet, min_voxels: int = 2) -> RegionSet:
    if min_voxels < 2:
        raise ValueError("min_voxels must be >= 2")
    return RegionSet(rs.grid, tuple(r for r in rs.regions if r.n_voxels >= min_voxels))


def top_regions(rs: RegionSet, n: int) -> RegionSet:
    if n < 0:
        raise ValueError("n must be non-negative")
    return RegionSet(rs.grid, tuple(rs.regions[:n]))


def write_dyads_csv(path, dyads) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v"])
        w.writerows(np.asarray(dyads, dtype=np.int64).tolist())


def read_dyads_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [(int(r["u"]), int(r["v"])) for r in csv.DictReader(fh)]
    return np.array(rows, dtype=np.int64).reshape(-1, 2)
