"""Population screening of lattice dyads (or voxels).

For every unit the dissimilarity of each subject pair is computed, giving one
sample per population, and a one-sided Mann-Whitney test compares the
population of interest with the controls.  Work is split into fixed-size
chunks of units; chunks may run on a thread pool but results are assembled
in chunk order, so output never depends on the thread count.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dissim import DissimVariant, Kind, dyad_kernel, voxel_kernel
from .lattice import LatticeGraph
from .mda import PeakField
from .stats import ScreenSummary, fdr_estimate, mann_whitney_rows
from .volume import Mask, ScalarVolume

DEFAULT_CHUNK = 1 << 16

ALTERNATIVE_ALIASES = {
    "more-coherent": "a_less",
    "less-coherent": "a_greater",
    "a_less": "a_less",
    "a_greater": "a_greater",
}

Pair = tuple[str, str]


class ScreenInputError(ValueError):
    pass


@dataclass
class ScreenResult:
    units: np.ndarray = field(repr=False)  # (m, 2) dyads, or (m, 2) with u == v for voxels
    u_stat: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    significant: np.ndarray = field(repr=False)
    summary: ScreenSummary = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u", "v", "U", "p", "significant"])
            for (a, b), us, p, s in zip(
                self.units.tolist(), self.u_stat.tolist(), self.p.tolist(), self.significant.tolist()
            ):
                w.writerow([a, b, repr(us), repr(p), int(s)])

    def write_summary(self, path, **extra) -> None:
        obj = self.summary.to_json()
        obj.update(extra)
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path) -> "ScreenResult":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        units = data[:, :2].astype(np.int64)
        return cls(units, data[:, 2], data[:, 3], data[:, 4].astype(bool))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("DYCOH_THREADS", "1")))
    except ValueError:
        return 1


def _check_pairs(name: str, pairs: Sequence[Pair], known) -> list[Pair]:
    pairs = [tuple(p) for p in pairs]
    if len(pairs) < 2:
        raise ScreenInputError(f"{name} population needs at least 2 pairs, got {len(pairs)}")
    for a, b in pairs:
        for s in (a, b):
            if s not in known:
                raise ScreenInputError(f"subject {s!r} in {name} pairs has no data")
    return pairs


def _run_chunks(n_units: int, chunk: int, threads: int, fn):
    starts = list(range(0, n_units, chunk))
    if threads <= 1 or len(starts) <= 1:
        return [fn(s, min(s + chunk, n_units)) for s in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: fn(s, min(s + chunk, n_units)), starts))


def _finish(units, parts, threshold_p, alternative) -> ScreenResult:
    if parts:
        u = np.concatenate([q[0] for q in parts])
        p = np.concatenate([q[1] for q in parts])
        tied = np.concatenate([q[2] for q in parts])
        exact = np.concatenate([q[3] for q in parts])
    else:
        u = p = np.zeros(0)
        tied = exact = np.zeros(0, dtype=bool)
    sig = p < threshold_p
    n_sig = int(sig.sum())
    summary = ScreenSummary(
        threshold_p=float(threshold_p),
        n_tests=int(len(p)),
        n_significant=n_sig,
        fdr_estimate=fdr_estimate(len(p), threshold_p, n_sig),
        alternative=alternative,
        n_exact=int(exact.sum()),
        n_tied=int(tied.sum()),
    )
    return ScreenResult(units, u, p, sig, summary)


class PeakStack:
    """Peak vectors of many subjects gathered onto one compact voxel list."""

    def __init__(self, fields: Mapping[str, PeakField], voxels: np.ndarray, k: int):
        self.voxels = np.asarray(voxels, dtype=np.int64)
        grids = {f.grid.dims for f in fields.values()}
        if len(grids) > 1:
            raise ScreenInputError(f"peak fields are on different grids: {sorted(grids)}")
        self.k = k
        self._fields = fields
        self._cache: dict[str, np.ndarray] = {}

    def __contains__(self, sid):
        return sid in self._fields

    def __getitem__(self, sid) -> np.ndarray:
        arr = self._cache.get(sid)
        if arr is None:
            arr = self._fields[sid].gather(self.voxels, self.k)
            self._cache[sid] = arr
        return arr

    def positions(self, linear_index) -> np.ndarray:
        pos = np.searchsorted(self.voxels, linear_index)
        return pos


def dyad_dissim_matrix(
    dyads: np.ndarray,
    stack: PeakStack,
    pairs: Sequence[Pair],
    kind: Kind = Kind.CROSS,
) -> np.ndarray:
    """Dissimilarity of every pair at every dyad, shape (n_dyads, n_pairs)."""
    dyads = np.asarray(dyads, dtype=np.int64).reshape(-1, 2)
    kern = dyad_kernel(kind)
    pu = stack.positions(dyads[:, 0])
    pv = stack.positions(dyads[:, 1])
    out = np.empty((len(dyads), len(pairs)))
    for j, (x, y) in enumerate(pairs):
        X, Y = stack[x], stack[y]
        out[:, j] = kern(X[pu], X[pv], Y[pu], Y[pv])
    return out


def voxel_dissim_matrix(voxels, stack: PeakStack, pairs: Sequence[Pair], kind: Kind = Kind.VOXEL):
    kern = voxel_kernel(kind)
    pos = stack.positions(np.asarray(voxels, dtype=np.int64))
    out = np.empty((len(pos), len(pairs)))
    for j, (x, y) in enumerate(pairs):
        out[:, j] = kern(stack[x][pos], stack[y][pos])
    return out


def screen_dyads(
    graph: LatticeGraph,
    fields: Mapping[str, PeakField],
    pairs_interest: Sequence[Pair],
    pairs_control: Sequence[Pair],
    variant: DissimVariant = DissimVariant(),
    threshold_p: float = 1e-4,
    alternative: str = "a_less",
    threads: int | None = None,
    chunk: int = DEFAULT_CHUNK,
) -> ScreenResult:
    """Test every lattice dyad for lower (or higher) dissimilarity in the interest pairs."""
    alternative = ALTERNATIVE_ALIASES[alternative]
    if not variant.per_dyad:
        raise ValueError(f"{variant.kind.value} is a voxel-level variant; use screen_voxels")
    for sid, f in fields.items():
        if f.grid.dims != graph.grid.dims:
            raise ScreenInputError(f"subject {sid!r} grid {f.grid.dims} != mask grid {graph.grid.dims}")
    pi = _check_pairs("interest", pairs_interest, fields)
    pc = _check_pairs("control", pairs_control, fields)
    stack = PeakStack(fields, graph.mask.indices, variant.k)
    for sid in sorted({s for p in pi + pc for s in p}):
        stack[sid]  # gather once, outside the worker threads
    dyads = graph.dyads

    def work(lo, hi):
        block = dyads[lo:hi]
        a = dyad_dissim_matrix(block, stack, pi, variant.kind)
        b = dyad_dissim_matrix(block, stack, pc, variant.kind)
        return mann_whitney_rows(a, b, alternative)

    threads = default_threads() if threads is None else threads
    parts = _run_chunks(len(dyads), chunk, threads, work)
    return _finish(dyads, parts, threshold_p, alternative)


def screen_voxels(
    mask: Mask,
    fields: Mapping[str, PeakField],
    pairs_interest: Sequence[Pair],
    pairs_control: Sequence[Pair],
    variant: DissimVariant = DissimVariant(Kind.VOXEL),
    threshold_p: float = 1e-3,
    alternative: str = "a_less",
    threads: int | None = None,
    chunk: int = DEFAULT_CHUNK,
) -> ScreenResult:
    """Voxel-wise screen with the single-voxel or magnitude-only kernel."""
    alternative = ALTERNATIVE_ALIASES[alternative]
    voxels = mask.indices
    pi = _check_pairs("interest", pairs_interest, fields)
    pc = _check_pairs("control", pairs_control, fields)
    stack = PeakStack(fields, voxels, variant.k)
    for sid in sorted({s for p in pi + pc for s in p}):
        stack[sid]

    def work(lo, hi):
        block = voxels[lo:hi]
        a = voxel_dissim_matrix(block, stack, pi, variant.kind)
        b = voxel_dissim_matrix(block, stack, pc, variant.kind)
        return mann_whitney_rows(a, b, alternative)

    threads = default_threads() if threads is None else threads
    parts = _run_chunks(len(voxels), chunk, threads, work)
    return _finish(np.stack([voxels, voxels], axis=1), parts, threshold_p, alternative)


def screen_logjac(
    mask: Mask,
    volumes: Mapping[str, ScalarVolume],
    pairs_interest: Sequence[Pair],
    pairs_control: Sequence[Pair],
    threshold_p: float = 1e-3,
    alternative: str = "a_less",
) -> ScreenResult:
    """Voxel-wise screen on absolute log-Jacobian differences.

    Voxels where any subject has a non-finite value are not tested.
    """
    alternative = ALTERNATIVE_ALIASES[alternative]
    grids = {v.grid.dims for v in volumes.values()} | {mask.grid.dims}
    if len(grids) > 1:
        raise ScreenInputError(f"log-Jacobian volumes and mask differ in grid: {sorted(grids)}")
    pi = _check_pairs("interest", pairs_interest, volumes)
    pc = _check_pairs("control", pairs_control, volumes)
    voxels = mask.indices
    used = sorted({s for p in pi + pc for s in p})
    finite = np.ones(len(voxels), dtype=bool)
    for s in used:
        finite &= np.isfinite(volumes[s].data[voxels])
    voxels = voxels[finite]

    def diffs(pairs):
        return np.stack(
            [np.abs(volumes[x].data[voxels] - volumes[y].data[voxels]) for x, y in pairs], axis=1
        )

    parts = [mann_whitney_rows(diffs(pi), diffs(pc), alternative)] if len(voxels) else []
    return _finish(np.stack([voxels, voxels], axis=1), parts, threshold_p, alternative)
