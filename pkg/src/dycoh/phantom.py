"""Synthetic cohorts with known ground truth.

Fascicles are tubes around polyline centrelines.  Every voxel inside a
fascicle carries one peak along the local tangent, with MDA magnitude set by
the fascicle.  Each peak is perturbed by

* angular jitter: the tangent is rotated towards a perpendicular direction
  by a 2-vector ``w`` in the tangent plane, ``w ~ N(0, I / kappa)``; the
  rotation angle is ``|w|`` and the axis is uniform around the tangent;
* magnitude jitter: the magnitude is scaled by ``1 + sigma * h`` with
  ``h ~ N(0, 1)``.

Inside the effect region (by default the voxels where fascicles cross) the
two members of a pair share part of that deviation: ``w = sqrt(rho) * W_f +
sqrt(1 - rho) * w_s`` where ``W_f`` is drawn once per family and peak and is
constant across the region, and ``w_s`` is drawn per subject and voxel.
The same mixing applies to ``h``.  The mixing preserves the marginal
distribution, so ``rho`` only changes how alike the two members of a pair are.

Random streams: subject ``i`` uses ``SeedSequence([seed, 1, i])``, family
``f`` uses ``SeedSequence([seed, 2, f])`` and the deformation phantom uses
``[seed, 3, i]`` / ``[seed, 4, f]``.  Results do not depend on generation
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .mda import MDA_LIMIT, ODFField, PeakField
from .pairing import AGE_BINS, ControlPairing, PairRecord, SubjectManifest, SubjectRecord, stratum_label
from .sphere import DirectionSet
from .volume import Grid3, Mask

ROLES = ("interest", "control", "holdout")


@dataclass(frozen=True)
class Fascicle:
    points: tuple  # polyline vertices in mm
    radius_mm: float
    mda: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ValueError("a fascicle centreline needs at least two 3D points")
        if not self.radius_mm > 0:
            raise ValueError("fascicle radius must be positive")
        if not 0 < self.mda < MDA_LIMIT:
            raise ValueError(f"fascicle MDA must be in (0, {MDA_LIMIT:.5f})")
        object.__setattr__(self, "points", tuple(map(tuple, pts.tolist())))


@dataclass(frozen=True)
class Population:
    name: str  # relation label written to the manifest, e.g. "MZ"
    n_pairs: int
    rho: float
    role: str = "interest"
    offset_deg: float = 0.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if self.n_pairs < 0:
            raise ValueError("n_pairs must be non-negative")


@dataclass(frozen=True)
class SphereRegion:
    center_mm: tuple
    radius_mm: float


def two_fascicles(dims, voxel_size_mm=(1.0, 1.0, 1.0), radius_frac=0.1, mda=(0.45, 0.3)):
    """Two straight orthogonal fascicles (along x and y) crossing at the centre."""
    ext = (np.asarray(dims) - 1) * np.asarray(voxel_size_mm)
    c = ext / 2.0
    r = radius_frac * float(min(ext))
    fx = Fascicle(((0.0, c[1], c[2]), (ext[0], c[1], c[2])), r, mda[0])
    fy = Fascicle(((c[0], 0.0, c[2]), (c[0], ext[1], c[2])), r, mda[1])
    return (fx, fy)


def single_fascicle(dims, voxel_size_mm=(1.0, 1.0, 1.0), radius_frac=0.1, mda=0.45):
    ext = (np.asarray(dims) - 1) * np.asarray(voxel_size_mm)
    c = ext / 2.0
    r = radius_frac * float(min(ext))
    return (Fascicle(((0.0, c[1], c[2]), (ext[0], c[1], c[2])), r, mda),)


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple = (64, 64, 64)
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)
    fascicles: tuple | None = None  # None -> two_fascicles(dims)
    populations: tuple = (
        Population("MZ", 20, 0.7, "interest"),
        Population("STRANGER", 20, 0.0, "control"),
    )
    kappa: float = 15.0
    sigma: float = 0.15
    effect_region: SphereRegion | None = None  # None -> fascicle crossings
    noise_peaks: int = 0  # spurious low-magnitude peaks added per voxel
    noise_peak_mda: float = 0.12
    background_radius_mm: float | None = None  # optional white-matter ball
    background_direction: tuple = (0.0, 0.0, 1.0)
    background_mda: float = 0.25
    k_max: int = 4
    seed: int = 0

    def __post_init__(self):
        grid = Grid3(self.dims, self.voxel_size_mm)
        object.__setattr__(self, "dims", grid.dims)
        object.__setattr__(self, "voxel_size_mm", grid.voxel_size_mm)
        if self.fascicles is None:
            object.__setattr__(self, "fascicles", two_fascicles(grid.dims, grid.voxel_size_mm))
        if not self.kappa > 0:
            raise ValueError("kappa must be positive (use math.inf for no jitter)")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 1 <= self.k_max <= 4:
            raise ValueError("k_max must be between 1 and 4")
        ext = (np.asarray(grid.dims) - 1) * np.asarray(grid.voxel_size_mm)
        for f in self.fascicles:
            pts = np.asarray(f.points)
            if np.any(pts < -1e-9) or np.any(pts > ext + 1e-9):
                raise ValueError(f"fascicle centreline {f.points} leaves the grid")

    @property
    def grid(self) -> Grid3:
        return Grid3(self.dims, self.voxel_size_mm)

    def with_populations(self, *pops: Population) -> "PhantomConfig":
        return replace(self, populations=tuple(pops))


def single_fiber_config(dims=(64, 64, 64), noise_peaks=1, **kw) -> PhantomConfig:
    """One straight fascicle with a spherical effect region at the grid centre."""
    centre = tuple((np.asarray(dims, dtype=float) - 1) / 2.0)
    radius = 0.1 * (min(dims) - 1)
    return PhantomConfig(
        dims=dims, fascicles=single_fascicle(dims), effect_region=SphereRegion(centre, radius),
        noise_peaks=max(1, noise_peaks), **kw,
    )


@dataclass
class Cohort:
    config: PhantomConfig
    grid: Grid3
    mask: Mask
    truth: Mask  # voxels where pairs share deviations
    fields: dict = field(repr=False)  # subject id -> PeakField
    manifest: SubjectManifest = field(repr=False)
    pairs: dict = field(repr=False)  # role -> list of (id_a, id_b)
    pair_relation: dict = field(repr=False)  # (id_a, id_b) -> population name
    controls: ControlPairing | None = None
    # ground-truth geometry, per masked voxel
    tangents: np.ndarray = field(default=None, repr=False)  # (n_mask, n_fasc, 3)
    member: np.ndarray = field(default=None, repr=False)  # (n_mask, n_fasc) bool

    @property
    def interest_pairs(self):
        return self.pairs["interest"]

    @property
    def control_pairs(self):
        return self.pairs["control"]

    @property
    def holdout_pairs(self):
        return self.pairs["holdout"]

    def pairs_of(self, name: str):
        return [p for p, rel in self.pair_relation.items() if rel == name]


def _segment_geometry(centers: np.ndarray, fasc: Fascicle):
    """Distance to the centreline and unit tangent of the nearest segment."""
    pts = np.asarray(fasc.points)
    best = np.full(len(centers), np.inf)
    tangent = np.zeros((len(centers), 3))
    for p0, p1 in zip(pts[:-1], pts[1:]):
        seg = p1 - p0
        length2 = float(seg @ seg)
        t = np.clip(((centers - p0) @ seg) / length2, 0.0, 1.0)
        d = np.linalg.norm(centers - (p0 + t[:, None] * seg), axis=1)
        closer = d < best
        best[closer] = d[closer]
        tangent[closer] = seg / np.sqrt(length2)
    return best, tangent


def _perp_basis(t: np.ndarray):
    """Deterministic orthonormal basis (e1, e2) of the plane normal to each row of t."""
    ref = np.where(np.abs(t[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(t, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(t, e1)
    return e1, e2


def _rotate_towards(t, e1, e2, w):
    """Rotate unit vectors t by angle |w| towards w[0] e1 + w[1] e2."""
    ang = np.linalg.norm(w, axis=-1)
    direction = w[..., :1] * e1 + w[..., 1:] * e2
    safe = np.where(ang > 0, ang, 1.0)[..., None]
    direction = direction / safe
    return np.cos(ang)[..., None] * t + np.sin(ang)[..., None] * direction


def _rodrigues(v, axis, angle):
    axis = axis / np.linalg.norm(axis)
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(axis, v) * s + np.outer(v @ axis, axis) * (1 - c)


@dataclass
class _Geometry:
    grid: Grid3
    mask: Mask
    truth: Mask
    voxels: np.ndarray
    member: np.ndarray  # (n, F) bool, includes background as last column if used
    tangents: np.ndarray  # (n, F, 3)
    mdas: np.ndarray  # (F,)
    in_effect: np.ndarray  # (n,) bool
    offset_axis: np.ndarray  # (3,)


def _geometry(cfg: PhantomConfig) -> _Geometry:
    grid = cfg.grid
    centers = grid.centers_mm()
    member, tangents = [], []
    for f in cfg.fascicles:
        d, t = _segment_geometry(centers, f)
        member.append(d <= f.radius_mm)
        tangents.append(t)
    fasc_member = np.stack(member, axis=1)
    in_any = fasc_member.any(axis=1)
    mdas = [f.mda for f in cfg.fascicles]
    if cfg.background_radius_mm is not None:
        ext = (np.asarray(grid.dims) - 1) * np.asarray(grid.voxel_size_mm)
        ball = np.linalg.norm(centers - ext / 2.0, axis=1) <= cfg.background_radius_mm
        bdir = np.asarray(cfg.background_direction, dtype=float)
        bdir /= np.linalg.norm(bdir)
        member.append(ball & ~in_any)
        tangents.append(np.broadcast_to(bdir, centers.shape))
        mdas.append(cfg.background_mda)
    member = np.stack(member, axis=1)
    tangents = np.stack(tangents, axis=1)
    mask_data = member.any(axis=1)

    if cfg.effect_region is None:
        truth = fasc_member.sum(axis=1) >= 2
    else:
        c = np.asarray(cfg.effect_region.center_mm, dtype=float)
        truth = (np.linalg.norm(centers - c, axis=1) <= cfg.effect_region.radius_mm) & mask_data

    voxels = np.flatnonzero(mask_data)
    axis = np.array([0.0, 0.0, 1.0])
    if len(cfg.fascicles) >= 2:
        t0 = np.asarray(cfg.fascicles[0].points)
        t1 = np.asarray(cfg.fascicles[1].points)
        a = np.cross(t0[-1] - t0[0], t1[-1] - t1[0])
        if np.linalg.norm(a) > 1e-12:
            axis = a / np.linalg.norm(a)
    return _Geometry(
        grid, Mask(grid, mask_data), Mask(grid, truth), voxels,
        member[voxels], np.array(tangents[voxels]), np.asarray(mdas), truth[voxels], axis,
    )


def _subject_peaks(cfg, geo: _Geometry, rng, family_rng_state, rho, offset_deg):
    """Peak vectors (n, k_max, 3) and counts for one subject."""
    n, F = geo.member.shape
    t = geo.tangents.copy()
    if offset_deg:
        eff = np.flatnonzero(geo.in_effect)
        for j in range(F):
            t[eff, j] = _rodrigues(t[eff, j], geo.offset_axis, np.radians(offset_deg))
    scale = 0.0 if np.isinf(cfg.kappa) else 1.0 / np.sqrt(cfg.kappa)
    w = rng.standard_normal((n, F, 2)) * scale
    h = rng.standard_normal((n, F))
    if family_rng_state is not None and rho > 0:
        fam_w, fam_h = family_rng_state
        eff = geo.in_effect
        w[eff] = np.sqrt(rho) * fam_w[None] + np.sqrt(1.0 - rho) * w[eff]
        h[eff] = np.sqrt(rho) * fam_h[None] + np.sqrt(1.0 - rho) * h[eff]
    e1, e2 = _perp_basis(t.reshape(-1, 3))
    d = _rotate_towards(t.reshape(-1, 3), e1, e2, w.reshape(-1, 2)).reshape(n, F, 3)
    mag = geo.mdas[None, :] * (1.0 + cfg.sigma * h)
    mag = np.clip(mag, 1e-6, MDA_LIMIT - 1e-6) * geo.member

    if cfg.noise_peaks:
        nz = rng.standard_normal((n, cfg.noise_peaks, 3))
        nz /= np.linalg.norm(nz, axis=2, keepdims=True)
        nm = cfg.noise_peak_mda * rng.uniform(0.5, 1.0, (n, cfg.noise_peaks))
        d = np.concatenate([d, nz], axis=1)
        mag = np.concatenate([mag, nm], axis=1)

    order = np.argsort(-mag, axis=1, kind="stable")[:, : cfg.k_max]
    mag = np.take_along_axis(mag, order, axis=1)
    d = np.take_along_axis(d, order[..., None], axis=1)
    vec = d * mag[..., None]
    counts = (mag > 0).sum(axis=1)
    if vec.shape[1] < cfg.k_max:
        pad = np.zeros((n, cfg.k_max - vec.shape[1], 3))
        vec = np.concatenate([vec, pad], axis=1)
    return vec, counts


def _family_draw(seed, family_index, n_peaks, stream=2):
    rng = np.random.default_rng([seed, stream, family_index])
    return rng.standard_normal((n_peaks, 2)), rng.standard_normal(n_peaks)


def _family_deviation(cfg, fam_w, fam_h):
    scale = 0.0 if np.isinf(cfg.kappa) else 1.0 / np.sqrt(cfg.kappa)
    return fam_w * scale, fam_h


def generate_cohort(
    cfg: PhantomConfig,
    n_pairs_interest: int | None = None,
    n_pairs_control: int | None = None,
) -> Cohort:
    """Peak fields, masks and manifest for every population in ``cfg``.

    ``n_pairs_interest`` / ``n_pairs_control`` override the pair counts of the
    interest and control populations when given.
    """
    pops = []
    for p in cfg.populations:
        if p.role == "interest" and n_pairs_interest is not None:
            p = replace(p, n_pairs=n_pairs_interest)
        if p.role == "control" and n_pairs_control is not None:
            p = replace(p, n_pairs=n_pairs_control)
        pops.append(p)
    geo = _geometry(cfg)
    F = geo.member.shape[1]

    fields, subjects, records = {}, [], []
    pairs = {r: [] for r in ROLES}
    pair_relation = {}
    subj_index = fam_index = pair_counter = 0
    for pop in pops:
        for i in range(pop.n_pairs):
            fam_w, fam_h = _family_deviation(cfg, *_family_draw(cfg.seed, fam_index, F))
            sex = "F" if pair_counter % 2 == 0 else "M"
            age = AGE_BINS[pair_counter % len(AGE_BINS)]
            ids = (f"{pop.name}{i:03d}a", f"{pop.name}{i:03d}b")
            related = pop.role != "control"
            for member, sid in enumerate(ids):
                rng = np.random.default_rng([cfg.seed, 1, subj_index])
                vec, counts = _subject_peaks(cfg, geo, rng, (fam_w, fam_h), pop.rho, pop.offset_deg)
                fields[sid] = PeakField(geo.grid, cfg.k_max, geo.voxels, vec, counts)
                family = f"F{fam_index:04d}" if related else f"F{fam_index:04d}{'ab'[member]}"
                subjects.append(SubjectRecord(sid, sex, age, family))
                subj_index += 1
            if related:
                records.append(PairRecord(ids[0], ids[1], pop.name))
            pairs[pop.role].append(ids)
            pair_relation[ids] = pop.name
            fam_index += 1
            pair_counter += 1
    manifest = SubjectManifest(tuple(subjects), tuple(records))
    controls = None
    if pairs["control"]:
        by_id = manifest.by_id
        controls = ControlPairing(
            tuple(pairs["control"]),
            cfg.seed,
            tuple(stratum_label(by_id[a], by_id[b]) for a, b in pairs["control"]),
        )
    return Cohort(
        cfg, geo.grid, geo.mask, geo.truth, fields, manifest, pairs, pair_relation, controls,
        geo.tangents, geo.member,
    )


# ---------------------------------------------------------------- ODFs


def mu_for_mda(m):
    """Ratio mu >= 1 whose MDA equals m (inverse of the MDA formula)."""
    m = np.asarray(m, dtype=np.float64)
    a = 1.0 - 2.0 * m * m
    return (1.0 + np.sqrt(1.0 - a * (1.0 - m * m))) / a


def odf_from_peaks(vectors: np.ndarray, directions: DirectionSet, sharpness: float = 20.0):
    """Antipodally symmetric ODFs with one Watson-type lobe per peak vector.

    ``vectors`` is (n, k, 3).  Each lobe is ``a * exp(sharpness * ((u.d)^2 - 1))``
    over an isotropic floor of 1, with amplitude ``a`` chosen so that the lobe
    peak alone has the MDA given by the vector's length.  Zero vectors add no
    lobe, so a voxel with no peaks gets a flat ODF.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    mags = np.linalg.norm(vectors, axis=2)
    amp = np.where(mags > 0, mu_for_mda(np.minimum(mags, MDA_LIMIT - 1e-9)) ** 1.5 - 1.0, 0.0)
    unit = vectors / np.where(mags > 0, mags, 1.0)[..., None]
    cos = np.einsum("nkc,dc->nkd", unit, directions.vectors)
    lobes = amp[..., None] * np.exp(sharpness * (cos * cos - 1.0))
    odf = 1.0 + lobes.sum(axis=1)
    return odf / odf.sum(axis=1, keepdims=True)


def generate_odf_cohort(
    cohort: Cohort, directions: DirectionSet, sharpness: float = 20.0, subjects: Sequence[str] | None = None
) -> dict:
    """ODF fields (float32) built from each subject's ground-truth peaks.

    Voxels outside the cohort mask are all-zero.
    """
    out = {}
    ids = list(cohort.fields) if subjects is None else list(subjects)
    for sid in ids:
        pf = cohort.fields[sid]
        values = np.zeros((cohort.grid.n_voxels, len(directions)), dtype=np.float32)
        values[pf.voxels] = odf_from_peaks(pf.vectors, directions, sharpness)
        out[sid] = ODFField(cohort.grid, directions, values)
    return out


# ------------------------------------------------------- deformations


@dataclass(frozen=True)
class DeformationConfig:
    sphere: SphereRegion | None = None  # None -> centred sphere, radius 25% of extent
    rho: float = 0.99  # sharing inside the sphere for interest/holdout pairs
    amplitude_mm2: float = 0.2  # SD of the smoothed potential
    smoothing_vox: float = 1.5
    edge_vox: float = 0.5  # width of the blend between shared and individual potentials


def _potential(grid: Grid3, rng, smoothing):
    f = gaussian_filter(rng.standard_normal(grid.zyx_shape), smoothing, mode="reflect")
    return f / f.std()


def generate_displacements(cohort: Cohort, dcfg: DeformationConfig = DeformationConfig()):
    """Per-subject displacement fields ``u = grad(phi)`` in mm, plus the sphere mask.

    ``phi`` is a smoothed Gaussian potential.  Inside the sphere, pairs from
    interest and holdout populations share a fraction ``rho`` of it, which
    makes their log-Jacobians more alike there.  Returns
    ``(fields, sphere_mask)`` where ``fields[sid]`` is (n_voxels, 3).
    """
    grid = cohort.grid
    cfg = cohort.config
    ext = (np.asarray(grid.dims) - 1) * np.asarray(grid.voxel_size_mm)
    sph = dcfg.sphere or SphereRegion(tuple(ext / 2.0), 0.25 * float(min(ext)))
    centers = grid.centers_mm()
    inside = np.linalg.norm(centers - np.asarray(sph.center_mm), axis=1) <= sph.radius_mm
    weight = gaussian_filter(inside.reshape(grid.zyx_shape).astype(float), dcfg.edge_vox)
    sx, sy, sz = grid.voxel_size_mm
    controls = set(cohort.control_pairs)
    out = {}
    subj_index = 0
    for fam_index, (ids, rel) in enumerate(cohort.pair_relation.items()):
        related = ids not in controls
        fam = _potential(grid, np.random.default_rng([cfg.seed, 4, fam_index]), dcfg.smoothing_vox)
        for sid in ids:
            rng = np.random.default_rng([cfg.seed, 3, subj_index])
            ind = _potential(grid, rng, dcfg.smoothing_vox)
            ind2 = _potential(grid, rng, dcfg.smoothing_vox)
            if related and dcfg.rho > 0:
                mixed = np.sqrt(dcfg.rho) * fam + np.sqrt(1.0 - dcfg.rho) * ind2
                phi = (1.0 - weight) * ind + weight * mixed
            else:
                phi = ind
            phi = phi * dcfg.amplitude_mm2
            gz, gy, gx = np.gradient(phi, sz, sy, sx)
            out[sid] = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
            subj_index += 1
    return out, Mask(grid, inside)
