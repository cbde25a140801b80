"""Command-line interface: ``dycoh <command> [options]``.

Every command reads a JSON run configuration (``--config``) whose keys can be
overridden by flags.  Failures exit non-zero with a JSON error object on
stderr; a missing input file exits with status 2.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ALTERNATIVES, VARIANTS, ConfigError, RunConfig
from .dissim import DissimVariant
from .jacobian import DisplacementField, jacobian_exclusion_mask, log_jacobian_field
from .lattice import (
    LatticeGraph, Region, build_lattice, connected_components, prune_regions, read_dyads_csv, top_regions,
    write_dyads_csv,
)
from .mda import ODFField, PeakField, extract_peak_field
from .pairing import (
    load_manifest, pair_table_from_manifest, pairs_by_role, read_pair_table, sample_strangers, write_manifest,
    write_pair_table,
)
from .phantom import (
    DeformationConfig, PhantomConfig, Population, generate_cohort, generate_displacements,
    generate_odf_cohort, single_fiber_config,
)
from .regions import (
    PairSimilarityMatrix, RegionStats, region_correlation_matrix, region_effect_table, similarity_matrix,
    write_effect_table, write_matrix_csv,
)
from .screening import ScreenResult, default_threads, screen_dyads, screen_voxels
from .sphere import DirectionSet, tessellate_icosahedron
from .volume import Mask, read_mask, write_labels, write_mask, write_scalar


class InputMissing(Exception):
    def __init__(self, path):
        super().__init__(f"input not found: {path}")
        self.path = str(path)


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputMissing(p)
    return p


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _read_json(path) -> dict:
    with open(_need(path)) as fh:
        return json.load(fh)


# ----------------------------------------------------------------- config


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(_need(args.config)) if args.config else RunConfig()
    over = {
        name: getattr(args, name, None)
        for name in (
            "connectivity", "peaks", "variant", "pthresh", "alternative", "top_regions",
            "min_voxels", "seed", "threads",
        )
    }
    cfg = cfg.override(**over)
    ph = dict(cfg.phantom)
    for key in ("preset", "dims", "pairs_interest", "pairs_control", "pairs_holdout"):
        val = getattr(args, key, None)
        if val is not None:
            ph[key] = list(val) if key == "dims" else val
    for key in ("odf", "deformation"):
        if getattr(args, key, False):
            ph[key] = True
    if getattr(args, "jacobian_pthresh", None) is not None:
        cfg = cfg.override(jacobian_pthresh=args.jacobian_pthresh)
    if getattr(args, "level", None) is not None:
        cfg = cfg.override(sphere_level=args.level)
    return RunConfig(**{**cfg.to_json(), "phantom": ph})


def _threads(cfg: RunConfig) -> int:
    return cfg.threads if cfg.threads is not None else default_threads()


def phantom_config(cfg: RunConfig) -> PhantomConfig:
    ph = cfg.phantom
    dims = tuple(int(d) for d in ph["dims"])
    rho_i = 0.0 if ph["preset"] == "null" else float(ph["rho_interest"])
    pops = [
        Population("MZ", int(ph["pairs_interest"]), rho_i, "interest"),
        Population("STRANGER", int(ph["pairs_control"]), float(ph["rho_control"]), "control"),
    ]
    if ph["pairs_holdout"]:
        pops.append(Population("SIB", int(ph["pairs_holdout"]), float(ph["rho_holdout"]), "holdout"))
    kw = dict(
        dims=dims, populations=tuple(pops), kappa=float(ph["kappa"]), sigma=float(ph["sigma"]),
        noise_peaks=int(ph["noise_peaks"]), background_radius_mm=ph["background_radius_mm"], seed=cfg.seed,
    )
    if ph["preset"] == "single-fiber":
        return single_fiber_config(**kw)
    return PhantomConfig(**kw)


# --------------------------------------------------------------- commands


def cmd_sphere(args, cfg: RunConfig) -> int:
    ds = tessellate_icosahedron(cfg.sphere_level)
    ds.dump(args.out)
    print(json.dumps({"vertices": len(ds), "level": ds.level}))
    return 0


def cmd_phantom(args, cfg: RunConfig) -> int:
    pcfg = phantom_config(cfg)
    cohort = generate_cohort(pcfg)
    out = Path(args.out)
    (out / "peaks").mkdir(parents=True, exist_ok=True)
    write_mask(out / "mask.dycoh", cohort.mask)
    write_mask(out / "truth.dycoh", cohort.truth)
    for sid, pf in cohort.fields.items():
        pf.write(out / "peaks" / f"{sid}.dycoh")
    write_manifest(out / "manifest.csv", cohort.manifest)
    rows = [(a, b, role, cohort.pair_relation[(a, b)]) for role, pairs in cohort.pairs.items() for a, b in pairs]
    write_pair_table(out / "pairs.csv", rows)
    info = {"config": cfg.phantom, "seed": cfg.seed, "mask_voxels": cohort.mask.count,
            "truth_voxels": cohort.truth.count, "subjects": len(cohort.fields)}
    if cfg.phantom["odf"]:
        ds = tessellate_icosahedron(cfg.sphere_level)
        ds.dump(out / "directions.json")
        (out / "odf").mkdir(exist_ok=True)
        for sid in cohort.fields:
            generate_odf_cohort(cohort, ds, subjects=[sid])[sid].write(out / "odf" / f"{sid}.dycoh")
    if cfg.phantom["deformation"]:
        disp, sphere = generate_displacements(cohort, DeformationConfig())
        (out / "disp").mkdir(exist_ok=True)
        for sid, u in disp.items():
            DisplacementField(cohort.grid, u).write(out / "disp" / f"{sid}.dycoh")
        write_mask(out / "morph_truth.dycoh", sphere & cohort.mask)
    _write_json(out / "phantom.json", info)
    return 0


def cmd_pair(args, cfg: RunConfig) -> int:
    manifest = load_manifest(_need(args.manifest))
    interest = args.interest.split(",")
    controls = sample_strangers(manifest, interest, seed=cfg.seed, distinct_subjects=args.distinct_subjects)
    rows = pair_table_from_manifest(manifest, interest, args.holdout.split(","), controls=controls)
    write_pair_table(args.out, rows)
    if args.controls:
        controls.write(args.controls)
    return 0


def cmd_extract(args, cfg: RunConfig) -> int:
    odf_dir = _need(args.odf_dir)
    ds = DirectionSet.load(_need(args.directions))
    mask = read_mask(_need(args.mask))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = {}
    for path in sorted(odf_dir.glob("*.dycoh")):
        pf = extract_peak_field(ODFField.read(path, ds), mask, args.k_max)
        pf.write(out / path.name)
        stats[path.stem] = {"degenerate": pf.n_degenerate, "floored": pf.n_floored}
    _write_json(out / "extract.json", stats)
    return 0


def _pair_rows(args, cfg: RunConfig):
    if getattr(args, "pairs", None):
        return read_pair_table(_need(args.pairs))
    if getattr(args, "manifest", None):
        return pair_table_from_manifest(load_manifest(_need(args.manifest)), seed=cfg.seed)
    raise ConfigError("either --pairs or --manifest is required")


def _subjects(rows):
    return sorted({s for a, b, _, _ in rows for s in (a, b)})


def _load_peaks(peaks_dir, subjects, mask: Mask) -> dict:
    peaks_dir = _need(peaks_dir)
    return {sid: PeakField.read(_need(peaks_dir / f"{sid}.dycoh"), mask) for sid in subjects}


def _screen_mask(args) -> tuple[Mask, Mask | None]:
    mask = read_mask(_need(args.mask))
    excluded = read_mask(_need(args.exclude)) if getattr(args, "exclude", None) else None
    return mask, excluded


def cmd_jacobian(args, cfg: RunConfig) -> int:
    mask = read_mask(_need(args.mask))
    roles = pairs_by_role(_pair_rows(args, cfg))
    disp_dir = _need(args.disp_dir)
    out = Path(args.out)
    (out / "logj").mkdir(parents=True, exist_ok=True)
    logj, folded = {}, {}
    for sid in sorted({s for p in roles["interest"] + roles["control"] for s in p}):
        lj = log_jacobian_field(DisplacementField.read(_need(disp_dir / f"{sid}.dycoh")))
        write_scalar(out / "logj" / f"{sid}.dycoh", lj.volume, tag="logjac")
        logj[sid] = lj.volume
        folded[sid] = lj.n_folded
    res = jacobian_exclusion_mask(logj, roles["interest"], roles["control"], mask, cfg.jacobian_pthresh)
    write_mask(out / "exclude.dycoh", res.mask)
    _write_json(out / "jacobian.json", {
        "flagged_voxels": res.n_flagged, "fdr_estimate": res.fdr_estimate,
        "threshold_p": cfg.jacobian_pthresh, "n_tests": res.screen.summary.n_tests,
        "folded_voxels": folded,
    })
    return 0


def cmd_screen(args, cfg: RunConfig) -> int:
    mask, excluded = _screen_mask(args)
    work_mask = mask - excluded if excluded is not None else mask
    rows = _pair_rows(args, cfg)
    roles = pairs_by_role(rows)
    fields = _load_peaks(args.peaks_dir, _subjects([r for r in rows if r[2] != "holdout"]), mask)
    variant = DissimVariant(cfg.variant, cfg.peaks)
    if variant.per_dyad:
        graph = build_lattice(work_mask, cfg.connectivity)
        res = screen_dyads(graph, fields, roles["interest"], roles["control"], variant, cfg.pthresh,
                           cfg.alternative, threads=_threads(cfg))
    else:
        res = screen_voxels(work_mask, fields, roles["interest"], roles["control"], variant, cfg.pthresh,
                            cfg.alternative, threads=_threads(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.write_csv(out / "dyads.csv")
    res.write_summary(
        out / "summary.json", variant=cfg.variant, peaks=cfg.peaks, connectivity=cfg.connectivity,
        mask_voxels=work_mask.count, excluded_voxels=0 if excluded is None else (mask & excluded).count,
        n_interest=len(roles["interest"]), n_control=len(roles["control"]),
    )
    return 0


def _graph_from_screen(res: ScreenResult, mask: Mask, connectivity: int):
    """Lattice graph and significant-dyad selection for a screen result."""
    if len(res.units) and np.all(res.units[:, 0] == res.units[:, 1]):
        # voxel-level screen: connect significant voxels through lattice dyads
        graph = build_lattice(mask, connectivity)
        sig_vox = np.zeros(mask.grid.n_voxels, dtype=bool)
        sig_vox[res.units[res.significant, 0]] = True
        return graph, sig_vox[graph.u] & sig_vox[graph.v]
    graph = LatticeGraph(mask, connectivity, res.units)
    return graph, res.significant


def cmd_regions(args, cfg: RunConfig) -> int:
    screen_dir = _need(args.screen)
    mask, excluded = _screen_mask(args)
    if excluded is not None:
        mask = mask - excluded
    summary = _read_json(screen_dir / "summary.json")
    connectivity = summary.get("connectivity", cfg.connectivity)
    res = ScreenResult.read_csv(_need(screen_dir / "dyads.csv"))
    graph, sig = _graph_from_screen(res, mask, connectivity)
    rs = connected_components(graph, sig)
    n_components = len(rs)
    rs = top_regions(prune_regions(rs, cfg.min_voxels), cfg.top_regions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.dycoh", rs.grid, rs.label_volume)
    for rid, region in enumerate(rs):
        write_dyads_csv(out / f"region_{rid:03d}.csv", region.dyads)
    table = None
    if args.peaks_dir and (args.pairs or args.manifest) and len(rs):
        rows = _pair_rows(args, cfg)
        roles = pairs_by_role(rows)
        fields = _load_peaks(args.peaks_dir, _subjects(rows), read_mask(_need(args.mask)))
        table = region_effect_table(fields, rs, roles["interest"], roles["control"], roles["holdout"],
                                    DissimVariant(summary.get("variant", cfg.variant), summary.get("peaks", cfg.peaks)))
    if table is None:
        table = [RegionStats(i, r.n_dyads, r.n_voxels, math.nan, math.nan) for i, r in enumerate(rs)]
    write_effect_table(out / "regions.csv", table)
    _write_json(out / "regions.json", {
        "components": n_components, "kept": len(rs), "min_voxels": cfg.min_voxels,
        "top_regions": cfg.top_regions, "sizes": rs.sizes,
        "variant": summary.get("variant", cfg.variant), "peaks": summary.get("peaks", cfg.peaks),
    })
    return 0


def _load_regions(regions_dir: Path) -> list[Region]:
    info = _read_json(regions_dir / "regions.json")
    regions = []
    for rid in range(info["kept"]):
        dyads = read_dyads_csv(_need(regions_dir / f"region_{rid:03d}.csv"))
        regions.append(Region(np.arange(len(dyads)), dyads, np.unique(dyads.ravel())))
    return regions


def cmd_similarity(args, cfg: RunConfig) -> int:
    regions_dir = _need(args.regions)
    info = _read_json(regions_dir / "regions.json")
    mask = read_mask(_need(args.mask))
    regions = _load_regions(regions_dir)
    if not regions:
        raise ConfigError("no regions to summarise")
    rows = _pair_rows(args, cfg)
    roles = pairs_by_role(rows)
    fields = _load_peaks(args.peaks_dir, _subjects(rows), mask)
    variant = DissimVariant(info.get("variant", cfg.variant), info.get("peaks", cfg.peaks))
    sim = similarity_matrix(fields, regions, [(a, b) for a, b, _, _ in rows], [r[3] for r in rows], variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim.write_csv(out / "similarity.csv")
    table = region_effect_table(fields, regions, roles["interest"], roles["control"], roles["holdout"], variant)
    write_effect_table(out / "effects.csv", table)
    if len(regions) >= 2:
        write_matrix_csv(out / "correlation.csv", region_correlation_matrix(sim, args.group or None))
    return 0


def _svg_histograms(groups: dict, path) -> None:
    """Stacked histograms of subject-level dissimilarity, one panel per group."""
    values = [v for vals in groups.values() for v in vals]
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    bins = 20
    width, panel, pad = 420, 90, 30
    colours = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{pad + panel * len(groups) + pad}">']
    for gi, (name, vals) in enumerate(groups.items()):
        counts, _ = np.histogram(vals, bins=bins, range=(lo, hi))
        top = max(1, int(counts.max()))
        y0 = pad + panel * (gi + 1) - 10
        parts.append(f'<text x="5" y="{y0 - panel + 25}" font-size="12">{name} (n={len(vals)})</text>')
        bw = (width - 2 * pad) / bins
        for b, c in enumerate(counts.tolist()):
            h = (panel - 30) * c / top
            parts.append(
                f'<rect x="{pad + b * bw:.2f}" y="{y0 - h:.2f}" width="{bw - 1:.2f}" height="{h:.2f}" '
                f'fill="{colours[gi % len(colours)]}"/>'
            )
    parts.append(f'<text x="{pad}" y="{pad + panel * len(groups) + 20}" font-size="11">'
                 f'd(X,Y) from {lo:.4g} to {hi:.4g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def cmd_report(args, cfg: RunConfig) -> int:
    report = {"version": __version__}
    if args.screen:
        report["screen"] = _read_json(Path(args.screen) / "summary.json")
    regions_dir = Path(args.regions) if args.regions else None
    if regions_dir is not None:
        report["regions"] = _read_json(regions_dir / "regions.json")
    if args.phantom and regions_dir is not None:
        truth = read_mask(_need(Path(args.phantom) / "truth.dycoh"))
        regions = _load_regions(regions_dir)
        if regions:
            top = np.zeros(truth.grid.n_voxels, dtype=bool)
            top[regions[0].voxels] = True
            inter = int((top & truth.data).sum())
            report["dice_top_region_vs_truth"] = 2.0 * inter / (int(top.sum()) + truth.count)
        else:
            report["dice_top_region_vs_truth"] = 0.0
    if args.similarity:
        sim = PairSimilarityMatrix.read_csv(_need(Path(args.similarity) / "similarity.csv"))
        groups = {}
        for rel in dict.fromkeys(sim.relations):
            agg = sim.aggregate[sim.rows([rel])]
            groups[rel] = agg.tolist()
        report["subject_dissimilarity"] = {
            rel: {"n": len(v), "mean": float(np.mean(v)), "sd": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0}
            for rel, v in groups.items()
        }
        if args.svg:
            svg = Path(args.out).with_suffix(".svg")
            _svg_histograms(groups, svg)
            report["svg"] = svg.name
    _write_json(args.out, report)
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (default: DYCOH_THREADS or 1)")

    screening = argparse.ArgumentParser(add_help=False)
    screening.add_argument("--connectivity", type=int, choices=(6, 18, 26))
    screening.add_argument("--peaks", type=int, metavar="K", help="peaks per voxel used by the kernel")
    screening.add_argument("--variant", choices=VARIANTS)
    screening.add_argument("--pthresh", type=float, metavar="FLOAT")
    screening.add_argument("--alternative", choices=ALTERNATIVES)

    pairs = argparse.ArgumentParser(add_help=False)
    pairs.add_argument("--pairs", metavar="CSV", help="pair table (id_a,id_b,role,relation)")
    pairs.add_argument("--manifest", metavar="CSV", help="subject manifest; strangers are sampled with --seed")

    p = argparse.ArgumentParser(prog="dycoh", description="Dyadic coherence screening of white-matter peak fields.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sphere", parents=[common], help="write an icosphere direction set")
    s.add_argument("--level", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("phantom", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--preset", choices=("crossing", "single-fiber", "null"))
    s.add_argument("--dims", type=int, nargs=3)
    s.add_argument("--pairs-interest", type=int)
    s.add_argument("--pairs-control", type=int)
    s.add_argument("--pairs-holdout", type=int)
    s.add_argument("--odf", action="store_true", help="also write ODF volumes")
    s.add_argument("--deformation", action="store_true", help="also write displacement fields")
    s.add_argument("--level", type=int, help="icosphere level for ODFs")

    s = sub.add_parser("pair", parents=[common], help="build a pair table with matched strangers")
    s.add_argument("--manifest", required=True)
    s.add_argument("--interest", default="MZ,DZ")
    s.add_argument("--holdout", default="SIB")
    s.add_argument("--distinct-subjects", action="store_true", help="never reuse a subject across stranger pairs")
    s.add_argument("--controls", metavar="CSV", help="also write the stranger pairing (id_a,id_b,stratum)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("extract", parents=[common], help="ODF volumes to peak fields")
    s.add_argument("--odf-dir", required=True)
    s.add_argument("--directions", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--k-max", type=int, default=4)
    s.add_argument("--out", required=True, metavar="DIR")

    s = sub.add_parser("jacobian", parents=[common, pairs], help="log-Jacobians and exclusion mask")
    s.add_argument("--disp-dir", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--pthresh", dest="jacobian_pthresh", type=float, metavar="FLOAT")
    s.add_argument("--out", required=True, metavar="DIR")

    s = sub.add_parser("screen", parents=[common, screening, pairs], help="dyad screening")
    s.add_argument("--peaks-dir", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--exclude", metavar="MASK")
    s.add_argument("--out", required=True, metavar="DIR")

    s = sub.add_parser("regions", parents=[common, pairs], help="connected regions of significant dyads")
    s.add_argument("--screen", required=True, metavar="DIR")
    s.add_argument("--mask", required=True)
    s.add_argument("--exclude", metavar="MASK")
    s.add_argument("--peaks-dir")
    s.add_argument("--min-voxels", type=int, metavar="N")
    s.add_argument("--top-regions", type=int, metavar="N")
    s.add_argument("--out", required=True, metavar="DIR")

    s = sub.add_parser("similarity", parents=[common, pairs], help="pair-by-region similarity tables")
    s.add_argument("--regions", required=True, metavar="DIR")
    s.add_argument("--peaks-dir", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--group", action="append", help="restrict correlations to this relation (repeatable)")
    s.add_argument("--out", required=True, metavar="DIR")

    s = sub.add_parser("report", parents=[common], help="aggregate outputs into one JSON")
    s.add_argument("--phantom", metavar="DIR")
    s.add_argument("--screen", metavar="DIR")
    s.add_argument("--regions", metavar="DIR")
    s.add_argument("--similarity", metavar="DIR")
    s.add_argument("--svg", action="store_true", help="also write per-group d(X,Y) histograms")
    s.add_argument("--out", required=True)
    return p


COMMANDS = {
    "sphere": cmd_sphere,
    "phantom": cmd_phantom,
    "pair": cmd_pair,
    "extract": cmd_extract,
    "jacobian": cmd_jacobian,
    "screen": cmd_screen,
    "regions": cmd_regions,
    "similarity": cmd_similarity,
    "report": cmd_report,
}


def _fail(code: int, kind: str, message: str, **extra) -> int:
    obj = {"error": kind, "message": message, **extra}
    sys.stderr.write(json.dumps(obj, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except InputMissing as exc:
        return _fail(2, "missing_input", str(exc), path=exc.path)
    except FileNotFoundError as exc:
        return _fail(2, "missing_input", str(exc), path=str(exc.filename))
    except ConfigError as exc:
        return _fail(2, "config", str(exc))
    except (ValueError, KeyError, OSError) as exc:
        return _fail(1, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
