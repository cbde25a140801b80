import numpy as np
import pytest

from dycoh.dissim import DissimVariant, Kind, dyad_cross_dissim
from dycoh.lattice import build_lattice, connected_components
from dycoh.mda import PeakField
from dycoh.regions import (
    EmptyRegionError, PairSimilarityMatrix, region_correlation_matrix, region_dissim, region_effect_table,
    similarity_matrix, subject_dissim, write_effect_table, write_matrix_csv,
)
from dycoh.stats import StatsDomainError
from dycoh.volume import Grid3, Mask

WITHIN = DissimVariant(Kind.WITHIN)


def chain(n):
    g = Grid3((n, 1, 1))
    graph = build_lattice(Mask(g, np.ones(n, bool)), 6)
    return g, graph


def field_x(g, values):
    """Peak field whose single peak at voxel i is (values[i], 0, 0)."""
    v = np.zeros((g.n_voxels, 1, 3))
    v[:, 0, 0] = values
    return PeakField(g, 1, np.arange(g.n_voxels), v, np.ones(g.n_voxels))


def whole_region(graph, dyads=None):
    sel = np.ones(graph.n_dyads, bool) if dyads is None else dyads
    return connected_components(graph, sel)[0]


def test_median_is_robust():
    g, graph = chain(5)
    # within-dyad values with X = 0: (y_u + y_v) / 2 -> 1, 2, 3, 100
    X, Y = field_x(g, np.zeros(5)), field_x(g, [1, 1, 3, 3, 197])
    assert region_dissim(X, Y, whole_region(graph), WITHIN) == pytest.approx(2.5)


def test_single_dyad_region_and_identity():
    g, graph = chain(2)
    rng = np.random.default_rng(0)
    vx = rng.normal(size=(2, 1, 3))
    vy = rng.normal(size=(2, 1, 3))
    X = PeakField(g, 1, [0, 1], vx, [1, 1])
    Y = PeakField(g, 1, [0, 1], vy, [1, 1])
    r = whole_region(graph)
    assert region_dissim(X, Y, r) == pytest.approx(dyad_cross_dissim(X, Y, 0, 1))
    assert region_dissim(X, X, r, WITHIN) == 0.0
    assert subject_dissim(X, Y, [r]) == pytest.approx(region_dissim(X, Y, r))


def test_subject_mean_of_regions():
    g, graph = chain(5)
    X = field_x(g, np.zeros(5))
    Y = field_x(g, [0.2, 0.2, 0.0, 0.4, 0.4])
    r1 = connected_components(graph, [0])[0]  # voxels 0-1 -> 0.2
    r2 = connected_components(graph, [3])[0]  # voxels 3-4 -> 0.4
    assert subject_dissim(X, Y, [r1, r2], WITHIN) == pytest.approx(0.3)
    with pytest.raises(EmptyRegionError):
        subject_dissim(X, Y, [], WITHIN)


def test_voxel_variant_median_over_voxels():
    g, graph = chain(4)
    X = field_x(g, np.zeros(4))
    Y = field_x(g, [1, 2, 3, 100])
    assert region_dissim(X, Y, whole_region(graph), DissimVariant(Kind.VOXEL)) == pytest.approx(2.5)


def _random_fields(g, n_subjects, rng):
    return {
        f"s{i}": PeakField(g, 1, np.arange(g.n_voxels), rng.normal(size=(g.n_voxels, 1, 3)), np.ones(g.n_voxels))
        for i in range(n_subjects)
    }


def test_similarity_matrix_and_csv(tmp_path):
    g, graph = chain(8)
    rng = np.random.default_rng(3)
    fields = _random_fields(g, 6, rng)
    regions = connected_components(graph, [0, 1, 2, 4, 5])
    pairs = [("s0", "s1"), ("s2", "s3"), ("s4", "s5")]
    sim = similarity_matrix(fields, regions, pairs, ["MZ", "DZ", "STRANGER"])
    assert sim.values.shape == (3, 2)
    for i, (a, b) in enumerate(pairs):
        for j, r in enumerate(regions):
            assert sim.values[i, j] == pytest.approx(region_dissim(fields[a], fields[b], r))
        assert sim.aggregate[i] == pytest.approx(subject_dissim(fields[a], fields[b], list(regions)))
    sim.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "pair_id,relation,region_0,region_1,aggregate"
    back = PairSimilarityMatrix.read_csv(tmp_path / "s.csv")
    assert back.pair_ids == ["s0|s1", "s2|s3", "s4|s5"]
    assert np.array_equal(back.values, sim.values)
    assert list(sim.rows(["MZ", "DZ"])) == [0, 1]


def test_correlation_matrix_properties(tmp_path):
    rng = np.random.default_rng(4)
    base = rng.normal(size=50)
    vals = np.stack([base, base, rng.normal(size=50), -base], axis=1)
    sim = PairSimilarityMatrix([str(i) for i in range(50)], ["X"] * 50, vals)
    c = region_correlation_matrix(sim)
    assert np.allclose(c, c.T) and np.allclose(np.diag(c), 1)
    assert c[0, 1] == pytest.approx(1.0)
    assert c[0, 3] == pytest.approx(-1.0)
    assert abs(c[0, 2]) < 0.35
    write_matrix_csv(tmp_path / "c.csv", c)
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 5
    with pytest.raises(StatsDomainError):
        region_correlation_matrix(sim, ["none"])


def test_independent_columns_near_zero():
    rng = np.random.default_rng(8)
    sim = PairSimilarityMatrix([str(i) for i in range(2000)], ["X"] * 2000, rng.normal(size=(2000, 3)))
    c = region_correlation_matrix(sim)
    assert np.max(np.abs(c - np.eye(3))) < 0.1


def test_effect_table_sign_and_output(tmp_path):
    g, graph = chain(6)
    rng = np.random.default_rng(5)
    fields = {}
    pi, pc = [], []
    for i in range(6):
        base = rng.normal(size=(6, 1, 3))
        fields[f"i{i}a"] = PeakField(g, 1, np.arange(6), base, np.ones(6))
        fields[f"i{i}b"] = PeakField(g, 1, np.arange(6), base + 0.05 * rng.normal(size=base.shape), np.ones(6))
        fields[f"c{i}a"] = PeakField(g, 1, np.arange(6), rng.normal(size=(6, 1, 3)), np.ones(6))
        fields[f"c{i}b"] = PeakField(g, 1, np.arange(6), rng.normal(size=(6, 1, 3)), np.ones(6))
        pi.append((f"i{i}a", f"i{i}b"))
        pc.append((f"c{i}a", f"c{i}b"))
    regions = connected_components(graph, np.ones(graph.n_dyads, bool))
    table = region_effect_table(fields, regions, pi, pc, pi[:3], WITHIN)
    assert table[0].effect_size_interest > 2
    assert table[0].n_dyads == 5 and table[0].n_voxels == 6
    write_effect_table(tmp_path / "e.csv", table)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == (
        "region,n_dyads,n_voxels,effect_size_interest,effect_size_holdout"
    )
    no_holdout = region_effect_table(fields, regions, pi, pc)
    assert np.isnan(no_holdout[0].effect_size_holdout)
    with pytest.raises(StatsDomainError):
        region_effect_table(fields, regions, pi[:1], pc)
