from collections import Counter

import numpy as np
import pytest

from dycoh.pairing import (
    ControlPairing, ManifestError, PairRecord, StratumExhaustedError, SubjectManifest, SubjectRecord,
    load_manifest, pair_table_from_manifest, study_demographics_manifest, pairs_by_role, read_pair_table,
    sample_strangers, stratum_label, write_manifest, write_pair_table,
)

HEADER = "subject_id,sex,age_bin,family_id,relation,partner_id\n"


def write(tmp_path, body, name="m.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return p


def test_two_row_mz_file(tmp_path):
    m = load_manifest(write(tmp_path, "a,F,22-25,f1,MZ,b\nb,F,22-25,f1,MZ,a\n"))
    assert m.relation_counts() == Counter({"MZ": 1})
    assert m.pairs() == [("a", "b")]


@pytest.mark.parametrize(
    "body",
    [
        "a,F,22-25,f1,MZ,c\nb,F,22-25,f1,MZ,a\n",  # partner missing
        "a,F,22-25,f1,MZ,b\nb,F,22-25,f1,,\n",  # not listed back
        "a,F,22-25,f1,MZ,b\nb,F,22-25,f1,DZ,a\n",  # asymmetric relation
        "a,X,22-25,f1,,\n",  # unknown sex
        "a,F,40-45,f1,,\n",  # unknown age bin
        "a,F,22-25,f1,XX,b\nb,F,22-25,f1,XX,a\n",  # unknown relation
        "a,F,22-25,f1,MZ,b\nb,F,22-25,f2,MZ,a\n",  # different families
        "a,F,22-25,f1,MZ,\n",  # relation without partner
        "a,F,22-25,f1,,\na,F,22-25,f1,,\n",  # duplicate id
    ],
)
def test_load_errors(tmp_path, body):
    with pytest.raises(ManifestError):
        load_manifest(write(tmp_path, body))


def test_missing_column(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("subject_id,sex\na,F\n")
    with pytest.raises(ManifestError):
        load_manifest(p)


def test_study_demographics_counts(tmp_path):
    m = study_demographics_manifest()
    assert m.relation_counts() == Counter({"MZ": 57, "DZ": 52, "SIB": 47})
    write_manifest(tmp_path / "m.csv", m)
    back = load_manifest(tmp_path / "m.csv")
    assert back.relation_counts() == m.relation_counts()
    assert back.demographic_table() == m.demographic_table()


def test_forced_choice():
    # two target strata, each with exactly one eligible non-related pair
    subs = [
        SubjectRecord("t1", "F", "22-25", "A"), SubjectRecord("t2", "M", "31-35", "A"),
        SubjectRecord("u1", "F", "26-30", "C"), SubjectRecord("u2", "M", "26-30", "C"),
        SubjectRecord("x", "F", "22-25", "B"), SubjectRecord("y", "F", "26-30", "D"),
    ]
    m = SubjectManifest(tuple(subs), (PairRecord("t1", "t2", "SIB"), PairRecord("u1", "u2", "SIB")))
    for seed in range(5):
        cp = sample_strangers(m, ("SIB",), n_pairs=6, seed=seed)
        assert cp.pairs == (("x", "t2"), ("y", "u2")) * 3
        assert cp.strata == ("F:22-25|M:31-35", "F:26-30|M:26-30") * 3


def test_exhausted_stratum_named():
    subs = [SubjectRecord("a", "F", "22-25", "A"), SubjectRecord("b", "M", "31-35", "A")]
    m = SubjectManifest(tuple(subs), (PairRecord("a", "b", "SIB"),))
    with pytest.raises(StratumExhaustedError) as exc:
        sample_strangers(m, ("SIB",))
    assert exc.value.stratum == "F:22-25|M:31-35"


def test_determinism_and_seed_sensitivity():
    m = study_demographics_manifest()
    a = sample_strangers(m, seed=17)
    b = sample_strangers(m, seed=17)
    c = sample_strangers(m, seed=18)
    assert a.pairs == b.pairs
    assert a.pairs != c.pairs


def test_stratum_histogram_and_no_relatives():
    m = study_demographics_manifest()
    fam = {s.subject_id: s.family_id for s in m.subjects}
    related = {frozenset(p) for p in m.pairs()}
    for target in (("MZ",), ("DZ",), ("SIB",), ("MZ", "DZ")):
        cp = sample_strangers(m, target, seed=5)
        want = Counter(stratum_label(m.by_id[a], m.by_id[b]) for a, b in m.pairs(target))
        got = Counter(stratum_label(m.by_id[a], m.by_id[b]) for a, b in cp.pairs)
        assert got == want
        for a, b in cp.pairs:
            assert fam[a] != fam[b]
            assert frozenset((a, b)) not in related


def test_random_manifests_histogram():
    rng = np.random.default_rng(9)
    sexes, bins = ("F", "M"), ("22-25", "26-30", "31-35")
    for trial in range(10):
        subs, pairs = [], []
        for f in range(30):
            s = [SubjectRecord(f"s{f}_{k}", sexes[rng.integers(2)], bins[rng.integers(3)], f"f{f}") for k in (0, 1)]
            subs += s
            pairs.append(PairRecord(s[0].subject_id, s[1].subject_id, ("MZ", "DZ", "SIB")[rng.integers(3)]))
        m = SubjectManifest(tuple(subs), tuple(pairs))
        cp = sample_strangers(m, ("MZ", "DZ", "SIB"), seed=trial)
        want = Counter(stratum_label(m.by_id[a], m.by_id[b]) for a, b in m.pairs())
        got = Counter(stratum_label(m.by_id[a], m.by_id[b]) for a, b in cp.pairs)
        assert got == want


def test_distinct_subjects():
    m = study_demographics_manifest()
    cp = sample_strangers(m, ("MZ",), seed=1, distinct_subjects=True)
    ids = [s for p in cp.pairs for s in p]
    assert len(ids) == len(set(ids))


def test_control_pairing_csv(tmp_path):
    m = study_demographics_manifest()
    cp = sample_strangers(m, ("DZ",), seed=2)
    cp.write(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "id_a,id_b,stratum"
    back = ControlPairing.read(tmp_path / "c.csv", seed=2)
    assert back.pairs == cp.pairs and back.strata == cp.strata


def test_pair_table(tmp_path):
    m = study_demographics_manifest()
    rows = pair_table_from_manifest(m, seed=4)
    roles = pairs_by_role(rows)
    assert len(roles["interest"]) == 109 and len(roles["control"]) == 109 and len(roles["holdout"]) == 47
    write_pair_table(tmp_path / "p.csv", rows)
    assert read_pair_table(tmp_path / "p.csv") == rows
    with pytest.raises(ManifestError):
        write_pair_table(tmp_path / "q.csv", [("a", "b", "bogus", "MZ")])
    (tmp_path / "r.csv").write_text("id_a,id_b,role,relation\na,b,other,MZ\n")
    with pytest.raises(ManifestError):
        read_pair_table(tmp_path / "r.csv")
