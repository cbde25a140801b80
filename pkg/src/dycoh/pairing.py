"""Subject manifests and demographically matched stranger pairings.

Manifest CSV columns: ``subject_id,sex,age_bin,family_id,relation,partner_id``.
``relation`` and ``partner_id`` are empty for subjects without a listed pair.

A pair's stratum is the sorted pair of member profiles ``sex:age_bin``, for
example ``F:22-25|M:26-30``.  Stranger pairs for a target pair are drawn
uniformly, with replacement, from all non-related subject pairs whose member
profiles match that stratum.  Randomness: the draws for stratum number ``s``
(position in the sorted list of target strata) come from a Philox
counter-based generator keyed by ``SeedSequence([seed, s])``.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

SEXES = ("F", "M")
AGE_BINS = ("22-25", "26-30", "31-35")
RELATIONS = ("MZ", "DZ", "SIB")
MANIFEST_COLUMNS = ("subject_id", "sex", "age_bin", "family_id", "relation", "partner_id")


class ManifestError(ValueError):
    pass


class StratumExhaustedError(ValueError):
    def __init__(self, stratum: str, msg: str = ""):
        super().__init__(msg or f"no eligible stranger pair left for stratum {stratum}")
        self.stratum = stratum


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    sex: str
    age_bin: str
    family_id: str

    @property
    def profile(self) -> str:
        return f"{self.sex}:{self.age_bin}"


@dataclass(frozen=True)
class PairRecord:
    id_a: str
    id_b: str
    relation: str


@dataclass(frozen=True)
class SubjectManifest:
    subjects: tuple
    pairings: tuple

    def __post_init__(self):
        seen = {}
        for s in self.subjects:
            if s.subject_id in seen:
                raise ManifestError(f"duplicate subject {s.subject_id!r}")
            if s.sex not in SEXES:
                raise ManifestError(f"{s.subject_id}: unknown sex {s.sex!r}")
            if s.age_bin not in AGE_BINS:
                raise ManifestError(f"{s.subject_id}: unknown age bin {s.age_bin!r}")
            seen[s.subject_id] = s
        used = set()
        for p in self.pairings:
            for sid in (p.id_a, p.id_b):
                if sid not in seen:
                    raise ManifestError(f"pairing refers to missing subject {sid!r}")
                if sid in used:
                    raise ManifestError(f"subject {sid!r} appears in two pairings")
                used.add(sid)
            if p.id_a == p.id_b:
                raise ManifestError(f"{p.id_a!r} is paired with itself")
            if seen[p.id_a].family_id != seen[p.id_b].family_id:
                raise ManifestError(f"pair ({p.id_a}, {p.id_b}) does not share a family")

    @cached_property
    def by_id(self) -> dict:
        return {s.subject_id: s for s in self.subjects}

    def pairs(self, relations: Iterable[str] | None = None) -> list[tuple[str, str]]:
        rel = None if relations is None else set(relations)
        return [(p.id_a, p.id_b) for p in self.pairings if rel is None or p.relation in rel]

    def relation_counts(self) -> Counter:
        return Counter(p.relation for p in self.pairings)

    def demographic_table(self) -> Counter:
        """Counts keyed by (relation, stratum label)."""
        by = self.by_id
        return Counter((p.relation, stratum_label(by[p.id_a], by[p.id_b])) for p in self.pairings)


@dataclass(frozen=True)
class ControlPairing:
    pairs: tuple
    seed: int
    strata: tuple = ()

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id_a", "id_b", "stratum"])
            for (a, b), s in zip(self.pairs, self.strata or [""] * len(self.pairs)):
                w.writerow([a, b, s])

    @classmethod
    def read(cls, path, seed: int = 0) -> "ControlPairing":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            tuple((r["id_a"], r["id_b"]) for r in rows), seed, tuple(r.get("stratum", "") for r in rows)
        )


def stratum_label(a: SubjectRecord, b: SubjectRecord) -> str:
    return "|".join(sorted((a.profile, b.profile)))


def load_manifest(path) -> SubjectManifest:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    subjects = tuple(
        SubjectRecord(r["subject_id"].strip(), r["sex"].strip(), r["age_bin"].strip(), r["family_id"].strip())
        for r in rows
    )
    links = {}
    for r in rows:
        rel, partner = r["relation"].strip(), r["partner_id"].strip()
        if bool(rel) != bool(partner):
            raise ManifestError(f"{r['subject_id']}: relation and partner_id must both be set or both empty")
        if rel:
            if rel not in RELATIONS:
                raise ManifestError(f"{r['subject_id']}: unknown relation {rel!r}")
            links[r["subject_id"].strip()] = (partner, rel)
    pairings = []
    done = set()
    for sid, (partner, rel) in links.items():
        if sid in done:
            continue
        back = links.get(partner)
        if back is None:
            known = any(s.subject_id == partner for s in subjects)
            what = "does not list it back" if known else "is missing"
            raise ManifestError(f"{sid}: partner {partner!r} {what}")
        if back != (sid, rel):
            raise ManifestError(f"asymmetric pairing between {sid!r} and {partner!r}")
        pairings.append(PairRecord(sid, partner, rel))
        done.update((sid, partner))
    return SubjectManifest(subjects, tuple(pairings))


def write_manifest(path, manifest: SubjectManifest) -> None:
    partner = {}
    for p in manifest.pairings:
        partner[p.id_a] = (p.relation, p.id_b)
        partner[p.id_b] = (p.relation, p.id_a)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for s in manifest.subjects:
            rel, other = partner.get(s.subject_id, ("", ""))
            w.writerow([s.subject_id, s.sex, s.age_bin, s.family_id, rel, other])


def _eligible(manifest: SubjectManifest, stratum: str, exclude=frozenset()) -> list[tuple[str, str]]:
    pa, pb = stratum.split("|")
    pool_a = sorted(s.subject_id for s in manifest.subjects if s.profile == pa and s.subject_id not in exclude)
    pool_b = sorted(s.subject_id for s in manifest.subjects if s.profile == pb and s.subject_id not in exclude)
    fam = {s.subject_id: s.family_id for s in manifest.subjects}
    out = []
    for a in pool_a:
        for b in pool_b:
            if a == b or fam[a] == fam[b]:
                continue
            if pa == pb and a > b:
                continue  # unordered pairs within one profile
            out.append((a, b))
    return out


def sample_strangers(
    manifest: SubjectManifest,
    target: Iterable[str] = ("MZ", "DZ"),
    n_pairs: int | None = None,
    seed: int = 0,
    distinct_subjects: bool = False,
) -> ControlPairing:
    """Stranger pairs with the same stratum histogram as the target pairs.

    With ``n_pairs`` left as None, one stranger pair is drawn per target pair.
    Otherwise the target strata are cycled in order until ``n_pairs`` draws
    have been made.
    """
    by = manifest.by_id
    target_pairs = manifest.pairs(target)
    if not target_pairs:
        raise ManifestError(f"no pairs with relation in {sorted(set(target))}")
    strata = [stratum_label(by[a], by[b]) for a, b in target_pairs]
    n = len(strata) if n_pairs is None else int(n_pairs)
    wanted = [strata[i % len(strata)] for i in range(n)]
    index = {s: i for i, s in enumerate(sorted(set(strata)))}
    streams = {
        s: np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        for s, i in index.items()
    }
    pools = {s: _eligible(manifest, s) for s in index}
    used: set = set()
    out = []
    for s in wanted:
        pool = pools[s]
        if distinct_subjects:
            pool = [p for p in pool if p[0] not in used and p[1] not in used]
        if not pool:
            raise StratumExhaustedError(s)
        pick = pool[int(streams[s].integers(len(pool)))]
        used.update(pick)
        out.append(pick)
    return ControlPairing(tuple(out), seed, tuple(wanted))


# Pair counts of the twin/sibling study, by relation and stratum.
# Mixed-sex sibling pairs put the female in the first age bin of the column.
_AGE_COLUMNS = (
    ("22-25", "22-25"), ("22-25", "26-30"), ("22-25", "31-35"),
    ("26-30", "26-30"), ("26-30", "31-35"), ("31-35", "31-35"),
)
STUDY_DEMOGRAPHICS = {
    "MZ": {("F", "F"): (0, 0, 0, 24, 0, 19), ("M", "M"): (3, 0, 0, 7, 0, 4)},
    "DZ": {("F", "F"): (1, 0, 0, 17, 0, 13), ("M", "M"): (5, 0, 0, 9, 0, 7)},
    "SIB": {
        ("F", "F"): (1, 3, 0, 1, 2, 2),
        ("F", "M"): (6, 7, 0, 3, 7, 2),
        ("M", "M"): (1, 4, 1, 2, 3, 2),
    },
}


def study_demographics_manifest() -> SubjectManifest:
    """Synthetic manifest reproducing the study's pair demographics."""
    subjects, pairings = [], []
    fam = 0
    for relation, rows in STUDY_DEMOGRAPHICS.items():
        for (sex_a, sex_b), counts in rows.items():
            for (age_a, age_b), count in zip(_AGE_COLUMNS, counts):
                for _ in range(count):
                    fid = f"fam{fam:04d}"
                    a, b = f"{fid}_1", f"{fid}_2"
                    subjects += [SubjectRecord(a, sex_a, age_a, fid), SubjectRecord(b, sex_b, age_b, fid)]
                    pairings.append(PairRecord(a, b, relation))
                    fam += 1
    return SubjectManifest(tuple(subjects), tuple(pairings))


PAIR_COLUMNS = ("id_a", "id_b", "role", "relation")
PAIR_ROLES = ("interest", "control", "holdout")


def write_pair_table(path, rows: Iterable[tuple[str, str, str, str]]) -> None:
    """Write ``(id_a, id_b, role, relation)`` rows, the screening input format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_COLUMNS)
        for row in rows:
            if row[2] not in PAIR_ROLES:
                raise ManifestError(f"unknown pair role {row[2]!r}")
            w.writerow(row)


def read_pair_table(path) -> list[tuple[str, str, str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PAIR_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: missing columns {sorted(missing)}")
        rows = [tuple(r[c].strip() for c in PAIR_COLUMNS) for r in reader]
    for row in rows:
        if row[2] not in PAIR_ROLES:
            raise ManifestError(f"{path}: unknown pair role {row[2]!r}")
    return rows


def pairs_by_role(rows) -> dict[str, list[tuple[str, str]]]:
    out = {r: [] for r in PAIR_ROLES}
    for a, b, role, _ in rows:
        out[role].append((a, b))
    return out


def pair_table_from_manifest(
    manifest: SubjectManifest,
    interest: Sequence[str] = ("MZ", "DZ"),
    holdout: Sequence[str] = ("SIB",),
    seed: int = 0,
    distinct_subjects: bool = False,
    controls: ControlPairing | None = None,
) -> list[tuple[str, str, str, str]]:
    """Related pairs by role plus one matched stranger pair per interest pair.

    ``controls`` supplies a ready-made stranger pairing; otherwise one is
    sampled with ``sample_strangers``.
    """
    rows = []
    for p in manifest.pairings:
        if p.relation in interest:
            rows.append((p.id_a, p.id_b, "interest", p.relation))
        elif p.relation in holdout:
            rows.append((p.id_a, p.id_b, "holdout", p.relation))
    if controls is None:
        controls = sample_strangers(manifest, interest, seed=seed, distinct_subjects=distinct_subjects)
    rows += [(a, b, "control", "STRANGER") for a, b in controls.pairs]
    return rows
