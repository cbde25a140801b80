"""Tessellated-icosahedron direction sets.

Vertex ids are canonical: the 12 seed vertices come first in the order of
``_SEED`` below, and every subdivision appends edge midpoints ordered by the
sorted (low id, high id) pair of their parent vertices.  Level 3 gives the
642-direction set used for ODF sampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

MAX_LEVEL = 6

_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_SEED = np.array(
    [
        [-1, 0, _PHI], [1, 0, _PHI], [-1, 0, -_PHI], [1, 0, -_PHI],
        [0, _PHI, 1], [0, _PHI, -1], [0, -_PHI, 1], [0, -_PHI, -1],
        [_PHI, 1, 0], [_PHI, -1, 0], [-_PHI, 1, 0], [-_PHI, -1, 0],
    ],
    dtype=np.float64,
)


class ResourceError(ValueError):
    """Requested tessellation is larger than the resource guard allows."""


@dataclass(frozen=True)
class DirectionSet:
    vectors: np.ndarray = field(repr=False)
    adjacency: tuple = field(repr=False)
    antipode: np.ndarray = field(repr=False)
    faces: np.ndarray | None = field(default=None, repr=False)
    level: int | None = None
    antipode_max_residual: float = 0.0

    def __len__(self):
        return len(self.vectors)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency])

    def edges(self) -> np.ndarray:
        out = [(i, j) for i, nb in enumerate(self.adjacency) for j in nb if i < j]
        return np.array(sorted(out), dtype=np.int64).reshape(-1, 2)

    def neighbor_table(self) -> np.ndarray:
        """Adjacency padded to the max degree with the vertex's own id."""
        deg = max(len(a) for a in self.adjacency)
        table = np.empty((len(self), deg), dtype=np.int64)
        for i, nb in enumerate(self.adjacency):
            table[i, : len(nb)] = nb
            table[i, len(nb):] = i
        return table

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "vectors": self.vectors.tolist(),
            "adjacency": [list(map(int, a)) for a in self.adjacency],
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, obj: dict) -> "DirectionSet":
        vectors = np.asarray(obj["vectors"], dtype=np.float64)
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        adjacency = tuple(np.asarray(sorted(a), dtype=np.int64) for a in obj["adjacency"])
        if len(adjacency) != len(vectors):
            raise ValueError("adjacency length does not match vector count")
        for i, nb in enumerate(adjacency):
            for j in nb:
                if i not in adjacency[j]:
                    raise ValueError(f"adjacency not symmetric at ({i}, {j})")
        anti, resid = _antipodes(vectors)
        return cls(vectors, adjacency, anti, None, obj.get("level"), resid)

    @classmethod
    def load(cls, path) -> "DirectionSet":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _seed_faces(vertices: np.ndarray) -> np.ndarray:
    # Icosahedron edges have length 2 for the seed coordinates above.
    n = len(vertices)
    d = np.linalg.norm(vertices[:, None] - vertices[None], axis=2)
    adj = np.isclose(d, 2.0)
    faces = [
        (a, b, c)
        for a, b, c in combinations(range(n), 3)
        if adj[a, b] and adj[b, c] and adj[a, c]
    ]
    return np.array(faces, dtype=np.int64)


def _subdivide(vertices: np.ndarray, faces: np.ndarray):
    edges = np.sort(
        np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]]), axis=1
    )
    edges = np.unique(edges, axis=0)  # lexicographic by (low, high)
    n = len(vertices)
    mid_id = {(int(a), int(b)): n + k for k, (a, b) in enumerate(edges)}
    mids = vertices[edges[:, 0]] + vertices[edges[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)

    def m(a, b):
        return mid_id[(a, b) if a < b else (b, a)]

    new_faces = []
    for a, b, c in faces.tolist():
        ab, bc, ca = m(a, b), m(b, c), m(c, a)
        new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.vstack([vertices, mids]), np.array(new_faces, dtype=np.int64)


def _antipodes(vectors: np.ndarray) -> tuple[np.ndarray, float]:
    dist, idx = cKDTree(vectors).query(-vectors)
    return idx.astype(np.int64), float(np.max(dist))


def antipode_map(ds) -> np.ndarray:
    """Id of the vertex nearest to each vertex's negation.

    Accepts a DirectionSet or an (n, 3) array of unit vectors.
    """
    vectors = ds.vectors if isinstance(ds, DirectionSet) else np.asarray(ds, dtype=float)
    return _antipodes(vectors)[0]


def tessellate_icosahedron(level: int = 3) -> DirectionSet:
    level = int(level)
    if level < 0:
        raise ValueError("level must be non-negative")
    if level > MAX_LEVEL:
        raise ResourceError(f"level {level} exceeds the limit of {MAX_LEVEL}")
    vertices = _SEED / np.linalg.norm(_SEED, axis=1, keepdims=True)
    faces = _seed_faces(_SEED)
    for _ in range(level):
        vertices, faces = _subdivide(vertices, faces)

    nbrs = [set() for _ in range(len(vertices))]
    for a, b, c in faces.tolist():
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    adjacency = tuple(np.array(sorted(s), dtype=np.int64) for s in nbrs)
    anti, resid = _antipodes(vertices)
    vertices.setflags(write=False)
    return DirectionSet(vertices, adjacency, anti, faces, level, resid)
