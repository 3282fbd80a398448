"""Reference-face retrieval by Euclidean distance over face embeddings.

Index files hold one JSON record per line, either
``{"id": ..., "embedding": [...]}`` or ``{"id": ..., "fc6": [...], "fc7": [...]}``;
the latter form is normalized and concatenated on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError, ParseError


def normalize_concat(v1, v2):
    v1 = np.asarray(v1, dtype=np.float64).ravel()
    v2 = np.asarray(v2, dtype=np.float64).ravel()
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 == 0 or n2 == 0 or not (np.isfinite(n1) and np.isfinite(n2)):
        raise InputError("cannot normalize a zero or non-finite vector")
    return np.concatenate([v1 / n1, v2 / n2])


@dataclass
class EmbeddingIndex:
    ids: list = field(default_factory=list)
    vectors: np.ndarray = None

    def __post_init__(self):
        if self.vectors is None:
            self.vectors = np.zeros((0, 0))
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.ids) != len(self.vectors):
            raise DimensionError("index needs one vector row per id")
        if len(set(self.ids)) != len(self.ids):
            raise InputError("index ids must be unique")
        if not np.all(np.isfinite(self.vectors)):
            raise InputError("index vectors must be finite")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def add(self, id_, vector):
        vector = np.asarray(vector, dtype=np.float64).ravel()
        if id_ in self.ids:
            raise InputError(f"duplicate id {id_!r}")
        if len(self) and vector.shape[0] != self.dim:
            raise DimensionError(f"vector length {vector.shape[0]} != index dimension {self.dim}")
        if not np.all(np.isfinite(vector)):
            raise InputError(f"non-finite vector for {id_!r}")
        self.ids.append(id_)
        self.vectors = vector[None] if len(self) == 1 else np.vstack([self.vectors, vector])


def distances(index, query):
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.shape[0] != index.dim:
        raise DimensionError(f"query length {query.shape[0]} != index dimension {index.dim}")
    diff = index.vectors - query
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def knn_query(index, query, k):
    """The ``k`` nearest ids with distances, ascending; ties go to the smaller id."""
    if len(index) == 0:
        raise InputError("index is empty")
    if not 1 <= k <= len(index):
        raise InputError(f"k must lie in 1..{len(index)}, got {k}")
    d = distances(index, query)
    ids = np.array(index.ids, dtype=object)
    order = sorted(range(len(d)), key=lambda i: (d[i], ids[i]))[:k]
    return [(index.ids[i], float(d[i])) for i in order]


def load_index(path):
    index = EmbeddingIndex()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}") from None
            if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
                raise ParseError(f"{path}:{lineno}: record needs a string 'id'")
            try:
                if "embedding" in rec:
                    vec = np.array(rec["embedding"], dtype=np.float64)
                elif "fc6" in rec and "fc7" in rec:
                    vec = normalize_concat(rec["fc6"], rec["fc7"])
                else:
                    raise ParseError(f"{path}:{lineno}: record needs 'embedding' or 'fc6' + 'fc7'")
                if vec.ndim != 1:
                    raise ParseError(f"{path}:{lineno}: vector must be flat")
                index.add(rec["id"], vec)
            except (InputError, ValueError, TypeError) as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return index


def save_index(index, path):
    with open(path, "w") as fh:
        for id_, vec in zip(index.ids, index.vectors):
            fh.write(json.dumps({"id": id_, "embedding": vec.tolist()}) + "\n")
