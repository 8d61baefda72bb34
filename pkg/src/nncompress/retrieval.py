"""Retrieval evaluation: ranking, average precision, mAP and 4xRecall@4.

Text formats (whitespace separated, ``#`` starts a comment):

* descriptors: ``<id> <v1> <v2> ...`` one descriptor per line
* relevance:   ``<query-id> <relevant-id> [<relevant-id> ...]``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

METRICS = ("l2", "cosine")


def _distances(q: np.ndarray, db: np.ndarray, metric: str) -> np.ndarray:
    if metric == "l2":
        return np.sqrt(np.sum((db - q[None, :]) ** 2, axis=1))
    if metric == "cosine":
        denom = np.linalg.norm(db, axis=1) * np.linalg.norm(q)
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(denom > 0, db @ q / np.where(denom > 0, denom, 1), 0.0)
        return -sim
    raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def rank_database(q, db: dict, metric: str = "l2", exclude=None) -> list:
    """Database ids by ascending L2 distance or descending cosine similarity; ties by ascending id."""
    if not db:
        raise ValueError("empty database")
    ids = sorted(i for i in db if i != exclude)
    mat = np.array([np.asarray(db[i], dtype=np.float64) for i in ids])
    q = np.asarray(q, dtype=np.float64).ravel()
    if mat.ndim != 2 or mat.shape[1] != q.size:
        raise ShapeError(f"query has {q.size} dims, database has {mat.shape[-1]}")
    dist = _distances(q, mat, metric)
    order = np.lexsort((np.arange(len(ids)), dist))
    return [ids[i] for i in order]


def average_precision(ranking, relevant) -> float:
    """Non-interpolated AP: mean precision at the rank of each relevant item."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be nonempty")
    hits, total = 0, 0.0
    for rank, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def recall_at_4(ranking, relevant) -> int:
    """Number of relevant ids among the top four (missing positions count as misses)."""
    relevant = set(relevant)
    return sum(1 for item in list(ranking)[:4] if item in relevant)


@dataclass
class Query:
    id: object
    descriptor: np.ndarray
    relevant: set


@dataclass
class RetrievalRun:
    queries: list[Query]
    database: dict
    metric: str = "l2"
    rankings: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        for q in self.queries:
            if not q.relevant:
                raise ConfigError(f"query {q.id!r} has no relevant items")
            missing = set(q.relevant) - set(self.database)
            if missing:
                raise ConfigError(f"query {q.id!r} references unknown ids {sorted(map(str, missing))}")

    def ranking(self, q: Query) -> list:
        if q.id not in self.rankings:
            self.rankings[q.id] = rank_database(q.descriptor, self.database, self.metric, exclude=q.id)
        return self.rankings[q.id]

    def average_precisions(self) -> list[float]:
        return [average_precision(self.ranking(q), q.relevant) for q in self.queries]

    def recalls_at_4(self) -> list[int]:
        return [recall_at_4(self.ranking(q), q.relevant) for q in self.queries]


def mean_average_precision(run: RetrievalRun) -> float:
    if not run.queries:
        raise ValueError("run has no queries")
    return float(np.mean(run.average_precisions()))


def mean_recall_at_4(run: RetrievalRun) -> float:
    if not run.queries:
        raise ValueError("run has no queries")
    return float(np.mean(run.recalls_at_4()))


# ---------------------------------------------------------------------------
# text I/O

def _lines(path):
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line.split()


def read_descriptors(path) -> dict:
    out = {}
    for parts in _lines(path):
        if parts[0] in out:
            raise ConfigError(f"duplicate descriptor id {parts[0]!r}")
        out[parts[0]] = np.array([float(v) for v in parts[1:]])
    return out


def write_descriptors(path, descriptors: dict) -> None:
    with open(path, "w") as fh:
        for key, vec in descriptors.items():
            fh.write(str(key) + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def read_relevance(path) -> dict:
    return {parts[0]: set(parts[1:]) for parts in _lines(path)}


def load_run(descriptor_path, relevance_path, metric: str = "l2", query_path=None) -> RetrievalRun:
    """Queries default to the database entries named in the relevance file."""
    db = read_descriptors(descriptor_path)
    qdesc = read_descriptors(query_path) if query_path else db
    rel = read_relevance(relevance_path)
    queries = []
    for qid, relevant in rel.items():
        if qid not in qdesc:
            raise ConfigError(f"no descriptor for query {qid!r}")
        queries.append(Query(qid, qdesc[qid], relevant))
    return RetrievalRun(queries, db, metric)
