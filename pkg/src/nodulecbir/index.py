"""Exact nearest-neighbour retrieval over nodule embeddings.

The index stores, per nodule, the embedding plus the raw consensus rating
and binary malignancy class needed by downstream evaluation. Queries do
an exhaustive scan; ties on distance break by ascending nodule id, so
results are fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import AbstractSet, Mapping, Sequence

import numpy as np

from .data import Dataset, NoduleRecord, RatingVector, SCALE_RAW
from .errors import ArgumentError, IndexBuildError, JoinError, RetrievalError, ShapeError
from .head import Embedding

METRIC_EUCLIDEAN = "euclidean"
METRIC_COSINE = "cosine"
METRICS = (METRIC_EUCLIDEAN, METRIC_COSINE)


def _vector(v: Embedding | np.ndarray) -> np.ndarray:
    return v.values if isinstance(v, Embedding) else np.asarray(v, dtype=np.float64)


def distance(a: Embedding | np.ndarray, b: Embedding | np.ndarray, metric: str = METRIC_EUCLIDEAN) -> float:
    """Distance between two embeddings under the chosen metric.

    Euclidean is the L2 norm of the difference. Cosine is 1 - cos(a, b),
    defined as 1 whenever either vector is all zero.
    """
    va, vb = _vector(a), _vector(b)
    if va.shape != vb.shape:
        raise ShapeError(f"embedding dimensions differ: {va.shape} vs {vb.shape}")
    if metric == METRIC_EUCLIDEAN:
        return float(np.sqrt(((va - vb) ** 2).sum()))
    if metric == METRIC_COSINE:
        na = float(np.sqrt((va * va).sum()))
        nb = float(np.sqrt((vb * vb).sum()))
        if na == 0.0 or nb == 0.0:
            return 1.0
        return float(1.0 - (va @ vb) / (na * nb))
    raise ArgumentError(f"unknown metric {metric!r}")


@dataclass(frozen=True, eq=False)
class IndexEntry:
    nodule_id: str
    scan_id: str
    embedding: np.ndarray
    consensus: RatingVector
    malignancy: str


@dataclass(frozen=True, eq=False)
class RetrievalResult:
    """Ranked neighbours of one query: (nodule_id, distance) pairs."""

    query_id: str | None
    k: int
    neighbors: tuple[tuple[str, float], ...]
    truncated: bool

    @property
    def neighbor_ids(self) -> tuple[str, ...]:
        return tuple(nid for nid, _ in self.neighbors)


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    """Immutable exact-scan index; entries are sorted by nodule id."""

    entries: tuple[IndexEntry, ...]
    metric: str

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ArgumentError(f"unknown metric {self.metric!r}")
        if len(self.entries) == 0:
            raise IndexBuildError("index needs at least one entry")
        ids = [e.nodule_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise IndexBuildError("duplicate nodule id in index entries")
        if ids != sorted(ids):
            raise IndexBuildError("index entries must be sorted by nodule id")
        dims = {e.embedding.shape for e in self.entries}
        if len(dims) != 1:
            raise IndexBuildError(f"inconsistent embedding dimensions: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def _matrix(self) -> np.ndarray:
        return np.stack([e.embedding for e in self.entries])

    @cached_property
    def _ids(self) -> tuple[str, ...]:
        return tuple(e.nodule_id for e in self.entries)

    @cached_property
    def _by_id(self) -> dict[str, IndexEntry]:
        return {e.nodule_id: e for e in self.entries}

    def entry(self, nodule_id: str) -> IndexEntry:
        try:
            return self._by_id[nodule_id]
        except KeyError:
            raise JoinError(f"nodule id {nodule_id!r} is not in the index") from None


def _records_by_id(
    dataset: Dataset | Sequence[NoduleRecord] | Mapping[str, NoduleRecord],
) -> Mapping[str, NoduleRecord]:
    if isinstance(dataset, Dataset):
        return {r.nodule_id: r for r in dataset.records}
    if isinstance(dataset, Mapping):
        return dataset
    return {r.nodule_id: r for r in dataset}


def build_index(
    embeddings: Sequence[Embedding],
    dataset: Dataset | Sequence[NoduleRecord] | Mapping[str, NoduleRecord],
    metric: str = METRIC_EUCLIDEAN,
) -> RetrievalIndex:
    """Join embeddings with their records and freeze them into an index.

    ``dataset`` may cover more nodules than ``embeddings`` (the
    cross-validation path indexes only training folds); every embedding id
    must resolve to a record.
    """
    records = _records_by_id(dataset)
    seen: set[str] = set()
    entries = []
    for emb in embeddings:
        if emb.nodule_id in seen:
            raise IndexBuildError(f"duplicate nodule id {emb.nodule_id!r}")
        seen.add(emb.nodule_id)
        record = records.get(emb.nodule_id)
        if record is None:
            raise JoinError(f"embedding id {emb.nodule_id!r} has no dataset record")
        entries.append(
            IndexEntry(
                nodule_id=emb.nodule_id,
                scan_id=record.scan_id,
                embedding=emb.values,
                consensus=record.consensus(),
                malignancy=record.malignancy,
            )
        )
    entries.sort(key=lambda e: e.nodule_id)
    return RetrievalIndex(entries=tuple(entries), metric=metric)


def _all_distances(index: RetrievalIndex, q: np.ndarray) -> np.ndarray:
    matrix = index._matrix
    if index.metric == METRIC_EUCLIDEAN:
        return np.sqrt(((matrix - q) ** 2).sum(axis=1))
    norms = np.sqrt((matrix * matrix).sum(axis=1))
    qn = float(np.sqrt((q * q).sum()))
    dists = np.ones(len(matrix))
    if qn > 0.0:
        valid = norms > 0.0
        dists[valid] = 1.0 - (matrix[valid] @ q) / (norms[valid] * qn)
    return dists


def query_top_k(
    index: RetrievalIndex,
    query: Embedding | np.ndarray,
    k: int,
    exclude: AbstractSet[str] = frozenset(),
    exclude_scan: str | None = None,
) -> RetrievalResult:
    """Exact k nearest entries, ties broken by ascending nodule id.

    Excluded ids and (optionally) one scan are removed before ranking.
    Asking for more neighbours than remain returns all of them with
    ``truncated`` set.
    """
    if k < 1:
        raise ArgumentError(f"k must be at least 1, got {k}")
    q = _vector(query)
    dim = index._matrix.shape[1]
    if q.shape != (dim,):
        raise ShapeError(f"query must have shape ({dim},), got {q.shape}")

    eligible = np.fromiter(
        (
            e.nodule_id not in exclude
            and (exclude_scan is None or e.scan_id != exclude_scan)
            for e in index.entries
        ),
        dtype=bool,
        count=len(index),
    )
    positions = np.nonzero(eligible)[0]
    dists = _all_distances(index, q)[positions]
    # Entries are stored sorted by nodule id, so position order is id order
    # and lexsort's secondary key implements the documented tie-break.
    order = np.lexsort((positions, dists))
    top = order[: min(k, positions.size)]
    neighbors = tuple(
        (index._ids[int(positions[i])], float(dists[i])) for i in top
    )
    return RetrievalResult(
        query_id=query.nodule_id if isinstance(query, Embedding) else None,
        k=k,
        neighbors=neighbors,
        truncated=k > positions.size,
    )


def predict_ratings_topk(
    index: RetrievalIndex,
    query: Embedding | np.ndarray,
    k: int,
    exclude: AbstractSet[str] = frozenset(),
    exclude_scan: str | None = None,
) -> RatingVector:
    """Unweighted mean of the top-k neighbours' raw consensus ratings."""
    result = query_top_k(index, query, k, exclude=exclude, exclude_scan=exclude_scan)
    if not result.neighbors:
        raise RetrievalError("no eligible entries to predict from")
    stacked = np.stack([index.entry(nid).consensus.values for nid in result.neighbor_ids])
    return RatingVector(stacked.mean(axis=0), SCALE_RAW)
