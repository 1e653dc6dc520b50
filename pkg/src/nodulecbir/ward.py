"""Minimum-variance agglomerative clustering and top-split summaries.

Clusters are numbered like the merge list they come from: leaves are
0..n-1 in input order, each merge t creates cluster n+t. Merge heights
are Ward distances (for two singletons this equals their euclidean
distance); squared heights follow the Lance-Williams recurrence

    d(uv, w)^2 = ((|w|+|u|) d(u,w)^2 + (|w|+|v|) d(v,w)^2
                  - |w| d(u,v)^2) / (|u|+|v|+|w|).

Among pairs at the minimum distance the smallest (a, b) id pair merges
first, which makes the whole merge sequence deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import pairwise_sq_dists
from .data import NoduleRecord, RatingVector, SCALE_RAW
from .errors import ArgumentError, DomainError, StructureError

__all__ = [
    "Merge",
    "Dendrogram",
    "ward_cluster",
    "SplitSide",
    "Split",
    "SplitSummary",
    "top_splits_summary",
]


@dataclass(frozen=True)
class Merge:
    cluster_a: int
    cluster_b: int
    height: float
    size: int


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Full merge history of an agglomerative clustering."""

    n_leaves: int
    merges: tuple[Merge, ...]

    def __post_init__(self) -> None:
        n = self.n_leaves
        if len(self.merges) != n - 1:
            raise ArgumentError(
                f"{n} leaves need {n - 1} merges, got {len(self.merges)}"
            )
        sizes = {i: 1 for i in range(n)}
        for t, merge in enumerate(self.merges):
            a, b = merge.cluster_a, merge.cluster_b
            if not (a in sizes and b in sizes and a < b):
                raise ArgumentError(f"merge {t} references invalid clusters ({a}, {b})")
            expected = sizes.pop(a) + sizes.pop(b)
            if merge.size != expected:
                raise ArgumentError(
                    f"merge {t} claims size {merge.size}, members sum to {expected}"
                )
            sizes[n + t] = expected

    @property
    def root(self) -> int:
        return self.n_leaves + len(self.merges) - 1

    def children(self, node: int) -> tuple[int, int]:
        if node < self.n_leaves:
            raise ArgumentError(f"cluster {node} is a leaf")
        merge = self.merges[node - self.n_leaves]
        return merge.cluster_a, merge.cluster_b

    def height(self, node: int) -> float:
        if node < self.n_leaves:
            return 0.0
        return self.merges[node - self.n_leaves].height

    def leaves_of(self, node: int) -> tuple[int, ...]:
        """Leaf indices under a cluster, ascending."""
        stack, leaves = [node], []
        while stack:
            v = stack.pop()
            if v < self.n_leaves:
                leaves.append(v)
            else:
                stack.extend(self.children(v))
        return tuple(sorted(leaves))


def ward_cluster(points: np.ndarray | Sequence[Sequence[float]]) -> Dendrogram:
    """Agglomerate points by always merging the minimum-variance pair."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    if x.ndim != 2 or x.shape[0] < 2:
        raise ArgumentError("ward_cluster needs at least 2 points in a 2-D array")
    if not np.all(np.isfinite(x)):
        raise DomainError("ward_cluster input contains non-finite values")

    n = x.shape[0]
    d2 = pairwise_sq_dists(x)
    np.fill_diagonal(d2, np.inf)
    ids = np.arange(n)
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)

    merges = []
    for t in range(n - 1):
        current = d2.min()
        rows, cols = np.nonzero(d2 == current)
        best_slots, best_pair = None, None
        for i, j in zip(rows, cols):
            if i >= j:
                continue
            pair = (min(ids[i], ids[j]), max(ids[i], ids[j]))
            if best_pair is None or pair < best_pair:
                best_pair, best_slots = pair, (int(i), int(j))
        i, j = best_slots
        new_size = sizes[i] + sizes[j]
        merges.append(
            Merge(
                cluster_a=int(best_pair[0]),
                cluster_b=int(best_pair[1]),
                height=float(np.sqrt(current)),
                size=int(new_size),
            )
        )
        others = active.copy()
        others[i] = others[j] = False
        sw = sizes[others]
        d2[i, others] = (
            (sw + sizes[i]) * d2[i, others]
            + (sw + sizes[j]) * d2[j, others]
            - sw * current
        ) / (sizes[i] + sizes[j] + sw)
        d2[others, i] = d2[i, others]
        sizes[i] = new_size
        ids[i] = n + t
        active[j] = False
        d2[j, :] = np.inf
        d2[:, j] = np.inf
    return Dendrogram(n_leaves=n, merges=tuple(merges))


@dataclass(frozen=True, eq=False)
class SplitSide:
    cluster: int
    nodule_ids: tuple[str, ...]
    mean_rating: RatingVector


@dataclass(frozen=True, eq=False)
class Split:
    parent: int
    height: float
    sides: tuple[SplitSide, SplitSide]


@dataclass(frozen=True, eq=False)
class SplitSummary:
    splits: tuple[Split, ...]


def top_splits_summary(
    dendrogram: Dendrogram,
    records: Sequence[NoduleRecord],
    depth: int = 3,
) -> SplitSummary:
    """Open the ``depth`` highest splits and summarize each side's ratings.

    The root splits first; after that, the highest remaining internal
    node among the exposed children splits next (ties go to the most
    recent merge). ``records`` must align with the dendrogram leaves.
    Each side reports its member nodule ids and the mean of their raw
    consensus ratings.
    """
    n = dendrogram.n_leaves
    if len(records) != n:
        raise ArgumentError(
            f"records ({len(records)}) must align with dendrogram leaves ({n})"
        )
    if depth < 1:
        raise ArgumentError("depth must be at least 1")
    if n < depth + 1:
        raise StructureError(
            f"{depth} splits need at least {depth + 1} leaves, got {n}"
        )

    consensus_matrix = np.stack([r.consensus().values for r in records])

    def side(cluster: int) -> SplitSide:
        leaves = dendrogram.leaves_of(cluster)
        return SplitSide(
            cluster=cluster,
            nodule_ids=tuple(records[i].nodule_id for i in leaves),
            mean_rating=RatingVector(
                consensus_matrix[list(leaves)].mean(axis=0), SCALE_RAW
            ),
        )

    frontier = [dendrogram.root]
    splits = []
    for _ in range(depth):
        candidates = [v for v in frontier if v >= n]
        if not candidates:
            raise StructureError("ran out of internal nodes to split")
        node = max(candidates, key=lambda v: (dendrogram.height(v), v))
        frontier.remove(node)
        a, b = dendrogram.children(node)
        frontier.extend((a, b))
        splits.append(
            Split(parent=node, height=dendrogram.height(node), sides=(side(a), side(b)))
        )
    return SplitSummary(splits=tuple(splits))
