"""Exact stochastic neighbour embedding of the semantic space into 2-D.

No tree approximations: the full affinity matrices are computed at every
iteration. Per-point Gaussian bandwidths come from a bisection that
matches the Shannon entropy of each conditional distribution to
log2(perplexity). The low-dimensional map minimizes the KL divergence to
the symmetrized affinities with momentum gradient descent, early
exaggeration and a seeded Gaussian initialization, so runs are
reproducible per seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ._util import pairwise_sq_dists, readonly
from .data import Dataset, NoduleRecord
from .errors import ArgumentError, JoinError
from .head import Embedding

_KL_FLOOR = 1e-12


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch_iter: int = 250
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    init_sigma: float = 1e-4
    seed: int = 42

    def __post_init__(self) -> None:
        if self.perplexity <= 1.0:
            raise ArgumentError("perplexity must be greater than 1")
        if self.iterations < 1:
            raise ArgumentError("iterations must be at least 1")
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be positive")


@dataclass(frozen=True, eq=False)
class ProjectedPoint:
    nodule_id: str
    x: float
    y: float
    malignancy: str | None = None


@dataclass(frozen=True, eq=False)
class TsneResult:
    points: tuple[ProjectedPoint, ...]
    kl_history: np.ndarray


def _entropy_bits(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def conditional_affinities(
    points: np.ndarray,
    perplexity: float,
    tol: float = 1e-5,
    max_steps: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic Gaussian affinities with per-point calibrated bandwidth.

    Returns (P, beta) where P[i, j] is p(j|i) with zero diagonal and each
    row's entropy within ``tol`` bits of log2(perplexity), and beta[i] is
    the precision 1/(2 sigma_i^2) found by bisection.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ArgumentError("need at least 2 points")
    # the entropy target log2(perplexity) must be reachable: at most n-1
    # neighbours exist per point
    if perplexity > n - 1:
        raise ArgumentError(f"perplexity {perplexity} infeasible for {n} points")
    target = np.log2(perplexity)
    d2 = pairwise_sq_dists(x)

    p = np.zeros((n, n))
    betas = np.ones(n)
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        di = d2[i][mask[i]]
        shifted = di - di.min()  # normalization cancels the shift
        beta, lo, hi = 1.0, 0.0, np.inf
        row = None
        for _ in range(max_steps):
            weights = np.exp(-beta * shifted)
            row = weights / weights.sum()
            gap = _entropy_bits(row) - target
            if abs(gap) < tol:
                break
            if gap > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
        p[i][mask[i]] = row
        betas[i] = beta
    return p, betas


def joint_affinities(conditional: np.ndarray) -> np.ndarray:
    """Symmetrized affinities P = (C + C^T) / (2n); entries sum to 1."""
    n = conditional.shape[0]
    return (conditional + conditional.T) / (2.0 * n)


def _low_dim_affinities(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # 2-D points: broadcasting beats the row-by-row helper and computes the
    # same explicit differences, so values are identical.
    diff = y[:, np.newaxis, :] - y[np.newaxis, :, :]
    num = 1.0 / (1.0 + (diff * diff).sum(axis=-1))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0
    return float(
        (p[support] * np.log(p[support] / np.maximum(q[support], _KL_FLOOR))).sum()
    )


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    """KL divergence of the map ``y`` against joint affinities ``p``."""
    q, _ = _low_dim_affinities(np.asarray(y, dtype=np.float64))
    return _kl(np.asarray(p, dtype=np.float64), q)


def tsne_coordinates(
    points: np.ndarray, config: TsneConfig = TsneConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Project rows of ``points`` to 2-D.

    Returns (coordinates, kl_history) where kl_history[t] is the KL
    divergence against the *unexaggerated* affinities after t+1 updates.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if not config.perplexity < (n - 1) / 3.0:
        raise ArgumentError(
            f"perplexity {config.perplexity} infeasible for {n} points "
            f"(needs perplexity < (n - 1) / 3)"
        )
    conditional, _ = conditional_affinities(x, config.perplexity)
    p = joint_affinities(conditional)

    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, config.init_sigma, size=(n, 2))
    velocity = np.zeros_like(y)
    kl_history = np.empty(config.iterations)

    for it in range(config.iterations):
        q, num = _low_dim_affinities(y)
        if it > 0:
            kl_history[it - 1] = _kl(p, q)
        p_eff = p * config.exaggeration if it < config.exaggeration_iters else p
        pq = (p_eff - q) * num
        grad = 4.0 * (pq.sum(axis=1)[:, np.newaxis] * y - pq @ y)
        momentum = (
            config.momentum_start
            if it < config.momentum_switch_iter
            else config.momentum_final
        )
        velocity = momentum * velocity - config.learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    kl_history[-1] = kl_divergence(p, y)
    return y, kl_history


def tsne(
    embeddings: Sequence[Embedding], config: TsneConfig = TsneConfig()
) -> TsneResult:
    """Project a set of embeddings; points keep their nodule ids."""
    if len(embeddings) < 5:
        raise ArgumentError("tsne needs at least 5 embeddings")
    x = np.stack([e.values for e in embeddings])
    y, kl_history = tsne_coordinates(x, config)
    points = tuple(
        ProjectedPoint(nodule_id=e.nodule_id, x=float(y[i, 0]), y=float(y[i, 1]))
        for i, e in enumerate(embeddings)
    )
    return TsneResult(points=points, kl_history=readonly(kl_history))


def color_by_malignancy(
    points: Sequence[ProjectedPoint],
    dataset: Dataset | Sequence[NoduleRecord] | Mapping[str, NoduleRecord],
) -> tuple[ProjectedPoint, ...]:
    """Attach each point's binary malignancy class from its dataset record."""
    if isinstance(dataset, Dataset):
        records = {r.nodule_id: r for r in dataset.records}
    elif isinstance(dataset, Mapping):
        records = dict(dataset)
    else:
        records = {r.nodule_id: r for r in dataset}
    out = []
    for point in points:
        record = records.get(point.nodule_id)
        if record is None:
            raise JoinError(f"projected point {point.nodule_id!r} has no dataset record")
        out.append(
            ProjectedPoint(
                nodule_id=point.nodule_id,
                x=point.x,
                y=point.y,
                malignancy=record.malignancy,
            )
        )
    return tuple(out)
