"""Dissent scoring, cross-validated retrieval evaluation and report assembly.

A dissent score is an RMSE over the five normalized rating components.
For a reader it is measured against the consensus of the *other* readers
of the same nodule; for an algorithm against the consensus of *all*
readers. The report pools dissent samples for the random baseline, the
readers themselves and the naive top-k retrieval predictor under
scan-grouped five-fold cross-validation, adds per-component RMSE/STD on
the raw 1..5 scale, binary malignancy retrieval precision, and a
log-normal fit of each method's dissent distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from ._util import derived_seed
from .data import (
    CHARACTERISTICS,
    Dataset,
    FoldAssignment,
    NoduleRecord,
    RatingVector,
    SCALE_NORMALIZED,
    SCALE_RAW,
    assign_folds,
    consensus,
    normalize_rating,
)
from .errors import ArgumentError, DomainError, ProtocolError
from .head import Embedding, HeadConfig, HeadModel, embed_all, train
from .index import METRIC_EUCLIDEAN, RetrievalIndex, build_index, query_top_k

DEFAULT_K_LIST = (1, 2, 4, 8)
DEFAULT_PRECISION_KS = (1, 3, 5, 7, 9, 11, 13, 15)

METHOD_RANDOM = "random"
METHOD_DOCTORS = "doctors"


def cbir_method_name(k: int) -> str:
    return f"cbir_k{k}"


@dataclass(frozen=True)
class DissentSample:
    """One dissent measurement: who disagreed, on which nodule, by how much."""

    subject: str
    nodule_id: str
    score: float


def rating_rmse(a: RatingVector | np.ndarray, b: RatingVector | np.ndarray) -> float:
    """RMSE over the five components between two rating vectors."""
    va = a.values if isinstance(a, RatingVector) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, RatingVector) else np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((va - vb) ** 2)))


def doctor_dissent(
    record: NoduleRecord, doctor_index: int, normalized: bool = True
) -> DissentSample:
    """RMSE between one reader's rating and the consensus of the other readers.

    Scored on the normalized scale by default; ``normalized=False`` keeps
    the raw scale (the two differ exactly by the factor 4 of the affine
    scale map).
    """
    n = len(record.annotations)
    if n < 2:
        raise ArgumentError(
            f"nodule {record.nodule_id!r} needs at least 2 annotations for a dissent score"
        )
    if not 0 <= doctor_index < n:
        raise ArgumentError(f"doctor_index {doctor_index} outside [0, {n})")
    own = record.annotations[doctor_index]
    others = consensus(
        [a for i, a in enumerate(record.annotations) if i != doctor_index]
    )
    if normalized:
        own = normalize_rating(own)
        others = normalize_rating(others)
    return DissentSample(
        subject=f"doctor-{doctor_index}",
        nodule_id=record.nodule_id,
        score=rating_rmse(own, others),
    )


def algorithm_dissent(
    prediction: RatingVector, record: NoduleRecord, subject: str = "algorithm"
) -> DissentSample:
    """RMSE between a normalized prediction and the consensus of all readers."""
    if prediction.scale != SCALE_NORMALIZED:
        raise ArgumentError("algorithm_dissent expects a normalized-scale prediction")
    target = record.consensus(normalized=True)
    return DissentSample(
        subject=subject,
        nodule_id=record.nodule_id,
        score=rating_rmse(prediction, target),
    )


def random_baseline_prediction(dataset: Dataset, rng: np.random.Generator) -> RatingVector:
    """Uniformly pick one individual annotation from the whole dataset.

    The pick ignores the query entirely; it is the floor any useful
    predictor has to beat.
    """
    pool = [a for record in dataset.records for a in record.annotations]
    return pool[int(rng.integers(len(pool)))]


@dataclass(frozen=True)
class LogNormalFit:
    """Maximum-likelihood log-normal parameters of a positive sample."""

    mu: float
    sigma: float
    n_samples: int

    def pdf(self, x: np.ndarray | float) -> np.ndarray:
        if self.sigma == 0.0:
            raise DomainError("degenerate fit (sigma 0) has no density")
        arr = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(arr)
        pos = arr > 0
        z = (np.log(arr[pos]) - self.mu) / self.sigma
        out[pos] = np.exp(-0.5 * z * z) / (arr[pos] * self.sigma * math.sqrt(2 * math.pi))
        return out

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(arr)
        pos = arr > 0
        if self.sigma == 0.0:
            out[pos] = (np.log(arr[pos]) >= self.mu).astype(np.float64)
            return out
        z = (np.log(arr[pos]) - self.mu) / self.sigma
        out[pos] = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2)))
        return out


def lognormal_mle_fit(samples: Sequence[float] | np.ndarray) -> LogNormalFit:
    """MLE fit: mu is the mean of the log samples, sigma their population std."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size < 2:
        raise ArgumentError("log-normal fit needs at least 2 samples")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise DomainError("log-normal fit requires strictly positive finite samples")
    logs = np.log(arr)
    mu = float(logs.mean())
    sigma = float(np.sqrt(np.mean((logs - mu) ** 2)))
    return LogNormalFit(mu=mu, sigma=sigma, n_samples=int(arr.size))


@dataclass(frozen=True)
class ComponentErrorStats:
    """Per-characteristic RMSE and population STD of signed errors (raw scale)."""

    rmse: tuple[float, ...]
    std: tuple[float, ...]

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {
            name: {"rmse": self.rmse[i], "std": self.std[i]}
            for i, name in enumerate(CHARACTERISTICS)
        }


def _component_error_stats(errors: np.ndarray) -> ComponentErrorStats:
    rmse = np.sqrt(np.mean(errors**2, axis=0))
    std = errors.std(axis=0)
    return ComponentErrorStats(rmse=tuple(map(float, rmse)), std=tuple(map(float, std)))


def rating_rmse_std_per_component(
    predictions: Sequence[RatingVector], records: Sequence[NoduleRecord]
) -> ComponentErrorStats:
    """Per-component error statistics of raw predictions against record consensus."""
    if len(predictions) == 0:
        raise ArgumentError("need at least one prediction")
    if len(predictions) != len(records):
        raise ArgumentError("predictions and records must align one to one")
    if any(p.scale != SCALE_RAW for p in predictions):
        raise ArgumentError("predictions must be on the raw 1..5 scale")
    errors = np.stack(
        [p.values - r.consensus().values for p, r in zip(predictions, records)]
    )
    return _component_error_stats(errors)


def retrieval_precision(
    index: RetrievalIndex,
    queries: Sequence[tuple[Embedding, str]],
    k: int,
    exclude_self: bool = True,
) -> float:
    """Fraction of retrieved entries sharing the query's malignancy class.

    Micro-averaged: one ratio over all retrieved items of all queries.
    """
    matches, total = 0, 0
    for emb, query_class in queries:
        exclude = {emb.nodule_id} if exclude_self else frozenset()
        result = query_top_k(index, emb, k, exclude=exclude)
        for nid in result.neighbor_ids:
            matches += index.entry(nid).malignancy == query_class
            total += 1
    if total == 0:
        raise ArgumentError("no items retrieved; cannot compute a precision")
    return matches / total


def mean_precision_over_ks(
    index: RetrievalIndex,
    queries: Sequence[tuple[Embedding, str]],
    ks: Sequence[int] = DEFAULT_PRECISION_KS,
    exclude_self: bool = True,
) -> float:
    """Arithmetic mean of :func:`retrieval_precision` over the listed k values."""
    if len(ks) == 0:
        raise ArgumentError("ks must not be empty")
    return float(
        np.mean([retrieval_precision(index, queries, k, exclude_self) for k in ks])
    )


@dataclass(frozen=True, eq=False)
class CrossValidationResult:
    """Everything the five-fold protocol produced, pooled over folds."""

    k_list: tuple[int, ...]
    precision_ks: tuple[int, ...]
    dissent_by_k: Mapping[int, tuple[DissentSample, ...]]
    predictions_by_k: Mapping[int, tuple[tuple[str, RatingVector], ...]]
    precision_counts: Mapping[int, tuple[int, int]]
    fold_assignment: FoldAssignment
    train_seeds: tuple[int, ...]
    fold_final_losses: tuple[float, ...]

    def precision(self, k: int) -> float:
        matches, total = self.precision_counts[k]
        if total == 0:
            raise ArgumentError(f"no items retrieved at k={k}")
        return matches / total


def run_cross_validation(
    dataset: Dataset,
    head_config: HeadConfig,
    folds: FoldAssignment,
    k_list: Sequence[int] = DEFAULT_K_LIST,
    precision_ks: Sequence[int] = (),
    metric: str = METRIC_EUCLIDEAN,
    pretrained: HeadModel | None = None,
    train_seeds: Sequence[int] | None = None,
) -> CrossValidationResult:
    """Train-embed-query per fold and pool the naive predictor's outcomes.

    For every fold the head is trained on the other folds only (unless a
    pretrained model is supplied), the index is built from training-fold
    embeddings only and every test nodule is queried against it. Samples
    are pooled in fold order, then dataset order, so the result is
    deterministic.
    """
    if any(k < 1 for k in k_list) or len(k_list) == 0:
        raise ArgumentError("k_list must hold positive integers")
    if train_seeds is None:
        train_seeds = [
            derived_seed(head_config.seed, 1, fold) for fold in range(folds.n_folds)
        ]
    if len(train_seeds) != folds.n_folds:
        raise ArgumentError("need one training seed per fold")

    ks_needed = sorted(set(k_list) | set(precision_ks))
    k_max = ks_needed[-1]
    dissent_by_k: dict[int, list[DissentSample]] = {k: [] for k in k_list}
    predictions_by_k: dict[int, list[tuple[str, RatingVector]]] = {k: [] for k in k_list}
    precision_counts = {k: [0, 0] for k in precision_ks}
    fold_losses = []

    for fold in range(folds.n_folds):
        test_records = [r for r in dataset.records if folds.fold_of[r.nodule_id] == fold]
        train_records = [r for r in dataset.records if folds.fold_of[r.nodule_id] != fold]
        if not test_records:
            raise ProtocolError(f"fold {fold} has no test nodules")
        if not train_records:
            raise ProtocolError(f"fold {fold} has no training nodules")
        train_ds = Dataset(tuple(train_records), dataset.feature_dim, dataset.provenance)
        test_ds = Dataset(tuple(test_records), dataset.feature_dim, dataset.provenance)

        if pretrained is None:
            fold_config = replace(head_config, seed=train_seeds[fold])
            model, report = train(train_ds, fold_config)
            fold_losses.append(report.final_loss)
        else:
            model = pretrained
            fold_losses.append(math.nan)

        index = build_index(embed_all(model, train_ds), dataset, metric=metric)
        test_embeddings = embed_all(model, test_ds)

        for record, emb in zip(test_records, test_embeddings):
            # One exact query at the largest k serves every smaller k: the
            # ranking is a full sort, so top-k' is a prefix of top-k.
            result = query_top_k(index, emb, k_max)
            neighbor_consensus = np.stack(
                [index.entry(nid).consensus.values for nid in result.neighbor_ids]
            )
            for k in k_list:
                take = min(k, len(result.neighbors))
                prediction = RatingVector(
                    neighbor_consensus[:take].mean(axis=0), SCALE_RAW
                )
                predictions_by_k[k].append((record.nodule_id, prediction))
                dissent_by_k[k].append(
                    algorithm_dissent(
                        normalize_rating(prediction), record, subject=cbir_method_name(k)
                    )
                )
            query_class = record.malignancy
            for k in precision_ks:
                take = min(k, len(result.neighbors))
                hits = sum(
                    index.entry(nid).malignancy == query_class
                    for nid in result.neighbor_ids[:take]
                )
                precision_counts[k][0] += hits
                precision_counts[k][1] += take

    return CrossValidationResult(
        k_list=tuple(k_list),
        precision_ks=tuple(precision_ks),
        dissent_by_k={k: tuple(v) for k, v in dissent_by_k.items()},
        predictions_by_k={k: tuple(v) for k, v in predictions_by_k.items()},
        precision_counts={k: (m, t) for k, (m, t) in precision_counts.items()},
        fold_assignment=folds,
        train_seeds=tuple(train_seeds),
        fold_final_losses=tuple(fold_losses),
    )


def cross_validated_cbir_dissent(
    dataset: Dataset,
    head_config: HeadConfig,
    folds: FoldAssignment,
    k_list: Sequence[int] = DEFAULT_K_LIST,
    metric: str = METRIC_EUCLIDEAN,
) -> Mapping[int, tuple[DissentSample, ...]]:
    """Pooled dissent samples of the naive top-k predictor, per k."""
    cv = run_cross_validation(dataset, head_config, folds, k_list=k_list, metric=metric)
    return cv.dissent_by_k


@dataclass(frozen=True)
class MethodStats:
    """Table row for one method."""

    dissent_mean: float
    dissent_std: float
    n_samples: int
    rating_rmse: tuple[float, ...]
    rating_std: tuple[float, ...]
    lognormal: LogNormalFit | None
    precision: float | None

    def as_dict(self) -> dict:
        return {
            "dissent_mean": self.dissent_mean,
            "dissent_std": self.dissent_std,
            "n_samples": self.n_samples,
            "rating_rmse": dict(zip(CHARACTERISTICS, self.rating_rmse)),
            "rating_std": dict(zip(CHARACTERISTICS, self.rating_std)),
            "lognormal": None
            if self.lognormal is None
            else {
                "mu": self.lognormal.mu,
                "sigma": self.lognormal.sigma,
                "n_samples": self.lognormal.n_samples,
            },
            "precision": self.precision,
        }


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    """All quantitative results of one evaluation run."""

    methods: Mapping[str, MethodStats]
    dissent_samples: Mapping[str, tuple[DissentSample, ...]]
    precision_by_k: Mapping[int, float]
    mean_precision: float
    precision_ks: tuple[int, ...]
    k_list: tuple[int, ...]
    n_folds: int
    metric: str
    seed: int
    seeds: Mapping[str, int]
    fold_assignment: FoldAssignment
    dataset_size: int
    feature_dim: int
    provenance: str

    def as_dict(self) -> dict:
        return {
            "methods": {name: stats.as_dict() for name, stats in self.methods.items()},
            "precision_by_k": {str(k): v for k, v in self.precision_by_k.items()},
            "mean_precision": self.mean_precision,
            "precision_ks": list(self.precision_ks),
            "k_list": list(self.k_list),
            "n_folds": self.n_folds,
            "metric": self.metric,
            "seed": self.seed,
            "seeds": dict(self.seeds),
            "fold_assignment": dict(sorted(self.fold_assignment.fold_of.items())),
            "dataset": {
                "n_records": self.dataset_size,
                "feature_dim": self.feature_dim,
                "provenance": self.provenance,
            },
        }


def _dissent_stats(
    samples: Sequence[DissentSample],
    errors: np.ndarray,
    precision: float | None,
) -> MethodStats:
    scores = np.array([s.score for s in samples])
    positive = scores[scores > 0]
    fit = lognormal_mle_fit(positive) if positive.size >= 2 else None
    comp = _component_error_stats(errors)
    return MethodStats(
        dissent_mean=float(scores.mean()),
        dissent_std=float(scores.std()),
        n_samples=int(scores.size),
        rating_rmse=comp.rmse,
        rating_std=comp.std,
        lognormal=fit,
        precision=precision,
    )


def build_report(
    dataset: Dataset,
    head_config: HeadConfig | None = None,
    *,
    n_folds: int = 5,
    k_list: Sequence[int] = DEFAULT_K_LIST,
    precision_ks: Sequence[int] = DEFAULT_PRECISION_KS,
    seed: int = 42,
    metric: str = METRIC_EUCLIDEAN,
    pretrained: HeadModel | None = None,
) -> EvaluationReport:
    """Run the full protocol and assemble the comparison table.

    Every random choice (fold shuffle, per-fold training, the random
    baseline's picks) uses a seed derived from ``seed``, so two calls with
    identical inputs produce identical reports.
    """
    if head_config is None:
        head_config = HeadConfig(input_dim=dataset.feature_dim)
    seeds = {
        "root": seed,
        "fold_assignment": derived_seed(seed, 0),
        "random_baseline": derived_seed(seed, 2),
    }
    train_seeds = [derived_seed(seed, 1, fold) for fold in range(n_folds)]
    for fold, s in enumerate(train_seeds):
        seeds[f"train_fold_{fold}"] = s

    folds = assign_folds(dataset, n_folds, seeds["fold_assignment"])
    # Precision is reported at every k of the dissent table as well as on
    # the separate grid used for the mean-precision summary.
    precision_ks = tuple(precision_ks)
    cv = run_cross_validation(
        dataset,
        head_config,
        folds,
        k_list=k_list,
        precision_ks=sorted(set(k_list) | set(precision_ks)),
        metric=metric,
        pretrained=pretrained,
        train_seeds=train_seeds,
    )

    methods: dict[str, MethodStats] = {}
    dissent_samples: dict[str, tuple[DissentSample, ...]] = {}

    # Random baseline: one input-independent pick per nodule.
    rng = np.random.default_rng(seeds["random_baseline"])
    random_samples, random_errors = [], []
    for record in dataset.records:
        pick = random_baseline_prediction(dataset, rng)
        random_samples.append(
            algorithm_dissent(normalize_rating(pick), record, subject=METHOD_RANDOM)
        )
        random_errors.append(pick.values - record.consensus().values)
    methods[METHOD_RANDOM] = _dissent_stats(
        random_samples, np.stack(random_errors), precision=None
    )
    dissent_samples[METHOD_RANDOM] = tuple(random_samples)

    # Readers: every reader of every nodule against the others' consensus,
    # on both scales (dissent normalized, per-component errors raw).
    doctor_samples, doctor_errors = [], []
    for record in dataset.records:
        for i in range(len(record.annotations)):
            doctor_samples.append(doctor_dissent(record, i))
            others = consensus(
                [a for j, a in enumerate(record.annotations) if j != i]
            )
            doctor_errors.append(record.annotations[i].values - others.values)
    methods[METHOD_DOCTORS] = _dissent_stats(
        doctor_samples, np.stack(doctor_errors), precision=None
    )
    dissent_samples[METHOD_DOCTORS] = tuple(doctor_samples)

    records_by_id = {r.nodule_id: r for r in dataset.records}
    precision_by_k = {k: cv.precision(k) for k in cv.precision_ks}
    for k in cv.k_list:
        samples = cv.dissent_by_k[k]
        errors = np.stack(
            [
                pred.values - records_by_id[nid].consensus().values
                for nid, pred in cv.predictions_by_k[k]
            ]
        )
        methods[cbir_method_name(k)] = _dissent_stats(
            samples, errors, precision=precision_by_k.get(k)
        )
        dissent_samples[cbir_method_name(k)] = samples

    if precision_ks:
        mean_precision = float(np.mean([precision_by_k[k] for k in precision_ks]))
    else:
        mean_precision = float("nan")
    return EvaluationReport(
        methods=methods,
        dissent_samples=dissent_samples,
        precision_by_k=precision_by_k,
        mean_precision=mean_precision,
        precision_ks=precision_ks,
        k_list=cv.k_list,
        n_folds=n_folds,
        metric=metric,
        seed=seed,
        seeds=seeds,
        fold_assignment=folds,
        dataset_size=len(dataset),
        feature_dim=dataset.feature_dim,
        provenance=dataset.provenance,
    )
