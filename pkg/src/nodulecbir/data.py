"""Annotated-nodule data model, rating arithmetic, folds and synthetic data.

Each nodule carries a handful of reader annotations; an annotation scores
five characteristics on the 1..5 scale. Downstream code works either on
that raw scale or on the unit interval, so every rating vector carries an
explicit scale tag and the two scales never mix silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from ._util import readonly
from .errors import (
    ArgumentError,
    DomainError,
    EmptyDatasetError,
    ShapeError,
    UnknownIdError,
)

CHARACTERISTICS = ("subtlety", "sphericity", "margin", "lobulation", "malignancy")
N_CHARACTERISTICS = len(CHARACTERISTICS)

RAW_LOW = 1.0
RAW_HIGH = 5.0

SCALE_RAW = "raw"
SCALE_NORMALIZED = "normalized"

BENIGN = "benign"
MALIGNANT = "malignant"

# A nodule counts as malignant only when the mean raw malignancy score is
# strictly above this value; a mean of exactly 3.0 is benign.
MALIGNANCY_THRESHOLD = 3.0

PROVENANCE_REAL = "real"
PROVENANCE_SYNTHETIC = "synthetic"

# Records kept by dataset filtering carry between 3 and 4 annotations.
MIN_ANNOTATIONS = 3
MAX_ANNOTATIONS = 4

_SCALE_RANGES = {SCALE_RAW: (RAW_LOW, RAW_HIGH), SCALE_NORMALIZED: (0.0, 1.0)}


def _rating_array(values: object) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != N_CHARACTERISTICS:
        raise ShapeError(
            f"rating vector must hold {N_CHARACTERISTICS} components, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise DomainError("rating vector contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RatingVector:
    """Scores for the five characteristics, tagged with the scale they live on."""

    values: np.ndarray
    scale: str = SCALE_RAW

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _rating_array(self.values))
        if self.scale not in _SCALE_RANGES:
            raise ArgumentError(f"unknown rating scale {self.scale!r}")
        low, high = _SCALE_RANGES[self.scale]
        for name, value in zip(CHARACTERISTICS, self.values):
            if not low <= value <= high:
                raise DomainError(
                    f"{name} rating {value!r} outside {self.scale} range [{low:g}, {high:g}]"
                )

    @property
    def subtlety(self) -> float:
        return float(self.values[0])

    @property
    def sphericity(self) -> float:
        return float(self.values[1])

    @property
    def margin(self) -> float:
        return float(self.values[2])

    @property
    def lobulation(self) -> float:
        return float(self.values[3])

    @property
    def malignancy(self) -> float:
        return float(self.values[4])

    def component(self, name: str) -> float:
        try:
            return float(self.values[CHARACTERISTICS.index(name)])
        except ValueError:
            raise ArgumentError(f"unknown characteristic {name!r}") from None


def normalize_rating(rating: RatingVector) -> RatingVector:
    """Map a raw-scale rating to the unit interval, component-wise (x - 1) / 4."""
    if rating.scale != SCALE_RAW:
        raise ArgumentError("normalize_rating expects a raw-scale rating")
    return RatingVector((rating.values - RAW_LOW) / (RAW_HIGH - RAW_LOW), SCALE_NORMALIZED)


def denormalize_rating(rating: RatingVector) -> RatingVector:
    """Inverse of :func:`normalize_rating`, component-wise 1 + 4x."""
    if rating.scale != SCALE_NORMALIZED:
        raise ArgumentError("denormalize_rating expects a normalized-scale rating")
    return RatingVector(RAW_LOW + (RAW_HIGH - RAW_LOW) * rating.values, SCALE_RAW)


def consensus(ratings: Sequence[RatingVector]) -> RatingVector:
    """Component-wise mean of a non-empty, uniform-scale collection of ratings."""
    if len(ratings) == 0:
        raise ArgumentError("consensus requires at least one rating")
    scales = {r.scale for r in ratings}
    if len(scales) != 1:
        raise ArgumentError(f"consensus requires a uniform scale, got {sorted(scales)}")
    stacked = np.stack([r.values for r in ratings])
    return RatingVector(stacked.mean(axis=0), scales.pop())


def malignancy_class(ratings: Sequence[RatingVector]) -> str:
    """Binary malignancy label from raw annotations: mean malignancy > 3 is malignant."""
    if len(ratings) == 0:
        raise ArgumentError("malignancy_class requires at least one rating")
    if any(r.scale != SCALE_RAW for r in ratings):
        raise ArgumentError("malignancy_class expects raw-scale ratings")
    mean = float(np.mean([r.malignancy for r in ratings]))
    return MALIGNANT if mean > MALIGNANCY_THRESHOLD else BENIGN


@dataclass(frozen=True, eq=False)
class NoduleRecord:
    """One nodule: identity, raw annotations from 1..4 readers, backbone feature.

    ``feature`` may be None for rating-only views (e.g. joining analysis
    output with annotations); a record inside a :class:`Dataset` always
    carries one.
    """

    nodule_id: str
    scan_id: str
    annotations: tuple[RatingVector, ...]
    feature: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if not 1 <= len(self.annotations) <= MAX_ANNOTATIONS:
            raise ArgumentError(
                f"nodule {self.nodule_id!r} needs 1..{MAX_ANNOTATIONS} annotations, "
                f"got {len(self.annotations)}"
            )
        if any(a.scale != SCALE_RAW for a in self.annotations):
            raise ArgumentError(f"nodule {self.nodule_id!r} has non-raw annotations")
        if self.feature is not None:
            arr = np.array(self.feature, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] < 1:
                raise ShapeError(
                    f"feature of nodule {self.nodule_id!r} must be a flat non-empty vector"
                )
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"feature of nodule {self.nodule_id!r} is non-finite")
            arr.flags.writeable = False
            object.__setattr__(self, "feature", arr)

    def consensus(self, normalized: bool = False) -> RatingVector:
        """Mean of this nodule's annotations, optionally mapped to the unit interval."""
        mean = consensus(self.annotations)
        return normalize_rating(mean) if normalized else mean

    @property
    def malignancy(self) -> str:
        return malignancy_class(self.annotations)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Filtered collection of fully featured nodule records."""

    records: tuple[NoduleRecord, ...]
    feature_dim: int
    provenance: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        if len(self.records) == 0:
            raise EmptyDatasetError("dataset holds no records")
        if self.provenance not in (PROVENANCE_REAL, PROVENANCE_SYNTHETIC):
            raise ArgumentError(f"unknown provenance {self.provenance!r}")
        seen: set[str] = set()
        for record in self.records:
            if record.nodule_id in seen:
                raise ArgumentError(f"duplicate nodule id {record.nodule_id!r}")
            seen.add(record.nodule_id)
            if record.feature is None:
                raise ArgumentError(f"nodule {record.nodule_id!r} lacks a feature vector")
            if record.feature.shape[0] != self.feature_dim:
                raise ShapeError(
                    f"nodule {record.nodule_id!r} feature has length "
                    f"{record.feature.shape[0]}, dataset declares {self.feature_dim}"
                )
            if not MIN_ANNOTATIONS <= len(record.annotations) <= MAX_ANNOTATIONS:
                raise ArgumentError(
                    f"nodule {record.nodule_id!r} has {len(record.annotations)} "
                    f"annotations; a dataset record needs {MIN_ANNOTATIONS}..{MAX_ANNOTATIONS}"
                )

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def _by_id(self) -> dict[str, NoduleRecord]:
        return {r.nodule_id: r for r in self.records}

    @property
    def nodule_ids(self) -> tuple[str, ...]:
        return tuple(r.nodule_id for r in self.records)

    @property
    def scan_ids(self) -> tuple[str, ...]:
        """Distinct scan ids in deterministic (sorted) order."""
        return tuple(sorted({r.scan_id for r in self.records}))

    def get(self, nodule_id: str) -> NoduleRecord:
        try:
            return self._by_id[nodule_id]
        except KeyError:
            raise UnknownIdError(f"unknown nodule id {nodule_id!r}") from None

    def features_matrix(self) -> np.ndarray:
        """(n, feature_dim) matrix of backbone features in record order."""
        return np.stack([r.feature for r in self.records])


@dataclass(frozen=True)
class FilterReport:
    kept: int
    dropped: int


def filter_dataset(
    records: Sequence[NoduleRecord],
    provenance: str = PROVENANCE_REAL,
) -> tuple[Dataset, FilterReport]:
    """Keep only records with at least three annotations.

    Returns the resulting dataset together with kept/dropped counts.
    Applying the filter to an already filtered dataset changes nothing.
    """
    kept = [r for r in records if len(r.annotations) >= MIN_ANNOTATIONS]
    dropped = len(records) - len(kept)
    if not kept:
        raise EmptyDatasetError("no record has the minimum number of annotations")
    feature_dim = kept[0].feature.shape[0] if kept[0].feature is not None else 0
    dataset = Dataset(tuple(kept), feature_dim, provenance)
    return dataset, FilterReport(kept=len(kept), dropped=dropped)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Deterministic scan-grouped partition of a dataset into folds."""

    n_folds: int
    fold_of: Mapping[str, int]
    seed: int

    def __post_init__(self) -> None:
        if self.n_folds < 2:
            raise ArgumentError("fold assignment needs at least 2 folds")
        bad = {i for i in self.fold_of.values() if not 0 <= i < self.n_folds}
        if bad:
            raise ArgumentError(f"fold indices {sorted(bad)} outside [0, {self.n_folds})")

    def ids_in_fold(self, fold: int) -> tuple[str, ...]:
        return tuple(sorted(nid for nid, f in self.fold_of.items() if f == fold))


def assign_folds(dataset: Dataset, n_folds: int, seed: int) -> FoldAssignment:
    """Shuffle scans with a seeded generator and deal them round-robin to folds.

    Grouping by scan keeps every nodule of a scan inside one fold, so a
    model is never evaluated on a nodule whose scan it has seen.
    """
    scans = dataset.scan_ids
    if n_folds < 2 or n_folds > len(scans):
        raise ArgumentError(
            f"n_folds must lie in [2, {len(scans)}] for this dataset, got {n_folds}"
        )
    order = np.random.default_rng(seed).permutation(len(scans))
    fold_of_scan = {scans[int(j)]: pos % n_folds for pos, j in enumerate(order)}
    fold_of = {r.nodule_id: fold_of_scan[r.scan_id] for r in dataset.records}
    return FoldAssignment(n_folds=n_folds, fold_of=fold_of, seed=seed)


def generate_synthetic(
    n_nodules: int,
    feature_dim: int,
    doctors_per_nodule: int = 4,
    noise_sigma: float = 0.25,
    seed: int = 42,
) -> Dataset:
    """Draw a synthetic dataset with a recoverable rating signal.

    A latent score vector z is drawn uniformly in [0,1]^5 per nodule. The
    feature is a fixed linear image of z plus small Gaussian jitter, so a
    small network can recover the signal. Every reader reports the latent
    scores on the raw scale with independent Gaussian noise of standard
    deviation ``noise_sigma``, clamped to [1, 5]. Two nodules share each
    scan id so fold assignment has scan-level groups to respect. The
    result is bit-identical for identical arguments.
    """
    if n_nodules < 1:
        raise ArgumentError("n_nodules must be at least 1")
    if feature_dim < N_CHARACTERISTICS:
        raise ArgumentError(f"feature_dim must be at least {N_CHARACTERISTICS}")
    if doctors_per_nodule not in (3, 4):
        raise ArgumentError("doctors_per_nodule must be 3 or 4")
    if noise_sigma < 0:
        raise ArgumentError("noise_sigma must be non-negative")

    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(feature_dim, N_CHARACTERISTICS))
    offset = rng.normal(size=feature_dim)

    records = []
    for i in range(n_nodules):
        latent = rng.uniform(size=N_CHARACTERISTICS)
        feature = mix @ latent + offset + rng.normal(0.0, 0.05, size=feature_dim)
        annotations = []
        for _ in range(doctors_per_nodule):
            noise = rng.normal(0.0, noise_sigma, size=N_CHARACTERISTICS)
            raw = np.clip(RAW_LOW + (RAW_HIGH - RAW_LOW) * latent + noise, RAW_LOW, RAW_HIGH)
            annotations.append(RatingVector(raw, SCALE_RAW))
        records.append(
            NoduleRecord(
                nodule_id=f"syn-{i:06d}",
                scan_id=f"scan-{i // 2:06d}",
                annotations=tuple(annotations),
                feature=readonly(feature),
            )
        )
    return Dataset(tuple(records), feature_dim, PROVENANCE_SYNTHETIC)
