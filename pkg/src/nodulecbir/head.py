"""Trainable rating-regression head and embedding extraction.

Three fully connected layers map a backbone feature vector to the five
normalized characteristic scores. The ten activations of the middle
layer are the nodule's semantic embedding. Training minimizes MSE
against the normalized consensus rating with hand-derived gradients and
an adaptive-moment optimizer, and is bit-reproducible per seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import readonly
from .data import Dataset, N_CHARACTERISTICS, RatingVector, SCALE_NORMALIZED, normalize_rating
from .errors import ArgumentError, DivergenceError, DomainError, ShapeError

EMBED_DIM = 10
OUTPUT_DIM = N_CHARACTERISTICS

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class HeadConfig:
    """Dimensions and training hyperparameters of the regression head."""

    input_dim: int
    hidden_dim: int = 64
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 42
    # The embedding is taken after the middle layer's relu by default,
    # which makes embeddings non-negative; set False for pre-activation.
    embed_post_activation: bool = True

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ArgumentError("input_dim and hidden_dim must be at least 1")
        if self.epochs < 0:
            raise ArgumentError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ArgumentError("learning_rate must be non-negative")

    @property
    def embed_dim(self) -> int:
        return EMBED_DIM

    @property
    def output_dim(self) -> int:
        return OUTPUT_DIM


def _checked(arr: np.ndarray, shape: tuple[int, ...], name: str) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    if out.shape != shape:
        raise ShapeError(f"{name} must have shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{name} contains non-finite values")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class HeadModel:
    """Weights and biases of the three layers plus the config they came from."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    config: HeadConfig

    def __post_init__(self) -> None:
        d, h = self.config.input_dim, self.config.hidden_dim
        for name, shape in (
            ("w1", (h, d)),
            ("b1", (h,)),
            ("w2", (EMBED_DIM, h)),
            ("b2", (EMBED_DIM,)),
            ("w3", (OUTPUT_DIM, EMBED_DIM)),
            ("b3", (OUTPUT_DIM,)),
        ):
            object.__setattr__(self, name, _checked(getattr(self, name), shape, name))

    def parameters(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in _PARAM_NAMES)


@dataclass(frozen=True, eq=False)
class Embedding:
    """Ten-dimensional semantic-space point of one nodule."""

    nodule_id: str
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _checked(self.values, (EMBED_DIM,), "embedding"))


@dataclass(frozen=True, eq=False)
class ForwardResult:
    """Embedding plus the linear and the [0,1]-clamped prediction."""

    embedding: np.ndarray
    prediction: np.ndarray
    prediction_linear: np.ndarray


@dataclass(frozen=True)
class TrainReport:
    epoch_losses: tuple[float, ...]
    final_loss: float
    epochs_run: int
    seed: int


@dataclass(frozen=True, eq=False)
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray


def _init_params(config: HeadConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer, in a fixed draw order."""
    params = []
    for out_dim, in_dim in (
        (config.hidden_dim, config.input_dim),
        (EMBED_DIM, config.hidden_dim),
        (OUTPUT_DIM, EMBED_DIM),
    ):
        bound = 1.0 / np.sqrt(in_dim)
        params.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
        params.append(rng.uniform(-bound, bound, size=out_dim))
    return params


def init_model(config: HeadConfig) -> HeadModel:
    """Seeded model with no training steps applied."""
    params = _init_params(config, np.random.default_rng(config.seed))
    return HeadModel(*params, config=config)


def _forward_arrays(params: Sequence[np.ndarray], x: np.ndarray):
    w1, b1, w2, b2, w3, b3 = params
    z1 = x @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.T + b2
    e = np.maximum(z2, 0.0)
    y = e @ w3.T + b3
    return z1, a1, z2, e, y


def forward(model: HeadModel, feature: np.ndarray) -> ForwardResult:
    """Run one feature vector through the head.

    Returns the embedding (post- or pre-activation per the config), the
    raw linear prediction and the prediction clamped to [0, 1].
    """
    x = np.asarray(feature, dtype=np.float64)
    if x.shape != (model.config.input_dim,):
        raise ShapeError(
            f"feature must have shape ({model.config.input_dim},), got {x.shape}"
        )
    _, _, z2, e, y = _forward_arrays(model.parameters(), x[np.newaxis, :])
    embedding = e[0] if model.config.embed_post_activation else z2[0]
    return ForwardResult(
        embedding=readonly(embedding),
        prediction=readonly(np.clip(y[0], 0.0, 1.0)),
        prediction_linear=readonly(y[0]),
    )


def mse_loss(prediction: np.ndarray | RatingVector, target: np.ndarray | RatingVector) -> float:
    """Mean over the five components of the squared difference."""
    if isinstance(target, RatingVector) and target.scale != SCALE_NORMALIZED:
        raise ArgumentError("mse_loss target must be on the normalized scale")
    p = prediction.values if isinstance(prediction, RatingVector) else np.asarray(prediction, float)
    t = target.values if isinstance(target, RatingVector) else np.asarray(target, float)
    if p.shape != (OUTPUT_DIM,) or t.shape != (OUTPUT_DIM,):
        raise ShapeError(f"prediction and target must both have {OUTPUT_DIM} components")
    return float(np.mean((p - t) ** 2))


def _batch_gradients(
    params: Sequence[np.ndarray], x: np.ndarray, t: np.ndarray
) -> tuple[list[np.ndarray], float]:
    """Exact gradient of the mean batch MSE; relu subgradient at 0 is 0."""
    w1, b1, w2, b2, w3, b3 = params
    z1, a1, z2, e, y = _forward_arrays(params, x)
    diff = y - t
    loss = float(np.mean(diff**2))
    # d(mean over batch and components of diff^2) / dy
    dy = (2.0 / diff.size) * diff
    dw3 = dy.T @ e
    db3 = dy.sum(axis=0)
    de = dy @ w3
    dz2 = de * (z2 > 0.0)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2
    dz1 = da1 * (z1 > 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return [dw1, db1, dw2, db2, dw3, db3], loss


def gradients(model: HeadModel, features: np.ndarray, targets: np.ndarray) -> Gradients:
    """Gradient of the mean batch MSE with respect to every parameter."""
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("gradients needs a non-empty batch of features")
    if x.shape[1] != model.config.input_dim or t.shape != (x.shape[0], OUTPUT_DIM):
        raise ShapeError(
            f"batch shapes {x.shape}/{t.shape} do not match the model "
            f"({model.config.input_dim} inputs, {OUTPUT_DIM} outputs)"
        )
    grads, _ = _batch_gradients(model.parameters(), x, t)
    return Gradients(*(readonly(g) for g in grads))


def training_targets(dataset: Dataset) -> np.ndarray:
    """(n, 5) matrix of normalized consensus ratings in record order."""
    return np.stack(
        [normalize_rating(r.consensus()).values for r in dataset.records]
    )


def train(dataset: Dataset, config: HeadConfig) -> tuple[HeadModel, TrainReport]:
    """Fit the head on normalized consensus targets with Adam-style updates.

    Parameter initialization, the per-epoch shuffle and the serial batch
    order all come from one generator seeded by ``config.seed``, so two
    runs with identical inputs produce bit-identical models.
    """
    if config.input_dim != dataset.feature_dim:
        raise ShapeError(
            f"config input_dim {config.input_dim} does not match dataset "
            f"feature_dim {dataset.feature_dim}"
        )
    x_all = dataset.features_matrix()
    t_all = training_targets(dataset)
    n = x_all.shape[0]

    rng = np.random.default_rng(config.seed)
    params = _init_params(config, rng)
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    step = 0
    lr = config.learning_rate

    epoch_losses: list[float] = []
    # Divergence is detected by the explicit finiteness check below, so the
    # transient IEEE warnings a diverged batch emits are silenced here.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            loss_sum = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                grads, loss = _batch_gradients(params, x_all[idx], t_all[idx])
                loss_sum += loss * idx.size
                step += 1
                for i, g in enumerate(grads):
                    first_moment[i] = ADAM_BETA1 * first_moment[i] + (1 - ADAM_BETA1) * g
                    second_moment[i] = (
                        ADAM_BETA2 * second_moment[i] + (1 - ADAM_BETA2) * g * g
                    )
                    m_hat = first_moment[i] / (1 - ADAM_BETA1**step)
                    v_hat = second_moment[i] / (1 - ADAM_BETA2**step)
                    params[i] = params[i] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            epoch_loss = loss_sum / n
            if not np.isfinite(epoch_loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
            epoch_losses.append(epoch_loss)

    if epoch_losses:
        final_loss = epoch_losses[-1]
    else:
        _, final_loss = _batch_gradients(params, x_all, t_all)
    model = HeadModel(*params, config=config)
    report = TrainReport(
        epoch_losses=tuple(epoch_losses),
        final_loss=final_loss,
        epochs_run=config.epochs,
        seed=config.seed,
    )
    return model, report


def embed_all(model: HeadModel, dataset: Dataset) -> list[Embedding]:
    """One embedding per nodule, in dataset record order."""
    x = dataset.features_matrix()
    if x.shape[1] != model.config.input_dim:
        raise ShapeError(
            f"dataset feature_dim {x.shape[1]} does not match model "
            f"input_dim {model.config.input_dim}"
        )
    _, _, z2, e, _ = _forward_arrays(model.parameters(), x)
    values = e if model.config.embed_post_activation else z2
    return [
        Embedding(record.nodule_id, values[i])
        for i, record in enumerate(dataset.records)
    ]
