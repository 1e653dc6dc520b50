import numpy as np
import pytest

from nodulecbir.data import RatingVector, SCALE_NORMALIZED, SCALE_RAW, generate_synthetic


@pytest.fixture(scope="session")
def small_dataset():
    """64 nodules, 16-dim features, moderate reader noise."""
    return generate_synthetic(64, 16, noise_sigma=0.4, seed=101)


@pytest.fixture(scope="session")
def clean_dataset():
    """Noise-free readers: every annotation of a nodule is identical."""
    return generate_synthetic(48, 16, noise_sigma=0.0, seed=102)


def raw(*values):
    return RatingVector(np.array(values, dtype=float), SCALE_RAW)


def normalized(*values):
    return RatingVector(np.array(values, dtype=float), SCALE_NORMALIZED)
