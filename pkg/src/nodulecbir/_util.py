"""Small numeric helpers shared by several modules."""

from __future__ import annotations

import numpy as np


def pairwise_sq_dists(points: np.ndarray) -> np.ndarray:
    """Exact squared euclidean distances between all rows of ``points``.

    Computed row by row from explicit differences (not the Gram-matrix
    shortcut) so duplicated rows give exactly zero and near-duplicates
    keep full precision.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        diff = x - x[i]
        out[i] = np.einsum("ij,ij->i", diff, diff)
    return out


def derived_seed(root: int, *key: int) -> int:
    """Deterministically derive an independent child seed from a root seed."""
    seq = np.random.SeedSequence(root, spawn_key=tuple(key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return a float64 copy with the writeable flag cleared."""
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out
