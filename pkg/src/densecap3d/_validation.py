"""Input validation helpers shared by the estimators and functional API."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

PROB_ATOL = 1e-6


def check_boxes(boxes, *, name="boxes", allow_empty=True):
    """Return ``boxes`` as a float64 (n, 6) array of ``[cx, cy, cz, sx, sy, sz]``.

    Raises ValueError when sizes are not strictly positive or values are
    not finite.
    """
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.size == 0 and allow_empty:
        return np.zeros((0, 6), dtype=np.float64)
    arr = check_array(arr, ensure_2d=True, dtype=np.float64,
                      input_name=name, ensure_min_samples=0 if allow_empty else 1)
    if arr.shape[1] != 6:
        raise ValueError(f"{name} must have 6 columns [cx, cy, cz, sx, sy, sz], got {arr.shape[1]}")
    if np.any(arr[:, 3:] <= 0):
        raise ValueError(f"{name} sizes must be strictly positive")
    return arr


def check_points(points, *, name="points", min_points=1):
    arr = check_array(np.asarray(points, dtype=np.float64), ensure_2d=True,
                      dtype=np.float64, input_name=name,
                      ensure_min_samples=min_points)
    if arr.shape[1] != 3:
        raise ValueError(f"{name} must be (n, 3), got {arr.shape}")
    return arr


def check_probs(probs, *, name="class_probs", atol=PROB_ATOL):
    arr = np.asarray(probs, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    arr = check_array(arr, ensure_2d=True, dtype=np.float64, input_name=name)
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    sums = arr.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if bad.size:
        raise ValueError(f"{name} row {int(bad[0])} sums to {sums[bad[0]]!r}, expected 1")
    return arr
