"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ShapeError
from .volume import Volume4D


def check_volume(X, voxel_size=None, name: str = "X") -> Volume4D:
    """Coerce ``X`` to a :class:`Volume4D` with finite samples.

    ``X`` may already be a volume or any 3D/4D array-like indexed
    ``[x, y, z(, measurement)]``.
    """
    if isinstance(X, Volume4D):
        v = X
    else:
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim not in (3, 4):
            raise ShapeError(f"{name} must be 3D or 4D, got {arr.ndim}D with shape {arr.shape}")
        v = Volume4D(arr, voxel_size if voxel_size is not None else (1.0, 1.0, 1.0))
    if not np.all(np.isfinite(v.data)):
        raise ValueError(f"{name} contains NaN or infinity")
    return v


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_positions(X, n_cols: int = 3) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != n_cols:
        raise ShapeError(f"expected positions with shape (n, {n_cols}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("positions contain NaN or infinity")
    return arr


def same_kind(template, v: Volume4D):
    """Return ``v`` shaped like the caller's input: a volume or a bare array."""
    if isinstance(template, Volume4D):
        return v
    arr = np.asarray(template)
    return v.data[..., 0] if arr.ndim == 3 else v.data
