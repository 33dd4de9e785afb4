"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np

from .core import GroundMotionRecord


def check_motions(X, min_length=3) -> np.ndarray:
    """Ground accelerations as a float array of shape ``(n_seq, T)``.

    Accepts a 2-D array, a single 1-D series, or a list of
    :class:`GroundMotionRecord` of equal length.
    """
    if isinstance(X, GroundMotionRecord):
        X = [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], GroundMotionRecord):
        lengths = {r.n for r in X}
        if len(lengths) != 1:
            raise ValueError("ground motions must share their length to be batched")
        X = np.stack([r.samples for r in X])
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected ground motions of shape (n_seq, T), got {X.shape}")
    if X.shape[0] == 0 or X.shape[1] < min_length:
        raise ValueError(f"need at least one sequence of length >= {min_length}, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("ground motions contain non-finite values")
    return X


def check_responses(Y, X: np.ndarray, n_dof: int) -> np.ndarray:
    """Responses of shape ``(n_seq, T, 3 n_dof + n_force)`` aligned with ``X``."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 2 and X.shape[0] == 1:
        Y = Y[None]
    if Y.ndim != 3 or Y.shape[:2] != X.shape:
        raise ValueError(f"responses of shape {Y.shape} do not align with motions {X.shape}")
    if Y.shape[2] < 3 * n_dof:
        raise ValueError(f"responses need at least {3 * n_dof} channels for {n_dof} DOF, "
                         f"got {Y.shape[2]}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("responses contain non-finite values")
    return Y


def check_positive(name, value, integer=False):
    if integer and (int(value) != value):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_choice(name, value, options):
    if value not in options:
        raise ValueError(f"{name} must be one of {sorted(options)}, got {value!r}")
    return value
