"""Input validation helpers shared across modules.

All helpers convert to ``float64``/``int64`` ndarrays and raise
:class:`~vlcalib.errors.ValidationError` with a message naming the offending
argument, so public entry points can validate in one line.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ValidationError

#: Allowed deviation of an embedding row norm from 1 before a warning is due.
NORM_ATOL = 1e-3

#: Row norms below this are considered zero and cannot be renormalized.
ZERO_NORM_EPS = 1e-6


def as_float_vector(x, name: str, min_size: int = 2) -> np.ndarray:
    """Validate a 1-D finite float vector and return it as float64."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size < min_size:
        raise ValidationError(f"{name} needs at least {min_size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_float_matrix(x, name: str) -> np.ndarray:
    """Validate a 2-D finite float matrix and return it as float64."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_prob_vector(p, name: str = "probs") -> np.ndarray:
    """Validate a probability vector: 1-D, entries >= 0, sums to 1 within 1e-9."""
    arr = as_float_vector(p, name)
    if np.any(arr < 0):
        raise ValidationError(f"{name} contains negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"{name} sums to {total!r}, expected 1 within 1e-9")
    return arr


def check_labels(y, class_count: int, name: str = "labels") -> np.ndarray:
    """Validate integer class labels against ``class_count``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size < 1:
        raise ValidationError(f"{name} is empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValidationError(f"{name} must be integers")
    arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= class_count:
        raise ValidationError(
            f"{name} must lie in [0, {class_count - 1}], got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    return arr


def check_unit_rows(m: np.ndarray, name: str, warn: bool = False) -> np.ndarray:
    """Renormalize rows of ``m`` to unit norm, rejecting zero-norm rows.

    With ``warn=True`` a :class:`UserWarning` is emitted for rows whose norm
    deviates from 1 by more than :data:`NORM_ATOL` before renormalizing.
    """
    norms = np.linalg.norm(m, axis=1)
    bad = norms < ZERO_NORM_EPS
    if np.any(bad):
        raise ValidationError(
            f"{name} row {int(np.argmax(bad))} has norm ~0 and cannot be renormalized"
        )
    if warn and np.any(np.abs(norms - 1.0) > NORM_ATOL):
        off = int(np.argmax(np.abs(norms - 1.0)))
        warnings.warn(
            f"{name} rows are not unit norm (worst row {off}, norm {norms[off]:.6f}); "
            "renormalizing",
            UserWarning,
            stacklevel=3,
        )
    return m / norms[:, None]


def check_range_pair(lo: float, hi: float, name: str = "range") -> tuple[float, float]:
    """Validate a (lo, hi) range with hi >= lo and finite endpoints."""
    lo = float(lo)
    hi = float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValidationError(f"{name} endpoints must be finite, got ({lo}, {hi})")
    if hi < lo:
        raise ValidationError(f"{name} must satisfy hi >= lo, got ({lo}, {hi})")
    return lo, hi
