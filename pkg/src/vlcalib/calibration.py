"""Logit-range calibration: normalization into a reference range, penalties
for leaving it, and post-hoc rescaling of trained logits.

The reference range for a sample is usually the (min, max) of its zero-shot
logits. ``zs_norm_transform`` min-max rescales a logit vector into such a
range; ``penalty_term`` charges for coordinates outside it; ``sals`` applies
the rescaling at inference time, which never changes the predicted class.

Both differentiable pieces come with hand-derived backward passes
(``zs_norm_vjp_rows``, ``penalty_subgradient_rows``): the toolkit trains
without automatic differentiation. The transform's min and max are treated
as functions of the logits, so the backward pass carries re-anchoring terms
at the argmin/argmax coordinates (lowest index on ties).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ._validation import as_float_matrix, as_float_vector, check_range_pair
from .errors import ValidationError


class RangePair(NamedTuple):
    """Closed target interval ``[lo, hi]`` with ``hi >= lo``."""

    lo: float
    hi: float


def _check_table(ranges, n: int) -> np.ndarray:
    table = np.asarray(ranges, dtype=np.float64)
    if table.ndim == 1 and table.shape == (2,):
        table = np.broadcast_to(table, (n, 2)).copy()
    if table.shape != (n, 2):
        raise ValidationError(f"ranges must have shape ({n}, 2), got {table.shape}")
    if not np.all(np.isfinite(table)):
        raise ValidationError("ranges contain non-finite values")
    if np.any(table[:, 1] < table[:, 0]):
        bad = int(np.argmax(table[:, 1] < table[:, 0]))
        raise ValidationError(f"ranges row {bad} has hi < lo")
    return table


def zs_norm_rows(logits: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Min-max rescale each row of ``logits`` into its row of ``ranges``.

    Row i maps linearly so its minimum lands on ``lo_i`` and its maximum on
    ``hi_i`` (exactly; the endpoint coordinates are pinned). A constant row
    has no usable span and maps to the constant midpoint ``(lo_i + hi_i)/2``.
    """
    l = as_float_matrix(logits, "logits")
    table = _check_table(ranges, l.shape[0])
    lo, hi = table[:, 0], table[:, 1]
    lmin = l.min(axis=1)
    lmax = l.max(axis=1)
    span = lmax - lmin
    degenerate = span == 0.0
    safe = np.where(degenerate, 1.0, span)
    scale = (hi - lo) / safe
    out = scale[:, None] * (l - lmin[:, None]) + lo[:, None]
    # Pin endpoints so min/max land exactly on lo/hi, then clamp round-off.
    out = np.where(l == lmax[:, None], hi[:, None], out)
    out = np.where(l == lmin[:, None], lo[:, None], out)
    out = np.clip(out, lo[:, None], hi[:, None])
    if np.any(degenerate):
        mid = (lo + hi) / 2.0
        out[degenerate] = mid[degenerate, None]
    return out


def zs_norm_vjp_rows(
    logits: np.ndarray, ranges: np.ndarray, grad_out: np.ndarray
) -> np.ndarray:
    """Backward pass of :func:`zs_norm_rows`: map an upstream gradient on the
    transformed logits to a gradient on the raw logits.

    The min and max of each row are differentiated through their argmin /
    argmax coordinate (lowest index on ties), which adds re-anchoring terms
    beyond the plain ``scale * grad`` diagonal. Degenerate (constant) rows
    get a zero gradient.
    """
    l = as_float_matrix(logits, "logits")
    n = l.shape[0]
    table = _check_table(ranges, n)
    g = as_float_matrix(grad_out, "grad_out")
    if g.shape != l.shape:
        raise ValidationError(f"grad_out shape {g.shape} != logits shape {l.shape}")
    lo, hi = table[:, 0], table[:, 1]
    lmin = l.min(axis=1)
    lmax = l.max(axis=1)
    amin = l.argmin(axis=1)
    amax = l.argmax(axis=1)
    span = lmax - lmin
    degenerate = span == 0.0
    safe = np.where(degenerate, 1.0, span)
    scale = (hi - lo) / safe

    grad = scale[:, None] * g
    rows = np.arange(n)
    total = g.sum(axis=1)
    anchored = (g * (l - lmin[:, None])).sum(axis=1)
    grad[rows, amin] -= scale * total
    grad[rows, amax] -= scale * anchored / safe
    grad[rows, amin] += scale * anchored / safe
    grad[degenerate] = 0.0
    return grad


def zs_norm_transform(logits, r: RangePair | tuple) -> np.ndarray:
    """Rescale one logit vector into ``[r.lo, r.hi]``; see :func:`zs_norm_rows`."""
    l = as_float_vector(logits, "logits")
    lo, hi = check_range_pair(*r)
    return zs_norm_rows(l[None, :], np.array([[lo, hi]]))[0]


def penalty_rows(logits: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Per-row penalty: sum of overshoot above ``hi`` and undershoot below ``lo``."""
    l = as_float_matrix(logits, "logits")
    table = _check_table(ranges, l.shape[0])
    lo, hi = table[:, 0:1], table[:, 1:2]
    over = np.maximum(l - hi, 0.0)
    under = np.maximum(lo - l, 0.0)
    return (over + under).sum(axis=1)


def penalty_subgradient_rows(logits: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Subgradient of :func:`penalty_rows` w.r.t. the logits.

    +1 where a coordinate exceeds ``hi``, -1 where it sits below ``lo``,
    0 inside the range and at the kinks themselves.
    """
    l = as_float_matrix(logits, "logits")
    table = _check_table(ranges, l.shape[0])
    lo, hi = table[:, 0:1], table[:, 1:2]
    return (l > hi).astype(np.float64) - (l < lo).astype(np.float64)


def penalty_term(logits, r: RangePair | tuple) -> float:
    """Penalty for one logit vector leaving ``[r.lo, r.hi]``; 0 iff inside."""
    l = as_float_vector(logits, "logits")
    lo, hi = check_range_pair(*r)
    return float(penalty_rows(l[None, :], np.array([[lo, hi]]))[0])


def scaled_range(r: RangePair | tuple, factor: float) -> RangePair:
    """Shrink (or stretch) a range about its midpoint by ``factor``.

    ``factor=1`` returns the range unchanged; ``factor=0.5`` halves its
    width. The midpoint is preserved exactly.
    """
    lo, hi = check_range_pair(*r)
    factor = float(factor)
    if not factor > 0:
        raise ValidationError(f"factor must be > 0, got {factor}")
    mid = (lo + hi) / 2.0
    half = (hi - lo) / 2.0 * factor
    return RangePair(mid - half, mid + half)


def scale_range_table(ranges: np.ndarray, factor: float) -> np.ndarray:
    """Apply :func:`scaled_range` to every row of an (n, 2) range table."""
    table = _check_table(ranges, np.asarray(ranges).shape[0])
    factor = float(factor)
    if not factor > 0:
        raise ValidationError(f"factor must be > 0, got {factor}")
    mid = table.mean(axis=1)
    half = (table[:, 1] - table[:, 0]) / 2.0 * factor
    return np.stack([mid - half, mid + half], axis=1)


def sals_rows(logits: np.ndarray, ranges: np.ndarray, factor: float = 1.0) -> np.ndarray:
    """Post-hoc rescaling of each logit row into its (optionally shrunk)
    zero-shot range. Strictly increasing per row, so argmax is unchanged."""
    table = _check_table(ranges, np.asarray(logits).shape[0])
    if factor != 1.0:
        table = scale_range_table(table, factor)
    return zs_norm_rows(logits, table)


def sals(logits, r: RangePair | tuple, factor: float = 1.0) -> np.ndarray:
    """Rescale one logit vector into its zero-shot range at inference time.

    Monotone per coordinate order, so the predicted class is preserved; this
    is asserted whenever the input is non-constant and the range has width.
    """
    l = as_float_vector(logits, "logits")
    lo, hi = check_range_pair(*r)
    out = sals_rows(l[None, :], np.array([[lo, hi]]), factor=factor)[0]
    if l.max() > l.min() and hi > lo:
        assert int(np.argmax(out)) == int(np.argmax(l)), "argmax changed under sals"
    return out
