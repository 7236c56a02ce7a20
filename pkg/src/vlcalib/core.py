"""Numeric primitives on logit and probability vectors.

The public functions operate on single 1-D vectors and validate their input;
the ``*_rows`` helpers are the batched (one row per sample) equivalents used
internally and skip re-validation. All arithmetic is double precision.
"""

from __future__ import annotations

import numpy as np

from ._validation import as_float_vector, check_prob_vector


def softmax(logits) -> np.ndarray:
    """Softmax of a logit vector, computed with max-subtraction.

    Parameters
    ----------
    logits : array-like of shape (k,)
        Finite scores, k >= 2.

    Returns
    -------
    ndarray of shape (k,)
        Probabilities summing to 1.
    """
    l = as_float_vector(logits, "logits")
    e = np.exp(l - l.max())
    return e / e.sum()


def logit_range(logits) -> float:
    """max(logits) - min(logits); 0 for a constant vector."""
    l = as_float_vector(logits, "logits")
    return float(l.max() - l.min())


def logit_norm(logits) -> float:
    """Euclidean norm of a logit vector."""
    l = as_float_vector(logits, "logits")
    return float(np.linalg.norm(l))


def argmax_index(logits) -> int:
    """Index of the largest entry; ties resolve to the lowest index."""
    l = as_float_vector(logits, "logits")
    return int(np.argmax(l))


def entropy(probs) -> float:
    """Shannon entropy -sum(p * log p) in nats, with 0*log(0) = 0."""
    p = check_prob_vector(probs)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


# ---------------------------------------------------------------------------
# Row-wise helpers (no per-call validation; inputs come pre-checked).
# ---------------------------------------------------------------------------


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of an (n, k) matrix with max-subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy of an (n, k) probability matrix."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=1)


def range_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise max - min of an (n, k) matrix."""
    return logits.max(axis=1) - logits.min(axis=1)


def norm_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean norm of an (n, k) matrix."""
    return np.linalg.norm(logits, axis=1)
