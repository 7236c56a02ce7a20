"""Zero-shot classification from class prototype embeddings.

A prototype is the mean of a class's prompt-ensemble text embeddings,
renormalized to the unit sphere by default. Logits are cosine similarities
between image embeddings and prototypes divided by a softmax temperature.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ZERO_NORM_EPS, as_float_matrix, check_unit_rows
from .core import softmax_rows
from .errors import DegeneracyError, ValidationError
from .formats import read_matrix

DEFAULT_TEMPERATURE = 0.01


@dataclass
class PrototypeSet:
    """Class prototype matrix plus the softmax temperature that scales logits.

    Attributes
    ----------
    prototypes : ndarray of shape (k, d)
        One row per class. Unit-norm when built with ``renormalize=True``.
    temperature : float
        Positive temperature; logits are ``cos / temperature``.
    """

    prototypes: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        self.prototypes = as_float_matrix(self.prototypes, "prototypes")
        if self.prototypes.shape[0] < 2:
            raise ValidationError("need at least 2 classes of prototypes")
        if self.prototypes.shape[1] < 2:
            raise ValidationError("prototype dimension must be >= 2")
        self.temperature = float(self.temperature)
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")

    @property
    def class_count(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


def build_prototypes(
    prompt_embeddings,
    temperature: float = DEFAULT_TEMPERATURE,
    renormalize: bool = True,
) -> PrototypeSet:
    """Average per-class prompt embeddings into a :class:`PrototypeSet`.

    Parameters
    ----------
    prompt_embeddings : sequence of array-like, each of shape (n_i, d)
        One matrix per class, each row one prompt embedding. Every class
        needs at least one prompt and all classes must share ``d``.
    temperature : float
        Softmax temperature attached to the resulting set.
    renormalize : bool
        When True (default), each mean embedding is scaled back to unit
        norm; a mean with norm ~0 is rejected as degenerate. When False the
        raw means are kept, which lets prompt disagreement shrink a
        prototype's norm.
    """
    if len(prompt_embeddings) < 2:
        raise ValidationError("need prompt embeddings for at least 2 classes")
    means = []
    dim = None
    for k, block in enumerate(prompt_embeddings):
        arr = as_float_matrix(block, f"prompt_embeddings[{k}]")
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise ValidationError(
                f"prompt_embeddings[{k}] has dimension {arr.shape[1]}, expected {dim}"
            )
        means.append(arr.mean(axis=0))
    proto = np.stack(means)
    if renormalize:
        norms = np.linalg.norm(proto, axis=1)
        if np.any(norms < ZERO_NORM_EPS):
            k = int(np.argmax(norms < ZERO_NORM_EPS))
            raise DegeneracyError(
                f"class {k}: prompt embeddings average to a near-zero vector"
            )
        proto = proto / norms[:, None]
    return PrototypeSet(prototypes=proto, temperature=temperature)


def load_prompt_ensemble(manifest_path: str):
    """Read a prompt-ensemble manifest: one matrix file path per line.

    Line order defines class order. Relative paths are resolved against the
    manifest's directory. Blank lines and lines starting with ``#`` are
    skipped. Returns a list of (n_i, d) float64 arrays.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    blocks = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            path = line if os.path.isabs(line) else os.path.join(base, line)
            blocks.append(read_matrix(path))
    if len(blocks) < 2:
        raise ValidationError(
            f"{manifest_path}: manifest must list matrix files for at least 2 "
            f"classes, found {len(blocks)}"
        )
    return blocks


def zs_logits(features, protos: PrototypeSet) -> np.ndarray:
    """Zero-shot logits ``features @ prototypes.T / temperature``.

    ``features`` must be (n, d) with d matching the prototypes.
    """
    feats = as_float_matrix(features, "features")
    if feats.shape[1] != protos.dim:
        raise ValidationError(
            f"features have dimension {feats.shape[1]}, prototypes {protos.dim}"
        )
    return feats @ protos.prototypes.T / protos.temperature


def zs_range_table(logits) -> np.ndarray:
    """Per-row (min, max) of a logit matrix, as an (n, 2) array."""
    arr = as_float_matrix(logits, "logits")
    return np.stack([arr.min(axis=1), arr.max(axis=1)], axis=1)


class ZeroShotClassifier(ClassifierMixin, BaseEstimator):
    """Frozen zero-shot classifier over fixed class prototypes.

    Parameters
    ----------
    prototypes : array-like of shape (k, d)
        Class prototype embeddings, one row per class.
    temperature : float, default=0.01
        Softmax temperature dividing the cosine logits.
    renormalize : bool, default=True
        Renormalize prototype rows to unit norm during ``fit``.

    Examples
    --------
    >>> import numpy as np
    >>> protos = np.eye(3)
    >>> clf = ZeroShotClassifier(protos, temperature=0.5).fit()
    >>> clf.predict(np.array([[0.0, 1.0, 0.0]]))
    array([1])
    """

    def __init__(self, prototypes=None, temperature: float = DEFAULT_TEMPERATURE,
                 renormalize: bool = True):
        self.prototypes = prototypes
        self.temperature = temperature
        self.renormalize = renormalize

    def fit(self, X=None, y=None):
        """Validate the prototypes; training data is ignored (the model is frozen)."""
        if self.prototypes is None:
            raise ValidationError("prototypes must be provided")
        proto = as_float_matrix(self.prototypes, "prototypes")
        if self.renormalize:
            proto = check_unit_rows(proto, "prototypes")
        self.protos_ = PrototypeSet(prototypes=proto, temperature=self.temperature)
        self.classes_ = np.arange(self.protos_.class_count)
        self.n_features_in_ = self.protos_.dim
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "protos_")
        return zs_logits(X, self.protos_)

    def predict_proba(self, X) -> np.ndarray:
        return softmax_rows(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
