"""Few-shot adapters over frozen embeddings, trained full-batch.

Four adapter families share one trainer:

- linear probe (``lp``): class weight rows, initialized at the prototypes;
- ``clip-adapter``: a bottleneck MLP blended into the image embedding;
- ``taskres``: a trainable residual added to each prototype;
- ``tip-f``: a support-feature cache whose keys are fine-tuned.

Training is deterministic full-batch gradient descent with momentum and an
optional cosine learning-rate schedule. All gradients are computed in closed
form (no automatic differentiation), including through embedding
renormalization and the range-normalization transform.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    NORM_ATOL,
    ZERO_NORM_EPS,
    as_float_matrix,
    check_labels,
    check_unit_rows,
)
from .calibration import penalty_rows, penalty_subgradient_rows, zs_norm_rows, zs_norm_vjp_rows
from .core import norm_rows, range_rows, softmax_rows
from .errors import (
    ConfigurationError,
    DegeneracyError,
    TrainingError,
    ValidationError,
)
from .formats import Dataset, read_matrix, write_matrix
from .zeroshot import DEFAULT_TEMPERATURE, PrototypeSet, zs_logits, zs_range_table

LOSS_MODES = ("plain", "zs_norm", "penalty")
LR_SCHEDULES = ("cosine", "constant")
METHODS = ("lp", "clip-adapter", "taskres", "tip-f")


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class LinearProbeParams:
    """Per-class weight rows; logits are ``features @ weights.T / temperature``."""

    weights: np.ndarray

    method = "lp"
    trainable = ("weights",)


@dataclass
class ClipAdapterParams:
    """Bottleneck MLP residual on the image embedding.

    The adapted embedding is ``normalize(blend * mlp(z) + (1 - blend) * z)``
    with ``mlp(z) = w2 @ relu(w1 @ z + b1) + b2``.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    blend: float = 0.2

    method = "clip-adapter"
    trainable = ("w1", "b1", "w2", "b2")


@dataclass
class TaskResParams:
    """Trainable residual on the prototypes: ``normalize(proto + scale * residual)``."""

    residual: np.ndarray
    scale: float = 0.5

    method = "taskres"
    trainable = ("residual",)


@dataclass
class TipAdapterParams:
    """Support-feature cache with fine-tuned keys.

    Logits are the zero-shot logits plus
    ``blend * exp(-sharpness * (1 - z @ keys.T)) @ values``.
    """

    cache_keys: np.ndarray
    cache_values: np.ndarray
    blend: float = 1.0
    sharpness: float = 5.5

    method = "tip-f"
    trainable = ("cache_keys",)


AdapterParams = Union[LinearProbeParams, ClipAdapterParams, TaskResParams, TipAdapterParams]


@dataclass
class TrainConfig:
    """Hyperparameters for full-batch adapter training."""

    epochs: int = 300
    lr: float = 0.1
    momentum: float = 0.9
    loss_mode: str = "plain"
    penalty_weight: float = 10.0
    lr_schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.loss_mode not in LOSS_MODES:
            raise ValidationError(
                f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}"
            )
        if self.penalty_weight < 0:
            raise ValidationError(
                f"penalty_weight must be >= 0, got {self.penalty_weight}"
            )
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValidationError(
                f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}"
            )


@dataclass
class TrainHistory:
    """Per-epoch training diagnostics on the raw (untransformed) logits."""

    loss: list = field(default_factory=list)
    mean_logit_range: list = field(default_factory=list)
    mean_logit_norm: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _normalize_rows_fwd(u: np.ndarray, what: str):
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms < ZERO_NORM_EPS):
        bad = int(np.argmax(norms < ZERO_NORM_EPS))
        raise DegeneracyError(f"{what} row {bad} has near-zero norm")
    return u / norms[:, None], norms


def _normalize_rows_bwd(grad_v: np.ndarray, v: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d/du of u/||u|| applied to an upstream gradient: project out the radial
    # component, then divide by the norm.
    radial = (grad_v * v).sum(axis=1, keepdims=True)
    return (grad_v - radial * v) / norms[:, None]


def adapter_logits(params: AdapterParams, features, protos: PrototypeSet) -> np.ndarray:
    """Logits of an adapter on ``features`` (one row per sample)."""
    feats = as_float_matrix(features, "features")
    if feats.shape[1] != protos.dim:
        raise ValidationError(
            f"features have dimension {feats.shape[1]}, prototypes {protos.dim}"
        )
    tau = protos.temperature
    if isinstance(params, LinearProbeParams):
        return feats @ params.weights.T / tau
    if isinstance(params, ClipAdapterParams):
        pre = feats @ params.w1.T + params.b1
        hidden = np.maximum(pre, 0.0)
        mlp = hidden @ params.w2.T + params.b2
        u = params.blend * mlp + (1.0 - params.blend) * feats
        v, _ = _normalize_rows_fwd(u, "adapted embeddings")
        return v @ protos.prototypes.T / tau
    if isinstance(params, TaskResParams):
        u = protos.prototypes + params.scale * params.residual
        t, _ = _normalize_rows_fwd(u, "adapted prototypes")
        return feats @ t.T / tau
    if isinstance(params, TipAdapterParams):
        affinity = np.exp(-params.sharpness * (1.0 - feats @ params.cache_keys.T))
        return feats @ protos.prototypes.T / tau + params.blend * (
            affinity @ params.cache_values
        )
    raise ValidationError(f"unknown adapter params type {type(params).__name__}")


def adapter_logits_vjp(
    params: AdapterParams,
    features: np.ndarray,
    protos: PrototypeSet,
    grad_logits: np.ndarray,
) -> dict:
    """Gradients of a scalar loss w.r.t. the trainable arrays of ``params``,
    given the loss gradient w.r.t. the logits. Returns a dict keyed by
    trainable field name."""
    feats = features
    g = grad_logits
    tau = protos.temperature
    if isinstance(params, LinearProbeParams):
        return {"weights": g.T @ feats / tau}
    if isinstance(params, ClipAdapterParams):
        pre = feats @ params.w1.T + params.b1
        hidden = np.maximum(pre, 0.0)
        mlp = hidden @ params.w2.T + params.b2
        u = params.blend * mlp + (1.0 - params.blend) * feats
        v, norms = _normalize_rows_fwd(u, "adapted embeddings")
        grad_v = g @ protos.prototypes / tau
        grad_u = _normalize_rows_bwd(grad_v, v, norms)
        grad_mlp = params.blend * grad_u
        grad_hidden = grad_mlp @ params.w2
        grad_pre = grad_hidden * (pre > 0)
        return {
            "w1": grad_pre.T @ feats,
            "b1": grad_pre.sum(axis=0),
            "w2": grad_mlp.T @ hidden,
            "b2": grad_mlp.sum(axis=0),
        }
    if isinstance(params, TaskResParams):
        u = protos.prototypes + params.scale * params.residual
        t, norms = _normalize_rows_fwd(u, "adapted prototypes")
        grad_t = g.T @ feats / tau
        grad_u = _normalize_rows_bwd(grad_t, t, norms)
        return {"residual": params.scale * grad_u}
    if isinstance(params, TipAdapterParams):
        affinity = np.exp(-params.sharpness * (1.0 - feats @ params.cache_keys.T))
        grad_aff = params.blend * (g @ params.cache_values.T)
        grad_sim = params.sharpness * affinity * grad_aff
        return {"cache_keys": grad_sim.T @ feats}
    raise ValidationError(f"unknown adapter params type {type(params).__name__}")


def ce_loss_and_grad(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmaxed logits against integer labels, with
    its gradient ``(softmax - onehot) / n`` w.r.t. the logits."""
    l = as_float_matrix(logits, "logits")
    n, k = l.shape
    y = check_labels(labels, k)
    if y.shape[0] != n:
        raise ValidationError(f"got {n} logit rows but {y.shape[0]} labels")
    shifted = l - l.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(n), y]))
    grad = softmax_rows(l)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def _objective(
    logits: np.ndarray,
    labels: np.ndarray,
    zs_ranges: np.ndarray,
    cfg: TrainConfig,
) -> tuple[float, np.ndarray]:
    """Loss and d(loss)/d(logits) for the configured loss mode."""
    if cfg.loss_mode == "plain":
        return ce_loss_and_grad(logits, labels)
    if cfg.loss_mode == "zs_norm":
        squeezed = zs_norm_rows(logits, zs_ranges)
        loss, grad_sq = ce_loss_and_grad(squeezed, labels)
        return loss, zs_norm_vjp_rows(logits, zs_ranges, grad_sq)
    # penalty: cross-entropy plus the mean per-sample range penalty.
    loss, grad = ce_loss_and_grad(logits, labels)
    n = logits.shape[0]
    pen = penalty_rows(logits, zs_ranges)
    loss += cfg.penalty_weight * float(pen.mean())
    grad = grad + cfg.penalty_weight / n * penalty_subgradient_rows(logits, zs_ranges)
    return loss, grad


def init_adapter(
    method: str,
    dataset: Dataset,
    protos: PrototypeSet,
    seed: int = 0,
    *,
    blend: float | None = None,
    scale: float | None = None,
    sharpness: float | None = None,
) -> AdapterParams:
    """Build initial adapter parameters for ``method``.

    The linear probe starts at the prototypes, taskres at a zero residual and
    tip-f at the raw support cache, so those three reproduce (or, for tip-f
    with ``blend=0``, exactly equal) the zero-shot logits before training.
    """
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}, got {method!r}")
    k, d = protos.class_count, protos.dim
    if method == "lp":
        return LinearProbeParams(weights=protos.prototypes.copy())
    if method == "clip-adapter":
        blend = 0.2 if blend is None else float(blend)
        if not 0.0 <= blend <= 1.0:
            raise ValidationError(f"blend must be in [0, 1], got {blend}")
        rng = np.random.default_rng(seed)
        hidden = max(1, d // 4)
        def _uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)
        return ClipAdapterParams(
            w1=_uniform((hidden, d), d),
            b1=_uniform((hidden,), d),
            w2=_uniform((d, hidden), hidden),
            b2=_uniform((d,), hidden),
            blend=blend,
        )
    if method == "taskres":
        scale = 0.5 if scale is None else float(scale)
        if not scale > 0:
            raise ValidationError(f"scale must be > 0, got {scale}")
        return TaskResParams(residual=np.zeros((k, d)), scale=scale)
    # tip-f
    blend = 1.0 if blend is None else float(blend)
    sharpness = 5.5 if sharpness is None else float(sharpness)
    if blend < 0:
        raise ValidationError(f"blend must be >= 0, got {blend}")
    if not sharpness > 0:
        raise ValidationError(f"sharpness must be > 0, got {sharpness}")
    onehot = np.zeros((len(dataset), protos.class_count))
    onehot[np.arange(len(dataset)), dataset.labels] = 1.0
    return TipAdapterParams(
        cache_keys=dataset.features.copy(),
        cache_values=onehot,
        blend=blend,
        sharpness=sharpness,
    )


def _check_training_inputs(dataset: Dataset, protos: PrototypeSet) -> None:
    feats = as_float_matrix(dataset.features, "dataset.features")
    if feats.shape[1] != protos.dim:
        raise ValidationError(
            f"dataset dimension {feats.shape[1]} != prototype dimension {protos.dim}"
        )
    if dataset.class_count != protos.class_count:
        raise ValidationError(
            f"dataset has {dataset.class_count} classes, prototypes "
            f"{protos.class_count}"
        )
    norms = np.linalg.norm(feats, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_ATOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ValidationError(
            f"dataset.features row {bad} has norm {norms[bad]:.6f}; expected unit rows"
        )
    check_labels(dataset.labels, dataset.class_count, "dataset.labels")


def train_adapter(
    method: str,
    dataset: Dataset,
    protos: PrototypeSet,
    zs_ranges: np.ndarray | None = None,
    config: TrainConfig | None = None,
    *,
    blend: float | None = None,
    scale: float | None = None,
    sharpness: float | None = None,
) -> tuple[AdapterParams, TrainHistory]:
    """Train an adapter on a support set with full-batch momentum descent.

    Parameters
    ----------
    method : {"lp", "clip-adapter", "taskres", "tip-f"}
    dataset : Dataset
        Support embeddings (unit rows) with labels.
    protos : PrototypeSet
        Frozen class prototypes and temperature.
    zs_ranges : ndarray of shape (n, 2), optional
        Per-sample zero-shot (min, max) logit ranges. Computed from the
        prototypes when omitted. Required by the ``zs_norm`` and ``penalty``
        loss modes.
    config : TrainConfig, optional
        Defaults to ``TrainConfig()``.
    blend, scale, sharpness : float, optional
        Architecture knobs forwarded to :func:`init_adapter`.

    Returns
    -------
    (AdapterParams, TrainHistory)

    Raises
    ------
    ConfigurationError
        If ``loss_mode="zs_norm"`` is combined with a degenerate (zero-width)
        zero-shot range on any support sample.
    TrainingError
        If the loss or the parameters become non-finite, naming the epoch.
    """
    cfg = config if config is not None else TrainConfig()
    _check_training_inputs(dataset, protos)
    if zs_ranges is None:
        zs_ranges = zs_range_table(zs_logits(dataset.features, protos))
    else:
        zs_ranges = np.asarray(zs_ranges, dtype=np.float64)
        if zs_ranges.shape != (len(dataset), 2):
            raise ValidationError(
                f"zs_ranges must have shape ({len(dataset)}, 2), got {zs_ranges.shape}"
            )
    if cfg.loss_mode == "zs_norm" and np.any(zs_ranges[:, 1] <= zs_ranges[:, 0]):
        bad = int(np.argmax(zs_ranges[:, 1] <= zs_ranges[:, 0]))
        raise ConfigurationError(
            f"zs_norm loss needs a non-degenerate zero-shot range for every "
            f"support sample; sample {bad} has zero width"
        )

    params = init_adapter(
        method, dataset, protos, seed=cfg.seed, blend=blend, scale=scale,
        sharpness=sharpness,
    )
    history = TrainHistory()
    velocity = {name: np.zeros_like(getattr(params, name)) for name in params.trainable}
    for epoch in range(cfg.epochs):
        logits = adapter_logits(params, dataset.features, protos)
        if not np.all(np.isfinite(logits)):
            raise TrainingError(f"training diverged: non-finite logits at epoch {epoch}")
        loss, grad_logits = _objective(logits, dataset.labels, zs_ranges, cfg)
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged: non-finite loss at epoch {epoch}")
        history.loss.append(loss)
        history.mean_logit_range.append(float(range_rows(logits).mean()))
        history.mean_logit_norm.append(float(norm_rows(logits).mean()))
        grads = adapter_logits_vjp(params, dataset.features, protos, grad_logits)
        if cfg.lr_schedule == "cosine":
            lr_t = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs))
        else:
            lr_t = cfg.lr
        for name in params.trainable:
            velocity[name] = cfg.momentum * velocity[name] + grads[name]
            setattr(params, name, getattr(params, name) - lr_t * velocity[name])
    for name in params.trainable:
        if not np.all(np.isfinite(getattr(params, name))):
            raise TrainingError(
                f"non-finite parameters after epoch {cfg.epochs - 1}"
            )
    return params, history


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_PARAM_CLASSES = {
    "lp": LinearProbeParams,
    "clip-adapter": ClipAdapterParams,
    "taskres": TaskResParams,
    "tip-f": TipAdapterParams,
}


def save_adapter(params: AdapterParams, protos: PrototypeSet, directory: str) -> None:
    """Write adapter parameters and prototypes to ``directory``.

    The layout is one VLF1 matrix file per array plus a plain-text
    ``manifest.txt`` naming the method, scalar hyperparameters, and the
    temperature.
    """
    os.makedirs(directory, exist_ok=True)
    lines = [f"method={params.method}", f"temperature={protos.temperature!r}"]
    write_matrix(os.path.join(directory, "prototypes.vlf"), protos.prototypes)
    for f in fields(params):
        value = getattr(params, f.name)
        if isinstance(value, np.ndarray):
            arr = value if value.ndim == 2 else value[None, :]
            name = f"{f.name}.vlf"
            write_matrix(os.path.join(directory, name), arr)
            lines.append(f"matrix.{f.name}={name}" + (".row" if value.ndim == 1 else ""))
        else:
            lines.append(f"{f.name}={value!r}")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_adapter(directory: str) -> tuple[AdapterParams, PrototypeSet]:
    """Load adapter parameters and prototypes saved by :func:`save_adapter`."""
    manifest = os.path.join(directory, "manifest.txt")
    entries: dict[str, str] = {}
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{manifest}: malformed line {line!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    method = entries.pop("method", None)
    if method not in _PARAM_CLASSES:
        raise ValidationError(f"{manifest}: unknown method {method!r}")
    temperature = float(entries.pop("temperature", DEFAULT_TEMPERATURE))
    kwargs = {}
    for key, value in entries.items():
        if key.startswith("matrix."):
            name = key[len("matrix."):]
            if value.endswith(".row"):
                arr = read_matrix(os.path.join(directory, value[: -len(".row")]))
                kwargs[name] = arr[0]
            else:
                kwargs[name] = read_matrix(os.path.join(directory, value))
        else:
            kwargs[key] = float(value)
    params = _PARAM_CLASSES[method](**kwargs)
    protos = PrototypeSet(
        prototypes=read_matrix(os.path.join(directory, "prototypes.vlf")),
        temperature=temperature,
    )
    return params, protos


# ---------------------------------------------------------------------------
# Estimator wrappers
# ---------------------------------------------------------------------------


class _AdapterClassifier(ClassifierMixin, BaseEstimator):
    """Shared scikit-learn-style front end over :func:`train_adapter`."""

    _method = ""

    def __init__(self, prototypes=None, temperature=DEFAULT_TEMPERATURE,
                 loss_mode="plain", epochs=300, lr=0.1, momentum=0.9,
                 penalty_weight=10.0, lr_schedule="cosine", seed=0):
        self.prototypes = prototypes
        self.temperature = temperature
        self.loss_mode = loss_mode
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.penalty_weight = penalty_weight
        self.lr_schedule = lr_schedule
        self.seed = seed

    def _architecture_kwargs(self) -> dict:
        return {}

    def fit(self, X, y):
        """Train the adapter on support embeddings ``X`` and labels ``y``."""
        if self.prototypes is None:
            raise ValidationError("prototypes must be provided")
        proto = check_unit_rows(as_float_matrix(self.prototypes, "prototypes"),
                                "prototypes")
        protos = PrototypeSet(prototypes=proto, temperature=self.temperature)
        feats = check_unit_rows(as_float_matrix(X, "X"), "X", warn=True)
        labels = check_labels(y, protos.class_count, "y")
        if labels.shape[0] != feats.shape[0]:
            raise ValidationError(
                f"X has {feats.shape[0]} rows but y has {labels.shape[0]} entries"
            )
        dataset = Dataset(feats, labels, protos.class_count)
        config = TrainConfig(
            epochs=self.epochs, lr=self.lr, momentum=self.momentum,
            loss_mode=self.loss_mode, penalty_weight=self.penalty_weight,
            lr_schedule=self.lr_schedule, seed=self.seed,
        )
        self.params_, self.history_ = train_adapter(
            self._method, dataset, protos, config=config,
            **self._architecture_kwargs(),
        )
        self.protos_ = protos
        self.classes_ = np.arange(protos.class_count)
        self.n_features_in_ = protos.dim
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return adapter_logits(self.params_, X, self.protos_)

    def predict_proba(self, X) -> np.ndarray:
        return softmax_rows(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class LinearProbeClassifier(_AdapterClassifier):
    """Linear probe initialized at the class prototypes."""

    _method = "lp"


class ClipAdapterClassifier(_AdapterClassifier):
    """Bottleneck-MLP adapter blended into the frozen embedding."""

    _method = "clip-adapter"

    def __init__(self, prototypes=None, temperature=DEFAULT_TEMPERATURE,
                 loss_mode="plain", epochs=300, lr=0.1, momentum=0.9,
                 penalty_weight=10.0, lr_schedule="cosine", seed=0, blend=0.2):
        super().__init__(prototypes, temperature, loss_mode, epochs, lr,
                         momentum, penalty_weight, lr_schedule, seed)
        self.blend = blend

    def _architecture_kwargs(self) -> dict:
        return {"blend": self.blend}


class TaskResClassifier(_AdapterClassifier):
    """Prototype-residual adapter; the residual starts at zero."""

    _method = "taskres"

    def __init__(self, prototypes=None, temperature=DEFAULT_TEMPERATURE,
                 loss_mode="plain", epochs=300, lr=0.1, momentum=0.9,
                 penalty_weight=10.0, lr_schedule="cosine", seed=0, scale=0.5):
        super().__init__(prototypes, temperature, loss_mode, epochs, lr,
                         momentum, penalty_weight, lr_schedule, seed)
        self.scale = scale

    def _architecture_kwargs(self) -> dict:
        return {"scale": self.scale}


class TipAdapterClassifier(_AdapterClassifier):
    """Cache-based adapter whose support keys are fine-tuned."""

    _method = "tip-f"

    def __init__(self, prototypes=None, temperature=DEFAULT_TEMPERATURE,
                 loss_mode="plain", epochs=300, lr=0.1, momentum=0.9,
                 penalty_weight=10.0, lr_schedule="cosine", seed=0,
                 blend=1.0, sharpness=5.5):
        super().__init__(prototypes, temperature, loss_mode, epochs, lr,
                         momentum, penalty_weight, lr_schedule, seed)
        self.blend = blend
        self.sharpness = sharpness

    def _architecture_kwargs(self) -> dict:
        return {"blend": self.blend, "sharpness": self.sharpness}
