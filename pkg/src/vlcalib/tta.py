"""Episodic test-time adaptation from augmented views of a single sample.

Each test sample arrives as a view batch: row 0 is the original embedding,
the remaining rows are augmented views. Adaptation keeps the most confident
(lowest-entropy) views, then takes a small number of optimizer steps on a
zero-initialized prototype residual to minimize mean prediction entropy over
those views. The episode is self-contained: nothing carries over between
samples.

The optimizer is a hand-rolled adaptive-moment step with decoupled weight
decay; gradients are closed-form, including through prototype
renormalization and (in ``zs_norm`` mode) the range-normalization transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._validation import as_float_matrix
from .calibration import (
    penalty_rows,
    penalty_subgradient_rows,
    sals_rows,
    zs_norm_rows,
    zs_norm_vjp_rows,
)
from .core import entropy_rows, softmax_rows
from .errors import AdaptationError, ValidationError
from .zeroshot import PrototypeSet, zs_logits, zs_range_table

TTA_CALIB_MODES = ("none", "zs_norm", "penalty", "sals")


@dataclass
class TtaConfig:
    """Hyperparameters for one adaptation episode."""

    lr: float = 0.005
    steps: int = 1
    select_fraction: float = 0.1
    calib_mode: str = "none"
    penalty_weight: float = 10.0
    weight_decay: float = 0.0
    range_factor: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 < self.select_fraction <= 1.0:
            raise ValidationError(
                f"select_fraction must be in (0, 1], got {self.select_fraction}"
            )
        if self.calib_mode not in TTA_CALIB_MODES:
            raise ValidationError(
                f"calib_mode must be one of {TTA_CALIB_MODES}, got {self.calib_mode!r}"
            )
        if self.penalty_weight < 0:
            raise ValidationError(
                f"penalty_weight must be >= 0, got {self.penalty_weight}"
            )
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.range_factor > 0:
            raise ValidationError(f"range_factor must be > 0, got {self.range_factor}")


@dataclass
class TtaInfo:
    """Diagnostics from one adaptation episode."""

    selected: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    entropy_before: float = 0.0
    entropy_after: float = 0.0


def select_confident_views(probs, fraction: float) -> np.ndarray:
    """Indices of the ``ceil(fraction * V)`` lowest-entropy probability rows.

    At least one view is always selected; entropy ties resolve to the lowest
    row index. Indices return in ascending order.
    """
    p = as_float_matrix(probs, "probs")
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    ent = entropy_rows(p)
    keep = max(1, int(np.ceil(fraction * p.shape[0])))
    order = np.argsort(ent, kind="stable")
    return np.sort(order[:keep])


def _check_views(views, protos: PrototypeSet) -> np.ndarray:
    try:
        v = as_float_matrix(views, "views")
    except ValidationError as exc:
        raise AdaptationError(f"bad view batch: {exc}") from exc
    if v.shape[1] != protos.dim:
        raise AdaptationError(
            f"views have dimension {v.shape[1]}, prototypes {protos.dim}"
        )
    return v


def _entropy_objective(
    logits: np.ndarray, ranges: np.ndarray, cfg: TtaConfig
) -> tuple[float, float, np.ndarray]:
    """(objective, mean entropy, d(objective)/d(logits)) for the calib mode.

    ``sals`` is inference-only calibration, so its adaptation objective is
    identical to ``none``.
    """
    m = logits.shape[0]

    def _mean_entropy_and_grad(l):
        p = softmax_rows(l)
        ent = entropy_rows(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = np.where(p > 0, np.log(p), 0.0)
        grad = -p * (logp + ent[:, None]) / m
        return float(ent.mean()), grad

    if cfg.calib_mode == "zs_norm":
        squeezed = zs_norm_rows(logits, ranges)
        ent, grad_sq = _mean_entropy_and_grad(squeezed)
        return ent, ent, zs_norm_vjp_rows(logits, ranges, grad_sq)
    ent, grad = _mean_entropy_and_grad(logits)
    if cfg.calib_mode == "penalty":
        pen = penalty_rows(logits, ranges)
        obj = ent + cfg.penalty_weight * float(pen.mean())
        grad = grad + cfg.penalty_weight / m * penalty_subgradient_rows(logits, ranges)
        return obj, ent, grad
    return ent, ent, grad


def tta_adapt(
    views, protos: PrototypeSet, config: TtaConfig | None = None
) -> tuple[PrototypeSet, TtaInfo]:
    """Adapt prototypes to one sample's view batch by entropy minimization.

    Returns the adapted prototypes (renormalized residual-shifted copies of
    the originals) and episode diagnostics. View selection happens once, on
    the un-adapted predictions; the per-view zero-shot ranges used by the
    ``zs_norm`` and ``penalty`` modes are likewise fixed at the start of the
    episode.
    """
    cfg = config if config is not None else TtaConfig()
    v = _check_views(views, protos)
    base = protos.prototypes
    tau = protos.temperature

    logits0 = zs_logits(v, protos)
    probs0 = softmax_rows(logits0)
    selected = select_confident_views(probs0, cfg.select_fraction)
    ranges = zs_range_table(logits0)[selected]
    sel_views = v[selected]

    residual = np.zeros_like(base)
    moment1 = np.zeros_like(base)
    moment2 = np.zeros_like(base)
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    entropy_before = None
    for step in range(cfg.steps):
        shifted = base + residual
        norms = np.linalg.norm(shifted, axis=1)
        if np.any(norms < 1e-12):
            raise AdaptationError("adapted prototype collapsed to zero norm")
        adapted = shifted / norms[:, None]
        logits = sel_views @ adapted.T / tau
        obj, ent, grad_logits = _entropy_objective(logits, ranges, cfg)
        if not np.isfinite(obj):
            raise AdaptationError(f"non-finite objective at step {step}")
        if entropy_before is None:
            entropy_before = ent
        grad_adapted = grad_logits.T @ sel_views / tau
        radial = (grad_adapted * adapted).sum(axis=1, keepdims=True)
        grad_res = (grad_adapted - radial * adapted) / norms[:, None]

        t = step + 1
        moment1 = beta1 * moment1 + (1.0 - beta1) * grad_res
        moment2 = beta2 * moment2 + (1.0 - beta2) * grad_res**2
        m_hat = moment1 / (1.0 - beta1**t)
        v_hat = moment2 / (1.0 - beta2**t)
        residual = residual - cfg.lr * m_hat / (np.sqrt(v_hat) + eps)
        if cfg.weight_decay > 0:
            residual = residual - cfg.lr * cfg.weight_decay * residual

    shifted = base + residual
    norms = np.linalg.norm(shifted, axis=1)
    if np.any(norms < 1e-12):
        raise AdaptationError("adapted prototype collapsed to zero norm")
    adapted = shifted / norms[:, None]
    final_logits = sel_views @ adapted.T / tau
    _, entropy_after, _ = _entropy_objective(final_logits, ranges, cfg)

    info = TtaInfo(
        selected=selected,
        entropy_before=float(entropy_before),
        entropy_after=float(entropy_after),
    )
    return PrototypeSet(prototypes=adapted, temperature=tau), info


def tta_predict(
    views, protos: PrototypeSet, config: TtaConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Run one adaptation episode and predict for the original view (row 0).

    Returns ``(probs, logits)`` for row 0 under the adapted prototypes. In
    ``sals`` and ``zs_norm`` modes the logits are rescaled into row 0's
    zero-shot range (from the un-adapted prototypes) before the softmax.
    """
    cfg = config if config is not None else TtaConfig()
    v = _check_views(views, protos)
    adapted, _ = tta_adapt(v, protos, cfg)
    logits = zs_logits(v[0:1], adapted)
    if cfg.calib_mode in ("sals", "zs_norm"):
        zs_row = zs_logits(v[0:1], protos)
        table = zs_range_table(zs_row)
        factor = cfg.range_factor if cfg.calib_mode == "sals" else 1.0
        logits = sals_rows(logits, table, factor=factor)
    return softmax_rows(logits)[0], logits[0]


def tta_predict_batch(
    view_batches: Sequence, protos: PrototypeSet, config: TtaConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Apply :func:`tta_predict` to a sequence of view batches.

    Returns stacked ``(probs, logits)`` matrices, one row per sample.
    """
    cfg = config if config is not None else TtaConfig()
    if len(view_batches) == 0:
        raise AdaptationError("need at least one view batch")
    probs_rows = []
    logit_rows = []
    for batch in view_batches:
        p, l = tta_predict(batch, protos, cfg)
        probs_rows.append(p)
        logit_rows.append(l)
    return np.stack(probs_rows), np.stack(logit_rows)
