"""Accuracy, expected calibration error, logit statistics, and CSV reports.

ECE uses M equal-width confidence bins over (0, 1]: a sample with confidence
c falls in bin ``ceil(c * M)`` (clamped to [1, M]), confidence being the
maximum softmax probability. The report CSV schema is::

    method,calib,dataset,acc,ece,mean_logit_norm,mean_logit_range,n

and the reliability-table schema is::

    bin,lo,hi,count,mean_conf,mean_acc

Floats are rendered with ``repr`` so rows re-parse to exactly equal values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import as_float_matrix, check_labels
from .core import norm_rows, range_rows
from .errors import ValidationError

DEFAULT_BINS = 15


class ReliabilityBin(NamedTuple):
    """One confidence bin: interval (lo, hi], its population and averages."""

    index: int
    lo: float
    hi: float
    count: int
    mean_conf: float
    mean_acc: float


@dataclass
class LogitStats:
    """Mean Euclidean norm and mean (max - min) range over logit rows."""

    mean_norm: float
    mean_range: float


@dataclass
class EvalReport:
    """Evaluation summary for one (method, calibration, dataset) cell."""

    acc: float
    ece: float
    mean_logit_norm: float
    mean_logit_range: float
    n: int
    method: str = ""
    calib: str = ""
    dataset: str = ""
    bins: list = field(default_factory=list, compare=False)


def accuracy(predictions, labels) -> float:
    """Fraction of predictions equal to labels."""
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise ValidationError(
            f"predictions {preds.shape} and labels {labs.shape} must be equal-length vectors"
        )
    if preds.size == 0:
        raise ValidationError("cannot compute accuracy of zero samples")
    return float(np.mean(preds == labs))


def _check_probs_matrix(probs) -> np.ndarray:
    p = as_float_matrix(probs, "probs")
    if p.shape[1] < 2:
        raise ValidationError("probs needs at least 2 columns")
    if np.any(p < 0):
        raise ValidationError("probs contains negative entries")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValidationError(f"probs row {bad} sums to {sums[bad]!r}, expected 1")
    return p


def reliability_table(probs, labels, bins: int = DEFAULT_BINS) -> list[ReliabilityBin]:
    """Bin samples by confidence into ``bins`` equal-width bins over (0, 1].

    Every bin appears in the output, empty ones with count 0 and zero means.
    """
    p = _check_probs_matrix(probs)
    n = p.shape[0]
    y = check_labels(labels, p.shape[1])
    if y.shape[0] != n:
        raise ValidationError(f"got {n} prob rows but {y.shape[0]} labels")
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == y).astype(np.float64)
    idx = np.ceil(conf * bins).astype(np.int64)
    idx = np.clip(idx, 1, bins)
    table = []
    for m in range(1, bins + 1):
        mask = idx == m
        count = int(mask.sum())
        if count:
            mean_conf = float(conf[mask].mean())
            mean_acc = float(correct[mask].mean())
        else:
            mean_conf = 0.0
            mean_acc = 0.0
        table.append(
            ReliabilityBin(m, (m - 1) / bins, m / bins, count, mean_conf, mean_acc)
        )
    return table


def ece_from_table(table: list[ReliabilityBin], n: int) -> float:
    """Weighted mean |accuracy - confidence| over the bins of a reliability table."""
    if n <= 0:
        raise ValidationError("n must be positive")
    return float(
        sum(b.count / n * abs(b.mean_acc - b.mean_conf) for b in table)
    )


def ece(probs, labels, bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error of softmax probabilities against labels."""
    p = _check_probs_matrix(probs)
    return ece_from_table(reliability_table(p, labels, bins), p.shape[0])


def logit_stats(logits) -> LogitStats:
    """Mean norm and mean range over the rows of a logit matrix."""
    l = as_float_matrix(logits, "logits")
    return LogitStats(
        mean_norm=float(norm_rows(l).mean()),
        mean_range=float(range_rows(l).mean()),
    )


def evaluate(
    probs,
    logits,
    labels,
    bins: int = DEFAULT_BINS,
    method: str = "",
    calib: str = "",
    dataset: str = "",
) -> EvalReport:
    """Build an :class:`EvalReport` from probabilities, logits, and labels.

    The report's ``ece`` is computed from its own reliability table, so the
    two are consistent by construction.
    """
    p = _check_probs_matrix(probs)
    l = as_float_matrix(logits, "logits")
    if l.shape != p.shape:
        raise ValidationError(f"logits shape {l.shape} != probs shape {p.shape}")
    y = check_labels(labels, p.shape[1])
    table = reliability_table(p, y, bins)
    stats = logit_stats(l)
    preds = np.argmax(p, axis=1)
    return EvalReport(
        acc=accuracy(preds, y),
        ece=ece_from_table(table, p.shape[0]),
        mean_logit_norm=stats.mean_norm,
        mean_logit_range=stats.mean_range,
        n=p.shape[0],
        method=method,
        calib=calib,
        dataset=dataset,
        bins=table,
    )


# ---------------------------------------------------------------------------
# CSV rendering and parsing
# ---------------------------------------------------------------------------

REPORT_HEADER = "method,calib,dataset,acc,ece,mean_logit_norm,mean_logit_range,n"
RELIABILITY_HEADER = "bin,lo,hi,count,mean_conf,mean_acc"


def _fmt(x: float) -> str:
    return repr(float(x))


def _check_label_token(token: str, name: str) -> str:
    if any(ch in token for ch in (",", "\n", "\r")):
        raise ValidationError(f"{name} {token!r} may not contain commas or newlines")
    return token


def report_to_row(report: EvalReport) -> str:
    """Render one report as a CSV row (no trailing newline)."""
    parts = [
        _check_label_token(report.method, "method"),
        _check_label_token(report.calib, "calib"),
        _check_label_token(report.dataset, "dataset"),
        _fmt(report.acc),
        _fmt(report.ece),
        _fmt(report.mean_logit_norm),
        _fmt(report.mean_logit_range),
        str(int(report.n)),
    ]
    return ",".join(parts)


def report_from_row(row: str) -> EvalReport:
    """Parse one CSV row back into an :class:`EvalReport` (without bins)."""
    parts = row.strip().split(",")
    if len(parts) != 8:
        raise ValidationError(f"report row needs 8 fields, got {len(parts)}: {row!r}")
    method, calib, dataset = parts[0], parts[1], parts[2]
    try:
        acc, e, norm, rng = (float(p) for p in parts[3:7])
        n = int(parts[7])
    except ValueError as exc:
        raise ValidationError(f"report row has non-numeric fields: {row!r}") from exc
    return EvalReport(
        acc=acc, ece=e, mean_logit_norm=norm, mean_logit_range=rng, n=n,
        method=method, calib=calib, dataset=dataset,
    )


def format_report_csv(reports: list[EvalReport]) -> str:
    """Render reports as a CSV document with header and trailing newline."""
    lines = [REPORT_HEADER]
    lines.extend(report_to_row(r) for r in reports)
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[EvalReport]:
    """Parse a CSV document produced by :func:`format_report_csv`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != REPORT_HEADER:
        raise ValidationError("report CSV is missing the expected header")
    return [report_from_row(ln) for ln in lines[1:]]


def format_reliability_csv(table: list[ReliabilityBin]) -> str:
    """Render a reliability table as a CSV document."""
    lines = [RELIABILITY_HEADER]
    for b in table:
        lines.append(
            ",".join(
                [str(b.index), _fmt(b.lo), _fmt(b.hi), str(b.count),
                 _fmt(b.mean_conf), _fmt(b.mean_acc)]
            )
        )
    return "\n".join(lines) + "\n"


def parse_reliability_csv(text: str) -> list[ReliabilityBin]:
    """Parse a CSV document produced by :func:`format_reliability_csv`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != RELIABILITY_HEADER:
        raise ValidationError("reliability CSV is missing the expected header")
    table = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 6:
            raise ValidationError(f"reliability row needs 6 fields: {ln!r}")
        table.append(
            ReliabilityBin(
                int(parts[0]), float(parts[1]), float(parts[2]), int(parts[3]),
                float(parts[4]), float(parts[5]),
            )
        )
    return table
