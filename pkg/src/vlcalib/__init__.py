"""Calibration toolkit for frozen vision-language classifiers.

Zero-shot classification from class prototypes, few-shot adapters trained
full batch without automatic differentiation, training-time logit-range
calibration (range normalization and range penalties), post-hoc logit
rescaling, episodic test-time adaptation, and calibration metrics with
deterministic CSV reporting.
"""

import os as _os

# Reductions in threaded BLAS backends can reorder float accumulation and
# perturb low-order bits between machines; the toolkit's contracts include
# byte-identical CSV output for identical inputs, so default the linear
# algebra backends to one thread (an explicit environment setting wins).
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")
del _os, _var

from .adapters import (  # noqa: E402
    AdapterParams,
    ClipAdapterClassifier,
    ClipAdapterParams,
    LinearProbeClassifier,
    LinearProbeParams,
    TaskResClassifier,
    TaskResParams,
    TipAdapterClassifier,
    TipAdapterParams,
    TrainConfig,
    TrainHistory,
    adapter_logits,
    ce_loss_and_grad,
    init_adapter,
    load_adapter,
    save_adapter,
    train_adapter,
)
from .bench import (  # noqa: E402
    ExperimentSpec,
    SynthConfig,
    apply_spec_entry,
    parse_spec_file,
    run_experiment,
    save_synth,
    synth_generate,
    synth_support,
    synth_views,
)
from .calibration import (  # noqa: E402
    RangePair,
    penalty_term,
    sals,
    sals_rows,
    scale_range_table,
    scaled_range,
    zs_norm_rows,
    zs_norm_transform,
)
from .core import argmax_index, entropy, logit_norm, logit_range, softmax  # noqa: E402
from .errors import (  # noqa: E402
    AdaptationError,
    ConfigurationError,
    CorruptFileError,
    DegeneracyError,
    FileFormatError,
    InvalidHeaderError,
    TrainingError,
    ValidationError,
    VlcalibError,
)
from .formats import (  # noqa: E402
    Dataset,
    load_dataset,
    read_labels,
    read_matrix,
    write_labels,
    write_matrix,
)
from .metrics import (  # noqa: E402
    EvalReport,
    LogitStats,
    ReliabilityBin,
    accuracy,
    ece,
    evaluate,
    format_reliability_csv,
    format_report_csv,
    logit_stats,
    parse_reliability_csv,
    parse_report_csv,
    reliability_table,
)
from .tta import (  # noqa: E402
    TtaConfig,
    select_confident_views,
    tta_adapt,
    tta_predict,
    tta_predict_batch,
)
from .zeroshot import (  # noqa: E402
    PrototypeSet,
    ZeroShotClassifier,
    build_prototypes,
    load_prompt_ensemble,
    zs_logits,
    zs_range_table,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "AdaptationError",
    "ClipAdapterClassifier",
    "ClipAdapterParams",
    "ConfigurationError",
    "CorruptFileError",
    "Dataset",
    "DegeneracyError",
    "EvalReport",
    "ExperimentSpec",
    "FileFormatError",
    "InvalidHeaderError",
    "LinearProbeClassifier",
    "LinearProbeParams",
    "LogitStats",
    "PrototypeSet",
    "RangePair",
    "ReliabilityBin",
    "SynthConfig",
    "TaskResClassifier",
    "TaskResParams",
    "TipAdapterClassifier",
    "TipAdapterParams",
    "TrainConfig",
    "TrainHistory",
    "TrainingError",
    "TtaConfig",
    "ValidationError",
    "VlcalibError",
    "ZeroShotClassifier",
    "accuracy",
    "adapter_logits",
    "apply_spec_entry",
    "argmax_index",
    "build_prototypes",
    "ce_loss_and_grad",
    "ece",
    "entropy",
    "evaluate",
    "format_reliability_csv",
    "format_report_csv",
    "init_adapter",
    "load_adapter",
    "load_dataset",
    "load_prompt_ensemble",
    "logit_norm",
    "logit_range",
    "logit_stats",
    "parse_reliability_csv",
    "parse_report_csv",
    "parse_spec_file",
    "penalty_term",
    "read_labels",
    "read_matrix",
    "reliability_table",
    "run_experiment",
    "sals",
    "sals_rows",
    "save_adapter",
    "save_synth",
    "scale_range_table",
    "scaled_range",
    "select_confident_views",
    "softmax",
    "synth_generate",
    "synth_support",
    "synth_views",
    "train_adapter",
    "tta_adapt",
    "tta_predict",
    "tta_predict_batch",
    "write_labels",
    "write_matrix",
    "zs_logits",
    "zs_norm_rows",
    "zs_norm_transform",
    "zs_range_table",
]
