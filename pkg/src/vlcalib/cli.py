"""Command-line front end.

Subcommands::

    synth-gen      generate the synthetic benchmark to a directory
    zeroshot       evaluate the frozen zero-shot classifier on a dataset
    train-adapter  train an adapter on a support set and save it
    eval           evaluate a saved adapter (optionally with --sals)
    sals           evaluate a saved adapter with post-hoc range rescaling
    tta            test-time adaptation over per-sample view batches
    logit-stats    mean logit norm/range of a model on a dataset
    reliability    write a reliability-table CSV
    run            run an experiment spec end to end

All failures raised by the toolkit exit with status 2 and a one-line
message; ``run --golden`` exits with status 3 on a golden-file mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys

from .adapters import (
    METHODS,
    TrainConfig,
    adapter_logits,
    load_adapter,
    save_adapter,
    train_adapter,
)
from .bench import (
    CALIB_CHOICES,
    EXPERIMENT_METHODS,
    ExperimentSpec,
    SynthConfig,
    apply_spec_entry,
    check_or_bless_golden,
    load_view_manifest,
    parse_spec_file,
    run_experiment,
    save_synth,
    write_text,
)
from .calibration import sals_rows
from .core import norm_rows, range_rows, softmax_rows
from .errors import ConfigurationError, VlcalibError
from .formats import load_dataset
from .metrics import (
    DEFAULT_BINS,
    evaluate,
    format_reliability_csv,
    format_report_csv,
    logit_stats,
)
from .tta import TTA_CALIB_MODES, TtaConfig, tta_predict_batch
from .zeroshot import (
    DEFAULT_TEMPERATURE,
    PrototypeSet,
    build_prototypes,
    load_prompt_ensemble,
    zs_logits,
    zs_range_table,
)
from ._validation import check_unit_rows
from .formats import read_matrix

_CALIB_TO_LOSS = {"none": "plain", "zs-norm": "zs_norm", "penalty": "penalty"}
_CALIB_TO_TTA = {"none": "none", "zs-norm": "zs_norm", "penalty": "penalty",
                 "sals": "sals"}


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", required=True, help="VLF1 embedding matrix")
    p.add_argument("--labels", required=True, help="VLL1 label file")


def _add_proto_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    group = p.add_mutually_exclusive_group(required=required)
    group.add_argument("--prototypes", help="VLF1 prototype matrix (one row per class)")
    group.add_argument(
        "--prompts-manifest",
        help="text manifest of per-class prompt-embedding matrices, one path per line",
    )
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE,
                   help="softmax temperature (default %(default)s)")
    p.add_argument("--no-renorm-prototypes", action="store_true",
                   help="keep raw prototype means instead of renormalizing to unit norm")


def _add_report_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bins", type=int, default=DEFAULT_BINS,
                   help="confidence bins for ECE (default %(default)s)")
    p.add_argument("--dataset-label", default="dataset",
                   help="dataset column value in the report CSV")
    p.add_argument("--report", help="write the report CSV here (default: stdout)")
    p.add_argument("--reliability", help="also write a reliability-table CSV here")


def _load_protos(args) -> PrototypeSet:
    renorm = not args.no_renorm_prototypes
    if args.prompts_manifest:
        blocks = load_prompt_ensemble(args.prompts_manifest)
        return build_prototypes(blocks, temperature=args.temperature,
                                renormalize=renorm)
    proto = read_matrix(args.prototypes)
    if renorm:
        proto = check_unit_rows(proto, "prototypes")
    return PrototypeSet(prototypes=proto, temperature=args.temperature)


def _emit_report(args, probs, logits, labels, method: str, calib: str) -> None:
    report = evaluate(probs, logits, labels, bins=args.bins, method=method,
                      calib=calib, dataset=args.dataset_label)
    text = format_report_csv([report])
    if args.report:
        write_text(args.report, text)
    else:
        sys.stdout.write(text)
    if args.reliability:
        write_text(args.reliability, format_reliability_csv(report.bins))


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_synth_gen(args) -> int:
    config = SynthConfig(
        classes=args.classes, dim=args.dim, shots=args.shots, test_n=args.test_n,
        sigma_src=args.sigma_src, sigma_tgt=args.sigma_tgt, rotation=args.rotation,
        prompt_jitter=args.prompt_jitter, temperature=args.temperature,
        tta_views=args.tta_views, view_noise=args.view_noise, seed=args.seed,
    )
    paths = save_synth(config, args.out)
    for key in sorted(paths):
        print(f"{key}={paths[key]}")
    return 0


def _cmd_zeroshot(args) -> int:
    protos = _load_protos(args)
    data = load_dataset(args.features, args.labels, protos.class_count)
    logits = zs_logits(data.features, protos)
    if args.sals:
        table = zs_range_table(logits)
        logits = sals_rows(logits, table, factor=args.range_factor)
    _emit_report(args, softmax_rows(logits), logits, data.labels, "zeroshot",
                 "sals" if args.sals else "none")
    return 0


def _cmd_train_adapter(args) -> int:
    protos = _load_protos(args)
    data = load_dataset(args.features, args.labels, protos.class_count)
    config = TrainConfig(
        epochs=args.epochs, lr=args.lr, momentum=args.momentum,
        loss_mode=_CALIB_TO_LOSS[args.calib], penalty_weight=args.penalty_weight,
        lr_schedule=args.schedule, seed=args.seed,
    )
    params, history = train_adapter(
        args.method, data, protos, config=config,
        blend=args.blend, scale=args.scale, sharpness=args.sharpness,
    )
    save_adapter(params, protos, args.out)
    print(f"trained {args.method} for {config.epochs} epochs; "
          f"final loss {history.loss[-1]:.6f}; saved to {args.out}")
    return 0


def _eval_like(args, force_sals: bool) -> int:
    params, protos = load_adapter(args.params)
    data = load_dataset(args.features, args.labels, protos.class_count)
    logits = adapter_logits(params, data.features, protos)
    use_sals = force_sals or args.sals
    if use_sals:
        table = zs_range_table(zs_logits(data.features, protos))
        logits = sals_rows(logits, table, factor=args.range_factor)
    _emit_report(args, softmax_rows(logits), logits, data.labels, params.method,
                 "sals" if use_sals else "none")
    return 0


def _cmd_eval(args) -> int:
    return _eval_like(args, force_sals=False)


def _cmd_sals(args) -> int:
    return _eval_like(args, force_sals=True)


def _cmd_tta(args) -> int:
    protos = _load_protos(args)
    data = load_dataset(args.features, args.labels, protos.class_count)
    batches = load_view_manifest(args.views_manifest)
    if len(batches) != len(data):
        raise ConfigurationError(
            f"{len(batches)} view batches for {len(data)} samples"
        )
    config = TtaConfig(
        lr=args.lr, steps=args.steps, select_fraction=args.select_fraction,
        calib_mode=_CALIB_TO_TTA[args.calib], penalty_weight=args.penalty_weight,
        weight_decay=args.weight_decay, range_factor=args.range_factor,
        seed=args.seed,
    )
    probs, logits = tta_predict_batch(batches, protos, config)
    _emit_report(args, probs, logits, data.labels, "tta", args.calib)
    return 0


def _cmd_logit_stats(args) -> int:
    if args.params:
        params, protos = load_adapter(args.params)
        data = load_dataset(args.features, args.labels, protos.class_count)
        logits = adapter_logits(params, data.features, protos)
    else:
        protos = _load_protos(args)
        data = load_dataset(args.features, args.labels, protos.class_count)
        logits = zs_logits(data.features, protos)
    if args.sals:
        table = zs_range_table(zs_logits(data.features, protos))
        logits = sals_rows(logits, table, factor=args.range_factor)
    stats = logit_stats(logits)
    print(f"mean_logit_norm={stats.mean_norm!r}")
    print(f"mean_logit_range={stats.mean_range!r}")
    if args.per_sample:
        lines = ["index,logit_norm,logit_range"]
        norms = norm_rows(logits)
        ranges = range_rows(logits)
        for i in range(logits.shape[0]):
            lines.append(f"{i},{float(norms[i])!r},{float(ranges[i])!r}")
        write_text(args.per_sample, "\n".join(lines) + "\n")
    return 0


def _cmd_reliability(args) -> int:
    if args.params:
        params, protos = load_adapter(args.params)
        data = load_dataset(args.features, args.labels, protos.class_count)
        logits = adapter_logits(params, data.features, protos)
        method = params.method
    else:
        protos = _load_protos(args)
        data = load_dataset(args.features, args.labels, protos.class_count)
        logits = zs_logits(data.features, protos)
        method = "zeroshot"
    if args.sals:
        table = zs_range_table(zs_logits(data.features, protos))
        logits = sals_rows(logits, table, factor=args.range_factor)
    report = evaluate(softmax_rows(logits), logits, data.labels, bins=args.bins,
                      method=method, calib="sals" if args.sals else "none",
                      dataset=args.dataset_label)
    write_text(args.out, format_reliability_csv(report.bins))
    print(f"acc={report.acc!r} ece={report.ece!r} n={report.n}")
    return 0


def _cmd_run(args) -> int:
    spec = parse_spec_file(args.spec) if args.spec else ExperimentSpec()
    for key, attr in (("method", "method"), ("calib", "calib")):
        value = getattr(args, attr)
        if value is not None:
            apply_spec_entry(spec, key, value)
    if args.range_factor is not None:
        spec.range_factor = args.range_factor
    if args.seed is not None:
        spec.seed = args.seed
    if args.bins is not None:
        spec.bins = args.bins
    for entry in args.set or []:
        if "=" not in entry:
            raise ConfigurationError(f"--set expects key=value, got {entry!r}")
        key, value = entry.split("=", 1)
        apply_spec_entry(spec, key, value)
    reports = run_experiment(spec)
    text = format_report_csv(reports)
    if args.report:
        write_text(args.report, text)
    else:
        sys.stdout.write(text)
    if args.plot_data:
        os.makedirs(args.plot_data, exist_ok=True)
        for r in reports:
            name = f"{r.method}_{r.calib}_{r.dataset}_reliability.csv"
            write_text(os.path.join(args.plot_data, name),
                       format_reliability_csv(r.bins))
    if args.golden:
        ok = check_or_bless_golden(text, args.golden, args.bless)
        if args.bless:
            print(f"blessed {args.golden}")
        elif not ok:
            print(f"golden mismatch: {args.golden}", file=sys.stderr)
            return 3
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlcalib",
        description="Calibration toolkit for frozen vision-language classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--test-n", type=int, default=1000)
    p.add_argument("--sigma-src", type=float, default=0.15)
    p.add_argument("--sigma-tgt", type=float, default=0.35)
    p.add_argument("--rotation", type=float, default=0.3)
    p.add_argument("--prompt-jitter", type=float, default=0.05)
    p.add_argument("--temperature", type=float, default=0.1)
    p.add_argument("--tta-views", type=int, default=64)
    p.add_argument("--view-noise", type=float, default=0.05)
    p.set_defaults(func=_cmd_synth_gen)

    p = sub.add_parser("zeroshot", help="evaluate the zero-shot classifier")
    _add_data_args(p)
    _add_proto_args(p)
    p.add_argument("--sals", action="store_true",
                   help="rescale logits into their (optionally shrunk) per-sample "
                        "zero-shot range")
    p.add_argument("--range-factor", type=float, default=1.0)
    _add_report_args(p)
    p.set_defaults(func=_cmd_zeroshot)

    p = sub.add_parser("train-adapter", help="train an adapter on a support set")
    p.add_argument("--method", required=True, choices=METHODS)
    _add_data_args(p)
    _add_proto_args(p)
    p.add_argument("--out", required=True, help="output directory for the adapter")
    p.add_argument("--calib", choices=("none", "zs-norm", "penalty"), default="none",
                   help="training-time calibration mode (default %(default)s)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--penalty-weight", type=float, default=10.0)
    p.add_argument("--schedule", choices=("cosine", "constant"), default="cosine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blend", type=float, default=None,
                   help="clip-adapter / tip-f blend coefficient")
    p.add_argument("--scale", type=float, default=None, help="taskres residual scale")
    p.add_argument("--sharpness", type=float, default=None, help="tip-f cache sharpness")
    p.set_defaults(func=_cmd_train_adapter)

    for name, handler, forced in (("eval", _cmd_eval, False), ("sals", _cmd_sals, True)):
        p = sub.add_parser(
            name,
            help="evaluate a saved adapter"
            + (" with post-hoc range rescaling" if forced else ""),
        )
        p.add_argument("--params", required=True, help="adapter directory")
        _add_data_args(p)
        if not forced:
            p.add_argument("--sals", action="store_true",
                           help="rescale logits into per-sample zero-shot ranges")
        p.add_argument("--range-factor", type=float, default=1.0,
                       help="shrink the zero-shot range about its midpoint")
        _add_report_args(p)
        p.set_defaults(func=handler)

    p = sub.add_parser("tta", help="test-time adaptation over view batches")
    _add_data_args(p)
    _add_proto_args(p)
    p.add_argument("--views-manifest", required=True,
                   help="text manifest of per-sample view-batch matrices")
    p.add_argument("--calib", choices=CALIB_CHOICES, default="none")
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--select-fraction", type=float, default=0.1)
    p.add_argument("--penalty-weight", type=float, default=10.0)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--range-factor", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    _add_report_args(p)
    p.set_defaults(func=_cmd_tta)

    p = sub.add_parser("logit-stats", help="mean logit norm and range of a model")
    _add_data_args(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--params", help="adapter directory")
    group.add_argument("--prototypes", help="VLF1 prototype matrix")
    p.add_argument("--prompts-manifest", help=argparse.SUPPRESS, default=None)
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p.add_argument("--no-renorm-prototypes", action="store_true")
    p.add_argument("--sals", action="store_true")
    p.add_argument("--range-factor", type=float, default=1.0)
    p.add_argument("--per-sample", help="write per-sample norm/range CSV here")
    p.set_defaults(func=_cmd_logit_stats)

    p = sub.add_parser("reliability", help="write a reliability-table CSV")
    _add_data_args(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--params", help="adapter directory")
    group.add_argument("--prototypes", help="VLF1 prototype matrix")
    p.add_argument("--prompts-manifest", help=argparse.SUPPRESS, default=None)
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p.add_argument("--no-renorm-prototypes", action="store_true")
    p.add_argument("--sals", action="store_true")
    p.add_argument("--range-factor", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--dataset-label", default="dataset")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_reliability)

    p = sub.add_parser("run", help="run an experiment spec end to end")
    p.add_argument("--spec", help="key=value experiment spec file")
    p.add_argument("--method", choices=EXPERIMENT_METHODS, default=None)
    p.add_argument("--calib", choices=CALIB_CHOICES, default=None)
    p.add_argument("--range-factor", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any spec entry (repeatable)")
    p.add_argument("--report", help="write the report CSV here (default: stdout)")
    p.add_argument("--plot-data", metavar="DIR",
                   help="write per-row reliability CSVs into DIR")
    p.add_argument("--golden", help="golden CSV to compare the report against")
    p.add_argument("--bless", action="store_true",
                   help="overwrite the golden file with this run's report")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VlcalibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
