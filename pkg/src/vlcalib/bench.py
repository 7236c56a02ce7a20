"""Synthetic benchmark and end-to-end experiment runner.

The synthetic task mimics a frozen image/text embedding space: class
directions drawn uniformly on the unit sphere, unit-norm image embeddings
scattered around them, and prototypes jittered from the true directions the
way an averaged prompt ensemble would be. A target domain adds a rotation in
a random 2-plane plus extra scatter, degrading both accuracy and
calibration.

``run_experiment`` wires generation, adaptation, calibration, and evaluation
together and returns one labeled report per domain. Experiment specs are
plain-text ``key=value`` files; every stage failure is re-raised with the
stage name prefixed so the command line can report where a run died.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ._validation import check_unit_rows
from .adapters import METHODS, TrainConfig, adapter_logits, train_adapter
from .calibration import sals_rows
from .core import softmax_rows
from .errors import ConfigurationError, ValidationError, VlcalibError
from .formats import Dataset, load_dataset, read_matrix, write_labels, write_matrix
from .metrics import DEFAULT_BINS, EvalReport, evaluate
from .tta import TtaConfig, tta_predict_batch
from .zeroshot import DEFAULT_TEMPERATURE, PrototypeSet, zs_logits, zs_range_table

EXPERIMENT_METHODS = ("zeroshot",) + METHODS + ("tta",)
CALIB_CHOICES = ("none", "zs-norm", "penalty", "sals")


@dataclass
class SynthConfig:
    """Parameters of the synthetic embedding benchmark.

    ``sigma_src``/``sigma_tgt`` are per-coordinate Gaussian scatter around
    the class direction before renormalization; ``rotation`` (radians) spins
    the target domain inside a random 2-plane; ``prompt_jitter`` perturbs the
    prototypes away from the true class directions. ``temperature`` scales
    the cosine logits; ``tta_views``/``view_noise`` control the augmented
    view batches used by test-time adaptation.

    The default dimension is deliberately smaller than the class count, so
    class directions must overlap the way fine-grained categories do in a
    real embedding space. That overlap is what makes full-batch fine-tuning
    inflate logit ranges (and overshoot in confidence) relative to the
    frozen zero-shot classifier, while leaving the zero-shot range wide
    enough that range penalties bind mostly from above.
    """

    classes: int = 10
    dim: int = 8
    shots: int = 16
    test_n: int = 1000
    sigma_src: float = 0.15
    sigma_tgt: float = 0.35
    rotation: float = 0.3
    prompt_jitter: float = 0.05
    temperature: float = 0.1
    tta_views: int = 64
    view_noise: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ValidationError(f"classes must be >= 2, got {self.classes}")
        if self.dim < 2:
            raise ValidationError(f"dim must be >= 2, got {self.dim}")
        if self.shots < 1:
            raise ValidationError(f"shots must be >= 1, got {self.shots}")
        if self.test_n < 1:
            raise ValidationError(f"test_n must be >= 1, got {self.test_n}")
        for name in ("sigma_src", "sigma_tgt", "prompt_jitter", "view_noise"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.tta_views < 1:
            raise ValidationError(f"tta_views must be >= 1, got {self.tta_views}")


def _streams(config: SynthConfig):
    # One child stream per consumer keeps every artifact reproducible on its
    # own: supports, domains, and view batches never share draws.
    root = np.random.default_rng(config.seed)
    return root.spawn(6)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1)[:, None]


def _scatter(rng, dirs: np.ndarray, labels: np.ndarray, sigma: float) -> np.ndarray:
    noise = rng.normal(size=(labels.shape[0], dirs.shape[1]))
    return _unit_rows(dirs[labels] + sigma * noise)


def _rotation_plane(rng, dim: int) -> tuple[np.ndarray, np.ndarray]:
    u = rng.normal(size=dim)
    u = u / np.linalg.norm(u)
    v = rng.normal(size=dim)
    v = v - (v @ u) * u
    v = v / np.linalg.norm(v)
    return u, v


def _rotate(x: np.ndarray, u: np.ndarray, v: np.ndarray, angle: float) -> np.ndarray:
    a = x @ u
    b = x @ v
    cos_m1 = np.cos(angle) - 1.0
    sin = np.sin(angle)
    return x + np.outer(a * cos_m1 - b * sin, u) + np.outer(a * sin + b * cos_m1, v)


def synth_generate(config: SynthConfig) -> tuple[Dataset, Dataset, PrototypeSet]:
    """Generate (source test set, target test set, prototypes).

    Labels cycle through the classes round-robin; the target domain reuses
    the source class directions but rotates every embedding by
    ``config.rotation`` radians in a fixed random 2-plane and scatters with
    ``sigma_tgt``.
    """
    dirs_rng, proto_rng, _, src_rng, tgt_rng, _ = _streams(config)
    k, d = config.classes, config.dim
    dirs = _unit_rows(dirs_rng.normal(size=(k, d)))
    proto = dirs + config.prompt_jitter * proto_rng.normal(size=(k, d))
    protos = PrototypeSet(
        prototypes=_unit_rows(proto), temperature=config.temperature
    )
    labels = np.arange(config.test_n, dtype=np.int64) % k
    source = Dataset(_scatter(src_rng, dirs, labels, config.sigma_src), labels.copy(), k)
    u, v = _rotation_plane(tgt_rng, d)
    tgt_feats = _rotate(
        _scatter(tgt_rng, dirs, labels, config.sigma_tgt), u, v, config.rotation
    )
    target = Dataset(check_unit_rows(tgt_feats, "target features"), labels.copy(), k)
    return source, target, protos


def synth_support(config: SynthConfig) -> Dataset:
    """Generate the few-shot support set: ``shots`` source-domain samples per
    class, class-ordered, drawn from a stream disjoint from the test sets."""
    dirs_rng, _, sup_rng, _, _, _ = _streams(config)
    k, d = config.classes, config.dim
    dirs = _unit_rows(dirs_rng.normal(size=(k, d)))
    labels = np.repeat(np.arange(k, dtype=np.int64), config.shots)
    return Dataset(_scatter(sup_rng, dirs, labels, config.sigma_src), labels, k)


def synth_views(config: SynthConfig, features: np.ndarray) -> list[np.ndarray]:
    """Build one view batch per feature row: the row itself first, then
    ``tta_views - 1`` renormalized noisy copies."""
    _, _, _, _, _, views_rng = _streams(config)
    batches = []
    for row in np.asarray(features, dtype=np.float64):
        noise = views_rng.normal(size=(config.tta_views - 1, row.shape[0]))
        extra = _unit_rows(row[None, :] + config.view_noise * noise) \
            if config.tta_views > 1 else np.empty((0, row.shape[0]))
        batches.append(np.vstack([row[None, :], extra]))
    return batches


# ---------------------------------------------------------------------------
# Experiment spec
# ---------------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    """One experiment: a method, a calibration choice, and its data source.

    With no file paths set, the synthetic benchmark is generated from
    ``synth`` (re-seeded by ``seed``). File-based runs read VLF1/VLL1 pairs
    per domain plus a prototype matrix; adapter methods additionally need
    support files, and ``tta`` needs per-domain view manifests.
    """

    method: str = "zeroshot"
    calib: str = "none"
    range_factor: float = 1.0
    bins: int = DEFAULT_BINS
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tta: TtaConfig = field(default_factory=TtaConfig)
    temperature: float | None = None
    prototypes_path: str = ""
    source_features: str = ""
    source_labels: str = ""
    target_features: str = ""
    target_labels: str = ""
    support_features: str = ""
    support_labels: str = ""
    source_views: str = ""
    target_views: str = ""

    def validate(self) -> None:
        if self.method not in EXPERIMENT_METHODS:
            raise ConfigurationError(
                f"method must be one of {EXPERIMENT_METHODS}, got {self.method!r}"
            )
        if self.calib not in CALIB_CHOICES:
            raise ConfigurationError(
                f"calib must be one of {CALIB_CHOICES}, got {self.calib!r}"
            )
        if not self.range_factor > 0:
            raise ConfigurationError(
                f"range_factor must be > 0, got {self.range_factor}"
            )
        if self.range_factor != 1.0 and self.calib != "sals":
            raise ConfigurationError(
                "range_factor other than 1 requires calib=sals"
            )
        if self.method == "zeroshot" and self.calib in ("zs-norm", "penalty"):
            raise ConfigurationError(
                f"calib={self.calib} trains an adapter; zeroshot has none"
            )
        if self.bins < 1:
            raise ConfigurationError(f"bins must be >= 1, got {self.bins}")
        file_mode = bool(self.prototypes_path)
        if file_mode:
            has_src = bool(self.source_features and self.source_labels)
            has_tgt = bool(self.target_features and self.target_labels)
            if not (has_src or has_tgt):
                raise ConfigurationError(
                    "file-based runs need features+labels for at least one domain"
                )
            if self.method in METHODS and not (
                self.support_features and self.support_labels
            ):
                raise ConfigurationError(
                    f"method={self.method} needs support.features and support.labels"
                )


_LOSS_MODE_BY_CALIB = {"none": "plain", "sals": "plain", "zs-norm": "zs_norm",
                       "penalty": "penalty"}
_TTA_MODE_BY_CALIB = {"none": "none", "sals": "sals", "zs-norm": "zs_norm",
                      "penalty": "penalty"}


def _coerce_like(default, value: str):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


_SPEC_PATH_KEYS = {
    "prototypes": "prototypes_path",
    "features.source": "source_features",
    "labels.source": "source_labels",
    "features.target": "target_features",
    "labels.target": "target_labels",
    "support.features": "support_features",
    "support.labels": "support_labels",
    "views.source": "source_views",
    "views.target": "target_views",
}


def apply_spec_entry(spec: ExperimentSpec, key: str, value: str) -> None:
    """Set one ``key=value`` entry on an :class:`ExperimentSpec` in place."""
    key = key.strip()
    value = value.strip()
    if key in _SPEC_PATH_KEYS:
        setattr(spec, _SPEC_PATH_KEYS[key], value)
        return
    if key == "temperature":
        spec.temperature = float(value)
        return
    for section, obj in (("synth", spec.synth), ("train", spec.train),
                         ("tta", spec.tta)):
        prefix = section + "."
        if key.startswith(prefix):
            name = key[len(prefix):]
            names = {f.name for f in fields(obj)}
            if name not in names:
                raise ConfigurationError(f"unknown spec key {key!r}")
            setattr(obj, name, _coerce_like(getattr(obj, name), value))
            return
    if key in ("method", "calib"):
        setattr(spec, key, value)
        return
    if key == "range_factor":
        spec.range_factor = float(value)
        return
    if key == "bins":
        spec.bins = int(value)
        return
    if key == "seed":
        spec.seed = int(value)
        return
    raise ConfigurationError(f"unknown spec key {key!r}")


def parse_spec_file(path: str) -> ExperimentSpec:
    """Read a ``key=value`` experiment spec; ``#`` starts a comment line."""
    spec = ExperimentSpec()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            apply_spec_entry(spec, key, value)
    return spec


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, VlcalibError):
                raise type(exc)(f"{name}: {exc}") from exc
            return False

    return _Ctx()


def load_view_manifest(manifest_path: str) -> list[np.ndarray]:
    """Read a view-batch manifest: one VLF1 path per line, one batch per
    test sample, in sample order. Relative paths resolve against the
    manifest's directory."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    batches = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            path = line if os.path.isabs(line) else os.path.join(base, line)
            batches.append(read_matrix(path))
    if not batches:
        raise ValidationError(f"{manifest_path}: manifest lists no view batches")
    return batches


def _gather_data(spec: ExperimentSpec):
    """Resolve an experiment's data source into (domains, support, protos, views)."""
    if spec.prototypes_path:
        proto = check_unit_rows(read_matrix(spec.prototypes_path), "prototypes")
        temperature = spec.temperature
        if temperature is None:
            temperature = DEFAULT_TEMPERATURE
        protos = PrototypeSet(prototypes=proto, temperature=temperature)
        k = protos.class_count
        domains = []
        views = {}
        if spec.source_features:
            domains.append(("source", load_dataset(spec.source_features,
                                                   spec.source_labels, k)))
            if spec.source_views:
                views["source"] = load_view_manifest(spec.source_views)
        if spec.target_features:
            domains.append(("target", load_dataset(spec.target_features,
                                                   spec.target_labels, k)))
            if spec.target_views:
                views["target"] = load_view_manifest(spec.target_views)
        support = None
        if spec.support_features:
            support = load_dataset(spec.support_features, spec.support_labels, k)
        return domains, support, protos, views
    synth = replace(spec.synth, seed=spec.seed)
    source, target, protos = synth_generate(synth)
    support = synth_support(synth)
    domains = [("source", source), ("target", target)]
    views = {}
    if spec.method == "tta":
        views["source"] = synth_views(synth, source.features)
        views["target"] = synth_views(synth, target.features)
    return domains, support, protos, views


def run_experiment(spec: ExperimentSpec) -> list[EvalReport]:
    """Run one experiment end to end, returning one report per domain.

    Stage names ("generate", "train", "adapt", "calibrate", "evaluate") are
    prefixed onto any toolkit error raised inside that stage.
    """
    spec.validate()
    with _stage("generate"):
        domains, support, protos, views = _gather_data(spec)

    params = None
    if spec.method in METHODS:
        with _stage("train"):
            if support is None:
                raise ConfigurationError("adapter methods need a support set")
            cfg = replace(
                spec.train,
                loss_mode=_LOSS_MODE_BY_CALIB[spec.calib],
                seed=spec.seed,
            )
            params, _ = train_adapter(spec.method, support, protos, config=cfg)

    reports = []
    for name, dataset in domains:
        if spec.method == "tta":
            with _stage("adapt"):
                if name not in views:
                    raise ConfigurationError(f"tta needs view batches for {name}")
                cfg = replace(
                    spec.tta,
                    calib_mode=_TTA_MODE_BY_CALIB[spec.calib],
                    range_factor=spec.range_factor,
                    seed=spec.seed,
                )
                probs, logits = tta_predict_batch(views[name], protos, cfg)
        else:
            with _stage("calibrate"):
                if spec.method == "zeroshot":
                    logits = zs_logits(dataset.features, protos)
                else:
                    logits = adapter_logits(params, dataset.features, protos)
                if spec.calib in ("sals", "zs-norm"):
                    table = zs_range_table(zs_logits(dataset.features, protos))
                    factor = spec.range_factor if spec.calib == "sals" else 1.0
                    logits = sals_rows(logits, table, factor=factor)
                probs = softmax_rows(logits)
        with _stage("evaluate"):
            reports.append(
                evaluate(
                    probs, logits, dataset.labels, bins=spec.bins,
                    method=spec.method, calib=spec.calib, dataset=name,
                )
            )
    return reports


def write_text(path: str, text: str) -> None:
    """Atomically write a small text file (write to temp, rename over)."""
    from .formats import _atomic_write

    _atomic_write(path, text.encode("utf-8"))


def check_or_bless_golden(text: str, golden_path: str, bless: bool) -> bool:
    """Compare ``text`` against a golden file, or overwrite it under ``bless``.

    Returns True when the golden matches (or was just blessed)."""
    if bless:
        write_text(golden_path, text)
        return True
    if not os.path.exists(golden_path):
        return False
    with open(golden_path, "r", encoding="utf-8") as fh:
        return fh.read() == text


def save_synth(config: SynthConfig, out_dir: str) -> dict:
    """Generate the synthetic benchmark and write it under ``out_dir``.

    Writes per-split feature/label files, the prototype matrix, and a
    ``meta.txt`` with the generator settings. Returns the path map.
    """
    source, target, protos = synth_generate(config)
    support = synth_support(config)
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, ds in (("support", support), ("source", source), ("target", target)):
        fpath = os.path.join(out_dir, f"{name}_features.vlf")
        lpath = os.path.join(out_dir, f"{name}_labels.vll")
        write_matrix(fpath, ds.features)
        write_labels(lpath, ds.labels)
        paths[f"{name}_features"] = fpath
        paths[f"{name}_labels"] = lpath
    ppath = os.path.join(out_dir, "prototypes.vlf")
    write_matrix(ppath, protos.prototypes)
    paths["prototypes"] = ppath
    meta_lines = [f"{f.name}={getattr(config, f.name)!r}" for f in fields(config)]
    write_text(os.path.join(out_dir, "meta.txt"), "\n".join(meta_lines) + "\n")
    return paths
