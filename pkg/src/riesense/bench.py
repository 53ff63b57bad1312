"""Experiment driver: configuration, splits, training, evaluation and ablations.

An experiment generates (or loads) a dataset, splits it per class, derives a
shifted copy of the test split, standardizes everything with training
statistics, optionally augments the training split, trains one model and
reports metrics on both test sets.  The shifted test set carries the headline
numbers.
"""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import autodiff as ad
from .augment import AugmentConfig, augment_dataset, fit_encoder, jitter_dataset, label_fidelity
from .dataset import load_dataset
from .errors import ConfigError, ContractError, NumericalFailure
from .metrics import SCHEMA_VERSION, MetricsReport, canonical_json, text_table
from .model import ModelConfig, RieModel, load_checkpoint, save_checkpoint
from .signals import GeneratorConfig, ShiftParams, generate_dataset, shift_dataset, standardize

log = logging.getLogger(__name__)

ABLATIONS = ("full", "euclidean-attention", "no-augment", "literal-eq4")
_ABLATION_VARIANT = {"full": "full", "euclidean-attention": "euclidean", "no-augment": "full", "literal-eq4": "literal"}


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 6
    batch_size: int = 32
    lr: float = 1e-3
    split: float = 0.8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.split < 1:
            raise ConfigError(f"split must lie in (0, 1), got {self.split}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines one run.

    ``model`` holds the architecture hyperparameters; its ``channels``,
    ``window`` and ``classes`` are overwritten from the dataset at run time.
    """

    dataset: str | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    augment: bool = True
    augment_config: AugmentConfig = field(default_factory=AugmentConfig)
    ablation: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def uses_augmentation(self):
        return self.augment and self.ablation != "no-augment"

    @property
    def variant(self):
        return _ABLATION_VARIANT[self.ablation]


# ---------------------------------------------------------------- config files

_DATA_KEYS = {"path", "counts_per_class", "channels", "timesteps", "snr_db", "shift"}
_SHIFT_KEYS = {"gain", "noise_db", "warp"}
_MODEL_KEYS = {"patch", "model_dim", "layers", "heads", "ff_dim", "initial_curvature"}
_TRAIN_KEYS = {"epochs", "batch_size", "lr", "split"}
_AUGMENT_KEYS = {"enabled", "latent_dim", "c_aug", "sigma", "t_range", "count"}
_TOP_KEYS = {"seed", "ablation", "data", "model", "train", "augment"}


def _section(d, name, allowed):
    sub = d.get(name)
    if sub is None:
        return {}
    if not isinstance(sub, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sub


def config_from_dict(d):
    """Build an :class:`ExperimentConfig` from the nested mapping of a config file."""
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    data = _section(d, "data", _DATA_KEYS)
    shift = _section(data, "shift", _SHIFT_KEYS)
    model = _section(d, "model", _MODEL_KEYS)
    train = _section(d, "train", _TRAIN_KEYS)
    aug = _section(d, "augment", _AUGMENT_KEYS)
    try:
        seed = int(d.get("seed", 0))
        default_gen = GeneratorConfig()
        counts = data.get("counts_per_class", default_gen.counts[0])
        counts = tuple(counts) if isinstance(counts, (list, tuple)) else (int(counts),) * len(default_gen.counts)
        generator = GeneratorConfig(
            counts=counts,
            channels=int(data.get("channels", default_gen.channels)),
            timesteps=int(data.get("timesteps", default_gen.timesteps)),
            snr_db=float(data.get("snr_db", default_gen.snr_db)),
            shift=ShiftParams(**{**asdict(default_gen.shift), **shift}),
            seed=seed,
        )
        model_cfg = ModelConfig(**{"channels": generator.channels, "window": generator.timesteps, **model})
        aug_defaults = asdict(AugmentConfig())
        aug_fields = {k: v for k, v in aug.items() if k != "enabled"}
        if "t_range" in aug_fields:
            aug_fields["t_range"] = tuple(aug_fields["t_range"])
        augment_config = AugmentConfig(**{**aug_defaults, **aug_fields, "seed": seed})
        return ExperimentConfig(
            dataset=data.get("path"),
            generator=generator,
            model=model_cfg,
            train=TrainSettings(**train),
            augment=bool(aug.get("enabled", True)),
            augment_config=augment_config,
            ablation=d.get("ablation", "full"),
            seed=seed,
        )
    except ConfigError:
        raise
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(config):
    """Inverse of :func:`config_from_dict`."""
    g, m, a = config.generator, config.model, config.augment_config
    counts = list(g.counts)
    return {
        "seed": int(config.seed),
        "ablation": config.ablation,
        "data": {
            "path": config.dataset,
            "counts_per_class": counts[0] if len(set(counts)) == 1 else counts,
            "channels": g.channels,
            "timesteps": g.timesteps,
            "snr_db": g.snr_db,
            "shift": asdict(g.shift),
        },
        "model": {k: getattr(m, k) for k in sorted(_MODEL_KEYS)},
        "train": asdict(config.train),
        "augment": {
            "enabled": config.augment,
            "latent_dim": a.latent_dim,
            "c_aug": a.c_aug,
            "sigma": a.sigma,
            "t_range": list(a.t_range),
            "count": a.count,
        },
    }


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        return config_from_dict(yaml.safe_load(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None


def write_config(config, path):
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False))
    return path


def with_overrides(config, seed=None, ablation=None, no_augment=False, epochs=None):
    """Apply command-line overrides; the seed propagates to data and augmentation."""
    if seed is not None:
        config = replace(
            config,
            seed=seed,
            generator=replace(config.generator, seed=seed),
            augment_config=replace(config.augment_config, seed=seed),
        )
    if ablation is not None:
        config = replace(config, ablation=ablation)
    if no_augment:
        config = replace(config, augment=False)
    if epochs is not None:
        config = replace(config, train=replace(config.train, epochs=epochs))
    return config


def config_hash(config):
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- data

def split_dataset(dataset, fraction, seed):
    """Stratified, disjoint train/test split; the same seed gives the same split."""
    if not 0 < fraction < 1:
        raise ContractError(f"split fraction must lie in (0, 1), got {fraction}")
    train_idx, test_idx = [], []
    for k in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == k)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ContractError(f"class {dataset.class_names[k]!r} has fewer than 2 samples")
        rng = np.random.default_rng([seed, 3, k])
        members = rng.permutation(members)
        n_train = int(round(fraction * len(members)))
        n_train = min(max(n_train, 1), len(members) - 1)
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)


def source_dataset(config):
    if config.dataset is not None:
        return load_dataset(config.dataset)
    return generate_dataset(replace(config.generator, seed=config.seed))


@dataclass
class PreparedData:
    train: object
    test: object
    shifted: object

    @property
    def stats(self):
        return self.train.stats


def prepare_data(config, dataset=None):
    """Split, shift the test split and standardize with training statistics."""
    dataset = source_dataset(config) if dataset is None else dataset
    train, test = split_dataset(dataset, config.train.split, config.seed)
    shifted = shift_dataset(test, config.generator.shift, config.seed)
    train, test, shifted = standardize(train, test, shifted)
    return PreparedData(train, test, shifted)


def augment_training_set(config, train, kind="manifold"):
    """Return ``(training set, info)`` for ``kind`` in ``manifold``, ``jitter``, ``none``."""
    if kind == "none":
        return train, {"kind": "none"}
    if kind == "jitter":
        return jitter_dataset(train, config.augment_config.count, seed=config.seed), {"kind": "jitter"}
    encoder = fit_encoder(train.data, config.augment_config.latent_dim)
    augmented, synthetic = augment_dataset(train, config.augment_config, encoder)
    fidelity = label_fidelity(augmented, synthetic, encoder, config.augment_config.c_aug)
    return augmented, {"kind": "manifold", "synthetic": len(synthetic), "label_fidelity": fidelity}


def model_config_for(config, dataset):
    channels, window = dataset.shape
    return replace(
        config.model, channels=channels, window=window, classes=dataset.num_classes, variant=config.variant
    )


# ---------------------------------------------------------------- training

def train_model(config, train, model_config=None):
    """Mini-batch Adam; returns ``(model, log)`` with one log entry per epoch.

    Batch order comes from a stream seeded by ``(seed, epoch)``, so a run is
    reproducible bit for bit.
    """
    model_config = model_config or model_config_for(config, train)
    model = RieModel(model_config, seed=config.seed)
    opt = ad.Adam(model.params, lr=config.train.lr)
    bs = config.train.batch_size
    history = []
    for epoch in range(config.train.epochs):
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(len(train))
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, len(order), bs)):
            idx = order[start:start + bs]
            loss, grads, logits = model.loss_and_grad(train.data[idx], train.labels[idx], with_logits=True)
            if not np.isfinite(loss):
                raise NumericalFailure(
                    f"non-finite loss {loss} at epoch {epoch + 1}, batch {b} (sample indices {idx[:8].tolist()}...)"
                )
            model.params.grads = grads
            opt.step()
            total += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=-1) == train.labels[idx]))
        entry = {"epoch": epoch + 1, "loss": total / len(train), "train_accuracy": correct / len(train)}
        if model.curvature is not None:
            entry["curvature"] = model.curvature
        history.append(entry)
        log.info("epoch %d loss %.4f acc %.3f", entry["epoch"], entry["loss"], entry["train_accuracy"])
    return model, history


def evaluate(model, dataset, run=None, timing=None):
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    pred = model.predict(dataset.data)
    return MetricsReport.from_predictions(dataset.labels, pred, dataset.class_names, run=run, timing=timing)


def _run_meta(config, **extra):
    return {"config_hash": config_hash(config), "seed": int(config.seed), **extra}


def save_model(path, model, stats):
    extras = {}
    if stats:
        extras = {"std_mean": np.array(stats["mean"]), "std_scale": np.array(stats["std"])}
    return save_checkpoint(path, model, extras)


def load_model(path):
    model, extras = load_checkpoint(path)
    stats = None
    if "std_mean" in extras:
        stats = {"mean": extras["std_mean"].tolist(), "std": extras["std_scale"].tolist()}
    return model, stats


def run_experiment(config, data=None, augmentation=None, out=None):
    """Train one model and evaluate it on the clean and shifted test sets.

    ``augmentation`` overrides the kind of training-set augmentation; by
    default it is ``manifold`` when enabled and ``none`` otherwise.
    """
    data = data or prepare_data(config)
    kind = augmentation or ("manifold" if config.uses_augmentation else "none")
    start = time.perf_counter()
    train_set, aug_info = augment_training_set(config, data.train, kind)
    model, history = train_model(config, train_set)
    train_time = time.perf_counter() - start
    meta = _run_meta(config, variant=model.config.variant, augmentation=kind)
    result = {
        "schema_version": SCHEMA_VERSION,
        "kind": "experiment",
        "run": meta,
        "augmentation": aug_info,
        "train_log": history,
        "final_curvature": model.curvature,
        "clean": evaluate(model, data.test, run=meta).to_dict(),
        "shifted": evaluate(model, data.shifted, run=meta).to_dict(),
        "timing": {"train_seconds": train_time},
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "model.ries", model, data.stats)
        write_config(config, out / "config.resolved.yaml")
    return model, result


def evaluate_checkpoint(config, checkpoint, data=None):
    """Metrics of a saved model on the clean and shifted test splits of ``config``."""
    model, stats = load_model(checkpoint)
    data = data or prepare_data(config)
    if stats is not None and not np.allclose(stats["mean"], data.stats["mean"]):
        log.warning("checkpoint standardization differs from the configured training split")
    meta = _run_meta(config, variant=model.config.variant)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "evaluation",
        "run": meta,
        "clean": evaluate(model, data.test, run=meta).to_dict(),
        "shifted": evaluate(model, data.shifted, run=meta).to_dict(),
    }


# ---------------------------------------------------------------- ablations

def literal_attention_deviation(model, windows):
    """Largest ``|W_ij - 1/L|`` over every head and layer for ``windows``."""
    record = []
    model.forward(windows, record=record)
    deviation = 0.0
    for rec in record:
        w = rec["weights"]
        deviation = max(deviation, float(np.max(np.abs(w - 1.0 / w.shape[-1]))))
    return deviation


def run_ablation_suite(config, data=None, methods=ABLATIONS):
    """Train every method with and without augmentation under one seed and budget.

    The ``no-augment`` row stands for replacing manifold augmentation with a
    plain signal-space one: its augmented column uses jitter augmentation.
    """
    data = data or prepare_data(config)
    rows, cache = [], {}
    checks = {}
    for method in methods:
        cfg = replace(config, ablation=method, augment=True)
        for augmented in (False, True):
            kind = "none" if not augmented else ("jitter" if method == "no-augment" else "manifold")
            key = (cfg.variant, kind)
            if key not in cache:
                model, result = run_experiment(cfg, data, augmentation=kind)
                cache[key] = (model, result)
            model, result = cache[key]
            if method == "literal-eq4" and "literal_max_uniform_deviation" not in checks:
                checks["literal_max_uniform_deviation"] = literal_attention_deviation(model, data.test.data[:16])
            rows.append(
                {
                    "method": method,
                    "augmented": augmented,
                    "augmentation": kind,
                    "clean": result["clean"],
                    "shifted": result["shifted"],
                    "final_curvature": result["final_curvature"],
                    "timing": result["timing"],
                }
            )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "ablation",
        "run": _run_meta(config, epochs=config.train.epochs),
        "rows": rows,
        "deltas": ablation_deltas(rows),
        "checks": checks,
    }


def ablation_deltas(rows):
    """Macro-F1 differences: augmented minus plain per method, and method minus full."""
    f1 = {(r["method"], r["augmented"], t): r[t]["macro_f1"] for r in rows for t in ("clean", "shifted")}
    methods = list(dict.fromkeys(r["method"] for r in rows))
    out = {}
    for t in ("clean", "shifted"):
        aug = {m: f1[(m, True, t)] - f1[(m, False, t)] for m in methods if (m, True, t) in f1 and (m, False, t) in f1}
        vs_full = {}
        for m in methods:
            vs_full[m] = {
                ("augmented" if a else "plain"): f1[(m, a, t)] - f1[("full", a, t)]
                for a in (False, True)
                if (m, a, t) in f1 and ("full", a, t) in f1
            }
        out[t] = {"augmentation": aug, "vs_full": vs_full}
    return out


def sweep_curvature(config, values, data=None):
    """Train the full model from several initial curvatures."""
    data = data or prepare_data(config)
    rows = []
    for c in values:
        cfg = replace(config, ablation="full", model=replace(config.model, initial_curvature=float(c)))
        _, result = run_experiment(cfg, data)
        rows.append(
            {
                "initial_curvature": float(c),
                "final_curvature": result["final_curvature"],
                "clean_macro_f1": result["clean"]["macro_f1"],
                "shifted_macro_f1": result["shifted"]["macro_f1"],
            }
        )
    return {"schema_version": SCHEMA_VERSION, "kind": "curvature-sweep", "run": _run_meta(config), "rows": rows}


# ---------------------------------------------------------------- reports

def render_text(report):
    """Human-readable tables for any report kind."""
    kind = report.get("kind")
    if kind == "ablation":
        names = report["rows"][0]["shifted"]["class_names"]
        parts = []
        for t in ("shifted", "clean"):
            table_rows = [
                (f"{r['method']} ({r['augmentation']})", MetricsReport.from_dict(r[t])) for r in report["rows"]
            ]
            parts.append(f"{t} test set\n" + text_table(table_rows, names))
            summary = [f"  {label}: accuracy {m.accuracy:.3f}  macro-F1 {m.macro_f1:.3f}" for label, m in table_rows]
            parts.append("\n".join(summary) + "\n")
            deltas = report["deltas"][t]["augmentation"]
            parts.append(
                "  augmented minus plain macro-F1: "
                + ", ".join(f"{m} {d:+.3f}" for m, d in deltas.items())
                + "\n"
            )
        for name, value in report.get("checks", {}).items():
            parts.append(f"{name}: {value:.3e}\n")
        return "\n".join(parts)
    if kind == "curvature-sweep":
        lines = ["initial c  final c  clean macro-F1  shifted macro-F1"]
        for r in report["rows"]:
            lines.append(
                f"{r['initial_curvature']:9.3f}  {r['final_curvature']:7.3f}  "
                f"{r['clean_macro_f1']:14.3f}  {r['shifted_macro_f1']:16.3f}"
            )
        return "\n".join(lines) + "\n"
    if kind in ("experiment", "evaluation"):
        names = report["clean"]["class_names"]
        parts = []
        for t in ("shifted", "clean"):
            m = MetricsReport.from_dict(report[t])
            parts.append(f"{t} test set\n" + text_table([(report["run"].get("variant", "model"), m)], names))
            parts.append(f"  accuracy {m.accuracy:.3f}  macro-F1 {m.macro_f1:.3f}\n")
        return "\n".join(parts)
    if "precision" in report:
        m = MetricsReport.from_dict(report)
        return text_table([("model", m)], m.class_names)
    raise ContractError(f"unknown report kind {kind!r}")


def emit_report(report, path, fmt="json"):
    """Write ``report`` (a dict or :class:`MetricsReport`) as JSON or a text table."""
    if isinstance(report, MetricsReport):
        report = report.to_dict()
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    elif fmt == "text":
        path.write_text(render_text(report))
    else:
        raise ContractError(f"unknown report format {fmt!r}")
    return path


def read_report(path):
    report = json.loads(Path(path).read_text())
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ContractError(f"unsupported report schema version {report.get('schema_version')!r}")
    return report


__all__ = [
    "ABLATIONS",
    "ExperimentConfig",
    "TrainSettings",
    "ablation_deltas",
    "canonical_json",
    "config_from_dict",
    "config_to_dict",
    "emit_report",
    "evaluate",
    "evaluate_checkpoint",
    "load_config",
    "prepare_data",
    "read_report",
    "render_text",
    "run_ablation_suite",
    "run_experiment",
    "split_dataset",
    "sweep_curvature",
    "train_model",
    "with_overrides",
]
