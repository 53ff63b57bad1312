"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .dataset import save_dataset
from .errors import ConfigError, ContractError, FormatError, NumericalFailure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GRADCHECK_TOL = 1e-4


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")
    common.add_argument("--ablation", choices=bench.ABLATIONS, help="ablation mode")
    common.add_argument("--no-augment", action="store_true", help="train without augmentation")
    common.add_argument("--epochs", type=int, help="override the number of training epochs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="riesense", description="Hyperbolic event classification benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset (SGLB)")
    sub.add_parser("augment", parents=[common], help="write the augmented training split")
    train = sub.add_parser("train", parents=[common], help="train one model and save a checkpoint")
    train.add_argument(
        "--sweep-c",
        nargs="?",
        const="0.1,0.5,1,2",
        metavar="VALUES",
        help="train the full model from each comma-separated initial curvature instead",
    )
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on clean and shifted test sets")
    ev.add_argument("--checkpoint", type=Path, help="checkpoint path (default: <out>/model.ries)")
    sub.add_parser("ablate", parents=[common], help="run the ablation grid")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the toy model gradients")
    rep = sub.add_parser("report", parents=[common], help="render a JSON report as text")
    rep.add_argument("report", type=Path, help="JSON report written by eval, train or ablate")
    return parser


def _config(args):
    if args.epochs is not None and args.epochs < 1:
        raise ConfigError("--epochs must be at least 1")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    config = bench.load_config(args.config) if args.config else bench.ExperimentConfig()
    return bench.with_overrides(
        config, seed=args.seed, ablation=args.ablation, no_augment=args.no_augment, epochs=args.epochs
    )


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args, config, out):
    dataset = bench.source_dataset(config)
    path = save_dataset(dataset, out / "dataset.sglb")
    print(f"wrote {len(dataset)} windows to {path}")


def cmd_augment(args, config, out):
    data = bench.prepare_data(config)
    augmented, info = bench.augment_training_set(config, data.train, "manifold")
    path = save_dataset(augmented, out / "augmented.sglb")
    _write_json(out / "augment.json", info)
    print(f"wrote {len(augmented)} windows ({info['synthetic']} synthetic) to {path}")
    print(f"label fidelity {info['label_fidelity']:.4f}")


def cmd_train(args, config, out):
    if args.sweep_c:
        try:
            values = [float(v) for v in args.sweep_c.split(",")]
        except ValueError:
            raise ConfigError(f"--sweep-c expects comma-separated numbers, got {args.sweep_c!r}") from None
        report = bench.sweep_curvature(config, values)
        bench.emit_report(report, out / "sweep.json")
        bench.emit_report(report, out / "sweep.txt", fmt="text")
        print(bench.render_text(report), end="")
        return
    _, result = bench.run_experiment(config, out=out)
    bench.emit_report(result, out / "train.json")
    last = result["train_log"][-1]
    print(f"trained {result['run']['variant']} for {last['epoch']} epochs: loss {last['loss']:.4f}")
    print(f"shifted macro-F1 {result['shifted']['macro_f1']:.4f}; checkpoint {out / 'model.ries'}")


def cmd_eval(args, config, out):
    checkpoint = args.checkpoint or out / "model.ries"
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} not found")
    report = bench.evaluate_checkpoint(config, checkpoint)
    bench.emit_report(report, out / "report.json")
    bench.emit_report(report, out / "report.txt", fmt="text")
    print(bench.render_text(report), end="")


def cmd_ablate(args, config, out):
    report = bench.run_ablation_suite(config)
    bench.emit_report(report, out / "ablation.json")
    bench.emit_report(report, out / "ablation.txt", fmt="text")
    print(bench.render_text(report), end="")


def cmd_gradcheck(args, config, out):
    from .model import ModelConfig, RieModel

    rng = np.random.default_rng(config.seed)
    worst = 0.0
    for variant in ("full", "euclidean"):
        toy = ModelConfig(channels=2, window=16, patch=4, model_dim=8, layers=2, heads=2, classes=3, ff_dim=8,
                          variant=variant)
        model = RieModel(toy, seed=config.seed)
        windows = rng.normal(size=(3, 2, 16))
        labels = np.array([0, 1, 2])
        _, grads = model.loss_and_grad(windows, labels)
        for name in model.params.names():
            base = model.params[name].copy()

            def loss_at(value):
                model.params.params[name] = value
                loss, _ = model.loss_and_grad(windows, labels)
                return loss

            fd = np.empty_like(base)
            for i in np.ndindex(base.shape):
                plus, minus = base.copy(), base.copy()
                plus[i] += 1e-5
                minus[i] -= 1e-5
                fd[i] = (loss_at(plus) - loss_at(minus)) / 2e-5
            model.params.params[name] = base
            err = float(np.max(np.abs(grads[name] - fd) / np.maximum(np.maximum(np.abs(grads[name]), np.abs(fd)), 1e-8)))
            worst = max(worst, err)
            print(f"{variant:9s} {name:22s} max rel err {err:.2e}")
    print(f"worst relative error {worst:.2e} (tolerance {GRADCHECK_TOL:g})")
    if worst >= GRADCHECK_TOL:
        raise NumericalFailure(f"gradient check failed: worst relative error {worst:.2e}")


def cmd_report(args, config, out):
    report = bench.read_report(args.report)
    text = bench.render_text(report)
    target = out / (args.report.stem + ".txt")
    target.write_text(text)
    print(text, end="")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command not in ("report", "gradcheck"):
            bench.write_config(config, out / "config.resolved.yaml")
        COMMANDS[args.command](args, config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileNotFoundError, ContractError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
