"""Command-line orchestration of the pipeline stages.

Subcommands: synth, train, eval, pseudo-label, distill, sweep-alpha,
loss-surface. Every command writes a run manifest (resolved config, input
digests, seed, outputs, duration) next to its primary output. Exit codes:
0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict

from . import evaluation, featurebank, mlp, optimizer
from .distill import distill as run_distill
from .distill import pseudo_label
from .errors import RobustBankError
from .seeding import splitmix64

DEFAULT_ALPHA_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def _alpha(value: str) -> float:
    x = float(value)
    if not (0.0 < x <= 1.0):
        raise argparse.ArgumentTypeError(f"alpha must be in (0, 1], got {x}")
    return x


def _fraction(value: str) -> float:
    x = float(value)
    if not (0.0 < x < 1.0):
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {x}")
    return x


def _nonneg(value: str) -> float:
    x = float(value)
    if x < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative value, got {x}")
    return x


def _positive_int(value: str) -> int:
    x = int(value)
    if x <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {x}")
    return x


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(
    command: str,
    args: argparse.Namespace,
    inputs: list,
    outputs: list,
    started: float,
) -> None:
    payload = {
        "command": command,
        "config": {
            k: v for k, v in sorted(vars(args).items()) if k != "func"
        },
        "input_digests": {str(p): sha256_file(p) for p in inputs},
        "seed": getattr(args, "seed", None),
        "outputs": [str(p) for p in outputs],
        "duration_seconds": time.monotonic() - started,
    }
    manifest_path = str(outputs[0]) + ".run.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _train_config(args: argparse.Namespace) -> optimizer.TrainConfig:
    return optimizer.TrainConfig(
        alpha=args.alpha,
        gamma=args.gamma,
        lr=args.lr,
        lr_min=args.lr_min,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        dropout_rate=args.dropout,
        hidden_dim=args.hidden_dim,
        update_rule=args.update_rule,
    )


def _default_history(out_path, args) -> str:
    if args.history:
        return args.history
    log_dir = os.environ.get("ROBUSTBANK_LOG_DIR")
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        return os.path.join(log_dir, os.path.basename(str(out_path)) + ".history.jsonl")
    return str(out_path) + ".history.jsonl"


def cmd_synth(args) -> None:
    started = time.monotonic()
    cfg = featurebank.SynthConfig(
        num_scans_per_class=args.scans_per_class,
        slices_per_scan=(args.slices_min, args.slices_max),
        feature_dim=args.dim,
        class_separation=args.sep,
        noise_sigma=args.sigma,
        label_noise_rate=args.label_noise,
        seed=args.seed,
    )
    bank, manifest = featurebank.synth_bank(cfg)
    featurebank.write_bank(bank, args.out)
    manifest_path = args.manifest or str(args.out) + ".manifest.csv"
    manifest.write(manifest_path)
    print(f"wrote {len(bank)} records ({len(manifest.entries)} scans) to {args.out}")
    write_run_manifest("synth", args, [], [args.out, manifest_path], started)


def cmd_train(args) -> None:
    started = time.monotonic()
    bank = featurebank.read_bank(args.bank)
    config = _train_config(args)
    history_path = _default_history(args.out, args)
    model = optimizer.train(bank, config, history_path=history_path)
    mlp.save_model(model, args.out)
    if model.history:
        last = model.history[-1]
        print(
            f"epoch {last['epoch']}: cvar_loss={last['mean_cvar_loss']:.6f} "
            f"lambda={last['mean_lambda']:.6f} "
            f"active={last['active_fraction']:.3f} lr={last['lr']:.2e}"
        )
    print(f"wrote model to {args.out}")
    write_run_manifest("train", args, [args.bank], [args.out, history_path], started)


def cmd_eval(args) -> None:
    started = time.monotonic()
    model = mlp.load_model(args.model)
    bank = featurebank.read_bank(args.bank)
    manifest = featurebank.ScanManifest.read(args.manifest)
    report = evaluation.evaluate(model, bank, manifest)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(
        f"slice macro F1 {report.slice_macro_f1:.4f}, "
        f"scan macro F1 {report.scan_macro_f1:.4f}"
    )
    write_run_manifest(
        "eval", args, [args.model, args.bank, args.manifest], [args.out], started
    )


def cmd_pseudo_label(args) -> None:
    started = time.monotonic()
    model = mlp.load_model(args.model)
    bank = featurebank.read_bank(args.bank)
    labeled, stats = pseudo_label(
        model, bank, args.threshold, scan_consistent=args.scan_consistent
    )
    featurebank.write_bank(labeled, args.out)
    stats_path = str(args.out) + ".stats.json"
    with open(stats_path, "w", encoding="utf-8") as f:
        json.dump(stats.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(
        f"pseudo-labeled {stats.labeled_positive + stats.labeled_negative} of "
        f"{stats.total_unlabeled} slices ({stats.discarded_low_confidence} discarded)"
    )
    write_run_manifest(
        "pseudo-label", args, [args.model, args.bank], [args.out, stats_path], started
    )


def cmd_distill(args) -> None:
    started = time.monotonic()
    labeled = featurebank.read_bank(args.labeled)
    unlabeled = featurebank.read_bank(args.unlabeled)
    teacher_cfg = _train_config(args)
    student_cfg = optimizer.TrainConfig(**{**asdict(teacher_cfg), "seed": splitmix64(args.seed, 1)})
    report = run_distill(
        labeled, unlabeled, teacher_cfg, student_cfg, args.threshold
    )
    mlp.save_model(report.teacher, args.teacher_out)
    mlp.save_model(report.student, args.student_out)
    report_path = args.report or str(args.student_out) + ".distill.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"student trained on {report.student_set_size} records")
    write_run_manifest(
        "distill",
        args,
        [args.labeled, args.unlabeled],
        [args.teacher_out, args.student_out, report_path],
        started,
    )


def cmd_sweep_alpha(args) -> None:
    started = time.monotonic()
    train_bank = featurebank.read_bank(args.train_bank)
    test_bank = featurebank.read_bank(args.test_bank)
    manifest = featurebank.ScanManifest.read(args.manifest)
    alphas = sorted(args.alphas or DEFAULT_ALPHA_GRID)
    rows = []
    for i, alpha in enumerate(alphas):
        cfg = _train_config(args)
        cfg.alpha = alpha
        cfg.seed = splitmix64(args.seed, i)
        model = optimizer.train(train_bank, cfg)
        report = evaluation.evaluate(model, test_bank, manifest)
        rows.append((alpha, report.slice_macro_f1, report.scan_macro_f1))
        print(
            f"alpha={alpha:.2f}: slice F1 {report.slice_macro_f1:.4f}, "
            f"scan F1 {report.scan_macro_f1:.4f}"
        )
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["alpha", "slice_macro_f1", "scan_macro_f1"])
        for alpha, slice_f1, scan_f1 in rows:
            w.writerow([f"{alpha:.17g}", f"{slice_f1:.17g}", f"{scan_f1:.17g}"])
    write_run_manifest(
        "sweep-alpha",
        args,
        [args.train_bank, args.test_bank, args.manifest],
        [args.out],
        started,
    )


def cmd_loss_surface(args) -> None:
    started = time.monotonic()
    model = mlp.load_model(args.model)
    bank = featurebank.read_bank(args.bank)
    rows = evaluation.loss_surface(
        model, bank, args.alpha, args.half_width, args.grid_points, args.seed
    )
    evaluation.write_loss_surface_csv(rows, args.out)
    print(f"wrote {len(rows)} grid cells to {args.out}")
    write_run_manifest(
        "loss-surface", args, [args.model, args.bank], [args.out], started
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=_alpha, default=0.9, help="CVaR level in (0,1]")
    p.add_argument("--gamma", type=_nonneg, default=0.05, help="SAM perturbation radius")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-min", type=_nonneg, default=0.0)
    p.add_argument("--batch", type=_positive_int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--hidden-dim", type=_positive_int, default=None)
    p.add_argument("--update-rule", choices=["adam", "sgd"], default="adam")
    p.add_argument("--history", default=None, help="JSONL training history path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustbank",
        description="Distributionally robust classifier training over embedding banks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature bank")
    p.add_argument("--scans-per-class", type=_positive_int, required=True)
    p.add_argument("--slices", dest="slices_min", type=_positive_int, required=True)
    p.add_argument("--slices-max", type=_positive_int, default=None)
    p.add_argument("--dim", type=_positive_int, required=True)
    p.add_argument("--sep", type=_nonneg, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a classifier on a labeled bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model at slice and scan level")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pseudo-label", help="label an unlabeled bank with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--scan-consistent", action="store_true")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("distill", help="teacher-student pipeline")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--teacher-out", required=True)
    p.add_argument("--student-out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--threshold", type=float, default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("sweep-alpha", help="train and evaluate across an alpha grid")
    p.add_argument("--train-bank", required=True)
    p.add_argument("--test-bank", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alphas", type=_alpha, nargs="*", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("loss-surface", help="export a CVaR loss surface grid")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--alpha", type=_alpha, default=0.9)
    p.add_argument("--half-width", type=float, default=1.0)
    p.add_argument("--grid-points", type=_positive_int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loss_surface)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and args.slices_max is None:
        args.slices_max = args.slices_min
    try:
        args.func(args)
    except (RobustBankError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
