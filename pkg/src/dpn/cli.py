"""Command line interface: generate, train, eval, estimate-k.

Every command locks its output directory, writes a run manifest before
any result file, and exits non-zero on failure. Config precedence is
built-in defaults < --config file < explicit flags. The default output
root is ``$DPN_OUTPUT_ROOT`` (falling back to ./runs) with one
subdirectory per command.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from ._version import __version__
from .config import Config, config_from_mapping, load_config
from .data import SynthSpec, generate_synthetic, load_manifest, save_dataset
from .evaluation import (
    estimate_k,
    evaluate,
    write_confusion_tsv,
    write_metrics_tsv,
    write_report_text,
)
from .exceptions import DPNError, UsageError
from .alignment import save_distance_matrix
from .training import load_checkpoint, save_checkpoint, train, write_loss_trace

LOCK_NAME = ".dpn.lock"
OUTPUT_ROOT_ENV = "DPN_OUTPUT_ROOT"

CHECKPOINT_FILE = "checkpoint.txt"
LOSS_TRACE_FILE = "loss_trace.tsv"
METRICS_FILE = "metrics.tsv"
CONFUSION_FILE = "confusion.tsv"
DISTANCES_FILE = "prototype_distances.tsv"
REPORT_FILE = "report.txt"
RUN_MANIFEST_FILE = "run_manifest.txt"


def _resolve_out(explicit, command: str) -> Path:
    if explicit:
        return Path(explicit)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / command


@contextmanager
def _locked_dir(path: Path):
    """Exclusive lock guarding against concurrent writers to one directory."""
    path.mkdir(parents=True, exist_ok=True)
    lock = path / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(
            f"output directory {path} is locked by another run (remove {lock} if stale)"
        )
    try:
        os.close(fd)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def _write_run_manifest(out: Path, command: str, settings: dict) -> None:
    lines = [
        f"command={command}",
        f"engine_version={__version__}",
        f"timestamp={time.strftime('%Y-%m-%dT%H:%M:%S%z')}",
        f"output={out}",
    ]
    lines += [f"{k}={v}" for k, v in settings.items()]
    (out / RUN_MANIFEST_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _config_from_args(args) -> Config:
    config = Config()
    if getattr(args, "config", None):
        config = load_config(args.config, base=config)
    overrides = {}
    for flag, key in (
        ("tau", "tau"),
        ("gamma", "gamma"),
        ("alpha", "alpha"),
        ("learning_rate", "learning_rate"),
        ("epochs", "epochs"),
        ("seed", "seed"),
        ("k", "n_clusters"),
        ("k_max", "k_max"),
        ("threshold_factor", "threshold_factor"),
        ("activation", "activation"),
        ("rematch_period", "rematch_period"),
        ("recluster_period", "recluster_period"),
        ("ce_head", "ce_head"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    ablations = [
        name
        for name, on in (
            ("no_ce", getattr(args, "no_ce", False)),
            ("no_ema", getattr(args, "no_ema", False)),
            ("no_decouple", getattr(args, "no_decouple", False)),
            ("no_soft_assignment", getattr(args, "no_soft_assignment", False)),
            ("no_semantic_weights", getattr(args, "no_semantic_weights", False)),
        )
        if on
    ]
    if ablations:
        overrides["ablations"] = ",".join(ablations)
    if getattr(args, "detach_weights", False):
        overrides["detach_weights"] = "true"
    if getattr(args, "per_subset_mapping", False):
        overrides["per_subset_mapping"] = "true"
    return config_from_mapping(overrides, base=config)


def cmd_generate(args) -> int:
    try:
        spec = SynthSpec(
            n_categories=args.k,
            n_known=args.known,
            dim=args.dim,
            per_class=args.per_class,
            cluster_std=args.std,
            center_separation=args.sep,
            labeled_ratio=args.labeled_ratio,
            seed=args.seed,
            test_per_class=args.test_per_class,
            known_selection="random" if args.random_known else "first",
        )
    except DPNError as exc:
        raise UsageError(str(exc)) from exc
    out = _resolve_out(args.out, "generate")
    with _locked_dir(out):
        _write_run_manifest(
            out,
            "generate",
            {
                "n_categories": spec.n_categories,
                "n_known": spec.n_known,
                "dim": spec.dim,
                "per_class": spec.per_class,
                "cluster_std": spec.cluster_std,
                "center_separation": spec.center_separation,
                "labeled_ratio": spec.labeled_ratio,
                "test_per_class": spec.resolved_test_per_class,
                "known_selection": spec.known_selection,
                "seed": spec.seed,
            },
        )
        dataset = generate_synthetic(spec)
        manifest = save_dataset(dataset, out)
    print(manifest)
    return 0


def _load_data(args):
    data = Path(args.data)
    if not data.exists():
        raise UsageError(f"dataset path {data} does not exist")
    return load_manifest(data)


def cmd_train(args) -> int:
    config = _config_from_args(args)
    dataset = _load_data(args)
    if config.n_clusters == "estimate" and config.k_max is None:
        raise UsageError("training with --k estimate requires --k-max")
    out = _resolve_out(args.out, "train")
    with _locked_dir(out):
        _write_run_manifest(
            out, "train", {"data": args.data, **{f"config.{k}": v for k, v in config.to_mapping().items()}}
        )
        state = train(dataset, config)
        save_checkpoint(state, out / CHECKPOINT_FILE)
        write_loss_trace(out / LOSS_TRACE_FILE, state.loss_trace)
    print(out / CHECKPOINT_FILE)
    return 0


def cmd_eval(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise UsageError(f"checkpoint {checkpoint} does not exist")
    state = load_checkpoint(checkpoint)
    if args.seed is not None or args.per_subset_mapping:
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.per_subset_mapping:
            changes["per_subset_mapping"] = True
        state.config = state.config.replace(**changes)
    dataset = _load_data(args)
    out = _resolve_out(args.out, "eval")
    with _locked_dir(out):
        _write_run_manifest(
            out,
            "eval",
            {"data": args.data, "checkpoint": str(checkpoint), "estimate_k": args.estimate_k},
        )
        report = evaluate(
            state,
            dataset.test,
            dataset.label_space,
            unlabeled_X=dataset.unlabeled.X,
            estimate_categories=args.estimate_k,
            k_max=args.k_max,
        )
        write_metrics_tsv(out / METRICS_FILE, report)
        write_confusion_tsv(out / CONFUSION_FILE, report)
        save_distance_matrix(
            out / DISTANCES_FILE,
            report.prototype_distances,
            row_ids=state.label_space.known_ids,
            col_ids=state.label_space.known_ids,
        )
        write_report_text(out / REPORT_FILE, report)
    print(
        f"all={report.acc_all:.4f} known={report.acc_known:.4f} novel={report.acc_novel:.4f}"
        + (f" estimated_k={report.estimated_k}" if report.estimated_k is not None else "")
    )
    return 0


def cmd_estimate_k(args) -> int:
    dataset = _load_data(args)
    if args.k_max < 2:
        raise UsageError(f"--k-max must be >= 2, got {args.k_max}")
    out = _resolve_out(args.out, "estimate-k")
    with _locked_dir(out):
        _write_run_manifest(
            out,
            "estimate-k",
            {
                "data": args.data,
                "k_max": args.k_max,
                "threshold_factor": args.threshold_factor,
                "method": args.method,
                "seed": args.seed,
            },
        )
        try:
            estimated = estimate_k(
                dataset.unlabeled.X,
                k_max=args.k_max,
                threshold_factor=args.threshold_factor,
                seed=args.seed,
                method=args.method,
            )
        except DPNError as exc:
            raise UsageError(str(exc)) from exc
        (out / "estimated_k.txt").write_text(f"{estimated}\n", encoding="utf-8")
    print(estimated)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpn",
        description="Category discovery experiments over precomputed embedding vectors.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic Gaussian-mixture dataset")
    gen.add_argument("--k", type=int, required=True, help="total number of categories")
    gen.add_argument("--known", type=int, required=True, help="number of known categories")
    gen.add_argument("--dim", type=int, default=16, help="embedding dimension (default 16)")
    gen.add_argument("--per-class", type=int, default=50, dest="per_class",
                     help="training points per category (default 50)")
    gen.add_argument("--std", type=float, default=0.5, help="cluster standard deviation (default 0.5)")
    gen.add_argument("--sep", type=float, default=8.0, help="minimum center separation (default 8)")
    gen.add_argument("--labeled-ratio", type=float, default=0.5, dest="labeled_ratio",
                     help="fraction of known-category points that are labeled (default 0.5)")
    gen.add_argument("--test-per-class", type=int, default=None, dest="test_per_class",
                     help="test points per category (default: per-class // 2)")
    gen.add_argument("--random-known", action="store_true", dest="random_known",
                     help="pick the known categories at random instead of the first ones")
    gen.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    gen.add_argument("--out", default=None, help="output directory (default $DPN_OUTPUT_ROOT/generate)")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train on a dataset directory")
    tr.add_argument("--data", required=True, help="dataset directory (with manifest.txt)")
    tr.add_argument("--config", default=None, help="key=value config file")
    tr.add_argument("--tau", type=float, default=None, help="softmax temperature (default 0.07)")
    tr.add_argument("--gamma", type=float, default=None, help="regularizer weight (default 10)")
    tr.add_argument("--alpha", type=float, default=None, help="prototype EMA momentum (default 0.9)")
    tr.add_argument("--lr", "--learning-rate", type=float, default=None, dest="learning_rate",
                    help="gradient descent step size (default 0.003)")
    tr.add_argument("--epochs", type=int, default=None, help="training epochs (default 30)")
    tr.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    tr.add_argument("--k", default=None, help="total category count or 'estimate' (default estimate)")
    tr.add_argument("--k-max", type=int, default=None, dest="k_max",
                    help="upper bound when estimating the category count")
    tr.add_argument("--threshold-factor", type=float, default=None, dest="threshold_factor",
                    help="category-count estimator sensitivity in (0,1) (default 0.5)")
    tr.add_argument("--activation", choices=("identity", "tanh"), default=None,
                    help="projection head activation (default identity)")
    tr.add_argument("--ce-head", choices=("prototype", "linear"), default=None, dest="ce_head",
                    help="cross-entropy classifier form (default prototype)")
    tr.add_argument("--rematch-period", type=int, default=None, dest="rematch_period",
                    help="re-run prototype matching every N epochs (default 0 = never)")
    tr.add_argument("--recluster-period", type=int, default=None, dest="recluster_period",
                    help="re-cluster the unlabeled data every N epochs (default 0 = never)")
    tr.add_argument("--detach-weights", action="store_true", dest="detach_weights",
                    help="exclude the semantic weights from the gradient")
    tr.add_argument("--no-ce", action="store_true", dest="no_ce", help="drop the cross-entropy term")
    tr.add_argument("--no-ema", action="store_true", dest="no_ema",
                    help="overwrite labeled prototypes instead of EMA updates")
    tr.add_argument("--no-decouple", action="store_true", dest="no_decouple",
                    help="train one coupled objective over all unlabeled data")
    tr.add_argument("--no-soft-assignment", action="store_true", dest="no_soft_assignment",
                    help="use hard pseudo-label prototype assignment")
    tr.add_argument("--no-semantic-weights", action="store_true", dest="no_semantic_weights",
                    help="use uniform instead of similarity-based weights")
    tr.add_argument("--out", default=None, help="output directory (default $DPN_OUTPUT_ROOT/train)")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    ev.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    ev.add_argument("--data", required=True, help="dataset directory (with manifest.txt)")
    ev.add_argument("--estimate-k", action="store_true", dest="estimate_k",
                    help="also estimate the category count from the unlabeled split")
    ev.add_argument("--k-max", type=int, default=None, dest="k_max",
                    help="upper bound for --estimate-k (default: from checkpoint config)")
    ev.add_argument("--per-subset-mapping", action="store_true", dest="per_subset_mapping",
                    help="remap known/novel subsets separately (breaks count additivity)")
    ev.add_argument("--seed", type=int, default=None, help="override the evaluation seed")
    ev.add_argument("--out", default=None, help="output directory (default $DPN_OUTPUT_ROOT/eval)")
    ev.set_defaults(func=cmd_eval)

    es = sub.add_parser("estimate-k", help="estimate the number of categories in the unlabeled split")
    es.add_argument("--data", required=True, help="dataset directory (with manifest.txt)")
    es.add_argument("--k-max", type=int, required=True, dest="k_max", help="upper bound for the estimate")
    es.add_argument("--threshold-factor", type=float, default=0.5, dest="threshold_factor",
                    help="estimator sensitivity in (0,1) (default 0.5)")
    es.add_argument("--method", choices=("inertia", "size"), default="inertia",
                    help="inertia-elbow scan (default) or drop-small-clusters rule")
    es.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    es.add_argument("--out", default=None, help="output directory (default $DPN_OUTPUT_ROOT/estimate-k)")
    es.set_defaults(func=cmd_estimate_k)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DPNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    sys.exit(main())
