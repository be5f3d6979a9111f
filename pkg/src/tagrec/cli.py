"""Command-line surface: gen-data, train, eval, ablate, recommend, explain,
grad-check.

Hyperparameters resolve in three layers: built-in defaults, then a flat
key=value config file (path from --config or the TAGREC_CONFIG environment
variable), then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .data import DatasetError, keyed_lines, load_dataset
from .evaluation import evaluate, run_ablation
from .graph import TAG, TARGET_ITEM, USER
from .inference import explain, recommend
from .model import AggregatorVariant, ModelConfig, ModelParams
from .synthetic import SyntheticSpec, generate_synthetic
from .training import (
    CheckpointError,
    TrainConfig,
    TrainingAborted,
    check_model_gradients,
    load_checkpoint,
    sample_bpr_batch,
    sample_skipgram_pairs,
    save_checkpoint,
    train,
)

CONFIG_ENV_VAR = "TAGREC_CONFIG"

_MODEL_KEYS = {
    "d": ("dim", int),
    "layers": ("layers", int),
    "k_max": ("k_max", int),
    "gamma": ("gamma", float),
    "routing_iters": ("routing_iters", int),
    "neighbor_cap": ("neighbor_cap", int),
    "pad_mask": ("pad_mask", None),
    "lambda": ("l2_weight", float),
}
_TRAIN_KEYS = {
    "lr": ("learning_rate", float),
    "batch": ("batch_size", int),
    "epochs": ("epochs", int),
    "skipgram_form": ("skipgram_form", str),
}


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def read_config_file(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, section, key, value in keyed_lines(path):
        if section:
            raise DatasetError(f"{path}:{lineno}: config files are flat (no sections)")
        out[key] = value
    return out


def resolve_settings(args) -> tuple[ModelConfig, TrainConfig, AggregatorVariant]:
    """defaults <- config file <- CLI flags."""
    model_kwargs: dict = {}
    train_kwargs: dict = {"seed": args.seed}
    variant = AggregatorVariant.FULL
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if config_path:
        for key, value in read_config_file(Path(config_path)).items():
            if key in _MODEL_KEYS:
                field, cast = _MODEL_KEYS[key]
                model_kwargs[field] = _parse_bool(value) if cast is None else cast(value)
            elif key in _TRAIN_KEYS:
                field, cast = _TRAIN_KEYS[key]
                train_kwargs[field] = cast(value)
            elif key == "variant":
                variant = AggregatorVariant.parse(value)
            else:
                raise DatasetError(f"unknown config key {key!r} in {config_path}")
    for key, (field, cast) in _MODEL_KEYS.items():
        flag = getattr(args, field, None)
        if flag is not None:
            model_kwargs[field] = flag
    for key, (field, cast) in _TRAIN_KEYS.items():
        flag = getattr(args, field, None)
        if flag is not None:
            train_kwargs[field] = flag
    if getattr(args, "variant", None) is not None:
        variant = AggregatorVariant.parse(args.variant)
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs), variant


def _add_hyper_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dim", type=int, help="embedding width")
    parser.add_argument("--layers", type=int, help="propagation layers")
    parser.add_argument("--k-max", dest="k_max", type=int, help="capsule budget per domain")
    parser.add_argument("--gamma", type=float, help="attention sharpening exponent")
    parser.add_argument("--routing-iters", dest="routing_iters", type=int)
    parser.add_argument("--neighbor-cap", dest="neighbor_cap", type=int)
    parser.add_argument("--pad-mask", dest="pad_mask", type=_parse_bool, metavar="BOOL")
    parser.add_argument("--lambda", dest="l2_weight", type=float, help="L2 weight")
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--batch", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--skipgram-form", dest="skipgram_form", choices=("literal", "stabilized"))
    parser.add_argument("--variant", choices=[v.value for v in AggregatorVariant])
    parser.add_argument("--no-skipgram", action="store_true",
                        help="drop the skip-gram term from the joint loss")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagrec",
        description="Tag-based cross-domain recommendation engine",
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--config", help=f"config file (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("--threads", type=int, default=1, help="evaluation scoring threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=260)
    p.add_argument("--target-items", type=int, default=320)
    p.add_argument("--tags", type=int, default=160)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--source-domains", type=int, default=2)
    p.add_argument("--noise-ratio", type=float, default=0.9)
    p.add_argument("--target-interactions", type=int, nargs=2, default=(3, 20),
                   metavar=("MIN", "MAX"))
    p.add_argument("--source-interactions", type=int, nargs=2, default=(8, 16),
                   metavar=("MIN", "MAX"))
    p.add_argument("--cold-fraction", type=float, default=0.2)

    p = sub.add_parser("train", help="train and write a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--export-dtype", choices=("float64", "float32"), default="float64")
    _add_hyper_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the report here as well as stdout")
    p.add_argument("--ks", default="50,100", help="comma-separated cutoffs")
    p.add_argument("--include-train", action="store_true",
                   help="keep training positives in the candidate ranking")
    _add_hyper_flags(p)

    p = sub.add_parser("ablate", help="train and compare aggregation variants")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variants", default="full,hard,mean",
                   help="comma-separated subset of full,mean,softmax,hard")
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--out", help="write the report here as well as stdout")
    _add_hyper_flags(p)

    p = sub.add_parser("recommend", help="top-k items for one user")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--k", type=int, default=50)
    _add_hyper_flags(p)

    p = sub.add_parser("explain", help="routing and attention dump for one user")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--k", type=int, default=10)
    _add_hyper_flags(p)

    p = sub.add_parser("grad-check", help="verify analytic gradients on a sampled batch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--samples", type=int, default=10, help="coordinates per parameter family")
    p.add_argument("--tolerance", type=float, default=1e-4)
    _add_hyper_flags(p)
    return parser


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        users=args.users,
        target_items=args.target_items,
        tags=args.tags,
        clusters=args.clusters,
        source_domains=args.source_domains,
        noise_ratio=args.noise_ratio,
        target_interactions=tuple(args.target_interactions),
        source_interactions=tuple(args.source_interactions),
        cold_user_fraction=args.cold_fraction,
        seed=args.seed,
    )
    manifest_path = generate_synthetic(spec, args.out)
    print(manifest_path)
    return 0


def _cmd_train(args) -> int:
    model_config, train_config, variant = resolve_settings(args)
    graph, splits = load_dataset(args.manifest)
    params = ModelParams.init(
        graph.node_count(USER), graph.node_count(TARGET_ITEM), graph.node_count(TAG),
        model_config.dim, train_config.seed,
    )
    try:
        result = train(
            graph, params, model_config, train_config, splits,
            variant=variant, include_skipgram=not args.no_skipgram,
        )
    except TrainingAborted as aborted:
        for entry in aborted.result.log:
            print(f"epoch={entry.epoch} loss={entry.train_loss!r} val_recall={entry.val_recall!r}")
        save_checkpoint(aborted.result.params, args.out, dtype=args.export_dtype)
        print(f"aborted: {aborted}; last-good checkpoint written to {args.out}", file=sys.stderr)
        return 3
    for entry in result.log:
        print(f"epoch={entry.epoch} loss={entry.train_loss!r} val_recall={entry.val_recall!r}")
    save_checkpoint(result.params, args.out, dtype=args.export_dtype)
    print(f"best_epoch={result.best_epoch} best_val_recall={result.best_recall!r}")
    return 0


def _cmd_eval(args) -> int:
    model_config, train_config, variant = resolve_settings(args)
    graph, splits = load_dataset(args.manifest)
    params = load_checkpoint(args.checkpoint)
    ks = tuple(int(k) for k in args.ks.split(","))
    report = evaluate(
        graph, params, model_config, splits.test, splits.train,
        exclude_train=not args.include_train, seed=train_config.seed,
        variant=variant, ks=ks, threads=args.threads,
    )
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def _cmd_ablate(args) -> int:
    model_config, train_config, _ = resolve_settings(args)
    graph, splits = load_dataset(args.manifest)
    variants = [AggregatorVariant.parse(v) for v in args.variants.split(",")]
    seeds = [args.seed + i for i in range(args.n_seeds)]
    report = run_ablation(
        graph, splits, model_config, train_config, variants, seeds,
        include_skipgram=not args.no_skipgram, threads=args.threads,
    )
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def _cmd_recommend(args) -> int:
    model_config, train_config, variant = resolve_settings(args)
    ranked = recommend(
        args.checkpoint, args.manifest, args.user, args.k,
        config=model_config, seed=train_config.seed, variant=variant,
    )
    for rank, (item, item_score) in enumerate(ranked, start=1):
        print(f"{rank}\t{item}\t{item_score!r}")
    return 0


def _cmd_explain(args) -> int:
    model_config, train_config, variant = resolve_settings(args)
    dump = explain(
        args.checkpoint, args.manifest, args.user,
        config=model_config, k=args.k, seed=train_config.seed, variant=variant,
    )
    sys.stdout.write(dump.to_text())
    return 0


def _cmd_grad_check(args) -> int:
    model_config, train_config, _ = resolve_settings(args)
    graph, splits = load_dataset(args.manifest)
    params = ModelParams.init(
        graph.node_count(USER), graph.node_count(TARGET_ITEM), graph.node_count(TAG),
        model_config.dim, train_config.seed,
    )
    triples = sample_bpr_batch(
        splits.train, graph.node_count(TARGET_ITEM), args.batch_size, train_config.seed
    )
    sg_pairs = sample_skipgram_pairs(graph, args.batch_size, train_config.seed)
    report = check_model_gradients(
        graph, params, model_config, triples, sg_pairs, train_config.seed,
        tolerance=args.tolerance, samples_per_family=args.samples,
        skipgram_form=train_config.skipgram_form,
    )
    for name in sorted(report.families):
        family = report.families[name]
        status = "ok" if family.max_rel_error < args.tolerance else "FAIL"
        print(f"{name}\tmax_rel_error={family.max_rel_error!r}\tchecked={family.checked}\t{status}")
    print(f"overall={'pass' if report.passed else 'fail'} tolerance={args.tolerance!r}")
    return 0 if report.passed else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "recommend": _cmd_recommend,
    "explain": _cmd_explain,
    "grad-check": _cmd_grad_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (DatasetError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
