"""Command-line front door: training runs, sweeps, grids, storage estimates,
and synthetic data generation, each writing reproducible outputs to a run dir.

Exit codes: 0 success, 1 flag/validation error (message names the offending
flag), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .classifier import (
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    feature_dim,
    save_checkpoint,
    train,
    write_history_csv,
)
from .experiments import (
    combo_sweep,
    layer_sweep,
    multi_layer_sweep,
    pair_fusion_grid,
)
from .fusion import FUSION_METHODS, FusionError, FusionSpec
from .registry import MODEL_DIMS, resolve_model_dim
from .results import ResultRow, SweepResult, emit_report
from .store import StoreError, estimate_memory, format_gib, load_manifest
from .synth import SyntheticSpec, gen_synthetic

PARALLELISM_ENV = "LAYERFUSE_PARALLELISM"


class UsageError(Exception):
    """Flag-level problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _default_parallelism() -> int:
    try:
        return max(1, int(os.environ.get(PARALLELISM_ENV, "1")))
    except ValueError:
        return 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--parallelism", type=int, default=_default_parallelism())


def _config_from(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        lr=args.lr,
        epochs=args.epochs,
        hidden=args.hidden,
        seed=args.seed,
        shuffle=not args.no_shuffle,
    )


def _load_manifest_arg(args):
    path = Path(args.manifest)
    if not path.exists():
        raise UsageError(f"--manifest: no such file: {path}")
    return load_manifest(path)


def _resolve_layer(manifest, model: str, token: str, flag: str) -> int:
    if token == "last":
        return manifest.last_layer(model)
    try:
        return int(token)
    except ValueError:
        raise UsageError(f"{flag}: layer must be an integer or 'last', got {token!r}")


def _parse_inputs(manifest, raw_inputs: list[str]) -> list[tuple[str, int]]:
    inputs = []
    for item in raw_inputs:
        model, sep, token = item.partition(":")
        if not sep:
            raise UsageError(f"--input: expected model:layer, got {item!r}")
        if model not in manifest.models():
            raise UsageError(
                f"--input: model {model!r} not in manifest (has {manifest.models()})"
            )
        inputs.append((model, _resolve_layer(manifest, model, token, "--input")))
    return inputs


def _check_method(method: str) -> None:
    if method not in FUSION_METHODS:
        raise UsageError(
            f"--method: unknown method {method!r}; valid methods: {', '.join(FUSION_METHODS)}"
        )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(args, out: Path) -> None:
    echo = {k: v for k, v in vars(args).items() if k != "func"}
    echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in echo.items()}
    (out / "config.json").write_text(
        json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_reports(result: SweepResult, out: Path) -> None:
    emit_report(result, "csv", out / "results.csv")
    emit_report(result, "json", out / "results.json")


def _parse_int_list(raw: str, flag: str) -> list[int]:
    try:
        if ".." in raw:
            lo, hi = raw.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(tok) for tok in raw.split(",") if tok]
    except ValueError:
        raise UsageError(f"{flag}: expected N, N,M,... or LO..HI, got {raw!r}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    manifest = _load_manifest_arg(args)
    _check_method(args.method)
    inputs = _parse_inputs(manifest, args.input)
    spec = FusionSpec(
        method=args.method,
        inputs=inputs,
        residual=args.residual,
        target_dim=args.target_dim,
    )
    try:
        dims = [manifest.dim(m) for m, _ in inputs]
        from .fusion import validate_spec

        validate_spec(spec, dims)
    except FusionError as exc:
        raise UsageError(f"--method/--input: {exc}")
    out = _out_dir(args)
    _echo_config(args, out)
    config = _config_from(args)
    train_feats = [manifest.load_matrix(m, layer, "train") for m, layer in inputs]
    test_feats = [manifest.load_matrix(m, layer, "test") for m, layer in inputs]
    train_labels, n_classes = manifest.load_labels("train")
    test_labels, _ = manifest.load_labels("test")
    model = train(train_feats, train_labels, config, spec, n_classes=n_classes)
    acc = evaluate(model, test_feats, test_labels)
    save_checkpoint(model, out / "checkpoint.bin")
    write_history_csv(model, out / "history.csv")
    row = ResultRow(
        dataset=_dataset_name(manifest, args),
        inputs=[(m, str(layer)) for m, layer in inputs],
        method=args.method,
        residual=args.residual,
        accuracy=acc,
        fused_dim=feature_dim(spec, dims),
        memory_bytes=estimate_memory(manifest.n_samples("train"), dims),
    )
    _write_reports(SweepResult([row]), out)
    print(f"test accuracy {acc:.4f}; outputs in {out}")
    return 0


def _dataset_name(manifest, args) -> str:
    if getattr(args, "dataset", None):
        return args.dataset
    names = manifest.datasets()
    return names[0] if len(names) == 1 else "multi"


def cmd_layer_sweep(args) -> int:
    manifest = _load_manifest_arg(args)
    if args.model not in manifest.models():
        raise UsageError(f"--model: {args.model!r} not in manifest (has {manifest.models()})")
    out = _out_dir(args)
    _echo_config(args, out)
    result = layer_sweep(
        manifest, args.model, _config_from(args), dataset=args.dataset,
        parallelism=args.parallelism,
    )
    _write_reports(result, out)
    print(
        f"{len(result.rows)} layers; best layer {result.summary.get('argmax_layer')} "
        f"at accuracy {result.summary.get('argmax_accuracy'):.4f}"
    )
    return 0


def cmd_multi_layer(args) -> int:
    manifest = _load_manifest_arg(args)
    if args.model not in manifest.models():
        raise UsageError(f"--model: {args.model!r} not in manifest (has {manifest.models()})")
    ks = _parse_int_list(args.k, "--k")
    if any(k < 1 for k in ks):
        raise UsageError("--k: every k must be >= 1")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in ("mean", "max", "min"):
            raise UsageError(f"--modes: unknown mode {mode!r}; valid: mean, max, min")
    out = _out_dir(args)
    _echo_config(args, out)
    result = multi_layer_sweep(
        manifest, args.model, ks, modes, _config_from(args), dataset=args.dataset,
        parallelism=args.parallelism,
    )
    _write_reports(result, out)
    print(f"{len(result.rows)} rows; best {result.summary.get('best_aggregation')}")
    return 0


def cmd_pair_grid(args) -> int:
    manifest = _load_manifest_arg(args)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if len(models) != 2:
        raise UsageError(f"--models: need exactly 2 models, got {len(models)}")
    for m in models:
        if m not in manifest.models():
            raise UsageError(f"--models: {m!r} not in manifest (has {manifest.models()})")
    layer_sets = {}
    for item in args.layers or []:
        model, sep, raw = item.partition("=")
        if not sep or model not in models:
            raise UsageError(f"--layers: expected MODEL=1,2,3 with MODEL in --models, got {item!r}")
        layer_sets[model] = [
            _resolve_layer(manifest, model, tok, "--layers") for tok in raw.split(",") if tok
        ]
    for m in models:
        layer_sets.setdefault(m, [manifest.last_layer(m)])
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for method in methods:
        _check_method(method)
    if args.residual == "both":
        flags = [False, True]
    else:
        flags = [args.residual == "on"]
    out = _out_dir(args)
    _echo_config(args, out)
    result = pair_fusion_grid(
        manifest, (models[0], models[1]), layer_sets, methods, flags,
        _config_from(args), target_dim=args.target_dim, dataset=args.dataset,
        parallelism=args.parallelism,
    )
    _write_reports(result, out)
    print(
        f"{len(result.rows)} cells; best {result.summary.get('best_method')} on "
        f"{result.summary.get('best_inputs')} at {result.summary.get('best_accuracy'):.4f}"
    )
    return 0


def cmd_combo(args) -> int:
    manifest = _load_manifest_arg(args)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if len(models) < 2:
        raise UsageError("--models: need at least 2 models")
    for m in models:
        if m not in manifest.models():
            raise UsageError(f"--models: {m!r} not in manifest (has {manifest.models()})")
    sizes = _parse_int_list(args.sizes, "--sizes")
    for size in sizes:
        if not 2 <= size <= len(models):
            raise UsageError(f"--sizes: size {size} outside [2, {len(models)}]")
    layers = {}
    for item in args.layer or []:
        model, sep, tok = item.partition("=")
        if not sep or model not in models:
            raise UsageError(f"--layer: expected MODEL=LAYER with MODEL in --models, got {item!r}")
        layers[model] = _resolve_layer(manifest, model, tok, "--layer")
    out = _out_dir(args)
    _echo_config(args, out)
    result = combo_sweep(
        manifest, models, sizes, _config_from(args), layers=layers,
        dataset=args.dataset, parallelism=args.parallelism,
    )
    _write_reports(result, out)
    print(f"{len(result.rows)} combinations; per-size stats in results.json")
    return 0


def cmd_estimate(args) -> int:
    if bool(args.models) == bool(args.dims):
        raise UsageError("--models/--dims: give exactly one of them")
    if args.models:
        try:
            dims = [resolve_model_dim(m) for m in args.models.split(",") if m.strip()]
        except KeyError as exc:
            raise UsageError(f"--models: {exc.args[0]}")
    else:
        dims = _parse_int_list(args.dims, "--dims")
    if args.n < 0:
        raise UsageError("--n: must be >= 0")
    total = estimate_memory(args.n, dims)
    print(
        f"{args.n} samples x {sum(dims)} dims x 4 bytes = "
        f"{total} bytes = {format_gib(total)} GiB"
    )
    return 0


def cmd_gen_synth(args) -> int:
    dims = _parse_int_list(args.dims, "--dims")
    peaks = _parse_int_list(args.peak_layer, "--peak-layer")
    if len(peaks) == 1:
        peaks = peaks * len(dims)
    try:
        spec = SyntheticSpec(
            n_models=len(dims),
            layers=args.layers,
            dims=dims,
            n_samples=args.samples,
            n_classes=args.classes,
            peak_layer=peaks,
            noise=args.noise,
            seed=args.seed,
            n_test=args.test_samples,
            signal=args.signal,
            final_layer_penalty=args.final_penalty,
            quality_jitter=args.jitter,
            complementary=args.complementary,
            dataset=args.dataset,
        )
    except ValueError as exc:
        raise UsageError(f"--peak-layer/--layers: {exc}")
    out = _out_dir(args)
    _echo_config(args, out)
    manifest = gen_synthetic(spec, out)
    print(f"wrote {len(manifest.entries)} embedding files under {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="layerfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one fusion configuration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--input", action="append", required=True, metavar="MODEL:LAYER")
    p.add_argument("--method", required=True)
    p.add_argument("--residual", action="store_true")
    p.add_argument("--target-dim", type=int, default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("layer-sweep", help="train/evaluate once per layer of a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_layer_sweep)

    p = sub.add_parser("multi-layer", help="aggregate the last k layers, then train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--k", default="1..10", help="range LO..HI or comma list")
    p.add_argument("--modes", default="mean,max,min")
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_multi_layer)

    p = sub.add_parser("pair-grid", help="two-model fusion grid over layers and methods")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True, metavar="M1,M2")
    p.add_argument("--layers", action="append", metavar="MODEL=1,2,3")
    p.add_argument("--methods", default="concat,sum,hadamard")
    p.add_argument("--residual", choices=["on", "off", "both"], default="off")
    p.add_argument("--target-dim", type=int, default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pair_grid)

    p = sub.add_parser("combo", help="concatenation fusion over model subsets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True, metavar="M1,M2,...")
    p.add_argument("--sizes", default="2", help="subset sizes, e.g. 2,3")
    p.add_argument("--layer", action="append", metavar="MODEL=LAYER")
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_combo)

    p = sub.add_parser("estimate", help="storage cost for fused embeddings")
    p.add_argument("--n", type=int, required=True, help="sample count")
    p.add_argument("--models", default=None, metavar="M1,M2,...")
    p.add_argument("--dims", default=None, metavar="D1,D2,...")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("gen-synth", help="generate synthetic per-layer embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default="16,16", metavar="D1,D2,...")
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--test-samples", type=int, default=200)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--peak-layer", default="4", metavar="P or P1,P2,...")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--final-penalty", type=float, default=0.4)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--complementary", action="store_true")
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StoreError, FusionError, TrainingDivergedError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
