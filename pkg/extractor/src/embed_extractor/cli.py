"""Command-line wrapper: dump pooled per-layer embeddings for TSV datasets."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionError, ExtractionSpec, extract


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embed-extract", description=__doc__)
    p.add_argument("--checkpoint", required=True, help="model id or local checkpoint path")
    p.add_argument("--train-tsv", required=True)
    p.add_argument("--test-tsv", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", default="all", help="'all' or comma-separated indices")
    p.add_argument("--pooling", choices=["mean", "last_token"], default="mean")
    p.add_argument("--max-seq-len", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--model-name", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    data_files = {"train": args.train_tsv}
    if args.test_tsv:
        data_files["test"] = args.test_tsv
    layers = args.layers if args.layers == "all" else [int(t) for t in args.layers.split(",")]
    try:
        spec = ExtractionSpec(
            checkpoint=args.checkpoint,
            data_files=data_files,
            output_dir=args.out,
            layers=layers,
            pooling=args.pooling,
            max_seq_len=args.max_seq_len,
            batch_size=args.batch_size,
            dataset=args.dataset,
            model_name=args.model_name,
        )
        manifest = extract(spec)
    except (ExtractionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
