"""Pull per-layer hidden states from a pretrained transformer checkpoint and
write them as layerfuse store files plus a manifest.

Datasets come in as TSV files with a "text<TAB>label" header row; label names
are mapped to class ids by sorted name across all splits, and the mapping is
recorded in the manifest metadata alongside the pooling mode and checkpoint.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import write_embedding_file, write_label_file, write_manifest
from .pool import POOLING_MODES, pool_batch


class ExtractionError(RuntimeError):
    pass


@dataclass
class ExtractionSpec:
    checkpoint: str
    data_files: dict[str, str]  # split -> TSV path
    output_dir: str
    layers: str | list[int] = "all"  # "all" or explicit layer indices (0 = embeddings)
    pooling: str = "mean"
    max_seq_len: int = 64
    batch_size: int = 8
    dataset: str = "dataset"
    model_name: str | None = None

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"unknown pooling {self.pooling!r}; valid: {POOLING_MODES}")
        if not self.data_files:
            raise ValueError("no dataset files given")
        if self.model_name is None:
            stem = Path(str(self.checkpoint)).name or "model"
            self.model_name = re.sub(r"[^A-Za-z0-9_.-]+", "_", stem).lower()


def read_tsv(path) -> tuple[list[str], list[str]]:
    """Read (texts, label names) from a TSV with a text/label header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["text", "label"]:
            raise ExtractionError(f"{path}: expected a 'text<TAB>label' header row")
        texts, labels = [], []
        for i, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise ExtractionError(f"{path}:{i}: expected two tab-separated columns")
            if not row[0].strip():
                raise ExtractionError(f"{path}:{i}: empty text")
            texts.append(row[0])
            labels.append(row[1].strip())
    if not texts:
        raise ExtractionError(f"{path}: no samples")
    return texts, labels


def _load_model(checkpoint: str):
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = AutoModel.from_pretrained(checkpoint)
    except Exception as exc:
        raise ExtractionError(f"cannot load checkpoint {checkpoint!r}: {exc}") from exc
    model.eval()
    torch.manual_seed(0)
    return tokenizer, model


def _hidden_states(model, tokenizer, texts, spec):
    """Yield (layer_states list, mask) per batch; states are numpy float32."""
    import torch

    for start in range(0, len(texts), spec.batch_size):
        batch = texts[start : start + spec.batch_size]
        enc = tokenizer(
            batch,
            padding=True,
            truncation=True,
            max_length=spec.max_seq_len,
            return_tensors="pt",
        )
        with torch.no_grad():
            out = model(**enc, output_hidden_states=True)
        states = [h.float().numpy() for h in out.hidden_states]
        mask = enc["attention_mask"].numpy().astype(bool)
        yield states, mask


def extract(spec: ExtractionSpec):
    """Run the extraction; returns the manifest path."""
    tokenizer, model = _load_model(spec.checkpoint)
    depth = model.config.num_hidden_layers
    hidden = model.config.hidden_size
    if spec.layers == "all":
        layers = list(range(depth + 1))
    else:
        layers = sorted(set(int(l) for l in spec.layers))
        bad = [l for l in layers if not 0 <= l <= depth]
        if bad:
            raise ExtractionError(f"layers {bad} outside [0, {depth}]")

    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    split_data = {split: read_tsv(path) for split, path in spec.data_files.items()}
    label_names = sorted({name for _, names in split_data.values() for name in names})
    label_ids = {name: i for i, name in enumerate(label_names)}

    entries = []
    label_paths = {}
    for split, (texts, names) in split_data.items():
        pooled = {layer: [] for layer in layers}
        for states, mask in _hidden_states(model, tokenizer, texts, spec):
            for layer in layers:
                vecs = pool_batch(states[layer], spec.pooling, mask)
                if vecs.shape[1] != hidden:
                    raise ExtractionError(
                        f"layer {layer}: pooled dim {vecs.shape[1]} != hidden size {hidden}"
                    )
                pooled[layer].append(vecs.astype(np.float32))
        for layer in layers:
            matrix = np.concatenate(pooled[layer], axis=0)
            name = f"{spec.dataset}_{split}_{spec.model_name}_L{layer:02d}.lef"
            write_embedding_file(matrix, out_dir / name)
            entries.append(
                {
                    "dataset": spec.dataset,
                    "split": split,
                    "model": spec.model_name,
                    "layer": layer,
                    "dim": hidden,
                    "n_samples": len(texts),
                    "path": name,
                }
            )
        labels = np.array([label_ids[n] for n in names], dtype=np.int64)
        label_file = f"{spec.dataset}_{split}.lbl"
        write_label_file(labels, len(label_names), out_dir / label_file)
        label_paths[split] = label_file

    metadata = {
        "checkpoint": str(spec.checkpoint),
        "pooling": spec.pooling,
        "max_seq_len": spec.max_seq_len,
        "hidden_size": hidden,
        "num_hidden_layers": depth,
        "label_names": label_names,
    }
    manifest_path = out_dir / "manifest.json"
    write_manifest(entries, label_paths, metadata, manifest_path)
    return manifest_path
