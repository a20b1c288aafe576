"""Synthetic embedding generator: desk-scale stand-in for per-layer LLM dumps.

Each synthetic model gets random unit class directions; the class signal is
strongest at a planted peak layer and degrades with distance from it, with a
configurable extra penalty at the final layer. Per-layer noise is independent,
so averaging nearby layers raises the signal-to-noise ratio. All draws are
deterministic functions of the spec seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .store import Manifest, load_manifest, save_manifest, write_embedding_file, write_label_file

SPLITS = ("train", "test")


@dataclass
class SyntheticSpec:
    n_models: int = 2
    layers: int = 6  # transformer depth; files cover layers 0..layers
    dims: list[int] = field(default_factory=lambda: [16, 16])
    n_samples: int = 400
    n_classes: int = 2
    peak_layer: list[int] = field(default_factory=lambda: [4, 4])
    noise: float = 0.1
    seed: int = 0
    n_test: int = 200
    signal: float = 1.0  # class-mean magnitude at the peak layer
    final_layer_penalty: float = 0.4
    # per-model strength jitter range; spreads single-model quality so that
    # subset accuracies have variance to shrink as more models are combined
    quality_jitter: float = 0.0
    complementary: bool = False  # 2 models carry disjoint halves of the class signal
    dataset: str = "synthetic"
    model_names: list[str] | None = None

    def __post_init__(self):
        if len(self.dims) != self.n_models:
            raise ValueError(f"dims has {len(self.dims)} entries for {self.n_models} models")
        if len(self.peak_layer) != self.n_models:
            raise ValueError(
                f"peak_layer has {len(self.peak_layer)} entries for {self.n_models} models"
            )
        for p in self.peak_layer:
            if not 1 <= p <= self.layers:
                raise ValueError(f"peak_layer {p} outside [1, {self.layers}]")
        if self.complementary and self.n_models != 2:
            raise ValueError("complementary generation needs exactly 2 models")
        if self.model_names is None:
            self.model_names = [f"m{i}" for i in range(self.n_models)]


def _balanced_labels(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    return labels


def _class_factors(spec: SyntheticSpec) -> tuple[int, int]:
    """Split n_classes into c1 * c2 for the complementary two-model case."""
    c = spec.n_classes
    c1 = int(np.sqrt(c))
    while c1 > 1 and c % c1 != 0:
        c1 -= 1
    if c1 <= 1:
        raise ValueError(f"complementary generation needs a composite class count, got {c}")
    return c1, c // c1


def _signal_profile(spec: SyntheticSpec, model_idx: int, layer: int) -> float:
    peak = spec.peak_layer[model_idx]
    s = 1.0 / (1.0 + 0.6 * abs(layer - peak))
    if layer == spec.layers and peak != spec.layers:
        s *= 1.0 - spec.final_layer_penalty
    return s


def gen_synthetic(spec: SyntheticSpec, out_dir) -> Manifest:
    """Write embedding/label files plus a manifest; returns the loaded manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {"train": spec.n_samples, "test": spec.n_test}
    labels = {
        split: _balanced_labels(counts[split], spec.n_classes, np.random.default_rng([spec.seed, 7, i]))
        for i, split in enumerate(SPLITS)
    }
    qualities = np.ones(spec.n_models)
    if spec.quality_jitter > 0:
        qrng = np.random.default_rng([spec.seed, 11])
        qualities = 1.0 + qrng.uniform(-spec.quality_jitter, spec.quality_jitter, spec.n_models)

    if spec.complementary:
        c1, c2 = _class_factors(spec)
        factor_of = [lambda y: y // c2, lambda y: y % c2]
        mean_counts = [c1, c2]
    else:
        factor_of = [lambda y: y for _ in range(spec.n_models)]
        mean_counts = [spec.n_classes] * spec.n_models

    entries = []
    label_paths = {}
    for split_idx, split in enumerate(SPLITS):
        label_name = f"{spec.dataset}_{split}.lbl"
        write_label_file(labels[split], spec.n_classes, out_dir / label_name)
        label_paths[split] = label_name
        for j, model in enumerate(spec.model_names):
            mrng = np.random.default_rng([spec.seed, 13, j])
            means = mrng.normal(size=(mean_counts[j], spec.dims[j]))
            means /= np.linalg.norm(means, axis=1, keepdims=True)
            rows = means[factor_of[j](labels[split])]
            for layer in range(spec.layers + 1):
                nrng = np.random.default_rng([spec.seed, 17, j, layer, split_idx])
                s = spec.signal * qualities[j] * _signal_profile(spec, j, layer)
                data = s * rows + spec.noise * nrng.normal(size=rows.shape)
                name = f"{spec.dataset}_{split}_{model}_L{layer:02d}.lef"
                write_embedding_file(data.astype(np.float32), out_dir / name)
                entries.append(
                    {
                        "dataset": spec.dataset,
                        "split": split,
                        "model": model,
                        "layer": layer,
                        "dim": spec.dims[j],
                        "n_samples": counts[split],
                        "path": name,
                    }
                )
    manifest_path = out_dir / "manifest.json"
    save_manifest(entries, label_paths, manifest_path)
    return load_manifest(manifest_path)
