"""Experiment drivers: layer sweeps, multi-layer aggregation sweeps, two-model
fusion grids, and N-model combination sweeps.

Every grid cell derives its own RNG seed from a stable hash of (global seed,
cell identity), so results are independent of execution order and of the
parallelism degree. Cells that violate an operator precondition produce an
error row instead of aborting the grid.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .classifier import TrainConfig, evaluate, train
from .fusion import FusionError, FusionSpec, aggregate_layers
from .results import ResultRow, SweepResult, best_row
from .store import Manifest, ManifestError, estimate_memory, load_manifest


def derive_seed(global_seed: int, key: str) -> int:
    """Stable 63-bit seed from a global seed and a cell-identity string."""
    digest = hashlib.blake2b(f"{global_seed}|{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass(frozen=True)
class InputSel:
    """One fusion input: a model plus the layer(s) feeding it."""

    model: str
    layers: tuple[int, ...]
    mode: str | None = None  # aggregation mode when len(layers) > 1

    def label(self) -> str:
        if len(self.layers) == 1:
            return str(self.layers[0])
        return f"last{len(self.layers)}"


@dataclass(frozen=True)
class CellSpec:
    dataset: str
    inputs: tuple[InputSel, ...]
    method: str
    residual: bool = False
    target_dim: int | None = None

    def seed_key(self) -> str:
        # aggregation mode deliberately excluded: cells that see identical
        # data through different modes share their initialization
        return json.dumps(
            {
                "dataset": self.dataset,
                "inputs": [[s.model, list(s.layers)] for s in self.inputs],
                "method": self.method,
                "residual": self.residual,
                "target_dim": self.target_dim,
            },
            sort_keys=True,
        )


def _features(manifest: Manifest, sel: InputSel, split: str) -> np.ndarray:
    mats = [manifest.load_matrix(sel.model, layer, split) for layer in sel.layers]
    if len(mats) == 1:
        return mats[0]
    return aggregate_layers(mats, sel.mode or "mean").astype(np.float32)


def run_cell(manifest: Manifest, cell: CellSpec, config: TrainConfig) -> ResultRow:
    """Train one configuration and evaluate it on the test split."""
    inputs_label = [(s.model, s.label()) for s in cell.inputs]
    agg = ""
    for s in cell.inputs:
        if len(s.layers) > 1:
            agg = f"{s.mode}:{len(s.layers)}"
    row = ResultRow(
        dataset=cell.dataset,
        inputs=inputs_label,
        method=cell.method,
        residual=cell.residual,
        aggregation=agg,
    )
    try:
        spec = FusionSpec(
            method=cell.method,
            inputs=inputs_label,
            residual=cell.residual,
            target_dim=cell.target_dim,
        )
        t0 = time.perf_counter()
        train_feats = [_features(manifest, s, "train") for s in cell.inputs]
        test_feats = [_features(manifest, s, "test") for s in cell.inputs]
        train_labels, n_classes = manifest.load_labels("train")
        test_labels, _ = manifest.load_labels("test")
        cfg = replace(config, seed=derive_seed(config.seed, cell.seed_key()))
        model = train(train_feats, train_labels, cfg, spec, n_classes=n_classes)
        row.accuracy = evaluate(model, test_feats, test_labels)
        row.wall_time_s = time.perf_counter() - t0
        from .classifier import feature_dim  # local: avoids cycle at import time

        input_dims = [f.shape[1] for f in train_feats]
        row.fused_dim = feature_dim(spec, input_dims)
        storage_dims = [manifest.dim(s.model) for s in cell.inputs for _ in s.layers]
        row.memory_bytes = estimate_memory(manifest.n_samples("train"), storage_dims)
    except (FusionError, ManifestError) as exc:
        row.error = str(exc)
    return row


def _cell_worker(args) -> ResultRow:
    manifest_path, cell, config_json = args
    manifest = load_manifest(manifest_path)
    return run_cell(manifest, cell, TrainConfig.from_json(config_json))


def run_cells(
    manifest: Manifest,
    cells: list[CellSpec],
    config: TrainConfig,
    parallelism: int = 1,
) -> list[ResultRow]:
    """Run cells, possibly across processes; row order always matches cells."""
    if parallelism > 1 and manifest.path is not None:
        jobs = [(str(manifest.path), cell, config.to_json()) for cell in cells]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(_cell_worker, jobs))
    return [run_cell(manifest, cell, config) for cell in cells]


def _dataset(manifest: Manifest, dataset: str | None) -> str:
    if dataset is not None:
        return dataset
    names = manifest.datasets()
    if len(names) != 1:
        raise ManifestError(f"manifest holds datasets {names}; pick one explicitly")
    return names[0]


def layer_sweep(
    manifest: Manifest,
    model: str,
    config: TrainConfig,
    dataset: str | None = None,
    parallelism: int = 1,
) -> SweepResult:
    """Train and evaluate once per available layer of one model."""
    ds = _dataset(manifest, dataset)
    layers = manifest.layers(model, "train")
    cells = [
        CellSpec(ds, (InputSel(model, (layer,)),), method="single") for layer in layers
    ]
    rows = run_cells(manifest, cells, config, parallelism)
    result = SweepResult(rows)
    scored = [r for r in rows if r.accuracy is not None]
    if scored:
        top = best_row(scored)
        top.best = True
        result.summary = {
            "argmax_layer": int(top.inputs[0][1]),
            "argmax_accuracy": top.accuracy,
        }
    return result


def multi_layer_sweep(
    manifest: Manifest,
    model: str,
    ks,
    modes,
    config: TrainConfig,
    dataset: str | None = None,
    parallelism: int = 1,
) -> SweepResult:
    """One row per (k, mode): aggregate the last k layers, then train."""
    ds = _dataset(manifest, dataset)
    layers = manifest.layers(model, "train")
    cells = []
    for k in ks:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        k_eff = min(k, len(layers))
        last_k = tuple(layers[-k_eff:])
        for mode in modes:
            cells.append(
                CellSpec(
                    ds,
                    (InputSel(model, last_k, mode if k_eff > 1 else None),),
                    method="single",
                )
            )
    rows = run_cells(manifest, cells, config, parallelism)
    result = SweepResult(rows)
    scored = [r for r in rows if r.accuracy is not None]
    if scored:
        top = best_row(scored)
        top.best = True
        result.summary = {
            "best_aggregation": top.aggregation or f"single:{top.inputs[0][1]}",
            "best_accuracy": top.accuracy,
        }
    return result


def pair_fusion_grid(
    manifest: Manifest,
    models: tuple[str, str],
    layer_sets: dict[str, list[int]],
    methods,
    residual_flags,
    config: TrainConfig,
    target_dim: int | None = None,
    dataset: str | None = None,
    parallelism: int = 1,
) -> SweepResult:
    """Cartesian grid over (layer_i, layer_j, method, residual) for two models."""
    ds = _dataset(manifest, dataset)
    m1, m2 = models
    cells = []
    for l1 in layer_sets[m1]:
        for l2 in layer_sets[m2]:
            for method in methods:
                for residual in residual_flags:
                    cells.append(
                        CellSpec(
                            ds,
                            (InputSel(m1, (l1,)), InputSel(m2, (l2,))),
                            method=method,
                            residual=residual,
                            target_dim=target_dim,
                        )
                    )
    rows = run_cells(manifest, cells, config, parallelism)
    result = SweepResult(rows)
    scored = [r for r in rows if r.accuracy is not None]
    if scored:
        top = best_row(scored)
        top.best = True
        result.summary = {
            "best_inputs": top.inputs_label(),
            "best_method": top.method,
            "best_residual": top.residual,
            "best_accuracy": top.accuracy,
        }
    return result


def combo_sweep(
    manifest: Manifest,
    models: list[str],
    sizes,
    config: TrainConfig,
    layers: dict[str, int] | None = None,
    dataset: str | None = None,
    parallelism: int = 1,
) -> SweepResult:
    """Concatenation fusion over every model subset of each requested size."""
    if len(models) < 2:
        raise ValueError("combo_sweep needs at least 2 models")
    ds = _dataset(manifest, dataset)
    layers = layers or {}
    chosen = {m: layers.get(m, manifest.last_layer(m)) for m in models}
    cells = []
    cell_sizes = []
    for size in sizes:
        for subset in combinations(models, size):
            cells.append(
                CellSpec(
                    ds,
                    tuple(InputSel(m, (chosen[m],)) for m in subset),
                    method="concat",
                )
            )
            cell_sizes.append(size)
    rows = run_cells(manifest, cells, config, parallelism)
    per_size: dict[str, dict] = {}
    for size in sorted(set(cell_sizes)):
        accs = [
            r.accuracy
            for r, s in zip(rows, cell_sizes)
            if s == size and r.accuracy is not None
        ]
        if accs:
            per_size[str(size)] = {
                "mean": float(np.mean(accs)),
                "std": float(np.std(accs)),
                "runs": len(accs),
            }
    return SweepResult(rows, {"per_size": per_size})
