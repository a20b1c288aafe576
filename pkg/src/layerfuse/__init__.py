"""layerfuse: layer-aware embedding selection and multi-model embedding fusion.

A desk-scale toolkit for text-classification experiments over stored
per-layer embedding matrices: a binary embedding/label store with a JSON
manifest, learnable dimension-aligning projections, eight fusion operators
with hand-written backpropagation, an MLP training recipe, and sweep drivers
with memory-cost reporting.
"""

from .classifier import (
    TrainConfig,
    TrainedModel,
    evaluate,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    write_history_csv,
)
from .experiments import (
    CellSpec,
    InputSel,
    combo_sweep,
    derive_seed,
    layer_sweep,
    multi_layer_sweep,
    pair_fusion_grid,
    run_cell,
)
from .fusion import (
    FUSION_METHODS,
    FusionError,
    FusionSpec,
    aggregate_layers,
    apply_residual,
    fuse_all,
    fuse_concat,
    fuse_hadamard,
    fuse_moe,
    fuse_multiply,
    fuse_quaternion,
    fuse_sum,
    project,
)
from .registry import MODEL_DIMS, resolve_model_dim
from .results import ResultRow, SweepResult, best_row, emit_report, load_report
from .store import (
    Manifest,
    ManifestEntry,
    estimate_memory,
    format_gib,
    load_manifest,
    read_embedding_file,
    read_label_file,
    save_manifest,
    write_embedding_file,
    write_label_file,
)
from .synth import SyntheticSpec, gen_synthetic

__version__ = "0.1.0"
