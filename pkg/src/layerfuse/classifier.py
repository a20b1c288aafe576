"""MLP classification head and the end-to-end training loop over fused embeddings.

Gradients flow through the MLP, the fusion operator, and the per-model
projections; all three are updated jointly by Adam. Training is deterministic
given (seed, data, config): parameter init and the per-epoch shuffle both
derive from the seed.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import fusion as fz
from .fusion import FusionError, FusionSpec, MoEParams, init_moe, validate_spec
from .nn import (
    AdamState,
    DenseParams,
    adam_step,
    init_dense,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    softmax_cross_entropy_batch,
)

CHECKPOINT_MAGIC = b"LFC1"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHQ")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 100
    lr: float = 1e-4
    epochs: int = 120
    hidden: int = 256
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_json(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "lr": self.lr,
            "epochs": self.epochs,
            "hidden": self.hidden,
            "seed": self.seed,
            "shuffle": self.shuffle,
        }

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        return TrainConfig(**obj)


@dataclass
class MLPParams:
    layer1: DenseParams
    layer2: DenseParams

    def arrays(self) -> list[np.ndarray]:
        return self.layer1.arrays() + self.layer2.arrays()


@dataclass
class ModelParams:
    """All learnable arrays: per-model projections, fusion-internal, MLP head."""

    projections: list[DenseParams] | None
    moe: MoEParams | None
    mlp: MLPParams

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        if self.projections is not None:
            for p in self.projections:
                out.extend(p.arrays())
        if self.moe is not None:
            out.extend(self.moe.arrays())
        out.extend(self.mlp.arrays())
        return out


@dataclass
class TrainedModel:
    spec: FusionSpec
    config: TrainConfig
    params: ModelParams
    n_classes: int
    input_dims: list[int]
    history: list[dict] = field(default_factory=list)
    adam: AdamState | None = None


def feature_dim(spec: FusionSpec, input_dims: list[int]) -> int:
    """Dimension of the fused feature vector fed to the MLP."""
    d_m = validate_spec(spec, input_dims)
    if spec.method == "single":
        return input_dims[0]
    if spec.method == "concat":
        return sum(input_dims)
    if spec.method == "all":
        return 4 * d_m
    return d_m


def build_params(
    spec: FusionSpec,
    input_dims: list[int],
    n_classes: int,
    hidden: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> ModelParams:
    """Initialize all parameters in a fixed order from one RNG stream."""
    d_m = validate_spec(spec, input_dims)
    projections = None
    moe = None
    if spec.method in fz.PROJECTED_METHODS:
        projections = [init_dense(d, d_m, rng, dtype) for d in input_dims]
        if spec.method == "moe":
            moe = init_moe(len(input_dims), d_m, rng, dtype)
    d_feat = feature_dim(spec, input_dims)
    mlp = MLPParams(
        layer1=init_dense(d_feat, hidden, rng, dtype),
        layer2=init_dense(hidden, n_classes, rng, dtype),
    )
    return ModelParams(projections, moe, mlp)


def init_model(
    input_dims: list[int],
    n_classes: int,
    config: TrainConfig,
    spec: FusionSpec,
    dtype=np.float32,
) -> TrainedModel:
    """Untrained model with deterministic parameters given config.seed."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(config.seed)
    params = build_params(spec, input_dims, n_classes, config.hidden, rng, dtype)
    return TrainedModel(spec, config, params, n_classes, list(input_dims))


# ---------------------------------------------------------------------------
# forward / backward over the full graph

def forward(params: ModelParams, spec: FusionSpec, xs: list[np.ndarray]):
    """Logits plus the cache needed by backward. Inputs are (batch, d_i) matrices."""
    cache: dict = {"xs": xs}
    if spec.method == "single":
        feats = xs[0]
    elif spec.method == "concat":
        feats = fz.fuse_concat(xs)
    else:
        pres = [linear_forward(x, p) for x, p in zip(xs, params.projections)]
        ps = [relu(z) for z in pres]
        cache["pres"] = pres
        cache["ps"] = ps
        if spec.method == "sum":
            fused = fz.fuse_sum(ps)
        elif spec.method == "hadamard":
            fused = fz.fuse_hadamard(ps)
        elif spec.method == "multiply":
            fused = fz.fuse_multiply(ps[0], ps[1])
        elif spec.method == "quaternion":
            fused = fz.fuse_quaternion(ps[0], ps[1])
        elif spec.method == "moe":
            fused, moe_cache = fz.fuse_moe(ps, params.moe)
            cache["moe_cache"] = moe_cache
        elif spec.method == "all":
            fused = fz.fuse_all(ps)
        else:
            raise FusionError(f"unknown fusion method {spec.method!r}")
        feats = fz.apply_residual(fused, ps) if spec.residual else fused
    a1 = linear_forward(feats, params.mlp.layer1)
    h = relu(a1)
    logits = linear_forward(h, params.mlp.layer2)
    cache.update(feats=feats, a1=a1, h=h)
    return logits, cache


def backward(params: ModelParams, spec: FusionSpec, cache: dict, dlogits: np.ndarray):
    """Gradients mirroring ModelParams, plus gradients wrt the raw inputs."""
    xs = cache["xs"]
    dh, dw2, db2 = linear_backward(cache["h"], params.mlp.layer2, dlogits)
    da1 = relu_backward(cache["a1"], dh)
    dfeats, dw1, db1 = linear_backward(cache["feats"], params.mlp.layer1, da1)
    mlp_grads = MLPParams(DenseParams(dw1, db1), DenseParams(dw2, db2))

    proj_grads = None
    moe_grads = None
    if spec.method == "single":
        dxs = [dfeats]
    elif spec.method == "concat":
        dxs = fz.fuse_concat_backward(xs, dfeats)
    else:
        ps = cache["ps"]
        if spec.residual:
            dfused, dres = fz.apply_residual_backward(ps, dfeats)
        else:
            dfused, dres = dfeats, None
        if spec.method == "sum":
            dps = fz.fuse_sum_backward(ps, dfused)
        elif spec.method == "hadamard":
            dps = fz.fuse_hadamard_backward(ps, dfused)
        elif spec.method == "multiply":
            dps = list(fz.fuse_multiply_backward(ps[0], ps[1], dfused))
        elif spec.method == "quaternion":
            dps = list(fz.fuse_quaternion_backward(ps[0], ps[1], dfused))
        elif spec.method == "moe":
            dps, moe_grads = fz.fuse_moe_backward(cache["moe_cache"], dfused)
        elif spec.method == "all":
            dps = fz.fuse_all_backward(ps, dfused)
        if dres is not None:
            dps = [dp + dr for dp, dr in zip(dps, dres)]
        proj_grads = []
        dxs = []
        for x, p, pre, dp in zip(xs, params.projections, cache["pres"], dps):
            dz = relu_backward(pre, dp)
            dx, dw, db = linear_backward(x, p, dz)
            proj_grads.append(DenseParams(dw, db))
            dxs.append(dx)
    return ModelParams(proj_grads, moe_grads, mlp_grads), dxs


def loss_and_grads(params: ModelParams, spec: FusionSpec, xs, labels):
    """Mean CE loss, parameter grads, and input grads for one batch."""
    logits, cache = forward(params, spec, xs)
    loss, dlogits = softmax_cross_entropy_batch(logits, labels)
    grads, dxs = backward(params, spec, cache, dlogits)
    return loss, grads, dxs


# ---------------------------------------------------------------------------
# training and evaluation

def _check_aligned(xs: list[np.ndarray], labels: np.ndarray) -> int:
    ns = {x.shape[0] for x in xs} | {labels.shape[0]}
    if len(ns) != 1:
        raise ValueError(f"misaligned inputs: sample counts {sorted(ns)}")
    return ns.pop()


def train(
    xs: list[np.ndarray],
    labels: np.ndarray,
    config: TrainConfig,
    spec: FusionSpec,
    n_classes: int | None = None,
) -> TrainedModel:
    """Adam over shuffled mini-batches for config.epochs epochs."""
    xs = [np.asarray(x, dtype=np.float32) for x in xs]
    labels = np.asarray(labels, dtype=np.int64)
    n = _check_aligned(xs, labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 2
        n_classes = max(n_classes, 2)
    model = init_model([x.shape[1] for x in xs], n_classes, config, spec)
    model.adam = AdamState(lr=config.lr)
    arrays = model.params.arrays()
    for epoch in range(config.epochs):
        if config.shuffle:
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [x[idx] for x in xs]
            loss, grads, _ = loss_and_grads(model.params, spec, batch, labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start}"
                )
            adam_step(arrays, grads.arrays(), model.adam)
            loss_sum += loss * idx.size
        acc = evaluate(model, xs, labels)
        model.history.append(
            {"epoch": epoch, "loss": loss_sum / n, "train_acc": acc}
        )
    return model


def evaluate(model: TrainedModel, xs: list[np.ndarray], labels: np.ndarray) -> float:
    """Fraction of argmax-correct predictions in [0, 1]."""
    xs = [np.asarray(x, dtype=model.params.mlp.layer1.weight.dtype) for x in xs]
    labels = np.asarray(labels)
    _check_aligned(xs, labels)
    for x, d in zip(xs, model.input_dims):
        if x.shape[1] != d:
            raise ValueError(f"dim mismatch: input has {x.shape[1]}, model expects {d}")
    logits, _ = forward(model.params, model.spec, xs)
    return float((logits.argmax(axis=1) == labels).mean())


def predict(model: TrainedModel, vectors: list[np.ndarray]) -> int:
    """Class id for one sample; ties break toward the lowest class id."""
    if len(vectors) != len(model.input_dims):
        raise ValueError(
            f"expected {len(model.input_dims)} embeddings, got {len(vectors)}"
        )
    xs = [np.asarray(v, dtype=np.float32).reshape(1, -1) for v in vectors]
    for x, d in zip(xs, model.input_dims):
        if x.shape[1] != d:
            raise ValueError(f"dim mismatch: input has {x.shape[1]}, model expects {d}")
    logits, _ = forward(model.params, model.spec, xs)
    return int(logits[0].argmax())


# ---------------------------------------------------------------------------
# checkpoint and history serialization

def _array_meta(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "dtype": arr.dtype.str}


def save_checkpoint(model: TrainedModel, path) -> None:
    """Versioned binary checkpoint: header | JSON metadata | raw array payloads."""
    arrays = model.params.arrays()
    adam = model.adam or AdamState(lr=model.config.lr)
    state_arrays = list(adam.m) + list(adam.v)
    meta = {
        "spec": model.spec.to_json(),
        "config": model.config.to_json(),
        "n_classes": model.n_classes,
        "input_dims": model.input_dims,
        "history": model.history,
        "params": [_array_meta(a) for a in arrays],
        "adam": {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "t": adam.t,
            "arrays": [_array_meta(a) for a in state_arrays],
        },
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays + state_arrays:
            fh.write(np.ascontiguousarray(a).tobytes())


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as fh:
        raw = fh.read(_CKPT_HEADER.size)
        if len(raw) < _CKPT_HEADER.size:
            raise ValueError(f"{path}: checkpoint header truncated")
        magic, version, meta_len = _CKPT_HEADER.unpack(raw)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        payload = fh.read()

    def take(metas, buf, offset):
        arrays = []
        for m in metas:
            count = int(np.prod(m["shape"])) if m["shape"] else 1
            nbytes = count * np.dtype(m["dtype"]).itemsize
            arr = np.frombuffer(buf[offset : offset + nbytes], dtype=m["dtype"])
            arrays.append(np.array(arr).reshape(m["shape"]))
            offset += nbytes
        return arrays, offset

    param_arrays, offset = take(meta["params"], payload, 0)
    state_arrays, offset = take(meta["adam"]["arrays"], payload, offset)
    spec = FusionSpec.from_json(meta["spec"])
    config = TrainConfig.from_json(meta["config"])
    model = init_model(meta["input_dims"], meta["n_classes"], config, spec)
    for dst, src in zip(model.params.arrays(), param_arrays):
        if dst.shape != src.shape:
            raise ValueError(f"{path}: array shape mismatch {dst.shape} vs {src.shape}")
        dst[...] = src
    n = len(state_arrays) // 2
    model.adam = AdamState(
        lr=meta["adam"]["lr"],
        beta1=meta["adam"]["beta1"],
        beta2=meta["adam"]["beta2"],
        eps=meta["adam"]["eps"],
        t=meta["adam"]["t"],
        m=state_arrays[:n],
        v=state_arrays[n:],
    )
    model.history = meta["history"]
    return model


def write_history_csv(model: TrainedModel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_acc"])
        for row in model.history:
            writer.writerow([row["epoch"], repr(row["loss"]), repr(row["train_acc"])])
