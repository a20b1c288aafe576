"""Dimension-aligning projection, the fusion operators, and multi-layer aggregation.

Every learnable/differentiable operator comes as a forward/backward pair so the
training loop can backpropagate through the whole feature pipeline. Operators
accept a single vector or a (batch, dim) matrix; backward functions expect the
batched form produced by the forward cache.

Method constraints:
    concat      >= 2 inputs, raw embeddings, no projection, no target_dim
    sum         >= 2 inputs, projected to a shared dim
    hadamard    >= 2 inputs, projected
    multiply    exactly 2 inputs, shared dim must be a perfect square
    quaternion  exactly 2 inputs, shared dim divisible by 4
    moe         >= 2 inputs, one expert per input plus a softmax gate
    all         exactly 2 inputs, sum|hadamard|multiply|quaternion concatenated
    single      exactly 1 input, raw embedding passthrough (no fusion)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .nn import DenseParams, init_dense, linear_backward, linear_forward, relu, relu_backward, softmax

FUSION_METHODS = ("concat", "sum", "multiply", "hadamard", "quaternion", "moe", "all", "single")

# methods whose output stays at the shared projected dim, so a residual applies
RESIDUAL_METHODS = ("sum", "multiply", "hadamard", "quaternion", "moe")

PROJECTED_METHODS = ("sum", "multiply", "hadamard", "quaternion", "moe", "all")

DEFAULT_SQUARE_DIM = 1024  # default shared dim for multiply/quaternion/all


class FusionError(ValueError):
    pass


@dataclass
class FusionSpec:
    """Declarative description of one fusion run."""

    method: str
    inputs: list[tuple[str, int | str]]
    residual: bool = False
    target_dim: int | None = None

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "residual": self.residual,
            "inputs": [{"model": m, "layer": l} for m, l in self.inputs],
            "target_dim": self.target_dim,
        }

    @staticmethod
    def from_json(obj: dict) -> "FusionSpec":
        def parse_layer(value):
            try:
                return int(value)
            except (TypeError, ValueError):
                return value  # aggregated inputs carry labels like "last3"

        return FusionSpec(
            method=obj["method"],
            inputs=[(e["model"], parse_layer(e["layer"])) for e in obj["inputs"]],
            residual=bool(obj.get("residual", False)),
            target_dim=obj.get("target_dim"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @staticmethod
    def loads(text: str) -> "FusionSpec":
        return FusionSpec.from_json(json.loads(text))


def resolve_target_dim(method: str, input_dims: list[int], target_dim: int | None) -> int | None:
    """Shared projection dim for a method; None for methods that skip projection."""
    if method in ("concat", "single"):
        return None
    if target_dim is not None:
        return target_dim
    if method in ("multiply", "quaternion", "all"):
        return DEFAULT_SQUARE_DIM
    return min(input_dims)


def validate_spec(spec: FusionSpec, input_dims: list[int]) -> int | None:
    """Check method arity/dim constraints; returns the resolved target dim."""
    if spec.method not in FUSION_METHODS:
        raise FusionError(
            f"unknown fusion method {spec.method!r}; valid methods: {', '.join(FUSION_METHODS)}"
        )
    n = len(spec.inputs)
    if len(input_dims) != n:
        raise FusionError(f"{n} inputs declared but {len(input_dims)} dims supplied")
    if spec.method == "single":
        if n != 1:
            raise FusionError("single takes exactly 1 input")
    elif spec.method in ("multiply", "quaternion", "all"):
        if n != 2:
            raise FusionError(f"{spec.method} requires exactly 2 inputs, got {n}")
    elif n < 2:
        raise FusionError(f"{spec.method} requires at least 2 inputs, got {n}")
    d_m = resolve_target_dim(spec.method, input_dims, spec.target_dim)
    if spec.method in ("multiply", "all"):
        s = math.isqrt(d_m)
        if s * s != d_m:
            raise FusionError(f"{spec.method} needs a perfect-square shared dim, got {d_m}")
    if spec.method in ("quaternion", "all") and d_m % 4 != 0:
        raise FusionError(f"{spec.method} needs a shared dim divisible by 4, got {d_m}")
    if spec.residual and spec.method not in RESIDUAL_METHODS:
        raise FusionError(
            f"residual is unavailable for {spec.method!r} outputs; "
            f"use the non-residual variant"
        )
    return d_m


def _check_equal_dims(vecs: list[np.ndarray]) -> None:
    dims = {v.shape[-1] for v in vecs}
    if len(dims) != 1:
        raise FusionError(f"dim mismatch across inputs: {sorted(dims)}")


# ---------------------------------------------------------------------------
# projection f(E) = relu(W E + b)

def project(x: np.ndarray, p: DenseParams) -> np.ndarray:
    return relu(linear_forward(x, p))


def project_backward(x: np.ndarray, p: DenseParams, grad_out: np.ndarray):
    """Returns (grad_x, grad_weight, grad_bias)."""
    pre = linear_forward(x, p)
    return linear_backward(x, p, relu_backward(pre, grad_out))


# ---------------------------------------------------------------------------
# parameter-free fusion operators

def fuse_concat(embeddings: list[np.ndarray]) -> np.ndarray:
    if len(embeddings) < 2:
        raise FusionError("concat requires at least 2 inputs")
    return np.concatenate(embeddings, axis=-1)


def fuse_concat_backward(embeddings: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
    sizes = [e.shape[-1] for e in embeddings]
    return list(np.split(grad_out, np.cumsum(sizes)[:-1], axis=-1))


def fuse_sum(projected: list[np.ndarray]) -> np.ndarray:
    if len(projected) < 2:
        raise FusionError("sum requires at least 2 inputs")
    _check_equal_dims(projected)
    out = projected[0].copy()
    for p in projected[1:]:
        out += p
    return out


def fuse_sum_backward(projected: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
    return [grad_out.copy() for _ in projected]


def fuse_hadamard(projected: list[np.ndarray]) -> np.ndarray:
    if len(projected) < 2:
        raise FusionError("hadamard requires at least 2 inputs")
    _check_equal_dims(projected)
    out = projected[0].copy()
    for p in projected[1:]:
        out *= p
    return out


def fuse_hadamard_backward(projected: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
    grads = []
    for i in range(len(projected)):
        others = np.ones_like(projected[i])
        for j, p in enumerate(projected):
            if j != i:
                others = others * p
        grads.append(grad_out * others)
    return grads


def _square_side(d: int) -> int:
    s = math.isqrt(d)
    if s * s != d:
        raise FusionError(f"multiply needs a perfect-square dim, got {d}")
    return s


def fuse_multiply(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Reshape both inputs to s x s (row-major), matrix-multiply, flatten back."""
    if e1.shape != e2.shape:
        raise FusionError(f"dim mismatch: {e1.shape} vs {e2.shape}")
    d = e1.shape[-1]
    s = _square_side(d)
    single = e1.ndim == 1
    m1 = np.atleast_2d(e1).reshape(-1, s, s)
    m2 = np.atleast_2d(e2).reshape(-1, s, s)
    out = (m1 @ m2).reshape(-1, d)
    return out[0] if single else out


def fuse_multiply_backward(e1: np.ndarray, e2: np.ndarray, grad_out: np.ndarray):
    d = e1.shape[-1]
    s = _square_side(d)
    m1 = e1.reshape(-1, s, s)
    m2 = e2.reshape(-1, s, s)
    g = grad_out.reshape(-1, s, s)
    d1 = (g @ m2.transpose(0, 2, 1)).reshape(e1.shape)
    d2 = (m1.transpose(0, 2, 1) @ g).reshape(e2.shape)
    return d1, d2


def _quat_split(x: np.ndarray):
    """View (..., d) as (..., d/4, 4) component planes (w, x, y, z)."""
    q = x.reshape(*x.shape[:-1], -1, 4)
    return q[..., 0], q[..., 1], q[..., 2], q[..., 3]


def fuse_quaternion(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Blockwise Hamilton product over consecutive (w, x, y, z) groups of 4."""
    if e1.shape != e2.shape:
        raise FusionError(f"dim mismatch: {e1.shape} vs {e2.shape}")
    d = e1.shape[-1]
    if d % 4 != 0:
        raise FusionError(f"quaternion needs dim divisible by 4, got {d}")
    a1, b1, c1, d1 = _quat_split(e1)
    a2, b2, c2, d2 = _quat_split(e2)
    out = np.empty(e1.shape[:-1] + (d // 4, 4), dtype=e1.dtype)
    out[..., 0] = a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2
    out[..., 1] = a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2
    out[..., 2] = a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2
    out[..., 3] = a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2
    return out.reshape(e1.shape)


def fuse_quaternion_backward(e1: np.ndarray, e2: np.ndarray, grad_out: np.ndarray):
    a1, b1, c1, d1 = _quat_split(e1)
    a2, b2, c2, d2 = _quat_split(e2)
    gw, gx, gy, gz = _quat_split(grad_out)
    g1 = np.empty(e1.shape[:-1] + (e1.shape[-1] // 4, 4), dtype=grad_out.dtype)
    g1[..., 0] = gw * a2 + gx * b2 + gy * c2 + gz * d2
    g1[..., 1] = -gw * b2 + gx * a2 - gy * d2 + gz * c2
    g1[..., 2] = -gw * c2 + gx * d2 + gy * a2 - gz * b2
    g1[..., 3] = -gw * d2 - gx * c2 + gy * b2 + gz * a2
    g2 = np.empty_like(g1)
    g2[..., 0] = gw * a1 + gx * b1 + gy * c1 + gz * d1
    g2[..., 1] = -gw * b1 + gx * a1 + gy * d1 - gz * c1
    g2[..., 2] = -gw * c1 - gx * d1 + gy * a1 + gz * b1
    g2[..., 3] = -gw * d1 + gx * c1 - gy * b1 + gz * a1
    return g1.reshape(e1.shape), g2.reshape(e2.shape)


# ---------------------------------------------------------------------------
# mixture-of-experts fusion

@dataclass
class MoEParams:
    """One d_M -> d_M expert per input plus a softmax gate over all inputs."""

    experts: list[DenseParams]
    gate: DenseParams

    def arrays(self) -> list[np.ndarray]:
        out = []
        for e in self.experts:
            out.extend(e.arrays())
        out.extend(self.gate.arrays())
        return out


def init_moe(n_inputs: int, d_m: int, rng: np.random.Generator, dtype=np.float32) -> MoEParams:
    experts = [init_dense(d_m, d_m, rng, dtype) for _ in range(n_inputs)]
    gate = init_dense(n_inputs * d_m, n_inputs, rng, dtype)
    return MoEParams(experts, gate)


def fuse_moe(projected: list[np.ndarray], params: MoEParams):
    """Softmax-gated weighted sum of per-input expert outputs.

    Returns (output, cache); pass the cache to fuse_moe_backward.
    """
    if len(projected) != len(params.experts):
        raise FusionError(
            f"expert-count mismatch: {len(projected)} inputs, {len(params.experts)} experts"
        )
    _check_equal_dims(projected)
    single = projected[0].ndim == 1
    ps = [np.atleast_2d(p) for p in projected]
    pcat = np.concatenate(ps, axis=1)
    gate_logits = linear_forward(pcat, params.gate)
    weights = softmax(gate_logits)
    pre_acts = [linear_forward(p, e) for p, e in zip(ps, params.experts)]
    expert_outs = [relu(t) for t in pre_acts]
    out = np.zeros_like(ps[0])
    for i, e_out in enumerate(expert_outs):
        out += weights[:, i : i + 1] * e_out
    cache = (ps, pcat, weights, pre_acts, expert_outs, params)
    return (out[0] if single else out), cache


def fuse_moe_backward(cache, grad_out: np.ndarray):
    """Returns (input grads, MoEParams-shaped grads)."""
    ps, pcat, weights, pre_acts, expert_outs, params = cache
    grad_out = np.atleast_2d(grad_out)
    n = len(ps)
    d_m = ps[0].shape[1]
    dps = [np.zeros_like(p) for p in ps]
    expert_grads = []
    dgate_w = np.zeros_like(params.gate.weight)
    dgate_b = np.zeros_like(params.gate.bias)
    dweights = np.empty_like(weights)
    for i in range(n):
        de = weights[:, i : i + 1] * grad_out
        dt = relu_backward(pre_acts[i], de)
        dp, dw, db = linear_backward(ps[i], params.experts[i], dt)
        dps[i] += dp
        expert_grads.append(DenseParams(dw, db))
        dweights[:, i] = (grad_out * expert_outs[i]).sum(axis=1)
    # softmax jacobian: du = g * (dg - sum(dg * g))
    du = weights * (dweights - (dweights * weights).sum(axis=1, keepdims=True))
    dpcat, dgate_w, dgate_b = linear_backward(pcat, params.gate, du)
    for i in range(n):
        dps[i] += dpcat[:, i * d_m : (i + 1) * d_m]
    return dps, MoEParams(expert_grads, DenseParams(dgate_w, dgate_b))


# ---------------------------------------------------------------------------
# combined application of the four same-dim operators

_ALL_ORDER = ("sum", "hadamard", "multiply", "quaternion")


def fuse_all(projected: list[np.ndarray]) -> np.ndarray:
    """Sum, hadamard, multiply, and quaternion outputs concatenated in that order."""
    if len(projected) != 2:
        raise FusionError("all requires exactly 2 inputs")
    e1, e2 = projected
    blocks = [
        fuse_sum([e1, e2]),
        fuse_hadamard([e1, e2]),
        fuse_multiply(e1, e2),
        fuse_quaternion(e1, e2),
    ]
    return np.concatenate(blocks, axis=-1)


def fuse_all_backward(projected: list[np.ndarray], grad_out: np.ndarray):
    e1, e2 = projected
    d = e1.shape[-1]
    g_sum, g_had, g_mul, g_quat = (
        grad_out[..., i * d : (i + 1) * d] for i in range(4)
    )
    d1, d2 = fuse_sum_backward([e1, e2], g_sum)
    h1, h2 = fuse_hadamard_backward([e1, e2], g_had)
    m1, m2 = fuse_multiply_backward(e1, e2, g_mul)
    q1, q2 = fuse_quaternion_backward(e1, e2, g_quat)
    return [d1 + h1 + m1 + q1, d2 + h2 + m2 + q2]


# ---------------------------------------------------------------------------
# residual enhancement and multi-layer aggregation

def apply_residual(fused: np.ndarray, projected: list[np.ndarray]) -> np.ndarray:
    """Add the mean of the projected inputs back onto a same-dim fused output."""
    _check_equal_dims(projected)
    if fused.shape[-1] != projected[0].shape[-1]:
        raise FusionError(
            f"residual needs a fused dim of {projected[0].shape[-1]}, got "
            f"{fused.shape[-1]}; use the non-residual variant of this method"
        )
    return fused + np.mean(np.stack(projected, axis=0), axis=0)


def apply_residual_backward(projected: list[np.ndarray], grad_out: np.ndarray):
    """Returns (grad wrt fused, per-input residual grads)."""
    n = len(projected)
    return grad_out, [grad_out / n for _ in projected]


def aggregate_layers(layers: list[np.ndarray], mode: str) -> np.ndarray:
    """Elementwise mean/max/min across a list of same-shaped layer embeddings."""
    if not layers:
        raise FusionError("aggregate_layers needs at least one layer")
    _check_equal_dims(layers)
    stack = np.stack(layers, axis=0)
    if mode == "mean":
        return stack.mean(axis=0)
    if mode == "max":
        return stack.max(axis=0)
    if mode == "min":
        return stack.min(axis=0)
    raise FusionError(f"unknown aggregation mode {mode!r}; valid: mean, max, min")
