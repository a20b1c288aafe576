"""Minimal dense numeric kernel: linear maps, ReLU, softmax cross-entropy, Adam,
and the finite-difference utilities every learnable component is checked against.

Forward/backward passes are hand-written for the fixed computation graph; there
is no general autograd. Training math runs in float32, gradient checks in
float64 (pass dtype=np.float64 when building parameters).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DenseParams:
    """Affine map y = W x + b with W of shape (d_out, d_in)."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [self.weight, self.bias]


def init_dense(d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32) -> DenseParams:
    """Uniform weights in +/- sqrt(6 / (d_in + d_out)), zero biases."""
    bound = np.sqrt(6.0 / (d_in + d_out))
    weight = rng.uniform(-bound, bound, size=(d_out, d_in)).astype(dtype)
    bias = np.zeros(d_out, dtype=dtype)
    return DenseParams(weight, bias)


def linear_forward(x: np.ndarray, p: DenseParams) -> np.ndarray:
    """W x + b for a single vector, or row-wise for a (batch, d_in) matrix."""
    if x.shape[-1] != p.d_in:
        raise ValueError(f"shape mismatch: input dim {x.shape[-1]}, weight d_in {p.d_in}")
    return x @ p.weight.T + p.bias


def linear_backward(x: np.ndarray, p: DenseParams, grad_out: np.ndarray):
    """Gradients of a linear layer: returns (grad_x, grad_weight, grad_bias)."""
    if x.ndim == 1:
        grad_w = np.outer(grad_out, x)
        grad_b = grad_out.copy()
    else:
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
    grad_x = grad_out @ p.weight
    return grad_x, grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(pre: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through ReLU given its pre-activation input."""
    return grad_out * (pre > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Loss and logit gradient for one sample: -log softmax(logits)[label]."""
    n_classes = logits.shape[0]
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} out of range [0, {n_classes})")
    shifted = logits - logits.max()
    logsumexp = np.log(np.exp(shifted).sum())
    loss = float(logsumexp - shifted[label])
    grad = np.exp(shifted - logsumexp)
    grad[label] -= 1.0
    return loss, grad


def softmax_cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean loss over a batch and the logit gradient of that mean."""
    n, n_classes = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    losses = logsumexp - shifted[np.arange(n), labels]
    grad = np.exp(shifted - logsumexp[:, None])
    grad[np.arange(n), labels] -= 1.0
    return float(losses.mean()), grad / n


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter list."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One Adam update with bias correction; parameters are updated in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump.flat[i] = eps
        grad.flat[i] = (f(x + bump) - f(x - bump)) / (2 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-relative deviation between two gradient vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
