"""Tour of the fusion operators on small vectors: dimension-aligning
projection, the five pairwise combiners, gated expert mixing, residual
enhancement, and multi-layer aggregation.
"""

import numpy as np

from layerfuse import (
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
from layerfuse.fusion import init_moe
from layerfuse.nn import DenseParams, init_dense

rng = np.random.default_rng(0)

e1 = rng.normal(size=16)
e2 = rng.normal(size=16)

print("concat :", fuse_concat([e1[:3], e2[:2]]).round(3))
print("sum    :", fuse_sum([e1[:4], e2[:4]]).round(3))
print("hadamard:", fuse_hadamard([e1[:4], e2[:4]]).round(3))

# reshape-multiply treats each 16-vector as a 4x4 matrix
print("\nmultiply vs identity returns the other operand:")
print(np.allclose(fuse_multiply(e1, np.eye(4).ravel()), e1))

# quaternion blocks of 4 follow the Hamilton product; i * j = k
i = np.array([0.0, 1.0, 0.0, 0.0])
j = np.array([0.0, 0.0, 1.0, 0.0])
print("i*j =", fuse_quaternion(i, j), "(expect 0,0,0,1)")

# norm of a Hamilton product factorizes
q1, q2 = rng.normal(size=4), rng.normal(size=4)
print(
    "norm multiplicativity:",
    np.isclose(
        np.linalg.norm(fuse_quaternion(q1, q2)),
        np.linalg.norm(q1) * np.linalg.norm(q2),
    ),
)

# projection aligns different source dims to one shared dim
wide = rng.normal(size=24)
proj = init_dense(24, 16, rng, dtype=np.float64)
aligned = project(wide, proj)
print("\nprojected 24 -> 16, min value (ReLU floor):", aligned.min())

# gated expert mixing: weights form a probability simplex
moe = init_moe(2, 16, rng, dtype=np.float64)
mixed, cache = fuse_moe([e1, e2], moe)
weights = cache[2]
print("gate weights:", weights.round(3), "sum:", weights.sum())

# every pairwise combiner at once, concatenated
print("all-methods output dim:", fuse_all([e1, e2]).shape[0], "(4x the shared dim)")

# residual enhancement adds the mean of the inputs back on
print("residual(0, inputs) == mean(inputs):",
      np.array_equal(apply_residual(np.zeros(16), [e1, e2]), np.mean([e1, e2], axis=0)))

# aggregation across a stack of per-layer embeddings
layers = [rng.normal(size=6) for _ in range(3)]
for mode in ("mean", "max", "min"):
    print(f"aggregate {mode}:", aggregate_layers(layers, mode).round(3))
