import numpy as np
import pytest
from helpers import flat, gradcheck_inputs, set_flat

from layerfuse.fusion import (
    FusionError,
    FusionSpec,
    MoEParams,
    aggregate_layers,
    apply_residual,
    apply_residual_backward,
    fuse_all,
    fuse_all_backward,
    fuse_concat,
    fuse_concat_backward,
    fuse_hadamard,
    fuse_hadamard_backward,
    fuse_moe,
    fuse_moe_backward,
    fuse_multiply,
    fuse_multiply_backward,
    fuse_quaternion,
    fuse_quaternion_backward,
    fuse_sum,
    fuse_sum_backward,
    init_moe,
    project,
    project_backward,
    resolve_target_dim,
    validate_spec,
)
from layerfuse.nn import DenseParams, finite_diff_grad, init_dense, rel_error

rng = np.random.default_rng(20240601)


# ---------------------------------------------------------------------------
# projection

def test_project_identity_on_nonnegative():
    p = DenseParams(np.eye(3), np.zeros(3))
    e = np.array([0.5, 0.0, 2.0])
    assert project(e, p).tolist() == e.tolist()


def test_project_full_rectification():
    p = DenseParams(-np.eye(3), np.zeros(3))
    assert project(np.array([1.0, 2.0, 3.0]), p).tolist() == [0.0, 0.0, 0.0]


def test_project_matches_relu_linear_oracle():
    w = rng.normal(size=(4, 6))
    b = rng.normal(size=4)
    e = rng.normal(size=6)
    expect = np.maximum(w @ e + b, 0)
    assert np.allclose(project(e, DenseParams(w, b)), expect, atol=1e-12)
    assert project(e, DenseParams(w, b)).min() >= 0


# ---------------------------------------------------------------------------
# concat

def test_concat_order_and_dims():
    out = fuse_concat([np.array([1.0]), np.array([2.0, 3.0])])
    assert out.tolist() == [1.0, 2.0, 3.0]


def test_concat_paper_dims():
    out = fuse_concat([np.zeros(4096), np.zeros(1024)])
    assert out.shape == (5120,)
    five = fuse_concat([np.zeros(d) for d in (4096, 1024, 4096, 3584, 4096)])
    assert five.shape == (16896,)


def test_concat_needs_two_inputs():
    with pytest.raises(FusionError):
        fuse_concat([np.zeros(3)])


def test_concat_not_permutation_invariant():
    a, b = np.array([1.0, 2.0]), np.array([3.0])
    assert fuse_concat([a, b]).tolist() != fuse_concat([b, a]).tolist()


# ---------------------------------------------------------------------------
# sum / hadamard

def test_sum_hand_cases():
    assert fuse_sum([np.array([1.0, 2.0]), np.array([3.0, 4.0])]).tolist() == [4.0, 6.0]
    x = np.array([0.3, -1.0])
    assert fuse_sum([x, np.zeros(2)]).tolist() == x.tolist()


def test_sum_matches_scalar_loop():
    vecs = [rng.normal(size=8) for _ in range(4)]
    expect = np.array([sum(v[i] for v in vecs) for i in range(8)])
    assert np.allclose(fuse_sum(vecs), expect, atol=1e-12)


def test_sum_permutation_invariant():
    vecs = [rng.normal(size=5) for _ in range(3)]
    assert np.allclose(fuse_sum(vecs), fuse_sum(vecs[::-1]), atol=1e-12)


def test_sum_dim_mismatch():
    with pytest.raises(FusionError):
        fuse_sum([np.zeros(3), np.zeros(4)])


def test_hadamard_hand_cases():
    assert fuse_hadamard([np.array([1.0, 2.0]), np.array([3.0, 4.0])]).tolist() == [3.0, 8.0]
    x = np.array([0.7, -2.0, 5.0])
    assert fuse_hadamard([x, np.ones(3)]).tolist() == x.tolist()


def test_hadamard_matches_scalar_loop():
    vecs = [rng.normal(size=6) for _ in range(3)]
    expect = np.array([vecs[0][i] * vecs[1][i] * vecs[2][i] for i in range(6)])
    assert np.allclose(fuse_hadamard(vecs), expect, atol=1e-12)


def test_hadamard_permutation_invariant():
    vecs = [rng.normal(size=5) for _ in range(3)]
    assert np.allclose(fuse_hadamard(vecs), fuse_hadamard(vecs[::-1]), atol=1e-12)


# ---------------------------------------------------------------------------
# multiply (reshape to s x s, matmul, flatten)

def test_multiply_right_identity():
    e1 = rng.normal(size=16)
    ident = np.eye(4).ravel()
    assert np.array_equal(fuse_multiply(e1, ident), e1)


def test_multiply_left_identity():
    e2 = rng.normal(size=16)
    ident = np.eye(4).ravel()
    assert np.array_equal(fuse_multiply(ident, e2), e2)


def test_multiply_keeps_1024():
    out = fuse_multiply(np.ones(1024), np.ones(1024))
    assert out.shape == (1024,)


def test_multiply_matches_hand_2x2():
    e1, e2 = rng.normal(size=4), rng.normal(size=4)
    a, b, c, d = e1
    e, f, g, h = e2
    expect = [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h]
    assert np.allclose(fuse_multiply(e1, e2), expect, atol=1e-12)


def test_multiply_not_permutation_invariant():
    e1, e2 = rng.normal(size=4), rng.normal(size=4)
    assert not np.allclose(fuse_multiply(e1, e2), fuse_multiply(e2, e1))


def test_multiply_rejects_non_square():
    with pytest.raises(FusionError):
        fuse_multiply(np.zeros(6), np.zeros(6))


# ---------------------------------------------------------------------------
# quaternion (blockwise Hamilton product)

def test_quaternion_identity_block():
    e1 = rng.normal(size=8)
    ident = np.tile([1.0, 0.0, 0.0, 0.0], 2)
    assert np.allclose(fuse_quaternion(e1, ident), e1, atol=1e-12)
    assert np.allclose(fuse_quaternion(ident, e1), e1, atol=1e-12)


def test_quaternion_i_times_j_is_k():
    i = np.array([0.0, 1.0, 0.0, 0.0])
    j = np.array([0.0, 0.0, 1.0, 0.0])
    k = np.array([0.0, 0.0, 0.0, 1.0])
    assert fuse_quaternion(i, j).tolist() == k.tolist()


def test_quaternion_norm_multiplicative():
    for _ in range(200):
        q1, q2 = rng.normal(size=4), rng.normal(size=4)
        out = fuse_quaternion(q1, q2)
        assert abs(np.linalg.norm(out) - np.linalg.norm(q1) * np.linalg.norm(q2)) <= 1e-5


def test_quaternion_bilinear():
    q1, q1b, q2 = rng.normal(size=4), rng.normal(size=4), rng.normal(size=4)
    a, b = 0.7, -1.3
    lhs = fuse_quaternion(a * q1 + b * q1b, q2)
    rhs = a * fuse_quaternion(q1, q2) + b * fuse_quaternion(q1b, q2)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_quaternion_rejects_bad_dim():
    with pytest.raises(FusionError):
        fuse_quaternion(np.zeros(6), np.zeros(6))


def quaternion_scalar_oracle(e1, e2):
    out = np.empty_like(e1)
    for k in range(0, e1.size, 4):
        a1, b1, c1, d1 = e1[k : k + 4]
        a2, b2, c2, d2 = e2[k : k + 4]
        out[k] = a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2
        out[k + 1] = a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2
        out[k + 2] = a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2
        out[k + 3] = a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2
    return out


def test_quaternion_matches_scalar_oracle():
    for _ in range(20):
        e1, e2 = rng.normal(size=12), rng.normal(size=12)
        assert np.allclose(fuse_quaternion(e1, e2), quaternion_scalar_oracle(e1, e2), atol=1e-12)


# ---------------------------------------------------------------------------
# mixture of experts

def test_moe_identical_experts_degenerate():
    d = 6
    expert = init_dense(d, d, np.random.default_rng(0), dtype=np.float64)
    params = MoEParams(
        experts=[DenseParams(expert.weight.copy(), expert.bias.copy()) for _ in range(3)],
        gate=init_dense(3 * d, 3, np.random.default_rng(1), dtype=np.float64),
    )
    x = np.abs(rng.normal(size=d))
    out, _ = fuse_moe([x, x, x], params)
    single = np.maximum(expert.weight @ x + expert.bias, 0)
    assert np.allclose(out, single, atol=1e-12)


def test_moe_saturated_gate():
    d = 4
    experts = [init_dense(d, d, np.random.default_rng(i), dtype=np.float64) for i in range(2)]
    gate = DenseParams(np.zeros((2, 2 * d)), np.array([100.0, 0.0]))
    params = MoEParams(experts, gate)
    xs = [rng.normal(size=d) for _ in range(2)]
    out, _ = fuse_moe(xs, params)
    expert0 = np.maximum(experts[0].weight @ xs[0] + experts[0].bias, 0)
    assert np.allclose(out, expert0, atol=1e-12)


def test_moe_matches_hand_composition():
    d, n = 5, 3
    params = init_moe(n, d, np.random.default_rng(4), dtype=np.float64)
    xs = [rng.normal(size=d) for _ in range(n)]
    out, _ = fuse_moe(xs, params)
    logits = params.gate.weight @ np.concatenate(xs) + params.gate.bias
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    expect = sum(
        weights[i] * np.maximum(params.experts[i].weight @ xs[i] + params.experts[i].bias, 0)
        for i in range(n)
    )
    assert np.allclose(out, expect, atol=1e-12)
    assert weights.sum() == pytest.approx(1.0)
    assert np.all(weights >= 0)


def test_moe_expert_count_mismatch():
    params = init_moe(2, 4, np.random.default_rng(0))
    with pytest.raises(FusionError):
        fuse_moe([np.zeros(4)] * 3, params)


# ---------------------------------------------------------------------------
# all-methods and residual

def test_all_output_dim():
    e1, e2 = rng.normal(size=(2, 16)), rng.normal(size=(2, 16))
    assert fuse_all([e1, e2]).shape == (2, 64)


def test_all_zero_second_input():
    e1 = np.abs(rng.normal(size=16))
    z = np.zeros(16)
    out = fuse_all([e1, z])
    assert np.allclose(out[:16], e1)  # sum block
    assert np.allclose(out[16:32], 0)  # hadamard block
    assert np.allclose(out[32:48], 0)  # multiply block


def test_all_blocks_match_standalone_ops():
    e1, e2 = rng.normal(size=16), rng.normal(size=16)
    out = fuse_all([e1, e2])
    assert np.allclose(out[:16], fuse_sum([e1, e2]))
    assert np.allclose(out[16:32], fuse_hadamard([e1, e2]))
    assert np.allclose(out[32:48], fuse_multiply(e1, e2))
    assert np.allclose(out[48:], fuse_quaternion(e1, e2))


def test_residual_of_zero_is_mean():
    ps = [rng.normal(size=6) for _ in range(3)]
    out = apply_residual(np.zeros(6), ps)
    assert np.array_equal(out, np.mean(np.stack(ps), axis=0))


def test_residual_single_input():
    x, y = rng.normal(size=4), rng.normal(size=4)
    assert np.allclose(apply_residual(y, [x]), y + x, atol=1e-12)


def test_residual_matches_scalar_oracle():
    ps = [rng.normal(size=5) for _ in range(4)]
    fused = rng.normal(size=5)
    expect = np.array([fused[i] + sum(p[i] for p in ps) / 4 for i in range(5)])
    assert np.allclose(apply_residual(fused, ps), expect, atol=1e-12)


def test_residual_dim_mismatch_names_alternative():
    with pytest.raises(FusionError, match="non-residual"):
        apply_residual(np.zeros(8), [np.zeros(4), np.zeros(4)])


# ---------------------------------------------------------------------------
# layer aggregation

def test_aggregate_identity_on_identical_layers():
    layer = rng.normal(size=(3, 4))
    for mode in ("mean", "max", "min"):
        assert np.allclose(aggregate_layers([layer, layer.copy()], mode), layer)


def test_aggregate_hand_cases():
    a, b = np.array([0.0, 2.0]), np.array([2.0, 0.0])
    assert aggregate_layers([a, b], "mean").tolist() == [1.0, 1.0]
    assert aggregate_layers([a, b], "max").tolist() == [2.0, 2.0]
    assert aggregate_layers([a, b], "min").tolist() == [0.0, 0.0]


def test_aggregate_matches_scalar_loop():
    layers = [rng.normal(size=6) for _ in range(3)]
    for mode, fn in (("mean", np.mean), ("max", np.max), ("min", np.min)):
        expect = np.array([fn([l[i] for l in layers]) for i in range(6)])
        assert np.allclose(aggregate_layers(layers, mode), expect, atol=1e-12)


def test_aggregate_rejects_empty_and_mismatch():
    with pytest.raises(FusionError):
        aggregate_layers([], "mean")
    with pytest.raises(FusionError):
        aggregate_layers([np.zeros(2), np.zeros(3)], "mean")
    with pytest.raises(FusionError):
        aggregate_layers([np.zeros(2)], "median")


# ---------------------------------------------------------------------------
# spec validation

def test_validate_spec_constraints():
    with pytest.raises(FusionError, match="exactly 2"):
        validate_spec(FusionSpec("multiply", [("a", 0)], target_dim=16), [8])
    with pytest.raises(FusionError, match="perfect-square"):
        validate_spec(FusionSpec("multiply", [("a", 0), ("b", 0)], target_dim=12), [8, 8])
    with pytest.raises(FusionError, match="divisible by 4"):
        validate_spec(FusionSpec("quaternion", [("a", 0), ("b", 0)], target_dim=6), [8, 8])
    with pytest.raises(FusionError, match="unknown fusion method"):
        validate_spec(FusionSpec("fancy", [("a", 0), ("b", 0)]), [8, 8])
    with pytest.raises(FusionError, match="non-residual"):
        validate_spec(FusionSpec("concat", [("a", 0), ("b", 0)], residual=True), [8, 8])


def test_resolve_target_dim_defaults():
    assert resolve_target_dim("sum", [4096, 1024], None) == 1024
    assert resolve_target_dim("multiply", [4096, 1024], None) == 1024
    assert resolve_target_dim("quaternion", [4096, 1024], None) == 1024
    assert resolve_target_dim("concat", [4096, 1024], None) is None
    assert resolve_target_dim("sum", [4096, 1024], 64) == 64


def test_spec_json_round_trip():
    spec = FusionSpec("quaternion", [("llama2", 20), ("nv_embed", 3)], residual=True, target_dim=16)
    again = FusionSpec.loads(spec.dumps())
    assert again == spec


# ---------------------------------------------------------------------------
# gradients of every operator against finite differences (float64)

def _loss_from(out, dout):
    return float((out * dout).sum())


@pytest.mark.parametrize("n_inputs", [2, 3])
def test_sum_gradients(n_inputs):
    xs = [rng.normal(size=(2, 6)) for _ in range(n_inputs)]
    dout = rng.normal(size=(2, 6))

    def run(parts):
        out = fuse_sum(parts)
        return _loss_from(out, dout), fuse_sum_backward(parts, dout)

    gradcheck_inputs(run, xs)


@pytest.mark.parametrize("n_inputs", [2, 3])
def test_hadamard_gradients(n_inputs):
    xs = [rng.normal(size=(2, 5)) for _ in range(n_inputs)]
    dout = rng.normal(size=(2, 5))

    def run(parts):
        out = fuse_hadamard(parts)
        return _loss_from(out, dout), fuse_hadamard_backward(parts, dout)

    gradcheck_inputs(run, xs)


def test_multiply_gradients():
    xs = [rng.normal(size=(2, 16)) for _ in range(2)]
    dout = rng.normal(size=(2, 16))

    def run(parts):
        out = fuse_multiply(parts[0], parts[1])
        return _loss_from(out, dout), list(fuse_multiply_backward(parts[0], parts[1], dout))

    gradcheck_inputs(run, xs)


def test_quaternion_gradients():
    xs = [rng.normal(size=(2, 8)) for _ in range(2)]
    dout = rng.normal(size=(2, 8))

    def run(parts):
        out = fuse_quaternion(parts[0], parts[1])
        return _loss_from(out, dout), list(fuse_quaternion_backward(parts[0], parts[1], dout))

    gradcheck_inputs(run, xs)


def test_concat_gradients():
    xs = [rng.normal(size=(2, 3)), rng.normal(size=(2, 5))]
    dout = rng.normal(size=(2, 8))

    def run(parts):
        out = fuse_concat(parts)
        return _loss_from(out, dout), fuse_concat_backward(parts, dout)

    gradcheck_inputs(run, xs)


def test_residual_gradients():
    ps = [rng.normal(size=(2, 4)) for _ in range(3)]
    fused = rng.normal(size=(2, 4))
    dout = rng.normal(size=(2, 4))

    def run(parts):
        out = apply_residual(parts[0], parts[1:])
        dfused, dps = apply_residual_backward(parts[1:], dout)
        return _loss_from(out, dout), [dfused] + dps

    gradcheck_inputs(run, [fused] + ps)


def test_moe_gradients_inputs_and_params():
    d, n = 4, 2
    params = init_moe(n, d, np.random.default_rng(8), dtype=np.float64)
    xs = [rng.normal(size=(2, d)) for _ in range(n)]
    dout = rng.normal(size=(2, d))

    def run(parts):
        out, cache = fuse_moe(parts, params)
        dps, _ = fuse_moe_backward(cache, dout)
        return _loss_from(out, dout), dps

    gradcheck_inputs(run, xs)

    # parameter gradients
    arrays = params.arrays()
    theta0 = flat(arrays)
    out, cache = fuse_moe(xs, params)
    _, pgrads = fuse_moe_backward(cache, dout)

    def f(vec):
        set_flat(arrays, vec)
        out2, _ = fuse_moe(xs, params)
        set_flat(arrays, theta0)
        return _loss_from(out2, dout)

    num = finite_diff_grad(f, theta0, 1e-5)
    assert rel_error(flat(pgrads.arrays()), num) <= 1e-4


def test_all_gradients():
    xs = [rng.normal(size=(2, 16)) for _ in range(2)]
    dout = rng.normal(size=(2, 64))

    def run(parts):
        out = fuse_all(parts)
        return _loss_from(out, dout), fuse_all_backward(parts, dout)

    gradcheck_inputs(run, xs)


def test_projection_gradients():
    p = init_dense(6, 4, np.random.default_rng(3), dtype=np.float64)
    x = rng.normal(size=(3, 6))
    dout = rng.normal(size=(3, 4))

    def run(parts):
        out = project(parts[0], p)
        dx, _, _ = project_backward(parts[0], p, dout)
        return _loss_from(out, dout), [dx]

    gradcheck_inputs(run, [x])

    arrays = p.arrays()
    theta0 = flat(arrays)
    _, dw, db = project_backward(x, p, dout)

    def f(vec):
        set_flat(arrays, vec)
        out = project(x, p)
        set_flat(arrays, theta0)
        return _loss_from(out, dout)

    num = finite_diff_grad(f, theta0, 1e-5)
    assert rel_error(flat([dw, db]), num) <= 1e-4
