"""Shared test utilities: parameter flattening and gradient checking."""

import numpy as np

from layerfuse.nn import finite_diff_grad, rel_error


def flat(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def set_flat(arrays, vec):
    off = 0
    for a in arrays:
        a[...] = vec[off : off + a.size].reshape(a.shape)
        off += a.size


def gradcheck_inputs(fn_loss_and_grads, xs, tol=1e-4, eps=1e-5):
    """Compare analytic input-gradients of a scalar loss against central differences."""
    _, dxs = fn_loss_and_grads(xs)
    x0 = flat(xs)

    def f(vec):
        parts, off = [], 0
        for x in xs:
            parts.append(vec[off : off + x.size].reshape(x.shape))
            off += x.size
        loss, _ = fn_loss_and_grads(parts)
        return loss

    num = finite_diff_grad(f, x0, eps)
    err = rel_error(flat(dxs), num)
    assert err <= tol, f"input gradient mismatch: rel error {err:.3e}"
    return err
