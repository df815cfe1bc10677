"""Central finite-difference gradient oracle, independent of the tape.

Used by the op tests and the acceptance suite: run `f` on float64 leaves,
backprop analytically, then perturb every input element by +/-step and
compare. The oracle never touches backward rules, only forward evaluation.
"""

from __future__ import annotations

import numpy as np

from facttok import tensor as T


def numeric_grad(f, tensors, wrt, step=1e-6):
    """Central-difference gradient of scalar f(*tensors) w.r.t. tensors[wrt]."""
    base = tensors[wrt].data
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(*tensors).data)
        flat[i] = orig - step
        lo = float(f(*tensors).data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def assert_gradients_close(f, arrays, rtol=1e-5, atol=1e-8, step=1e-6):
    """Check analytic grads of scalar f against central differences (float64)."""
    leaves = [T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True) for a in arrays]
    with T.Tape():
        loss = f(*leaves)
        T.backward(loss)
    for i, leaf in enumerate(leaves):
        assert leaf.grad is not None, f"input {i} received no gradient"
        num = numeric_grad(f, leaves, i, step=step)
        err = np.abs(leaf.grad - num)
        tol = atol + rtol * np.abs(num)
        assert np.all(err <= tol), (
            f"gradient mismatch on input {i}: max err {err.max():.3e}, "
            f"worst tol {tol[err > tol].min() if np.any(err > tol) else 0:.3e}"
        )
