import numpy as np
import pytest

from facttok import tensor as T
from gradcheck import assert_gradients_close


def rng_for(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# forward values


def test_matmul_identity():
    x = T.Tensor(np.arange(9.0).reshape(3, 3))
    eye = T.Tensor(np.eye(3))
    np.testing.assert_array_equal(T.matmul(eye, x).data, x.data)


def test_matmul_identity_right():
    a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = T.Tensor([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(T.matmul(a, b).data, a.data)


def test_matmul_shape_mismatch_reports_dims():
    a = T.Tensor(np.zeros((2, 3)))
    b = T.Tensor(np.zeros((4, 2)))
    with pytest.raises(T.ShapeError, match="inner dimensions"):
        T.matmul(a, b)


def test_mse_identity_is_zero():
    x = T.Tensor(rng_for(0).normal(size=(4, 5)))
    assert T.mse(x, x).item() == 0.0


def test_softmax_uniform_row():
    x = T.Tensor(np.full((1, 4), 3.7))
    np.testing.assert_allclose(T.softmax(x).data, 0.25, atol=1e-7)


def test_layer_norm_normalizes():
    x = T.Tensor(rng_for(1).normal(size=(6, 16)), dtype=np.float64)
    y = T.layer_norm(x).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_add_broadcast_rejects_incompatible():
    with pytest.raises(T.ShapeError):
        T.add(T.Tensor(np.zeros((3, 4))), T.Tensor(np.zeros((5,))))


def test_non_scalar_loss_rejected():
    x = T.Tensor(np.zeros((2, 2)), requires_grad=True)
    with T.Tape():
        y = T.add(x, x)
        with pytest.raises(T.ShapeError):
            T.backward(y)


# ---------------------------------------------------------------------------
# tape contract


def test_sum_backward_gives_ones():
    x = T.Tensor(rng_for(2).normal(size=(3, 4)), requires_grad=True)
    with T.Tape():
        T.backward(T.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4), dtype=np.float32))


def test_tape_consumed_after_backward():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape():
        loss = T.tsum(x)
        T.backward(loss)
        with pytest.raises(T.TapeError):
            T.backward(loss)


def test_nested_tape_rejected():
    with T.Tape():
        with pytest.raises(T.TapeError):
            with T.Tape():
                pass


def test_backward_without_tape_rejected():
    x = T.Tensor(np.ones(()), requires_grad=True)
    with pytest.raises(T.TapeError):
        T.backward(x)


def test_grad_accumulates_across_uses():
    # x used twice in one graph: contributions add, they do not overwrite.
    x = T.Tensor(np.array([2.0]), requires_grad=True)
    with T.Tape():
        y = T.add(T.mul(x, x), x)  # x^2 + x
        T.backward(T.tsum(y))
    np.testing.assert_allclose(x.grad, [5.0])


def test_no_tape_means_plain_forward():
    x = T.Tensor(np.ones(3), requires_grad=True)
    y = T.scale(x, 2.0)
    assert y.grad is None
    np.testing.assert_array_equal(y.data, [2.0, 2.0, 2.0])


def test_determinism_forward_and_grad():
    def run():
        x = T.Tensor(rng_for(7).normal(size=(5, 5)), requires_grad=True)
        w = T.Tensor(rng_for(8).normal(size=(5, 3)), requires_grad=True)
        with T.Tape():
            loss = T.mse(T.silu(T.matmul(x, w)), T.Tensor(np.zeros((5, 3))))
            T.backward(loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1.tobytes() == l2.tobytes()
    assert gx1.tobytes() == gx2.tobytes()
    assert gw1.tobytes() == gw2.tobytes()


# ---------------------------------------------------------------------------
# sign with straight-through gradient


def test_sign_ste_forward_convention():
    e = T.Tensor(np.array([0.3, -0.2, 0.0]))
    np.testing.assert_array_equal(T.sign_ste(e).data, [1.0, -1.0, 1.0])


def test_sign_ste_outputs_are_pm_one():
    e = T.Tensor(rng_for(3).normal(size=(50,)))
    out = T.sign_ste(e).data
    assert set(np.unique(out)) <= {-1.0, 1.0}


def test_sign_ste_passes_gradient_unchanged():
    e = T.Tensor(rng_for(4).normal(size=(6,)), requires_grad=True)
    g = rng_for(5).normal(size=(6,)).astype(np.float32)
    with T.Tape():
        out = T.sign_ste(e)
        loss = T.tsum(T.mul(out, T.Tensor(g)))
        T.backward(loss)
    np.testing.assert_allclose(e.grad, g, rtol=1e-6)


def test_sign_ste_composed_with_mse():
    # d/de mse(sign(e), t) under STE == d/dq mse(q, t) evaluated at q = sign(e).
    e = np.array([0.7, -1.3])
    target = np.array([0.0, 0.5])
    et = T.Tensor(e, requires_grad=True, dtype=np.float64)
    with T.Tape():
        loss = T.mse(T.sign_ste(et), T.Tensor(target, dtype=np.float64))
        T.backward(loss)
    s = np.where(e >= 0, 1.0, -1.0)
    expected = 2.0 * (s - target) / 2.0  # hand-built two-element oracle
    np.testing.assert_allclose(et.grad, expected, rtol=1e-12)


def test_detach_blocks_gradient():
    x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with T.Tape():
        loss = T.tsum(T.mul(T.detach(x), x))
        T.backward(loss)
    np.testing.assert_allclose(x.grad, x.data)  # only the live branch contributes


# ---------------------------------------------------------------------------
# finite-difference gradient checks (64-bit, central differences)


N_GRADCHECK_SEEDS = 20


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_matmul(seed):
    r = rng_for(seed)
    a = r.normal(size=(4, 5))
    b = r.normal(size=(5, 3))
    assert_gradients_close(lambda x, y: T.tsum(T.mul(T.matmul(x, y), T.matmul(x, y))), [a, b])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_matmul_batched(seed):
    r = rng_for(100 + seed)
    a = r.normal(size=(2, 3, 4))
    b = r.normal(size=(2, 4, 3))
    assert_gradients_close(lambda x, y: T.tsum(T.matmul(x, y)), [a, b])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_matmul_shared_weight(seed):
    r = rng_for(200 + seed)
    a = r.normal(size=(2, 3, 4))
    w = r.normal(size=(4, 2))
    assert_gradients_close(lambda x, y: T.mse(T.matmul(x, y), T.Tensor(np.zeros((2, 3, 2)))), [a, w])


@pytest.mark.parametrize(
    "op",
    [T.silu, T.sigmoid, T.softmax, T.layer_norm],
    ids=["silu", "sigmoid", "softmax", "layer_norm"],
)
@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_unary(op, seed):
    r = rng_for(300 + seed)
    x = r.normal(size=(3, 6))
    assert_gradients_close(lambda t: T.tsum(T.mul(op(t), op(t))), [x])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_elementwise_binary(seed):
    r = rng_for(400 + seed)
    a = r.normal(size=(3, 4))
    b = r.normal(size=(4,))
    assert_gradients_close(lambda x, y: T.tsum(T.mul(T.add(x, y), T.sub(x, y))), [a, b])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_mse(seed):
    r = rng_for(500 + seed)
    p = r.normal(size=(4, 3))
    t = r.normal(size=(4, 3))
    assert_gradients_close(T.mse, [p, t])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_linear_loss(seed):
    # loss = mse(W x, y) on tiny sizes, both operands checked.
    r = rng_for(600 + seed)
    w = r.normal(size=(3, 4))
    x = r.normal(size=(4, 2))
    y = r.normal(size=(3, 2))

    def f(wt, xt):
        return T.mse(T.matmul(wt, xt), T.Tensor(y, dtype=np.float64))

    assert_gradients_close(f, [w, x])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_reductions_and_shapes(seed):
    r = rng_for(700 + seed)
    x = r.normal(size=(2, 3, 4))

    def f(t):
        a = T.mean(t, axis=0)
        b = T.reshape(T.transpose(t, (1, 0, 2)), (3, 8))
        return T.add(T.mean(a), T.tsum(T.mul(b, b)))

    assert_gradients_close(f, [x])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_concat_narrow_broadcast(seed):
    r = rng_for(800 + seed)
    a = r.normal(size=(2, 3))
    b = r.normal(size=(1, 3))

    def f(x, y):
        joined = T.concat([x, T.broadcast_to(y, (2, 3))], axis=0)
        left = T.narrow(joined, 0, 0, 2)
        right = T.narrow(joined, 0, 2, 2)
        return T.tsum(T.mul(left, right))

    assert_gradients_close(f, [a, b])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_binary_entropy(seed):
    r = rng_for(900 + seed)
    x = r.normal(size=(3, 4))

    def f(t):
        return T.mean(T.binary_entropy(T.sigmoid(t)))

    assert_gradients_close(f, [x])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_scale(seed):
    r = rng_for(1000 + seed)
    x = r.normal(size=(5,))
    assert_gradients_close(lambda t: T.tsum(T.scale(t, -1.7)), [x])


@pytest.mark.parametrize("seed", range(N_GRADCHECK_SEEDS))
def test_gradcheck_layer_norm_affine(seed):
    r = rng_for(1100 + seed)
    x = r.normal(size=(2, 3, 6))
    gain = r.normal(size=(6,))
    bias = r.normal(size=(6,))

    def f(xt, gt, bt):
        return T.tsum(T.mul(T.layer_norm_affine(xt, gt, bt), T.layer_norm_affine(xt, gt, bt)))

    assert_gradients_close(f, [x, gain, bias])
