import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraggroup import tensor as T
from gradcheck import numeric_grad, rel_error

RNG = np.random.default_rng(1234)


def leaf(*shape, low=-1.0, high=1.0):
    return T.Tensor(RNG.uniform(low, high, shape), requires_grad=True, dtype=np.float64)


def check(build, inputs, tol=1e-5):
    """Compare backprop against central differences for ``sum(build(*inputs) * R)``."""
    out = build(*inputs)
    proj = np.random.default_rng(7).normal(size=out.shape)

    def scalar():
        return float((build(*inputs).data * proj).sum())

    for t in inputs:
        t.grad = None
    loss = T.tsum(build(*inputs) * T.Tensor(proj, dtype=np.float64))
    loss.backward()
    for t in inputs:
        num = numeric_grad(scalar, t.data)
        assert t.grad is not None, "no gradient reached an input"
        assert rel_error(t.grad, num) < tol


# ---------------------------------------------------------------- elementwise

def test_add_broadcast_grad():
    check(lambda a, b: a + b, [leaf(3, 4), leaf(4)])


def test_sub_grad():
    check(lambda a, b: a - b, [leaf(2, 3), leaf(2, 1)])


def test_mul_broadcast_grad():
    check(lambda a, b: a * b, [leaf(2, 3, 4), leaf(1, 3, 1)])


def test_exp_log_grad():
    check(lambda a: T.exp(a), [leaf(5)])
    check(lambda a: T.log(a), [leaf(5, low=0.5, high=2.0)])


def test_relu_grad_away_from_kink():
    x = T.Tensor(np.array([-1.0, -0.3, 0.2, 0.9, 2.0]), requires_grad=True, dtype=np.float64)
    check(T.relu, [x])
    x.grad = None
    T.relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 1, 1, 1])


def test_shape_ops_grad():
    check(lambda a: a.reshape(6, 2), [leaf(3, 4)])
    check(lambda a: a.transpose(2, 0, 1), [leaf(2, 3, 4)])
    check(lambda a: a[1:, ::2], [leaf(3, 4)])
    check(lambda a, b: T.concat([a, b], axis=1), [leaf(2, 3), leaf(2, 2)])


def test_getitem_repeated_index_accumulates():
    x = leaf(4)
    x[np.array([0, 0, 2])].sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 0, 1, 0])


def test_reductions_grad():
    check(lambda a: a.sum(axis=1), [leaf(3, 4)])
    check(lambda a: a.mean(axis=(0, 2), keepdims=True), [leaf(2, 3, 4)])
    check(lambda a: a.mean(), [leaf(5)])


def test_matmul_grad_batched_and_broadcast():
    check(lambda a, b: a @ b, [leaf(3, 4), leaf(4, 2)])
    check(lambda a, b: a @ b, [leaf(2, 3, 4), leaf(2, 4, 5)])
    check(lambda a, b: a @ b, [leaf(2, 3, 4), leaf(4, 5)])


def test_linear_grad():
    check(lambda x, w, b: T.linear(x, w, b), [leaf(5, 3), leaf(3, 4), leaf(4)])


def test_softmax_family_grad():
    check(lambda a: T.softmax(a, axis=-1), [leaf(3, 5)])
    check(lambda a: T.log_softmax(a, axis=0), [leaf(4, 2)])


def test_layer_norm_grad():
    check(lambda x, g, b: T.layer_norm(x, g, b), [leaf(4, 6), leaf(6, low=0.5, high=1.5), leaf(6)])


def test_conv2d_grad_stride_1_and_2():
    check(lambda x, w, b: T.conv2d(x, w, b, stride=1), [leaf(2, 2, 6, 6), leaf(3, 2, 3, 3), leaf(3)])
    check(lambda x, w, b: T.conv2d(x, w, b, stride=2), [leaf(2, 3, 8, 8), leaf(4, 3, 2, 2), leaf(4)])
    check(lambda x, w: T.conv2d(x, w, stride=2), [leaf(3, 7, 7), leaf(2, 3, 3, 3)])


def test_conv2d_matches_direct_loop():
    x = RNG.normal(size=(2, 3, 7, 7))
    w = RNG.normal(size=(4, 3, 3, 3))
    b = RNG.normal(size=4)
    out = T.conv2d(T.Tensor(x, dtype=np.float64), T.Tensor(w, dtype=np.float64),
                   T.Tensor(b, dtype=np.float64), stride=2).data
    ref = np.zeros((2, 4, 3, 3))
    for n in range(2):
        for o in range(4):
            for i in range(3):
                for j in range(3):
                    ref[n, o, i, j] = (x[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_global_avg_pool_grad():
    check(T.global_avg_pool, [leaf(2, 3, 4, 4)])


def test_embedding_lookup_grad_skips_padding_row():
    table = leaf(5, 3)
    idx = np.array([[3, 2, 2], [4, 1, 1]])
    check(lambda t: T.embedding_lookup(t, idx), [table])
    idx = np.array([[0, 2, 2], [4, 0, 1]])
    table.grad = None
    T.embedding_lookup(table, idx).sum().backward()
    np.testing.assert_array_equal(table.grad[0], 0.0)
    np.testing.assert_array_equal(table.grad[2], 2.0)


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        T.embedding_lookup(leaf(4, 2), np.array([4]))


def test_dropout_grad_uses_same_mask():
    x = leaf(4, 5)
    mask_rng = lambda: np.random.default_rng(3)  # noqa: E731
    check(lambda a: T.dropout(a, 0.3, True, mask_rng()), [x])
    assert T.dropout(x, 0.3, False, None) is x


def test_dropout_is_inverted():
    x = T.Tensor(np.ones((200, 200)), dtype=np.float64)
    y = T.dropout(x, 0.25, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.75}
    assert abs(y.mean() - 1.0) < 0.02


def test_cross_entropy_grad_weighted():
    targets = np.array([0, 2, 1, 2, 2])
    w = np.array([3.0, 2.0, 0.5])
    check(lambda z: T.cross_entropy(z, targets, w), [leaf(5, 3, low=-3, high=3)])


def test_cross_entropy_value_is_weighted_mean():
    z = RNG.normal(size=(4, 3))
    t = np.array([0, 1, 2, 2])
    w = np.array([2.0, 1.0, 0.5])
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    expected = -(w[t] * logp[np.arange(4), t]).sum() / w[t].sum()
    got = T.cross_entropy(T.Tensor(z, dtype=np.float64), t, w).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_cross_entropy_bad_target():
    with pytest.raises(IndexError):
        T.cross_entropy(leaf(2, 3), np.array([0, 3]))


# --------------------------------------------------------------- graph rules

def test_gradients_accumulate_until_zeroed():
    x = leaf(3)
    (x * 2.0).sum().backward()
    (x * 2.0).sum().backward()
    np.testing.assert_array_equal(x.grad, 4.0)
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression():
    x = leaf(3)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_backward_requires_scalar():
    with pytest.raises(T.BackwardError):
        (leaf(3) * 2.0).backward()


def test_non_finite_is_raised():
    with pytest.raises(T.NonFiniteError):
        T.log(T.Tensor(np.array([0.0, 1.0]), dtype=np.float64))


def test_constants_build_no_graph():
    a = T.Tensor(np.ones(3))
    out = a * 2.0 + 1.0
    assert not out.requires_grad and out._parents == ()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_matmul_shapes_property(m, k, n):
    a, b = leaf(m, k), leaf(k, n)
    (a @ b).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((m, n)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((m, n)))


# ----------------------------------------------------------------- optimizer

def adam_reference(p, grads, lr, l2, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        g = g + l2 * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_matches_reference():
    p0 = RNG.normal(size=(3, 2))
    grads = [RNG.normal(size=(3, 2)) for _ in range(5)]
    param = T.Tensor(p0.copy(), requires_grad=True, dtype=np.float64)
    state = T.AdamState(lr=0.01, l2_lambda=0.1)
    for g in grads:
        T.adam_step({"w": param}, {"w": g}, state)
    np.testing.assert_allclose(param.data, adam_reference(p0, grads, 0.01, 0.1), rtol=1e-12)
    assert state.t == 5


def test_adam_first_step_moves_by_lr():
    param = T.Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)
    T.adam_step({"w": param}, {"w": np.array([1.0, -2.0, 3.0, 0.0])}, T.AdamState(lr=0.1))
    np.testing.assert_allclose(param.data, [-0.1, 0.1, -0.1, 0.0], atol=1e-6)
