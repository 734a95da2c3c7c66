import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from regather import autodiff as ad
from regather.autodiff import Pattern

PRIMITIVE_TOL = 1e-6


def random_pattern(rng, P, n, density=0.4):
    masks = []
    for _ in range(P):
        m = (rng.random((n, n)) < density) | np.eye(n, dtype=bool)
        masks.append(sp.csr_matrix(m.astype(np.int8)))
    return Pattern.block_diagonal(masks), masks


def away_from_zero(x, gap=0.05):
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def weighted(y: ad.Tensor, rng):
    """Scalar probe sum(y * R) with a fixed random R."""
    return ad.sum(ad.mul(y, ad.constant(rng.standard_normal(y.shape), pattern=y.pattern)))


def check(f, params, tol=PRIMITIVE_TOL, eps=1e-5):
    report = ad.grad_check(f, params, eps=eps, tol=tol)
    assert report.passed, str(report)


def test_sum_gives_ones():
    W = ad.param(np.arange(6.0).reshape(2, 3))
    with ad.Tape() as tape:
        loss = ad.sum(W)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(W.grad, np.ones((2, 3)))


def test_softmax_norm_jacobian():
    x = ad.param(np.array([0.3, -1.2, 2.0]))
    with ad.Tape() as tape:
        loss = ad.l2norm(ad.softmax(x))
    ad.backward(tape, loss)
    e = np.exp(x.value)
    s = e / e.sum()
    n = np.sqrt((s ** 2).sum())
    # J = diag(s) - s s^T is symmetric; dL/ds = s / n
    expected = (np.diag(s) - np.outer(s, s)) @ (s / n)
    np.testing.assert_allclose(x.grad, expected, rtol=1e-12)


def test_softmax_hand_values():
    s = ad.softmax(ad.constant(np.array([0.0, np.log(3.0)]))).value
    np.testing.assert_allclose(s, [0.25, 0.75], rtol=1e-12)


def test_non_scalar_and_double_backward():
    W = ad.param(np.ones(3))
    with ad.Tape() as tape:
        y = ad.scale(W, 2.0)
    with pytest.raises(ad.AutodiffError, match="scalar"):
        ad.backward(tape, y)
    with ad.Tape() as tape:
        loss = ad.sum(W)
    ad.backward(tape, loss)
    with pytest.raises(ad.AutodiffError, match="double backward"):
        ad.backward(tape, loss)


def test_unused_leaf_gets_zero_grad():
    a, b = ad.param(np.ones(2)), ad.param(np.ones(2))
    with ad.Tape() as tape:
        loss = ad.sum(ad.mul(a, ad.constant(np.zeros(2))))
        ad.sum(b)  # recorded but not part of the loss
    ad.backward(tape, loss)
    np.testing.assert_array_equal(b.grad, 0)


def test_linear_function_is_exact():
    rng = np.random.default_rng(0)
    W = ad.param(rng.standard_normal((3, 4)))
    X = ad.constant(rng.standard_normal((5, 3)))
    R = rng.standard_normal((5, 4))
    report = ad.grad_check(lambda: ad.sum(ad.mul(ad.matmul(X, W), ad.constant(R))), {"W": W})
    assert max(report.max_rel_error.values()) < 1e-9


def test_dense_primitives():
    rng = np.random.default_rng(1)
    A = ad.param(rng.standard_normal((4, 3)))
    B = ad.param(rng.standard_normal((3, 5)))
    b = ad.param(rng.standard_normal(5))
    check(lambda: weighted(ad.add_bias(ad.matmul(A, B), b), np.random.default_rng(9)), {"A": A, "B": B, "b": b})
    check(lambda: ad.l2norm(ad.add(A, ad.scale(A, 0.5))), {"A": A})


@pytest.mark.parametrize("op", ["leaky_relu", "elu", "tanh"])
def test_elementwise(op):
    rng = np.random.default_rng(2)
    x = ad.param(away_from_zero(rng.standard_normal((4, 5))))
    fn = {"leaky_relu": lambda t: ad.leaky_relu(t, 0.2), "elu": ad.elu, "tanh": ad.tanh}[op]
    check(lambda: weighted(fn(x), np.random.default_rng(3)), {"x": x})


def test_leaky_relu_and_elu_values():
    x = ad.constant(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_allclose(ad.leaky_relu(x, 0.2).value, [-0.4, 0.0, 3.0])
    np.testing.assert_allclose(ad.elu(x).value, [np.exp(-2.0) - 1, 0.0, 3.0])


def test_softmax_and_cross_entropy():
    rng = np.random.default_rng(4)
    w = ad.param(rng.standard_normal(6))
    check(lambda: weighted(ad.softmax(w), np.random.default_rng(5)), {"w": w})
    logits = ad.param(rng.standard_normal((7, 3)))
    y = rng.integers(0, 3, 4)
    idx = np.array([0, 2, 3, 6])
    for red in ("mean", "sum"):
        check(lambda: ad.cross_entropy(logits, y, idx, red), {"logits": logits})
    with pytest.raises(ad.AutodiffError, match="empty"):
        ad.cross_entropy(logits, y[:0], idx[:0])


def test_stacked_kernels():
    rng = np.random.default_rng(6)
    P, n, d, h, q = 2, 5, 4, 3, 6
    pattern, _ = random_pattern(rng, P, n)
    x = ad.param(rng.standard_normal((n, d)))
    W = ad.param(rng.standard_normal((P, d, h)) * 0.5)
    a = ad.param(rng.standard_normal((P, 2 * h)))
    F = ad.param(rng.standard_normal((h, q)))
    qv = ad.param(rng.standard_normal(q))
    beta = ad.param(rng.random(P))

    def logits_chain():
        hw = ad.relation_linear(x, W)
        e = ad.attention_logits(hw, a, pattern)
        return weighted(e, np.random.default_rng(7))

    check(logits_chain, {"x": x, "W": W, "a": a})

    e = ad.Tensor(rng.standard_normal(pattern.nnz), requires_grad=True, pattern=pattern)
    check(lambda: weighted(ad.masked_softmax(e), np.random.default_rng(8)), {"e": e})

    al = ad.Tensor(rng.random(pattern.nnz), requires_grad=True, pattern=pattern)
    hw = ad.param(rng.standard_normal((P, n, h)))
    check(lambda: weighted(ad.spmm(al, hw), np.random.default_rng(10)), {"alpha": al, "hw": hw})

    z = ad.param(rng.standard_normal((P, n, h)))
    check(lambda: weighted(ad.shared_linear(z, F), np.random.default_rng(11)), {"z": z, "F": F})
    t = ad.param(rng.standard_normal((P, n, q)))
    check(lambda: weighted(ad.vector_dot(t, qv), np.random.default_rng(12)), {"t": t, "q": qv})
    s = ad.param(rng.standard_normal((P, n)))
    check(lambda: weighted(ad.row_mean(s), np.random.default_rng(13)), {"s": s})
    check(lambda: weighted(ad.row_mean(s, np.array([1, 3])), np.random.default_rng(13)), {"s": s})
    check(lambda: weighted(ad.weighted_sum(z, beta), np.random.default_rng(14)), {"z": z, "beta": beta})


def test_dropout_backward_uses_stored_mask():
    x = ad.param(np.ones((50, 4)))
    with ad.Tape() as tape:
        y = ad.dropout(x, 0.5, np.random.default_rng(0))
        loss = ad.sum(y)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, y.value)  # d/dx of x*keep is keep, and x is ones
    assert set(np.unique(y.value).tolist()) == {0.0, 2.0}
    assert ad.dropout(x, 0.0, None) is x


def test_sparse_gradients_stay_on_pattern():
    rng = np.random.default_rng(15)
    pattern, _ = random_pattern(rng, 2, 6)
    e = ad.Tensor(rng.standard_normal(pattern.nnz), requires_grad=True, pattern=pattern)
    with ad.Tape() as tape:
        loss = weighted(ad.masked_softmax(e), rng)
    ad.backward(tape, loss)
    assert e.grad.shape == (pattern.nnz,)


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(16)
        pattern, _ = random_pattern(rng, 3, 8)
        x = ad.constant(rng.standard_normal((8, 4)))
        W = ad.param(rng.standard_normal((3, 4, 5)))
        a = ad.param(rng.standard_normal((3, 10)))
        with ad.Tape() as tape:
            hw = ad.relation_linear(x, W)
            alpha = ad.masked_softmax(ad.leaky_relu(ad.attention_logits(hw, a, pattern)))
            loss = ad.l2norm(ad.elu(ad.spmm(alpha, hw)))
        ad.backward(tape, loss)
        return W.grad.tobytes() + a.grad.tobytes()

    assert run() == run()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(2, 7))
def test_masked_softmax_rows_normalize(seed, P, n):
    rng = np.random.default_rng(seed)
    pattern, masks = random_pattern(rng, P, n)
    e = ad.constant(rng.standard_normal(pattern.nnz) * 5, pattern=pattern)
    alpha = ad.masked_softmax(e)
    np.testing.assert_allclose(pattern.row_sum(alpha.value), 1.0, atol=1e-12)
    dense = pattern.dense(alpha.value)
    outside = dense[pattern.dense(np.ones(pattern.nnz)) == 0]
    assert (outside == 0).all()
