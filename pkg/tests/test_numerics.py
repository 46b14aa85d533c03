import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from latent_ebm import numerics as nx
from latent_ebm.models import MlpNetwork
from latent_ebm.numerics import Tensor


def test_matmul_forward():
    out = nx.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_tanh_zero_and_sum_exp():
    assert np.all(nx.tanh(Tensor(np.zeros(4))).data == 0.0)
    assert nx.tsum(nx.exp(Tensor([0.0, 0.0, 0.0]))).item() == 3.0


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    nx.tsum(nx.square(x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_constant_gives_zero():
    x = Tensor([1.0, -3.0], requires_grad=True)
    (g,) = nx.grad(nx.tsum(x * 0.0) + 5.0, [x])
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(nx.GraphError):
        nx.square(x).backward()


def test_fan_out_accumulates():
    # x used twice: d/dx (x*x + 3x) = 2x + 3, same as the single-path x^2 + 3x
    x = Tensor([0.5, -1.5], requires_grad=True)
    (g_two,) = nx.grad(nx.tsum(x * x + x * 3.0), [x])
    y = Tensor([0.5, -1.5], requires_grad=True)
    (g_one,) = nx.grad(nx.tsum(nx.square(y) + nx.scale(y, 3.0)), [y])
    np.testing.assert_allclose(g_two, g_one, rtol=0, atol=1e-15)
    np.testing.assert_allclose(g_two, 2 * x.data + 3)


def test_backward_accumulates_into_grad_across_calls():
    x = Tensor([1.0], requires_grad=True)
    nx.tsum(x * 2.0).backward()
    nx.tsum(x * 2.0).backward()
    np.testing.assert_array_equal(x.grad, [4.0])


def test_non_finite_raises_with_node_name():
    x = Tensor([0.0, 1.0])
    with pytest.raises(nx.NonFiniteError, match="log"):
        nx.log(x)
    with pytest.raises(nx.NonFiniteError, match="exp"):
        nx.exp(Tensor([1000.0]))


def test_shape_mismatch_raises():
    with pytest.raises(nx.GraphError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(nx.GraphError):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    net = MlpNetwork([3, 7, 1], "tanh", rng)
    x = rng.standard_normal((5, 3))
    assert net(x).data.tobytes() == net(x).data.tobytes()


def test_grad_only_visits_requested_path():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    (gx,) = nx.grad(nx.tsum(x @ w), [x])
    np.testing.assert_array_equal(gx, [[2.0, 2.0]])
    assert w.grad is None


def test_broadcast_add_gradient():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    nx.tsum(a + b).backward()
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


# -- finite-difference checker -------------------------------------------------------


def test_fd_check_square():
    assert nx.finite_diff_check(lambda x: nx.tsum(nx.square(x)), [3.0]) < 1e-6


def test_fd_check_constant():
    assert nx.finite_diff_check(lambda x: nx.tsum(x * 0.0) + 2.0, [1.0, 2.0]) < 1e-12


def test_fd_check_tanh_at_origin():
    x = Tensor(np.zeros(5), requires_grad=True)
    (g,) = nx.grad(nx.tsum(nx.tanh(x)), [x])
    np.testing.assert_array_equal(g, np.ones(5))
    assert nx.finite_diff_check(lambda t: nx.tsum(nx.tanh(t)), np.zeros(5)) < 1e-6


def test_fd_check_rejects_bad_h():
    with pytest.raises(ValueError):
        nx.finite_diff_check(lambda x: nx.tsum(x), [1.0], h=0.0)


def test_two_layer_mlp_gradients_match_central_differences():
    rng = np.random.default_rng(0)
    net = MlpNetwork([8, 16, 1], "tanh", rng)
    x = rng.standard_normal((4, 8))
    loss = lambda: nx.mean(net(x))
    grads = nx.grad(loss(), net.parameters())
    for p, g in zip(net.parameters(), grads):
        def f(a, p=p):
            saved = p.data
            p.data = a
            try:
                return loss().item()
            finally:
                p.data = saved
        num = nx.numerical_grad(f, p.data, 1e-5)
        assert nx.relative_error(g, num) < 1e-4
    assert nx.finite_diff_check(lambda t: nx.mean(net(t)), x) < 1e-4


UNARY = {
    "tanh": nx.tanh,
    "relu": nx.relu,
    "exp": nx.exp,
    "expm1": nx.expm1,
    "square": nx.square,
    "neg": nx.neg,
    "scale": lambda t: nx.scale(t, -1.7),
    "log": lambda t: nx.log(nx.add(nx.square(t), 0.5)),
}


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), op=st.sampled_from(sorted(UNARY)),
       reducer=st.sampled_from(["sum", "mean"]), rows=st.integers(1, 4), cols=st.integers(1, 4))
def test_random_graphs_match_finite_differences(seed, op, reducer, rows, cols):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((cols, 3))
    b = rng.standard_normal(3)
    c = rng.standard_normal((rows, 3))
    x = rng.standard_normal((rows, cols))
    if op == "relu":  # central differences are invalid across the kink
        assume(np.min(np.abs(x @ w + b)) > 1e-3)

    def fn(t):
        h = UNARY[op](nx.add(nx.matmul(t, Tensor(w)), Tensor(b)))
        h = nx.mul(h, Tensor(c)) - h * 0.25
        return nx.tsum(h) if reducer == "sum" else nx.mean(h)

    assert nx.finite_diff_check(fn, x) < 1e-4


# -- optimizers --------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = Tensor([1.0, -2.0], requires_grad=True)
    state = nx.adam(0.1)
    nx.optimizer_apply(state, [p], [np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step_count == 1


def test_sgd_step():
    p = Tensor([1.0], requires_grad=True)
    nx.optimizer_apply(nx.sgd(0.1), [p], [np.array([2.0])])
    np.testing.assert_allclose(p.data, [0.8], rtol=0, atol=1e-15)


def test_adam_first_step_is_signed_lr():
    # t=1: m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps)
    p = Tensor([0.0, 0.0, 0.0], requires_grad=True)
    g = np.array([3.0, -0.2, 1e-3])
    nx.optimizer_apply(nx.adam(0.01), [p], [g])
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)
    np.testing.assert_allclose(p.data, -0.01 * np.sign(g), rtol=1e-4)


def test_optimizer_rejects_misaligned():
    p = Tensor([0.0, 0.0], requires_grad=True)
    with pytest.raises(nx.GraphError):
        nx.optimizer_apply(nx.sgd(0.1), [p], [np.zeros(3)])
    with pytest.raises(nx.GraphError):
        nx.optimizer_apply(nx.sgd(0.1), [p], [])


def test_step_count_increments_once_per_apply():
    p = Tensor([0.0], requires_grad=True)
    state = nx.adam(0.1)
    for i in range(5):
        nx.optimizer_apply(state, [p], [np.ones(1)])
        assert state.step_count == i + 1
    assert len(state.m) == len(state.v) == 1
