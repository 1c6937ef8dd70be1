import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cesa.substrate import (
    Adam,
    ConfigError,
    OptimizerState,
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    attention,
    backward,
    cross_entropy,
    grad_check,
    kl_standard_normal,
    l1_loss,
    make_rng,
    reparameterized_sample,
    sinusoidal_pe,
)
from cesa.substrate import tensor as T
from cesa.substrate.gradcheck import analytic_grads
from cesa.substrate.nn import LayerNorm, MultiHeadAttention


def _weighted(out):
    # fixed random projection so every output coordinate influences the scalar
    w = make_rng(0, "probe", out.shape).standard_normal(out.shape)
    return (out * Tensor(w)).sum()


PRIMITIVES = {
    "add": (lambda a, b: _weighted(a + b), [(3, 4), (4,)]),
    "sub": (lambda a, b: _weighted(a - b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: _weighted(a * b), [(2, 3), (2, 3)]),
    "div": (lambda a, b: _weighted(a / (T.exp(b) + 0.5)), [(2, 3), (3,)]),
    "matmul": (lambda a, b: _weighted(a @ b), [(2, 3, 4), (4, 5)]),
    "linear": (lambda x, w, b: _weighted(T.linear(x, w, b)), [(2, 3, 4), (4, 2), (2,)]),
    "concat": (lambda a, b: _weighted(T.concat([a, b], axis=-1)), [(2, 3), (2, 2)]),
    "split": (lambda a: _weighted(T.split(a, [1, 3], axis=-1)[1] * 2.0), [(3, 4)]),
    "mean": (lambda a: _weighted(a.mean(axis=0)), [(4, 3)]),
    "sum": (lambda a: _weighted(a.sum(axis=-1, keepdims=True)), [(4, 3)]),
    "reshape": (lambda a: _weighted(a.reshape(3, 4).transpose(1, 0)), [(2, 6)]),
    "relu": (lambda a: _weighted(T.relu(a)), [(3, 5)]),
    "gelu": (lambda a: _weighted(T.gelu(a)), [(3, 5)]),
    "tanh": (lambda a: _weighted(T.tanh(a)), [(3, 5)]),
    "exp": (lambda a: _weighted(T.exp(a)), [(3, 5)]),
    "log": (lambda a: _weighted(T.log(a * a + 1.0)), [(3, 5)]),
    "abs": (lambda a: _weighted(T.abs(a)), [(3, 5)]),
    "softmax": (lambda a: _weighted(T.softmax(a, axis=-1)), [(3, 5)]),
    "log_softmax": (lambda a: _weighted(T.log_softmax(a, axis=-1)), [(3, 5)]),
    "layer_norm": (lambda a, g, b: _weighted(T.layer_norm(a, g, b)), [(3, 6), (6,), (6,)]),
    "embedding": (lambda w: _weighted(T.embedding(w, [[0, 2], [2, 1]])), [(4, 3)]),
    "getitem": (lambda a: _weighted(a[:, 1:3]), [(3, 4)]),
    "attention": (lambda q, k, v: _weighted(attention(q, k, v, heads=2)), [(3, 4), (5, 4), (5, 4)]),
    "kl": (lambda m, lv: kl_standard_normal(m, lv), [(2, 3), (2, 3)]),
    "l1": (lambda p, t: l1_loss(p, t), [(2, 3), (2, 3)]),
    "cross_entropy": (lambda z: cross_entropy(z, np.eye(4)[[1, 3]]), [(2, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    fn, shapes = PRIMITIVES[name]
    for trial in range(10):
        rng = make_rng(trial, "gradcheck", name)
        point = [rng.standard_normal(s) for s in shapes]
        assert grad_check(fn, point, h=1e-5) < 1e-4, (name, trial)


def test_softmax_uniform_on_equal_logits():
    out = T.softmax(Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [1 / 3] * 3)


def test_matmul_identity():
    a = make_rng(1, "a").standard_normal((3, 3))
    np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(a)).data, a)


def test_layer_norm_rows_standardised():
    x = make_rng(2, "ln").standard_normal((7, 16))
    out = T.layer_norm(Tensor(x), eps=0.0).data
    np.testing.assert_allclose(out.mean(axis=-1), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=-1), 1, atol=1e-6)


def test_shape_errors_name_primitive():
    with pytest.raises(ShapeError, match="matmul"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))


class TestAttention:
    def test_single_key_returns_its_value(self):
        rng = make_rng(3, "att")
        q, k, v = rng.standard_normal((5, 4)), rng.standard_normal((1, 4)), rng.standard_normal((1, 4))
        out = attention(Tensor(q), Tensor(k), Tensor(v), heads=2).data
        np.testing.assert_allclose(out, np.repeat(v, 5, axis=0), atol=1e-12)

    def test_equal_keys_give_uniform_weights(self):
        rng = make_rng(4, "att")
        k = np.repeat(rng.standard_normal((1, 8)), 6, axis=0)
        _, w = attention(Tensor(rng.standard_normal((3, 8))), Tensor(k), Tensor(k), heads=4,
                         return_weights=True)
        np.testing.assert_allclose(w.data, 1 / 6, atol=1e-12)

    def test_weight_rows_sum_to_one(self):
        rng = make_rng(5, "att")
        _, w = attention(Tensor(rng.standard_normal((2, 3, 8))), Tensor(rng.standard_normal((2, 7, 8))),
                         Tensor(rng.standard_normal((2, 7, 8))), heads=2, return_weights=True)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1, atol=1e-6)

    def test_masked_keys_get_zero_weight(self):
        rng = make_rng(6, "att")
        mask = np.array([True, True, False])
        _, w = attention(Tensor(rng.standard_normal((2, 4))), Tensor(rng.standard_normal((3, 4))),
                         Tensor(rng.standard_normal((3, 4))), key_mask=mask, return_weights=True)
        assert np.all(w.data[..., 2] < 1e-12)

    def test_heads_must_divide_dim(self):
        x = Tensor(np.ones((2, 6)))
        with pytest.raises(ConfigError):
            attention(x, x, x, heads=4)


class TestPositionalEncoding:
    def test_first_row(self):
        pe = sinusoidal_pe(4, 8)
        np.testing.assert_array_equal(pe[0, 0::2], 0)
        np.testing.assert_array_equal(pe[0, 1::2], 1)

    def test_range_and_value(self):
        pe = sinusoidal_pe(50, 16, dtype=np.float64)
        assert np.all(np.abs(pe) <= 1)
        assert pe[1, 0] == pytest.approx(0.84147, abs=1e-5)

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigError):
            sinusoidal_pe(3, 5)


class TestSampling:
    def test_floor_variance_returns_mean(self):
        mu = Tensor(np.array([1.0, -2.0]))
        out = reparameterized_sample(mu, Tensor(np.full(2, -np.inf)), make_rng(0, "s"))
        np.testing.assert_allclose(out.data, mu.data, atol=0.05)

    def test_monte_carlo_mean(self):
        n = 100_000
        mu, logvar = np.full(n, 0.7), np.full(n, np.log(4.0))
        out = reparameterized_sample(Tensor(mu), Tensor(logvar), make_rng(1, "s")).data
        assert abs(out.mean() - 0.7) < 3 * 2.0 / np.sqrt(n)

    def test_deterministic_for_seed(self):
        mu, lv = Tensor(np.zeros(5)), Tensor(np.zeros(5))
        a = reparameterized_sample(mu, lv, make_rng(7, "s")).data
        b = reparameterized_sample(mu, lv, make_rng(7, "s")).data
        np.testing.assert_array_equal(a, b)

    def test_gradient_reaches_mu_and_logvar(self):
        mu = Tensor(np.zeros(3), requires_grad=True)
        lv = Tensor(np.zeros(3), requires_grad=True)
        backward(reparameterized_sample(mu, lv, make_rng(0, "s")).sum())
        np.testing.assert_array_equal(mu.grad, 1)
        assert np.all(lv.grad != 0)


class TestKL:
    def test_closed_forms(self):
        assert kl_standard_normal(Tensor(np.zeros(4)), Tensor(np.zeros(4))).item() == 0
        assert kl_standard_normal(Tensor(np.ones(1)), Tensor(np.zeros(1))).item() == pytest.approx(0.5)

    def test_monte_carlo(self):
        # E_q[log q(z) - log p(z)] estimated with draws from q
        rng = make_rng(11, "kl")
        mu, logvar = rng.normal(size=3), rng.uniform(-1, 1, size=3)
        z = mu + np.exp(0.5 * logvar) * rng.standard_normal((100_000, 3))
        log_q = -0.5 * (((z - mu) ** 2) / np.exp(logvar) + logvar + np.log(2 * np.pi))
        log_p = -0.5 * (z ** 2 + np.log(2 * np.pi))
        mc = (log_q - log_p).sum(axis=1).mean()
        exact = kl_standard_normal(Tensor(mu), Tensor(logvar)).item()
        assert abs(mc - exact) / exact < 0.02

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 4, elements=st.floats(-5, 5)),
           arrays(np.float64, 4, elements=st.floats(-5, 5)))
    def test_non_negative(self, mu, logvar):
        kl = kl_standard_normal(Tensor(mu), Tensor(logvar)).item()
        assert kl >= -1e-12
        if kl == 0:
            assert np.allclose(mu, 0) and np.allclose(logvar, 0)


class TestLosses:
    def test_l1(self):
        x = make_rng(0, "l1").standard_normal((4, 3))
        assert l1_loss(Tensor(x), x).item() == 0
        assert l1_loss(Tensor(x + 0.3), x).item() == pytest.approx(0.3)
        y = make_rng(1, "l1").standard_normal((4, 3))
        direct = sum(abs(a - b) for a, b in zip(x.ravel(), y.ravel())) / x.size
        assert abs(l1_loss(Tensor(x), y).item() - direct) < 1e-7

    def test_cross_entropy_values(self):
        assert cross_entropy(Tensor(np.zeros(5)), np.eye(5)[2]).item() == pytest.approx(np.log(5))
        assert cross_entropy(Tensor(np.zeros(2)), [1, 0]).item() == pytest.approx(0.6931, abs=1e-4)

    def test_cross_entropy_decreases_to_zero(self):
        values = [cross_entropy(Tensor(np.array([s, 0.0, 0.0])), [1, 0, 0]).item()
                  for s in np.linspace(0, 30, 30)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-12

    def test_cross_entropy_rejects_bad_onehot(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros(3)), [1, 1, 0])


class TestBackward:
    def test_linear_grad_equals_input(self):
        x = np.array([1.0, -2.0, 3.0])
        w = Parameter(np.ones(3))
        backward((w * Tensor(x)).sum())
        np.testing.assert_array_equal(w.grad, x)

    def test_accumulates_without_zeroing(self):
        w = Parameter(np.array([0.5, 2.0]))
        x = Tensor(np.array([3.0, 4.0]))
        backward((w * w * x).sum())
        once = w.grad.copy()
        backward((w * w * x).sum())
        np.testing.assert_array_equal(w.grad, 2 * once)

    def test_unreached_parameter_grad_zero(self):
        a, b = Parameter(np.ones(2)), Parameter(np.ones(2))
        backward((a * 2.0).sum())
        np.testing.assert_array_equal(b.grad, 0)

    def test_non_scalar_loss_rejected(self):
        a = Parameter(np.ones(2))
        with pytest.raises(ValueError):
            backward(a * 2.0)

    def test_tape_records_in_execution_order(self):
        a = Parameter(np.ones(2))
        with Tape() as tape:
            y = T.exp(a * 2.0).sum()
        assert tape.ops() == ["mul", "exp", "sum"]
        backward(y)
        np.testing.assert_allclose(a.grad, 2 * np.exp(2.0))

    def test_replay_bit_identical(self):
        rng = make_rng(3, "replay")
        q, k = rng.standard_normal((4, 8)), rng.standard_normal((6, 8))
        outs = [attention(Tensor(q), Tensor(k), Tensor(k), heads=2).data for _ in range(2)]
        np.testing.assert_array_equal(outs[0], outs[1])


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Parameter(np.array([1.0, 2.0]), name="p")
        state = OptimizerState.for_params([p])
        adam_step([p], state)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        assert state.step == 1

    def test_first_step_magnitude(self):
        p = Parameter(np.array([0.0]), name="p")
        state = OptimizerState.for_params([p], lr=0.001)
        p.grad = np.array([5.0])
        adam_step([p], state)
        # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        assert p.data[0] == pytest.approx(-0.001 * 5.0 / (5.0 + 1e-8), rel=1e-12)

    def test_quadratic_matches_reference_loop(self):
        # scalar textbook Adam as an independent oracle
        m = v = 0.0
        ref = 0.0
        for t in range(1, 5001):
            g = 2 * (ref - 3.0)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.001 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        w = Parameter(np.array([0.0]), name="w")
        opt = Adam([w], lr=0.001)
        for _ in range(5000):
            opt.zero_grad()
            backward(((w - 3.0) ** 2).sum())
            opt.step()
        assert w.data[0] == pytest.approx(ref, abs=1e-9)

    def test_converges_on_quadratic(self):
        w = Parameter(np.array([0.0]), name="w")
        opt = Adam([w], lr=0.001)
        for _ in range(6000):
            opt.zero_grad()
            backward(((w - 3.0) ** 2).sum())
            opt.step()
        assert abs(w.data[0] - 3.0) < 1e-2

    def test_missing_state_is_usage_error(self):
        p = Parameter(np.zeros(1), name="unknown")
        with pytest.raises(KeyError):
            adam_step([p], OptimizerState())


class TestGradCheck:
    def test_linear_function_exact(self):
        c = make_rng(0, "c").standard_normal(5)
        assert grad_check(lambda x: (x * Tensor(c)).sum(), [np.zeros(5)]) < 1e-9

    def test_composed_stack(self):
        rng = make_rng(1, "stack")
        d = 8
        mha = MultiHeadAttention(d, 2, rng, np.float64)
        norm = LayerNorm(d, np.float64)
        ctx = rng.standard_normal((5, d))

        def fn(x):
            h = norm(mha(x, Tensor(ctx)) + x)
            return _weighted(T.softmax(h, axis=-1))

        assert grad_check(fn, [rng.standard_normal((3, d))]) < 1e-4

    def test_detects_corrupted_gradient(self):
        def fn(x):
            return (x * x).sum()

        def doubled(f, point):
            return [2 * g for g in analytic_grads(f, point)]

        # |2g - g| / max(1, |2g|) saturates at 0.5 for a doubled gradient
        err = grad_check(fn, [np.full(3, 2.0)], analytic=doubled)
        assert err == pytest.approx(0.5, abs=1e-6)
