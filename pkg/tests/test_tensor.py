"""Autodiff core: every op against central finite differences."""

import numpy as np
import pytest

import entityrl.tensor as T

H = 1e-5
TOL = 1e-4


def finite_diff_check(build, tensors, rel_tol=TOL, h=H):
    """Compare analytic grads of scalar build() against central differences.

    `build` recomputes the scalar loss from `tensors` (list of parameter
    Tensors); every coordinate of every tensor is perturbed.
    """
    loss = build()
    for t in tensors:
        t.grad = None
    loss = build()
    loss.backward()
    for t in tensors:
        assert t.grad is not None, "parameter missed by backward"
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = build().item()
            flat[i] = old - h
            down = build().item()
            flat[i] = old
            fd = (up - down) / (2.0 * h)
            err = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1.0)
            assert err <= rel_tol, f"coord {i}: fd={fd} analytic={grad[i]} err={err}"


def rand_param(rng, shape, scale=1.0):
    return T.parameter(scale * rng.standard_normal(shape))


@pytest.mark.usefixtures("f64")
class TestElementwiseGrads:
    @pytest.mark.parametrize("op,positive", [
        (T.relu, False), (T.tanh, False), (T.sigmoid, False), (T.exp, False),
        (T.log, True), (lambda t: T.leaky_relu(t, 0.2), False),
    ])
    def test_unary(self, op, positive):
        rng = np.random.default_rng(0)
        for _ in range(5):
            data = rng.standard_normal((3, 4))
            if positive:
                data = np.abs(data) + 0.5
            x = T.parameter(data)
            finite_diff_check(lambda: T.sum(op(T.mul(x, x))) if positive else T.sum(op(x)), [x])

    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.div, T.minimum, T.maximum])
    def test_binary_same_shape(self, op):
        rng = np.random.default_rng(1)
        a = rand_param(rng, (2, 3))
        b = T.parameter(rng.standard_normal((2, 3)) + 3.0)  # offset keeps div smooth
        finite_diff_check(lambda: T.sum(op(a, b)), [a, b])

    def test_scalar_and_bias_broadcast(self):
        rng = np.random.default_rng(2)
        a = rand_param(rng, (4, 3))
        bias = rand_param(rng, (3,))
        finite_diff_check(lambda: T.sum(T.add(a, bias)), [a, bias])
        finite_diff_check(lambda: T.sum(T.mul(a, 2.5)), [a])

    def test_clip_grad_zero_outside(self):
        x = T.parameter(np.array([-2.0, 0.5, 3.0]))
        y = T.sum(T.clip(x, -1.0, 1.0))
        y.backward()
        assert np.array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_shape_mismatch_raises(self):
        a = T.Tensor(np.zeros((2, 3)))
        b = T.Tensor(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            T.add(a, b)
        with pytest.raises(ValueError):
            T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))


@pytest.mark.usefixtures("f64")
class TestStructuredGrads:
    def test_matmul_2d(self):
        rng = np.random.default_rng(3)
        a, b = rand_param(rng, (3, 4)), rand_param(rng, (4, 2))
        finite_diff_check(lambda: T.sum(T.matmul(a, b)), [a, b])

    def test_matmul_batched_and_broadcast(self):
        rng = np.random.default_rng(4)
        a = rand_param(rng, (2, 3, 4))
        b = rand_param(rng, (4, 5))
        finite_diff_check(lambda: T.sum(T.matmul(a, b)), [a, b])
        c = rand_param(rng, (2, 2, 3, 4))
        d = rand_param(rng, (2, 1, 4, 3))
        finite_diff_check(lambda: T.sum(T.matmul(c, d)), [c, d])

    def test_shape_ops(self):
        rng = np.random.default_rng(5)
        a = rand_param(rng, (2, 6))
        finite_diff_check(lambda: T.sum(T.mul(T.reshape(a, (3, 4)), T.reshape(a, (3, 4)))), [a])
        b = rand_param(rng, (2, 3, 4))
        finite_diff_check(lambda: T.sum(T.exp(T.transpose(b, (2, 0, 1)))), [b])
        finite_diff_check(lambda: T.sum(T.tanh(b[:, 1:, ::2])), [b])

    def test_concat_take_gather_broadcast(self):
        rng = np.random.default_rng(6)
        a, b = rand_param(rng, (2, 3)), rand_param(rng, (4, 3))
        finite_diff_check(lambda: T.sum(T.tanh(T.concat([a, b], axis=0))), [a, b])
        idx = np.array([3, 0, 0, 2])
        finite_diff_check(lambda: T.sum(T.mul(T.take_rows(b, idx), 1.5)), [b])
        logits = rand_param(rng, (5, 3))
        picks = np.array([0, 2, 1, 1, 0])
        finite_diff_check(lambda: T.sum(T.gather_last(logits, picks)), [logits])
        c = rand_param(rng, (1, 4))
        finite_diff_check(lambda: T.sum(T.tanh(T.broadcast_to(c, (3, 4)))), [c])

    def test_outer_add(self):
        rng = np.random.default_rng(7)
        a, b = rand_param(rng, (2, 3, 4)), rand_param(rng, (2, 3, 4))
        finite_diff_check(lambda: T.sum(T.tanh(T.outer_add(a, b))), [a, b])

    def test_reductions(self):
        rng = np.random.default_rng(8)
        a = rand_param(rng, (3, 4))
        finite_diff_check(lambda: T.mul(T.sum(T.mul(a, a)), 0.5), [a])
        finite_diff_check(lambda: T.sum(T.exp(T.mean(a, axis=1))), [a])
        finite_diff_check(lambda: T.sum(T.tanh(T.sum(a, axis=0, keepdims=True))), [a])

    def test_softmax_and_log_softmax(self):
        rng = np.random.default_rng(9)
        x = rand_param(rng, (4, 5))
        w = rand_param(rng, (4, 5))
        finite_diff_check(lambda: T.sum(T.mul(T.softmax(x, axis=1), w)), [x])
        finite_diff_check(lambda: T.sum(T.mul(T.log_softmax(x, axis=1), w)), [x])

    def test_layer_norm(self):
        rng = np.random.default_rng(10)
        x = rand_param(rng, (3, 6))
        w = rand_param(rng, (3, 6))
        finite_diff_check(lambda: T.sum(T.mul(T.layer_norm(x), w)), [x])

    def test_conv1d(self):
        rng = np.random.default_rng(11)
        x = rand_param(rng, (3, 10))
        k = rand_param(rng, (2, 3, 4))
        b = rand_param(rng, (2,))
        finite_diff_check(lambda: T.sum(T.tanh(T.conv1d(x, k, 2, bias=b))), [x, k, b])
        xb = rand_param(rng, (2, 3, 9))
        finite_diff_check(lambda: T.sum(T.conv1d(xb, k, 3)), [xb, k])

    def test_conv1d_output_length(self):
        x = T.Tensor(np.zeros((1, 4, 128)))
        k = T.Tensor(np.zeros((16, 4, 8)))
        assert T.conv1d(x, k, 4).shape == (1, 16, 31)

    def test_gru_cell(self):
        rng = np.random.default_rng(12)
        d = 4
        x, h = rand_param(rng, (2, d)), rand_param(rng, (2, d))
        w_ih, w_hh = rand_param(rng, (d, 3 * d)), rand_param(rng, (d, 3 * d))
        b_ih, b_hh = rand_param(rng, (3 * d,)), rand_param(rng, (3 * d,))
        finite_diff_check(
            lambda: T.sum(T.gru_cell(x, h, w_ih, w_hh, b_ih, b_hh)),
            [x, h, w_ih, w_hh, b_ih, b_hh])


@pytest.mark.usefixtures("f64")
class TestBackwardSemantics:
    def test_linear_case(self):
        # backward on loss = sum(W.x) -> grad(W) = broadcast of x
        rng = np.random.default_rng(13)
        w = rand_param(rng, (3, 2))
        x = T.Tensor(rng.standard_normal((4, 3)))
        loss = T.sum(T.matmul(x, w))
        loss.backward()
        expected = np.tile(x.data.sum(axis=0)[:, None], (1, 2))
        np.testing.assert_allclose(w.grad, expected, rtol=1e-12)

    def test_accumulation_is_additive(self):
        x = T.parameter(np.array([1.0, 2.0]))
        y = T.add(T.mul(x, 3.0), T.mul(x, x))
        T.sum(y).backward()
        np.testing.assert_allclose(x.grad, 3.0 + 2.0 * x.data)

    def test_shared_gradient_not_corrupted(self):
        # two parents receiving the same upstream array must stay independent
        a = T.parameter(np.ones(3))
        b = T.parameter(np.ones(3))
        y = T.add(a, b)
        z = T.mul(a, 5.0)
        T.sum(T.add(y, z)).backward()
        np.testing.assert_allclose(b.grad, np.ones(3))
        np.testing.assert_allclose(a.grad, np.ones(3) + 5.0)

    def test_backward_requires_scalar(self):
        x = T.parameter(np.ones((2, 2)))
        with pytest.raises(ValueError):
            T.mul(x, 2.0).backward()

    def test_no_grad_skips_graph(self):
        x = T.parameter(np.ones(3))
        with T.no_grad():
            y = T.mul(x, 2.0)
        assert not y.requires_grad and y._parents == ()


@pytest.mark.usefixtures("f64")
class TestSoftmaxNumerics:
    def test_normalized_under_large_inputs(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            x = T.Tensor(rng.uniform(-1e3, 1e3, size=(5, 7)))
            s = T.softmax(x, axis=1).data
            np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(np.isfinite(s))


@pytest.mark.usefixtures("f64")
class TestCategorical:
    def test_uniform_entropy_is_log_n(self):
        for n in (2, 3, 9):
            dist = T.Categorical(T.Tensor(np.zeros((1, n))))
            assert abs(dist.entropy().data[0] - np.log(n)) < 1e-9

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(15)
        logits = T.Tensor(rng.standard_normal((6, 4)) * 10.0)
        dist = T.Categorical(logits)
        lp = np.stack([dist.log_prob(np.full(6, a)).data for a in range(4)], axis=1)
        np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-9)

    def test_greedy_tie_breaks_low_index(self):
        dist = T.Categorical(T.Tensor(np.array([[0.0, 0.0, 0.0], [1.0, 5.0, 5.0]])))
        assert dist.greedy().tolist() == [0, 1]

    def test_sampling_matches_probabilities(self):
        rng = np.random.default_rng(16)
        logits = np.array([0.3, -0.8, 1.4])
        dist = T.Categorical(T.Tensor(logits[None, :]))
        p = dist.probs()[0]
        draws = 100_000
        big = T.Categorical(T.Tensor(np.tile(logits, (draws, 1))))
        counts = np.bincount(big.sample(rng), minlength=3)
        for a in range(3):
            sigma = np.sqrt(draws * p[a] * (1.0 - p[a]))
            assert abs(counts[a] - draws * p[a]) <= 3.0 * sigma

    def test_log_prob_grad(self):
        rng = np.random.default_rng(17)
        logits = rand_param(rng, (4, 3))
        actions = np.array([0, 2, 1, 2])
        finite_diff_check(lambda: T.sum(T.Categorical(logits).log_prob(actions)), [logits])
        finite_diff_check(lambda: T.sum(T.Categorical(logits).entropy()), [logits])
