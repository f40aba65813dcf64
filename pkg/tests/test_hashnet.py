import math

import numpy as np
import pytest

from seghash.hashnet import (
    GradientSet,
    HashHead,
    NonFiniteError,
    OptimizerState,
    ShapeError,
    adamw_step,
    backward,
    forward,
)
from oracles import central_difference, max_relative_error


def constant_head(dims, w, b=0.0):
    return HashHead(
        dims,
        [np.full((i, o), float(w)) for i, o in zip(dims[:-1], dims[1:])],
        [np.full(o, float(b)) for o in dims[1:]],
    )


class TestForward:
    def test_zero_parameters_give_zero_output(self, rng):
        head = constant_head([5, 7, 7, 4], 0.0)
        np.testing.assert_array_equal(forward(head, rng.normal(size=5)), np.zeros(4))

    def test_saturation(self):
        head = HashHead([1, 1], [np.array([[1e6]])], [np.zeros(1)])
        assert forward(head, [1.0])[0] == pytest.approx(1.0, abs=1e-9)

    def test_straight_line_oracle(self):
        head = constant_head([2, 2, 2, 2], 0.1)
        x = [1.0, 1.0]
        h1 = [max(0.0, 0.1 * x[0] + 0.1 * x[1])] * 2
        h2 = [max(0.0, 0.1 * h1[0] + 0.1 * h1[1])] * 2
        expected = [math.tanh(0.1 * h2[0] + 0.1 * h2[1])] * 2
        np.testing.assert_allclose(forward(head, x), expected, rtol=0, atol=1e-12)

    def test_outputs_strictly_inside_unit_interval(self, rng):
        head = HashHead.init([6, 16, 16, 8], seed=3)
        out = forward(head, rng.normal(scale=0.5, size=(200, 6)))
        assert np.all(np.abs(out) < 1)

    def test_batch_matches_rows(self, rng):
        head = HashHead.init([4, 8, 8, 4], seed=1)
        X = rng.normal(size=(5, 4))
        np.testing.assert_allclose(forward(head, X), np.stack([forward(head, x) for x in X]), atol=1e-15)

    def test_dimension_mismatch(self):
        head = HashHead.init([4, 8, 8, 4])
        with pytest.raises(ShapeError):
            forward(head, np.zeros(3))

    def test_bad_parameter_shapes_rejected(self):
        with pytest.raises(ShapeError):
            HashHead([2, 3], [np.zeros((3, 2))], [np.zeros(3)])

    def test_init_is_seeded(self):
        a = HashHead.init([4, 8, 8, 4], seed=9)
        b = HashHead.init([4, 8, 8, 4], seed=9)
        assert a.equals(b)
        assert not a.equals(HashHead.init([4, 8, 8, 4], seed=10))


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self, rng):
        head = HashHead.init([3, 4, 4, 2], seed=0)
        grads = backward(head, rng.normal(size=3), np.zeros(2))
        assert all(not g.any() for g in grads.arrays())

    def test_single_parameter(self):
        head = HashHead([1, 1], [np.array([[0.7]])], [np.zeros(1)])
        x = np.array([0.9])
        # loss = 2 * o  =>  upstream 2
        analytic = backward(head, x, np.array([2.0])).weights[0]
        numeric = central_difference(lambda: 2 * forward(head, x)[0], [head.weights[0]])[0]
        assert abs(analytic[0, 0] - numeric[0, 0]) / abs(numeric[0, 0]) < 1e-6

    def test_random_net_against_finite_differences(self, rng):
        head = HashHead.init([3, 4, 4, 2], seed=7)
        for b in head.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        X = rng.normal(size=(6, 3))
        coef = rng.normal(size=(6, 2))

        def loss():
            return float(np.sum(coef * forward(head, X)))

        analytic = backward(head, X, coef).arrays()
        numeric = central_difference(loss, head.parameters())
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_upstream_shape_checked(self):
        head = HashHead.init([3, 4, 4, 2])
        with pytest.raises(ShapeError):
            backward(head, np.zeros(3), np.zeros(3))


class TestAdamW:
    def test_zero_gradient_no_decay_is_identity(self):
        head = HashHead.init([3, 4, 4, 2], seed=2)
        before = head.copy()
        state = OptimizerState.for_head(head, learning_rate=0.1, weight_decay=0.0)
        zeros = GradientSet([np.zeros_like(w) for w in head.weights], [np.zeros_like(b) for b in head.biases])
        adamw_step(head, zeros, state)
        assert head.equals(before)
        assert state.step_count == 1

    def scalar_head(self, p):
        return HashHead([1, 1], [np.array([[p]])], [np.zeros(1)])

    def test_first_step_moves_by_learning_rate(self):
        head = self.scalar_head(0.0)
        state = OptimizerState.for_head(head, learning_rate=0.1, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=0.0)
        adamw_step(head, GradientSet([np.array([[1.0]])], [np.zeros(1)]), state)
        # m_hat = 1, v_hat = 1  =>  p = 0 - 0.1 * 1 / (1 + 1e-8)
        assert head.weights[0][0, 0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)

    def test_decoupled_weight_decay(self):
        head = self.scalar_head(1.0)
        state = OptimizerState.for_head(head, learning_rate=0.1, weight_decay=0.01)
        adamw_step(head, GradientSet([np.zeros((1, 1))], [np.zeros(1)]), state)
        assert head.weights[0][0, 0] == pytest.approx(0.999, abs=1e-15)

    def test_non_finite_gradient_rejected_untouched(self):
        head = HashHead.init([3, 4, 4, 2], seed=2)
        before = head.copy()
        state = OptimizerState.for_head(head)
        grads = GradientSet([np.zeros_like(w) for w in head.weights], [np.zeros_like(b) for b in head.biases])
        grads.biases[1][0] = np.nan
        with pytest.raises(NonFiniteError, match=r"layers\[1\]\.bias"):
            adamw_step(head, grads, state)
        assert head.equals(before)
        assert state.step_count == 0


class TestCheckpoint:
    def test_round_trip_at_f32_precision(self, rng):
        head = HashHead.init([5, 9, 9, 4], seed=4)
        loaded = HashHead.from_bytes(head.to_bytes())
        X = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(forward(loaded, X), forward(head.astype_f32(), X))

    def test_layout(self):
        head = HashHead.init([2, 3, 3, 2])
        data = head.to_bytes()
        assert data[:4] == b"SDHM"
        n_params = sum(p.size for p in head.parameters())
        assert len(data) == 4 + 4 + 4 + 3 * 8 + 4 * n_params

    def test_index_file_is_not_a_checkpoint(self):
        from seghash.index import SegmentedIndex
        from seghash.storage import FormatError
        from seghash.ternary import SegmentConfig

        data = SegmentedIndex.build(np.ones((1, 1, 4), dtype=np.int8), SegmentConfig(4, 4, 0)).to_bytes()
        with pytest.raises(FormatError, match="magic"):
            HashHead.from_bytes(data)


def test_training_is_deterministic(rng):
    X = rng.normal(size=(8, 4))
    target = rng.normal(size=(8, 2))

    def train():
        head = HashHead.init([4, 6, 6, 2], seed=5)
        state = OptimizerState.for_head(head, learning_rate=1e-2)
        for _ in range(20):
            adamw_step(head, backward(head, X, forward(head, X) - target), state)
        return head

    assert train().equals(train())
