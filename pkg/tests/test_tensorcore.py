import math

import numpy as np
import pytest

from drivelab import tensorcore as tc


def rel_err(a, b):
    return tc.relative_error(a, b)


class TestDense:
    def test_identity_layer_passes_input_through(self):
        rng = np.random.default_rng(0)
        layer = tc.Dense(rng, 4, 4, "identity")
        layer.W[...] = np.eye(4)
        layer.b[...] = 0.0
        x = rng.normal(size=(3, 4))
        y, _ = layer.forward(x)
        assert np.allclose(y, x, atol=0)

    def test_sigmoid_at_zero_input_is_half(self):
        rng = np.random.default_rng(0)
        layer = tc.Dense(rng, 5, 3, "sigmoid")
        layer.b[...] = 0.0
        y, _ = layer.forward(np.zeros((2, 5)))
        assert np.allclose(y, 0.5)

    def test_two_layer_net_matches_matrix_arithmetic(self):
        rng = np.random.default_rng(1)
        mlp = tc.MLP(rng, [4, 6, 2], "tanh", out_activation="identity")
        x = rng.normal(size=(5, 4))
        y, _ = mlp.forward(x)
        l0, l1 = mlp.layers
        expected = np.tanh(x @ l0.W.T + l0.b) @ l1.W.T + l1.b
        assert np.max(np.abs(y - expected)) < 1e-12

    def test_shape_mismatch_raises(self):
        layer = tc.Dense(np.random.default_rng(0), 4, 2)
        with pytest.raises(ValueError):
            layer.forward(np.zeros((3, 5)))

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            tc.Dense(np.random.default_rng(0), 3, 3, "softplus")


class TestBackward:
    def test_zero_output_grad_gives_zero_gradients(self):
        rng = np.random.default_rng(2)
        mlp = tc.MLP(rng, [3, 5, 2], "tanh")
        x = rng.normal(size=(4, 3))
        _, tapes = mlp.forward(x)
        dx, grads = mlp.backward(tapes, np.zeros((4, 2)))
        assert np.all(dx == 0)
        assert all(np.all(g == 0) for g in grads.values())

    @pytest.mark.parametrize("activation", ["tanh", "relu", "sigmoid", "identity"])
    def test_dense_gradients_match_finite_differences(self, activation):
        rng = np.random.default_rng(3)
        layer = tc.Dense(rng, 4, 3, activation)
        x = rng.normal(size=(5, 4)) + 0.1
        w = rng.normal(size=(5, 3))

        def f():
            y, _ = layer.forward(x)
            return float((y * w).sum())

        y, tape = layer.forward(x)
        _, grads = layer.backward(tape, w)
        fd = tc.finite_difference(f, layer.params())
        assert rel_err(grads["W"], fd["W"]) < 1e-4
        assert rel_err(grads["b"], fd["b"]) < 1e-4

    def test_gru_gradients_match_finite_differences_over_20_steps(self):
        rng = np.random.default_rng(4)
        gru = tc.GruEncoder(rng, 3, 5)
        x = rng.normal(size=(2, 20, 3))
        w = rng.normal(size=(2, 5))

        def f():
            h, _ = gru.forward(x)
            return float((h * w).sum())

        h, tape = gru.forward(x)
        dx, grads = gru.backward(tape, w)
        fd = tc.finite_difference(f, gru.params())
        for name in grads:
            assert rel_err(grads[name], fd[name]) < 1e-4, name

    def test_gru_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        gru = tc.GruEncoder(rng, 3, 4)
        x = rng.normal(size=(1, 6, 3))
        w = rng.normal(size=(1, 4))

        def f():
            h, _ = gru.forward(x)
            return float((h * w).sum())

        _, tape = gru.forward(x)
        dx, _ = gru.backward(tape, w)
        fd = tc.finite_difference(f, {"x": x})
        assert rel_err(dx, fd["x"]) < 1e-4


class TestLosses:
    def test_smooth_l1_zero_error(self):
        loss, grad = tc.smooth_l1(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert loss == 0.0
        assert np.all(grad == 0)

    def test_smooth_l1_quadratic_branch(self):
        loss, _ = tc.smooth_l1(np.array([0.5]), np.array([0.0]))
        assert math.isclose(loss, 0.125)

    def test_smooth_l1_linear_branch(self):
        loss, grad = tc.smooth_l1(np.array([3.0]), np.array([0.0]))
        assert math.isclose(loss, 2.5)
        assert math.isclose(grad[0], 1.0)

    def test_smooth_l1_length_mismatch(self):
        with pytest.raises(ValueError):
            tc.smooth_l1(np.zeros(3), np.zeros(4))

    def test_smooth_l1_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        pred = rng.normal(scale=2.0, size=7)
        target = rng.normal(scale=2.0, size=7)
        pred[np.abs(np.abs(pred - target) - 1.0) < 1e-3] += 0.01  # avoid the kink
        _, grad = tc.smooth_l1(pred, target)
        fd = tc.finite_difference(lambda: tc.smooth_l1(pred, target)[0],
                                  {"pred": pred})
        assert rel_err(grad, fd["pred"]) < 1e-4

    def test_bce_midpoint_is_ln2(self):
        for label in (0.0, 1.0):
            loss, _ = tc.bce(0.5, label)
            assert math.isclose(loss, math.log(2.0))

    def test_bce_near_perfect_prediction(self):
        loss, _ = tc.bce(1.0 - 1e-7, 1.0)
        assert loss == pytest.approx(1e-7, rel=1e-2)

    def test_bce_gradient_matches_finite_differences(self):
        for p in (0.1, 0.3, 0.5, 0.7, 0.9):
            for label in (0.0, 1.0):
                _, grad = tc.bce(p, label)
                h = 1e-7
                fd = (tc.bce(p + h, label)[0] - tc.bce(p - h, label)[0]) / (2 * h)
                assert abs(grad - fd) / max(abs(fd), 1.0) < 1e-6


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self):
        params = {"w": np.array([1.0, 2.0])}
        state = tc.AdamState()
        tc.adam_step(params, {"w": np.zeros(2)}, state)
        assert np.all(params["w"] == np.array([1.0, 2.0]))

    def test_first_step_magnitude(self):
        params = {"w": np.array([0.0])}
        state = tc.AdamState(lr=1e-4)
        tc.adam_step(params, {"w": np.array([1.0])}, state)
        expected = -1e-4 / (1.0 + 1e-8)
        assert params["w"][0] == pytest.approx(expected, rel=1e-12)

    def test_descends_quadratic(self):
        params = {"x": np.array([1.0])}
        state = tc.AdamState(lr=1e-4)
        seen = [1.0]
        for _ in range(1000):
            g = {"x": 2.0 * params["x"]}
            tc.adam_step(params, g, state)
            seen.append(abs(float(params["x"][0])))
        assert all(b < a for a, b in zip(seen, seen[1:]))

    def test_non_finite_gradient_names_block(self):
        params = {"blk": np.zeros(2)}
        with pytest.raises(FloatingPointError, match="blk"):
            tc.adam_step(params, {"blk": np.array([np.nan, 0.0])}, tc.AdamState())

    def test_params_stay_finite_under_extreme_gradients(self):
        rng = np.random.default_rng(7)
        params = {"w": rng.normal(size=8)}
        state = tc.AdamState(lr=1e-2)
        for _ in range(200):
            g = {"w": rng.normal(scale=1e6, size=8) * rng.choice([1e-9, 1e9])}
            tc.adam_step(params, g, state)
            assert np.all(np.isfinite(params["w"]))


class TestCheckpoint:
    def test_round_trip_preserves_full_precision(self, tmp_path):
        rng = np.random.default_rng(8)
        params = {"a.W": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
        path = tmp_path / "ckpt.json"
        tc.save_params(path, params, {"note": "x"})
        loaded, meta = tc.load_params(path)
        assert meta["note"] == "x"
        for name in params:
            assert loaded[name].shape == params[name].shape
            assert np.all(loaded[name] == params[name])

    def test_set_params_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            tc.set_params({"w": np.zeros(3)}, {"w": np.zeros(4)})
