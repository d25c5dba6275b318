"""MLP regressor: learnability oracles, gradient checks, Adam behavior."""

import numpy as np
import pytest

from soundscape_ml import _net
from soundscape_ml.mlp import MLPConfig, MLPModel, check_gradients, fit, predict


def linear_data(n=50, slope=2.0, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    return x, slope * x


class TestFit:
    def test_overfits_linear_target(self):
        x, y = linear_data()
        config = MLPConfig(
            hidden_layers=1, units=16, l2=0.0, lr=1e-2, epochs=2000,
            batch_size=50, seed=0, early_stopping=False,
        )
        model = fit(config, x, y)
        mse = float(np.mean((predict(model, x) - y) ** 2))
        assert mse < 1e-3

    def test_linear_path_recovers_least_squares_slope(self):
        """One linear unit composes to an affine map; its slope must match lstsq."""
        x, y = linear_data(seed=1)
        config = MLPConfig(
            hidden_layers=1, units=1, l2=0.0, activation="linear", lr=1e-2,
            epochs=3000, batch_size=50, seed=0, early_stopping=False,
        )
        model = fit(config, x, y)
        (w1, _), (w2, _) = model.params
        effective_slope = float(w1[0, 0] * w2[0, 0])
        xs = model.standardizer.transform(x)
        oracle_slope = float(np.linalg.lstsq(xs, y, rcond=None)[0][0, 0])
        assert effective_slope == pytest.approx(oracle_slope, rel=0.05)

    def test_same_seed_identical_trajectory(self):
        x, y = linear_data(seed=2)
        config = MLPConfig(hidden_layers=2, units=8, epochs=30, seed=7)
        first = fit(config, x, y)
        second = fit(config, x, y)
        assert first.loss_history == second.loss_history
        for (w1, b1), (w2, b2) in zip(first.params, second.params):
            assert (w1 == w2).all() and (b1 == b2).all()

    def test_constant_target_reproduced(self):
        # Weight decay pulls toward the exact optimum (zero weights, bias = c).
        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 4))
        y = np.full((60, 1), 0.75)
        config = MLPConfig(hidden_layers=1, units=8, l2=1e-3, epochs=600, seed=0,
                           early_stopping=False, lr=1e-2)
        model = fit(config, x, y)
        assert np.max(np.abs(predict(model, x) - 0.75)) < 1e-2

    def test_loss_decreases_over_first_epochs(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(80, 3))
        y = (x @ np.array([[1.0], [-2.0], [0.5]])) + 0.1
        config = MLPConfig(hidden_layers=1, units=16, epochs=10, seed=1, early_stopping=False)
        model = fit(config, x, y)
        increases = sum(
            1 for a, b in zip(model.loss_history, model.loss_history[1:]) if b > a
        )
        assert increases <= 2

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="empty"):
            fit(MLPConfig(), np.zeros((0, 2)), np.zeros((0, 1)))
        with pytest.raises(ValueError, match="non-finite"):
            fit(MLPConfig(), np.array([[np.nan]]), np.array([[1.0]]))
        with pytest.raises(ValueError, match="rows"):
            fit(MLPConfig(), np.zeros((3, 2)), np.zeros((4, 1)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MLPConfig(hidden_layers=0)
        with pytest.raises(ValueError):
            MLPConfig(hidden_layers=11)
        with pytest.raises(ValueError):
            MLPConfig(activation="gelu")


class TestPredict:
    def test_dimension_mismatch_rejected(self):
        x, y = linear_data(n=20)
        model = fit(MLPConfig(epochs=5), x, y)
        with pytest.raises(ValueError, match="columns"):
            predict(model, np.zeros((4, 3)))

    def test_zero_weights_give_bias_output(self):
        x, y = linear_data(n=20)
        model = fit(MLPConfig(hidden_layers=1, units=4, epochs=5), x, y)
        model.params = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.params]
        model.params[-1] = (model.params[-1][0], np.array([1.25]))
        assert np.allclose(predict(model, x), 1.25)

    def test_multi_output(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 3))
        y = np.column_stack([x.sum(axis=1), x[:, 0] - x[:, 1]])
        model = fit(MLPConfig(hidden_layers=1, units=32, epochs=300, l2=0.0,
                              lr=1e-2, early_stopping=False, seed=2), x, y)
        assert predict(model, x).shape == (40, 2)


class TestGradients:
    def test_relu_network_matches_finite_differences(self):
        config = MLPConfig(hidden_layers=1, units=8, l2=0.0)
        assert check_gradients(config, input_dim=4, output_dim=1, seed=0) < 1e-4

    def test_linear_network_nearly_exact(self):
        config = MLPConfig(hidden_layers=1, units=4, l2=0.0, activation="linear")
        assert check_gradients(config, input_dim=3, output_dim=2, seed=1) < 1e-6

    def test_with_l2_penalty(self):
        config = MLPConfig(hidden_layers=1, units=6, l2=1e-3)
        assert check_gradients(config, input_dim=3, output_dim=1, seed=2) < 1e-4

    def test_relu_subgradient_at_zero_is_zero(self):
        # Kink convention: the derivative used at z == 0 must be 0.
        assert _net.relu_grad(np.array([0.0]))[0] == 0.0

    def test_too_many_parameters_rejected(self):
        with pytest.raises(ValueError, match="tiny"):
            check_gradients(MLPConfig(hidden_layers=3, units=64), input_dim=10)


class TestAdam:
    def test_first_step_magnitude_close_to_lr(self):
        """Bias-corrected Adam's first update is ~lr for any non-tiny gradient."""
        rng = np.random.default_rng(0)
        params = [(rng.normal(size=(3, 2)), rng.normal(size=2))]
        grads = [(rng.uniform(0.001, 5.0, size=(3, 2)) * rng.choice([-1, 1], size=(3, 2)),
                  rng.uniform(0.001, 5.0, size=2))]
        before = [(w.copy(), b.copy()) for w, b in params]
        lr = 1e-3
        _net.AdamOptimizer(params, lr=lr).step(params, grads)
        for (w0, b0), (w1, b1) in zip(before, params):
            for old, new in ((w0, w1), (b0, b1)):
                step = np.abs(new - old)
                assert np.all(step <= lr + 1e-12)
                assert np.all(step >= 0.9 * lr)

    def test_identity_permutation_matches_unshuffled(self):
        """Regression guard: the seeded shuffle fully determines batch order."""
        x, y = linear_data(n=32, seed=6)
        config = MLPConfig(hidden_layers=1, units=4, epochs=12, seed=3, batch_size=8)
        a = fit(config, x, y)
        b = fit(config, x.copy(), y.copy())
        assert a.loss_history == b.loss_history


class TestSerialization:
    def test_save_load_roundtrip(self, tmp_path):
        x, y = linear_data(n=30, seed=8)
        model = fit(MLPConfig(hidden_layers=2, units=8, epochs=20, seed=4), x, y)
        path = tmp_path / "model.json"
        model.save(path)
        loaded = MLPModel.load(path)
        np.testing.assert_allclose(predict(loaded, x), predict(model, x), atol=1e-12)
        assert loaded.config.units == 8

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "bogus.json"
        path.write_text('{"format": "other", "kind": "mlp"}')
        with pytest.raises(ValueError, match="not an MLP"):
            MLPModel.load(path)
