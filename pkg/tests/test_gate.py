"""Softmax gate: weights, prediction, training, gradients, serialization."""

import numpy as np
import pytest

from rulegate.errors import DimensionMismatchError, NonFiniteLossError
from rulegate.gate import (
    GateParams,
    TrainConfig,
    gate_weights,
    gradient_check,
    mse_loss,
    predict,
    responsibilities,
    train_gate,
)
from rulegate.rules import N_RULES
from rulegate.synthetic import SyntheticConfig, generate_synthetic, random_gate_params


def small_params(rng, n_rules=4, d=3):
    return GateParams(
        alpha=rng.normal(size=n_rules),
        beta=rng.normal(size=(n_rules, d)),
    )


def random_indicators(rng, t, f):
    active = rng.random((t, f)) < 0.7
    active[:, 0] = True  # keep one always-active column
    left = active & (rng.random((t, f)) < 0.5)
    return active, left


class TestGateWeights:
    def test_uniform_at_zero(self):
        params = GateParams(alpha=np.zeros(12), beta=np.zeros((12, 5)))
        q = gate_weights(params, np.random.default_rng(0).normal(size=(3, 5)))
        np.testing.assert_allclose(q, 1.0 / 12)
        np.testing.assert_allclose(q.sum(axis=1), 1.0)

    def test_shift_invariance_bit_identical(self):
        # Integer data keeps every float op exact, so the invariance is
        # verifiable bit for bit rather than only in exact arithmetic.
        alpha = np.array([1.0, -2.0, 0.0])
        beta = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
        z = np.array([[1.0, 2.0], [0.0, 1.0], [-3.0, 2.0]])
        base = gate_weights(GateParams(alpha=alpha, beta=beta), z)
        shifted = gate_weights(
            GateParams(alpha=alpha + 4.0, beta=beta + np.array([2.0, -1.0])), z
        )
        np.testing.assert_array_equal(base, shifted)

    def test_limit_concentration(self):
        params = GateParams(
            alpha=np.array([50.0, -50.0, -50.0]), beta=np.zeros((3, 1))
        )
        q = gate_weights(params, np.zeros((1, 1)))
        assert q[0, 0] > 1 - 1e-12

    def test_dimension_mismatch(self):
        params = GateParams(alpha=np.zeros(3), beta=np.zeros((3, 2)))
        with pytest.raises(DimensionMismatchError):
            gate_weights(params, np.zeros((4, 5)))


class TestPredict:
    def test_uniform_gate_counts_active_left(self):
        params = GateParams(alpha=np.zeros(12), beta=np.zeros((12, 2)))
        active = np.zeros((1, 12), dtype=bool)
        active[0, :4] = True
        left = np.zeros((1, 12), dtype=bool)
        left[0, :3] = True
        pred = predict(params, np.zeros((1, 2)), active, left)
        assert pred.g[0] == pytest.approx(0.75)
        assert not pred.guard_hit[0]

    def test_unanimity(self):
        params = GateParams(alpha=np.zeros(5), beta=np.zeros((5, 1)))
        active = np.ones((1, 5), dtype=bool)
        pred = predict(params, np.zeros((1, 1)), active, active.copy())
        assert pred.g[0] == 1.0

    def test_guard_on_fully_inactive_menu(self):
        params = GateParams(alpha=np.zeros(3), beta=np.zeros((3, 1)))
        active = np.zeros((1, 3), dtype=bool)
        left = np.zeros((1, 3), dtype=bool)
        pred = predict(params, np.zeros((1, 1)), active, left, m_min=1e-6)
        assert pred.guard_hit[0]
        assert pred.g[0] == 0.0
        np.testing.assert_array_equal(pred.q_tilde[0], 0.0)

    def test_guard_never_binds_with_always_active_pair(self, rng):
        params = random_gate_params(rng, n_features=4)
        z = rng.normal(size=(50, 4))
        active, left = random_indicators(rng, 50, N_RULES)
        active[:, -2:] = True  # attention pair
        pred = predict(params, z, active, left)
        assert not pred.guard_hit.any()

    def test_mixture_identity_batch(self, rng):
        for _ in range(40):
            f = int(rng.integers(3, 13))
            d = int(rng.integers(1, 6))
            params = GateParams(
                alpha=rng.normal(size=f), beta=rng.normal(size=(f, d))
            )
            z = rng.normal(size=(25, d))
            active, left = random_indicators(rng, 25, f)
            pred = predict(params, z, active, left)
            ok = ~pred.guard_hit
            np.testing.assert_allclose(
                pred.g[ok],
                (pred.q_tilde[ok] * left[ok]).sum(axis=1),
                atol=1e-9,
            )
            np.testing.assert_allclose(pred.q_tilde[ok].sum(axis=1), 1.0, atol=1e-9)
            np.testing.assert_allclose(pred.q.sum(axis=1), 1.0, atol=1e-9)
            assert np.all((pred.g >= 0) & (pred.g <= 1))
            assert not np.any(pred.q_tilde[~active] != 0.0)


class TestTraining:
    def test_recovers_noiseless_targets(self, rng):
        truth = random_gate_params(rng, n_features=3)
        data = generate_synthetic(
            truth,
            SyntheticConfig(n_cells=4, menus_per_cell=15, n_features=3),
            n_trials=None,
            seed=4,
        )
        config = TrainConfig(learning_rate=0.05, epochs=3000)
        params, trace = train_gate(
            data.features, data.active, data.left, data.p_hat, config
        )
        final = mse_loss(params, data.features, data.active, data.left, data.p_hat)
        assert final < 1e-6
        assert trace.size == config.epochs + 1
        assert trace[-1] == pytest.approx(final)

    def test_loss_nonincreasing_small_lr(self, rng):
        truth = random_gate_params(rng, n_features=2, alpha_scale=1.0)
        data = generate_synthetic(
            truth,
            SyntheticConfig(n_cells=3, menus_per_cell=12, n_features=2),
            n_trials=50,
            seed=9,
        )
        _, trace = train_gate(
            data.features,
            data.active,
            data.left,
            data.p_hat,
            TrainConfig(learning_rate=1e-4, epochs=300),
        )
        assert np.all(np.diff(trace) <= 1e-12)

    def test_permuted_targets_land_at_target_variance(self, rng):
        truth = random_gate_params(rng, n_features=3)
        data = generate_synthetic(
            truth,
            SyntheticConfig(n_cells=6, menus_per_cell=25, n_features=3),
            n_trials=200,
            seed=2,
        )
        y = data.p_hat.copy()
        rng.shuffle(y)
        params, _ = train_gate(
            data.features,
            data.active,
            data.left,
            y,
            TrainConfig(learning_rate=0.01, epochs=800),
        )
        mse = mse_loss(params, data.features, data.active, data.left, y)
        assert mse >= 0.8 * np.var(y)

    def test_divergence_raises(self, rng):
        truth = random_gate_params(rng, n_features=2)
        data = generate_synthetic(
            truth,
            SyntheticConfig(n_cells=3, menus_per_cell=12, n_features=2),
            seed=3,
        )
        with pytest.raises(NonFiniteLossError):
            train_gate(
                data.features,
                data.active,
                data.left,
                data.p_hat,
                TrainConfig(learning_rate=1e12, epochs=200, clip_norm=0.0),
            )

    def test_deterministic(self, rng):
        truth = random_gate_params(rng, n_features=2)
        data = generate_synthetic(
            truth,
            SyntheticConfig(n_cells=3, menus_per_cell=12, n_features=2),
            n_trials=30,
            seed=5,
        )
        cfg = TrainConfig(learning_rate=0.01, epochs=50)
        p1, t1 = train_gate(data.features, data.active, data.left, data.p_hat, cfg)
        p2, t2 = train_gate(data.features, data.active, data.left, data.p_hat, cfg)
        np.testing.assert_array_equal(p1.alpha, p2.alpha)
        np.testing.assert_array_equal(p1.beta, p2.beta)
        np.testing.assert_array_equal(t1, t2)


class TestGradientCheck:
    def test_random_problems(self, rng):
        for trial in range(5):
            f = int(rng.integers(4, 13))
            d = int(rng.integers(2, 6))
            params = GateParams(
                alpha=rng.normal(size=f) * 0.5,
                beta=rng.normal(size=(f, d)) * 0.5,
            )
            z = rng.normal(size=(30, d))
            active, left = random_indicators(rng, 30, f)
            y = rng.random(30)
            err = gradient_check(
                params, z, active, left, y, n_coords=20, seed=trial
            )
            assert err < 1e-5

    def test_zero_gradient_point(self):
        # A single menu fit exactly: gradient vanishes, check stays clean.
        params = GateParams(alpha=np.zeros(2), beta=np.zeros((2, 1)))
        active = np.array([[True, True]])
        left = np.array([[True, False]])
        err = gradient_check(
            params, np.zeros((1, 1)), active, left, np.array([0.5]), seed=0
        )
        assert err < 1e-8


class TestResponsibilities:
    def test_uniform_gate_all_active(self):
        params = GateParams(alpha=np.zeros(12), beta=np.zeros((12, 1)))
        active = np.ones((20, 12), dtype=bool)
        left = np.zeros((20, 12), dtype=bool)
        w, n_guard = responsibilities(params, np.zeros((20, 1)), active, left)
        np.testing.assert_allclose(w, 1.0 / 12)
        assert n_guard == 0

    def test_single_rule_library(self):
        params = GateParams(alpha=np.zeros(1), beta=np.zeros((1, 1)))
        active = np.ones((5, 1), dtype=bool)
        w, _ = responsibilities(params, np.zeros((5, 1)), active, active.copy())
        np.testing.assert_allclose(w, [1.0])

    def test_weights_sum_to_one(self, rng):
        params = random_gate_params(rng, n_features=3)
        z = rng.normal(size=(40, 3))
        active, left = random_indicators(rng, 40, N_RULES)
        active[:, 0] = True
        w, _ = responsibilities(params, z, active, left)
        assert w.sum() == pytest.approx(1.0, abs=1e-9)


class TestSerialization:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        params = GateParams(
            alpha=rng.normal(size=12),
            beta=rng.normal(size=(12, 12)),
            rule_names=tuple(f"r{i}" for i in range(12)),
            feature_names=tuple(f"z{i}" for i in range(12)),
            rescale_factor=float(rng.random() * 100),
            m_min=1e-6,
        )
        path = tmp_path / "params.json"
        params.to_json(path)
        back = GateParams.from_json(path)
        np.testing.assert_array_equal(back.alpha, params.alpha)
        np.testing.assert_array_equal(back.beta, params.beta)
        assert back.rescale_factor == params.rescale_factor
        assert back.rule_names == params.rule_names
        assert back.m_min == params.m_min

    def test_rejects_foreign_document(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            GateParams.from_json(path)
