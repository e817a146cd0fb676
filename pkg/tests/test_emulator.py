import numpy as np
import pytest
from sklearn.base import clone

from freqcal.core import ParameterSpace, SimulatorDataset
from freqcal.emulator import (
    KernelConfig,
    KernelRidgeEmulator,
    emulator_predict,
    fit_emulator,
    loocv_rmse,
    median_lengthscales,
    se_kernel,
)
from freqcal.exceptions import ClippedInputWarning, DataError, NumericalFailure
from oracles import brute_force_loo

UNIT = ParameterSpace(("t",), np.array([0.0]), np.array([1.0]))


def linear_sim(m=30, seed=0):
    rng = np.random.default_rng(seed)
    x, t = rng.random(m), rng.random(m)
    return SimulatorDataset(x[:, None], t[:, None], 1 + 2 * x + 3 * t)


def wavy_sim(m=30, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x, t = rng.random(m), rng.random(m)
    y = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * t) + noise * rng.standard_normal(m)
    return SimulatorDataset(x[:, None], t[:, None], y)


class TestFit:
    def test_linear_simulator_is_learned(self):
        sim = linear_sim()
        model = fit_emulator(sim, UNIT, input_bounds=[(0, 1)])
        assert model.loocv_rmse_ < 1e-3
        rng = np.random.default_rng(99)
        x, t = rng.random(100), rng.random(100)
        pred = model.predict(np.column_stack([x, t]))
        assert np.max(np.abs(pred - (1 + 2 * x + 3 * t))) < 1e-3
        assert abs(emulator_predict(model, [0.25], [0.5]) - 3.0) < 1e-3

    def test_constant_outputs(self):
        rng = np.random.default_rng(1)
        sim = SimulatorDataset(rng.random((20, 1)), rng.random((20, 1)), np.full(20, 5.0))
        model = fit_emulator(sim, UNIT, input_bounds=[(0, 1)])
        g = np.linspace(0, 1, 21)
        X = np.array([[a, b] for a in g for b in g])
        np.testing.assert_allclose(model.predict(X), 5.0, atol=1e-6)

    def test_insufficient_rows(self):
        sim = SimulatorDataset(np.random.rand(2, 1), np.random.rand(2, 1), np.ones(2))
        with pytest.raises(DataError, match="insufficient"):
            fit_emulator(sim, UNIT)

    def test_alpha_zero_interpolates(self):
        sim = wavy_sim(25)
        model = fit_emulator(sim, UNIT, KernelConfig(alpha=0.0))
        np.testing.assert_allclose(model.predict(sim.joint_inputs), sim.outputs, atol=1e-6)
        for j in range(3):
            x, t = sim.inputs[j], sim.params[j]
            assert emulator_predict(model, x, t) == pytest.approx(sim.outputs[j], abs=1e-6)

    def test_params_outside_box_rejected(self):
        sim = SimulatorDataset(np.random.rand(10, 1), np.random.rand(10, 1) + 1, np.ones(10))
        with pytest.raises(DataError):
            fit_emulator(sim, UNIT)

    def test_median_lengthscales(self):
        U = np.array([[0.0, 0.5], [0.5, 0.5], [1.0, 0.5]])
        # pairwise |diff| in dim 0: 0.5, 1, 0.5 -> median 0.5; dim 1 all zero -> fallback
        np.testing.assert_allclose(median_lengthscales(U), [0.5, 0.3])

    def test_kernel_formula(self):
        u, v = np.array([[0.1, 0.2]]), np.array([[0.4, 0.0]])
        ls = np.array([0.5, 0.25])
        expected = np.exp(-(0.3**2 / (2 * 0.25) + 0.2**2 / (2 * 0.0625)))
        assert se_kernel(u, v, ls)[0, 0] == pytest.approx(expected, rel=1e-14)

    def test_selected_alpha_is_grid_argmin(self):
        model = fit_emulator(wavy_sim(40, noise=0.05), UNIT)
        scores = model.alpha_scores_
        best = np.flatnonzero(np.asarray(model.alpha_grid) == model.alpha_)[0]
        assert np.all(scores[best] <= scores)

    def test_estimator_protocol(self):
        est = KernelRidgeEmulator(parameter_space=UNIT, alpha=1e-6)
        params = est.get_params()
        assert params["alpha"] == 1e-6 and params["parameter_space"] is UNIT
        sim = wavy_sim()
        a = clone(est).fit(sim.joint_inputs, sim.outputs)
        b = clone(est).fit(sim.joint_inputs, sim.outputs)
        np.testing.assert_array_equal(a.dual_coef_, b.dual_coef_)


class TestPredict:
    def test_theta_outside_box(self):
        model = fit_emulator(linear_sim(), UNIT)
        with pytest.raises(DataError):
            emulator_predict(model, [0.5], [1.5])

    def test_x_clipped_with_warning(self):
        model = fit_emulator(linear_sim(), UNIT, input_bounds=[(0, 1)])
        with pytest.warns(ClippedInputWarning):
            a = emulator_predict(model, [1.7], [0.5])
        assert a == pytest.approx(emulator_predict(model, [1.0], [0.5]))

    def test_simulator_protocol_shapes(self):
        model = fit_emulator(linear_sim(), UNIT, input_bounds=[(0, 1)])
        x = np.linspace(0, 1, 7)[:, None]
        single = model(x, np.array([0.3]))
        batch = model(x, np.array([[0.3], [0.6]]))
        assert single.shape == (7,) and batch.shape == (2, 7)
        np.testing.assert_allclose(batch[0], single, rtol=0, atol=1e-15)

    def test_smooth_in_theta(self):
        model = fit_emulator(wavy_sim(40), UNIT, input_bounds=[(0, 1)])
        rng = np.random.default_rng(3)
        h = 1e-5
        for _ in range(100):
            x, t = rng.random(), rng.uniform(h, 1 - h)
            g = (emulator_predict(model, [x], [t + h]) - emulator_predict(model, [x], [t - h])) / (2 * h)
            assert np.isfinite(g)

    def test_serialization_round_trip(self, tmp_path):
        model = fit_emulator(wavy_sim(30, noise=0.01), UNIT)
        path = tmp_path / "emu.json"
        model.save(path)
        again = KernelRidgeEmulator.load(path)
        X = np.random.default_rng(4).random((15, 2))
        np.testing.assert_array_equal(again.predict(X), model.predict(X))
        assert again.loocv_rmse_ == model.loocv_rmse_


class TestLoocv:
    @pytest.mark.parametrize("alpha", [1e-6, 1e-3, 0.1])
    def test_matches_refit_loop(self, alpha):
        model = fit_emulator(wavy_sim(30, noise=0.05, seed=2), UNIT, KernelConfig(alpha=alpha))
        assert abs(loocv_rmse(model) - brute_force_loo(model)) < 1e-8

    def test_matches_refit_loop_selected_alpha(self):
        model = fit_emulator(wavy_sim(30, noise=0.05, seed=5), UNIT)
        assert abs(loocv_rmse(model) - brute_force_loo(model)) < 1e-8

    def test_huge_alpha_limit_is_trend_fit(self):
        sim = wavy_sim(30, seed=6)
        model = fit_emulator(sim, UNIT, KernelConfig(alpha=1e8))
        U = model.X_train_
        P = np.column_stack([np.ones(30), U])
        H = P @ np.linalg.pinv(P)
        r = sim.outputs - H @ sim.outputs
        assert loocv_rmse(model) == pytest.approx(np.sqrt(np.mean((r / (1 - np.diag(H))) ** 2)), rel=1e-6)

    def test_huge_alpha_near_sample_sd(self):
        sim = wavy_sim(100, seed=7)
        model = fit_emulator(sim, UNIT, KernelConfig(alpha=1e8))
        assert loocv_rmse(model) == pytest.approx(np.std(sim.outputs, ddof=1), rel=0.05)

    def test_duplicate_row_unstable(self):
        sim = wavy_sim(20)
        X = np.vstack([sim.joint_inputs, sim.joint_inputs[:1]])
        y = np.r_[sim.outputs, sim.outputs[:1]]
        model = KernelRidgeEmulator(UNIT, alpha=0.0).fit(X, y)
        with pytest.raises(NumericalFailure, match="unstable"):
            loocv_rmse(model)

