import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import freqcal.bootstrap as bootstrap_mod
from freqcal.bootstrap import (
    BootstrapConfig,
    ConfidenceInterval,
    centered_residuals,
    make_replicate,
    percentile_interval,
    pointwise_band,
    prediction_grid,
    quantile,
    run_bootstrap,
)
from freqcal.calibrate import OptimizerConfig, two_step
from freqcal.core import ScalingMap, SimulatorDataset
from freqcal.emulator import fit_emulator
from freqcal.exceptions import DataError, NumericalFailure
from freqcal.problems import generate_experimental, make_linear_problem

OPT = OptimizerConfig(seed=0)


@pytest.fixture(scope="module")
def noisy_fit():
    prob = make_linear_problem(sigma=0.1)
    exp = generate_experimental(prob, 60, 5, "grid")
    point = two_step(exp, prob.simulator, prob.space, OPT, input_bounds=[(0, 1)])
    return prob, exp, point


@pytest.fixture(scope="module")
def noisy_ensemble(noisy_fit):
    prob, exp, point = noisy_fit
    cfg = BootstrapConfig(B=40, seed=11)
    return run_bootstrap(point, exp, prob.simulator, cfg, opt_cfg=OPT, grid_resolution=21)


class TestResiduals:
    def test_examples(self):
        np.testing.assert_array_equal(centered_residuals([1, 2, 3]), [-1, 0, 1])
        np.testing.assert_array_equal(centered_residuals([7.0]), [0.0])
        v = np.array([-0.5, 0.25, 0.25])
        np.testing.assert_allclose(centered_residuals(v), v, atol=1e-15)

    def test_empty(self):
        with pytest.raises(DataError):
            centered_residuals([])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-1e3, 1e3)))
    def test_pool_is_centered(self, values):
        assert abs(centered_residuals(values).mean()) <= 1e-12


class TestIntervals:
    def test_median(self):
        assert quantile([5, 1, 4, 2, 3], 0.5) == 3.0

    def test_interpolation_rule(self):
        ci = percentile_interval(np.arange(1, 101), 0.05)
        assert ci.lower == pytest.approx(3.475, abs=1e-12)
        assert ci.upper == pytest.approx(97.525, abs=1e-12)
        assert ci.level == pytest.approx(0.95)

    def test_equal_samples(self):
        ci = percentile_interval(np.full(10, 2.5), 0.05)
        assert (ci.lower, ci.upper) == (2.5, 2.5) and ci.width == 0.0

    def test_two_samples(self):
        ci = percentile_interval([4.0, 2.0], 0.05)
        # rank (B - 1) p + 1 on two points interpolates between min and max
        assert ci.lower == pytest.approx(2.0 + 0.025 * 2.0, abs=1e-15)
        assert ci.upper == pytest.approx(4.0 - 0.025 * 2.0, abs=1e-15)
        assert 2.0 <= ci.lower <= ci.upper <= 4.0

    @pytest.mark.parametrize("samples", [[1.0], [], [1.0, np.nan]])
    def test_invalid(self, samples):
        with pytest.raises(DataError):
            percentile_interval(samples, 0.05)

    def test_interval_order(self):
        with pytest.raises(DataError):
            ConfidenceInterval(2.0, 1.0, 0.95)
        assert ConfidenceInterval(1.0, 2.0, 0.95).contains(1.5)

    def test_band_degenerate(self):
        curve = np.linspace(-1, 1, 9)
        lo, hi = pointwise_band(np.tile(curve, (7, 1)), 0.05)
        np.testing.assert_array_equal(lo, curve)
        np.testing.assert_array_equal(hi, curve)

    def test_band_single_point_is_interval(self):
        s = np.random.default_rng(0).standard_normal(50)
        lo, hi = pointwise_band(s[:, None], 0.1)
        ci = percentile_interval(s, 0.1)
        assert (lo[0], hi[0]) == (ci.lower, ci.upper)

    @settings(max_examples=50, deadline=None)
    @given(
        st.tuples(st.integers(2, 60), st.integers(1, 5)).flatmap(
            lambda shape: arrays(np.float64, shape, elements=st.floats(-1e6, 1e6))
        )
    )
    def test_band_nesting(self, values):
        lo95, hi95 = pointwise_band(values, 0.05)
        lo99, hi99 = pointwise_band(values, 0.01)
        assert np.all(lo95 <= hi95)
        assert np.all(lo99 <= lo95) and np.all(hi95 <= hi99)


class TestGrid:
    def test_one_input(self):
        g = prediction_grid(ScalingMap.from_bounds([2.0], [4.0]), 5)
        np.testing.assert_allclose(g.ravel(), [2, 2.5, 3, 3.5, 4])

    def test_sweeps(self):
        g = prediction_grid(ScalingMap.from_bounds([0.0, 10.0], [1.0, 20.0]), 3)
        assert g.shape == (6, 2)
        np.testing.assert_allclose(g[:3, 1], 15.0)
        np.testing.assert_allclose(g[3:, 0], 0.5)


class TestReplicates:
    def test_zero_pool_gives_fitted(self, noisy_fit):
        prob, exp, point = noisy_fit
        flat = point.__class__(**{**point.__dict__, "residuals": np.full(exp.n, 0.3)})
        exp_star, sim_star = make_replicate(flat, exp, BootstrapConfig(B=2, seed=1), 0)
        np.testing.assert_array_equal(exp_star.outputs, point.fitted)
        assert sim_star is None

    def test_design_unchanged(self, noisy_fit):
        prob, exp, point = noisy_fit
        exp_star, _ = make_replicate(point, exp, BootstrapConfig(B=2, seed=1), 3)
        np.testing.assert_array_equal(exp_star.inputs, exp.inputs)
        assert not np.array_equal(exp_star.outputs, exp.outputs)

    def test_resampled_design_draws_rows(self, noisy_fit):
        prob, exp, point = noisy_fit
        exp_star, _ = make_replicate(point, exp, BootstrapConfig(B=2, seed=1, resample_design=True), 3)
        assert set(exp_star.inputs.ravel()) <= set(exp.inputs.ravel())
        assert len(set(exp_star.inputs.ravel())) < exp.n

    def test_deterministic(self, noisy_fit):
        prob, exp, point = noisy_fit
        cfg = BootstrapConfig(B=2, seed=8)
        a, _ = make_replicate(point, exp, cfg, 5)
        b, _ = make_replicate(point, exp, cfg, 5)
        c, _ = make_replicate(point, exp, cfg, 6)
        np.testing.assert_array_equal(a.outputs, b.outputs)
        assert not np.array_equal(a.outputs, c.outputs)

    def test_simulator_replicate(self):
        prob = make_linear_problem()
        rng = np.random.default_rng(0)
        xs, ts = rng.random((30, 1)), rng.uniform(-5, 5, (30, 2))
        sim = SimulatorDataset(xs, ts, ts[:, 0] + ts[:, 1] * xs[:, 0] + 0.01 * rng.standard_normal(30))
        emu = fit_emulator(sim, prob.space, input_bounds=[(0, 1)])
        exp = generate_experimental(prob, 40, 1, "grid")
        point = two_step(exp, emu, prob.space, OPT)
        _, sim_star = make_replicate(point, exp, BootstrapConfig(B=2), 0, emulator=emu, sim=sim)
        np.testing.assert_array_equal(sim_star.params, sim.params)
        assert abs(centered_residuals(emu.residuals_).mean()) <= 1e-12
        with pytest.raises(DataError):
            make_replicate(point, exp, BootstrapConfig(B=2), 0, sim=sim)


class TestRun:
    def test_noiseless_degenerate(self):
        prob = make_linear_problem(amplitude=0.0, sigma=0.0)
        exp = generate_experimental(prob, 50, 0, "grid")
        point = two_step(exp, prob.simulator, prob.space, OPT, input_bounds=[(0, 1)])
        ens = run_bootstrap(point, exp, prob.simulator, BootstrapConfig(B=20), opt_cfg=OPT, grid_resolution=11)
        for ci in ens.theta_intervals(0.05):
            assert ci.width < 1e-4
        np.testing.assert_allclose(ens.thetas, np.tile(point.theta, (20, 1)), atol=1e-6)

    def test_two_replicates(self, noisy_fit):
        prob, exp, point = noisy_fit
        ens = run_bootstrap(point, exp, prob.simulator, BootstrapConfig(B=2, seed=3), opt_cfg=OPT, grid_resolution=5)
        assert ens.thetas.shape == (2, 2) and ens.delta_grid.shape == (2, 5)
        for k, ci in enumerate(ens.theta_intervals(0.05)):
            assert ens.thetas[:, k].min() <= ci.lower <= ci.upper <= ens.thetas[:, k].max()

    def test_nesting(self, noisy_ensemble):
        for c95, c99 in zip(noisy_ensemble.theta_intervals(0.05), noisy_ensemble.theta_intervals(0.01)):
            assert c99.lower <= c95.lower and c95.upper <= c99.upper
        lo95, hi95 = noisy_ensemble.delta_band(0.05)
        lo99, hi99 = noisy_ensemble.delta_band(0.01)
        assert np.all(lo99 <= lo95) and np.all(hi95 <= hi99)

    def test_intervals_sensible(self, noisy_fit, noisy_ensemble):
        prob, _, point = noisy_fit
        assert noisy_ensemble.failures == 0
        for k, ci in enumerate(noisy_ensemble.theta_intervals(0.05)):
            assert 0 < ci.width < 1.0
            assert abs(ci.lower + ci.upper - 2 * point.theta[k]) < ci.width
        assert np.all(noisy_ensemble.reality_band(0.05)[0] <= noisy_ensemble.reality_band(0.05)[1])

    def test_deterministic_across_workers(self, noisy_fit, noisy_ensemble):
        prob, exp, point = noisy_fit
        cfg = BootstrapConfig(B=40, seed=11)
        again = run_bootstrap(point, exp, prob.simulator, cfg, opt_cfg=OPT, grid_resolution=21, n_jobs=2)
        np.testing.assert_array_equal(again.thetas, noisy_ensemble.thetas)
        np.testing.assert_array_equal(again.delta_grid, noisy_ensemble.delta_grid)
        np.testing.assert_array_equal(again.seeds, noisy_ensemble.seeds)
        assert again.summary_json(0.05) == noisy_ensemble.summary_json(0.05)

    def test_emulator_replicates(self):
        prob = make_linear_problem()
        rng = np.random.default_rng(0)
        xs, ts = rng.random((30, 1)), rng.uniform(-5, 5, (30, 2))
        sim = SimulatorDataset(xs, ts, ts[:, 0] + ts[:, 1] * xs[:, 0])
        emu = fit_emulator(sim, prob.space, input_bounds=[(0, 1)])
        exp = generate_experimental(prob, 40, 1, "grid")
        point = two_step(exp, emu, prob.space, OPT)
        before = emu.to_dict()
        ens = run_bootstrap(point, exp, emu, BootstrapConfig(B=5), sim=sim, opt_cfg=OPT, grid_resolution=5)
        assert ens.thetas.shape == (5, 2)
        assert emu.to_dict() == before
        with pytest.raises(DataError):
            run_bootstrap(point, exp, prob.simulator, BootstrapConfig(B=5), sim=sim)

    @pytest.mark.parametrize("n_failed, raises", [(1, False), (2, True)])
    def test_failure_threshold(self, noisy_fit, monkeypatch, n_failed, raises):
        prob, exp, point = noisy_fit
        original = bootstrap_mod._one_replicate

        def flaky(ctx, b):
            b, seed, out = original(ctx, b)
            return b, seed, (None if b < n_failed else out)

        monkeypatch.setattr(bootstrap_mod, "_one_replicate", flaky)
        cfg = BootstrapConfig(B=10, seed=2)
        if raises:
            with pytest.raises(NumericalFailure, match="unstable"):
                run_bootstrap(point, exp, prob.simulator, cfg, opt_cfg=OPT, grid_resolution=5)
        else:
            ens = run_bootstrap(point, exp, prob.simulator, cfg, opt_cfg=OPT, grid_resolution=5)
            assert ens.failures == 1 and ens.thetas.shape[0] == 9
            assert ens.indices.tolist() == list(range(1, 10))

    def test_write_csv(self, noisy_ensemble, tmp_path):
        path = tmp_path / "ens.csv"
        noisy_ensemble.write_csv(path)
        rows = path.read_text().splitlines()
        assert len(rows) == 41
        assert rows[0].split(",")[:3] == ["replicate", "theta1", "theta2"]
        first = np.array(rows[1].split(",")[1:3], dtype=float)
        np.testing.assert_array_equal(first, noisy_ensemble.thetas[0])

    @pytest.mark.parametrize("kw", [{"B": 1}, {"alpha": 0.0}, {"undersmooth": 1.5}, {"undersmooth": 0.0}])
    def test_config_validation(self, kw):
        with pytest.raises(DataError):
            BootstrapConfig(**kw)
