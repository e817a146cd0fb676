import csv
import json

import numpy as np
import pytest

from freqcal.calibrate import OptimizerConfig, two_step
from freqcal.cli import load_config, run
from freqcal.core import (
    SimulatorDataset,
    read_experimental_csv,
    write_experimental_csv,
    write_simulator_csv,
)
from freqcal.exceptions import DataError
from freqcal.problems import generate_data, generate_experimental, make_linear_problem

SPACE = [{"name": "theta1", "lower": -5.0, "upper": 5.0}, {"name": "theta2", "lower": -5.0, "upper": 5.0}]


@pytest.fixture
def workdir(tmp_path):
    prob = make_linear_problem(sigma=0.1)
    exp, sim = generate_data(prob, 64, 40, 3, "uniform-random")
    write_experimental_csv(tmp_path / "exp.csv", exp)
    write_simulator_csv(tmp_path / "sim.csv", sim)
    (tmp_path / "space.json").write_text(json.dumps(SPACE))
    return tmp_path


def write_config(directory, name="run.json", **entries):
    path = directory / name
    path.write_text(json.dumps(entries))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestLoadConfig:
    def test_defaults(self, workdir):
        cfg = load_config(write_config(workdir, experimental="exp.csv", parameter_space="space.json", seed=1))
        assert cfg.bootstrap.B == 1000
        assert cfg.bootstrap.alpha == 0.05
        assert cfg.bootstrap.undersmooth == 1.0
        assert cfg.grid_resolution == 101
        assert cfg.experimental == (workdir / "exp.csv").resolve()
        assert cfg.output_dir == (workdir / "out").resolve()
        assert cfg.parameter_space.names == ("theta1", "theta2")

    def test_unknown_key_named(self, workdir):
        with pytest.raises(DataError, match="foo"):
            load_config(write_config(workdir, seed=1, foo=2))
        with pytest.raises(DataError, match="bar"):
            load_config(write_config(workdir, seed=1, bootstrap={"bar": 1}))

    def test_undersmooth_out_of_range(self, workdir):
        with pytest.raises(DataError, match="undersmooth"):
            load_config(write_config(workdir, seed=1, bootstrap={"undersmooth": 1.5}))

    def test_seed_is_mandatory(self, workdir):
        path = write_config(workdir, experimental="exp.csv")
        with pytest.raises(DataError, match="seed"):
            load_config(path)
        assert load_config(path, seed=4).seed == 4

    def test_parse_error_has_position(self, workdir):
        path = workdir / "bad.json"
        path.write_text('{\n  "seed": 1,\n  "B" 2\n}')
        with pytest.raises(DataError, match="line 3"):
            load_config(path)

    def test_missing_path(self, workdir):
        with pytest.raises(DataError, match="nope.csv"):
            load_config(write_config(workdir, seed=1, experimental="nope.csv"))

    def test_inline_space_and_sections(self, workdir):
        cfg = load_config(
            write_config(
                workdir, seed=2, parameter_space=SPACE, optimizer={"popsize": 8},
                lambda_grid=[1e-4, 1e-2], study={"sizes": [50, 100], "replicates": 10},
            )
        )
        assert cfg.optimizer.popsize == 8 and cfg.lambda_grid == (1e-4, 1e-2)
        assert cfg.study.sizes == (50, 100)

    @pytest.mark.parametrize(
        "entry",
        [
            {"exact_simulator": "quadratic"},
            {"input_bounds": [[1, 0]]},
            {"study": {"problem": "cubic"}},
            {"study": {"levels": [1.5]}},
            {"lambda_grid": []},
            {"seed": -1},
            {"seed": 1.5},
        ],
    )
    def test_invalid_entries(self, workdir, entry):
        with pytest.raises(DataError):
            load_config(write_config(workdir, **({"seed": 1} | entry)))


class TestRun:
    def test_calibrate_matches_library(self, workdir):
        cfg = write_config(workdir, experimental="exp.csv", exact_simulator="linear",
                           parameter_space="space.json", seed=7)
        assert run(["calibrate", "--config", str(cfg)]) == 0
        rows = read_rows(workdir / "out" / "theta_estimates.csv")
        assert rows[0] == ["parameter", "estimate"]
        theta_cli = np.array([float(r[1]) for r in rows[1:]])

        prob = make_linear_problem()
        exp = read_experimental_csv(workdir / "exp.csv")
        oracle = two_step(exp, prob.simulator, prob.space, OptimizerConfig(seed=7))
        np.testing.assert_allclose(theta_cli, oracle.theta, atol=1e-6)

        summary = json.loads((workdir / "out" / "summary.json").read_text())
        assert summary["seed"] == 7 and summary["n"] == 64
        grid = read_rows(workdir / "out" / "discrepancy_grid.csv")
        assert grid[0] == ["x1", "estimate", "reality"] and len(grid) == 102

    def test_written_numbers_round_trip(self, workdir):
        cfg = write_config(workdir, experimental="exp.csv", exact_simulator="linear",
                           parameter_space="space.json", seed=7, grid_resolution=11)
        assert run(["calibrate", "--config", str(cfg)]) == 0
        prob = make_linear_problem()
        exp = read_experimental_csv(workdir / "exp.csv")
        res = two_step(exp, prob.simulator, prob.space, OptimizerConfig(seed=7))
        rows = read_rows(workdir / "out" / "theta_estimates.csv")
        np.testing.assert_array_equal([float(r[1]) for r in rows[1:]], res.theta)
        grid = np.array(read_rows(workdir / "out" / "discrepancy_grid.csv")[1:], dtype=float)
        np.testing.assert_array_equal(grid[:, 1], res.discrepancy_at(grid[:, :1]))

    def test_emulator_calibrate_and_emulate(self, workdir):
        cfg = write_config(workdir, experimental="exp.csv", simulator="sim.csv",
                           parameter_space="space.json", seed=1, input_bounds=[[0, 1]])
        assert run(["calibrate", "--config", str(cfg), "--out", str(workdir / "a")]) == 0
        assert (workdir / "a" / "emulator.json").exists()
        assert run(["emulate", "--config", str(cfg), "--out", str(workdir / "b")]) == 0
        assert (workdir / "a" / "emulator.json").read_bytes() == (workdir / "b" / "emulator.json").read_bytes()
        summary = json.loads((workdir / "b" / "summary.json").read_text())
        ys = np.array(read_rows(workdir / "sim.csv")[1:], dtype=float)[:, -1]
        assert 0 < summary["loocv_rmse"] < 0.1 * ys.std()
        assert len(summary["alpha_scores"]) > 1

    def test_bootstrap_outputs(self, workdir):
        cfg = write_config(workdir, experimental="exp.csv", exact_simulator="linear",
                           parameter_space="space.json", seed=2, bootstrap={"B": 12}, grid_resolution=9)
        assert run(["bootstrap", "--config", str(cfg)]) == 0
        out = workdir / "out"
        assert read_rows(out / "theta_estimates.csv")[0] == ["parameter", "estimate", "lower", "upper"]
        assert len(read_rows(out / "ensemble.csv")) == 13
        assert read_rows(out / "discrepancy_grid.csv")[0][:4] == ["x1", "estimate", "lower", "upper"]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["B"] == 12 and summary["failures"] == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert run(["bootstrap", "--config", str(cfg)]) == 0
        assert {p.name: p.read_bytes() for p in out.iterdir()} == first

    def test_rate_study_command(self, workdir):
        cfg = write_config(workdir, seed=3, study={"sizes": [40, 80], "replicates": 10})
        assert run(["rate-study", "--config", str(cfg)]) == 0
        summary = json.loads((workdir / "out" / "summary.json").read_text())
        assert summary["kind"] == "rate" and "wall_clock_seconds" not in summary
        assert len(read_rows(workdir / "out" / "study_report.csv")) == 3

    def test_missing_config_flag(self, capsys):
        assert run(["calibrate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert run(["fly"]) == 1

    def test_wrong_column_count(self, workdir, capsys):
        rng = np.random.default_rng(0)
        bad = SimulatorDataset(rng.random((10, 1)), rng.random((10, 1)), rng.random(10))
        write_simulator_csv(workdir / "narrow_sim.csv", bad)
        cfg = write_config(workdir, experimental="exp.csv", simulator="narrow_sim.csv",
                           parameter_space="space.json", seed=1)
        assert run(["calibrate", "--config", str(cfg)]) == 2
        assert "narrow_sim.csv" in capsys.readouterr().err

    def test_unknown_key_exit(self, workdir, capsys):
        cfg = write_config(workdir, seed=1, foo=1)
        assert run(["calibrate", "--config", str(cfg)]) == 2
        assert "foo" in capsys.readouterr().err

    def test_numerical_failure_exit(self, workdir, capsys):
        rng = np.random.default_rng(0)
        x, theta = rng.random((12, 1)), rng.uniform(-5, 5, (12, 2))
        x[-1], theta[-1] = x[0], theta[0]
        write_simulator_csv(workdir / "dup.csv", SimulatorDataset(x, theta, theta[:, 0] + theta[:, 1] * x[:, 0]))
        cfg = write_config(workdir, experimental="exp.csv", simulator="dup.csv", parameter_space="space.json",
                           seed=1, input_bounds=[[0, 1]], emulator={"alpha_grid": [0.0]})
        assert run(["calibrate", "--config", str(cfg)]) == 3
        assert "unstable" in capsys.readouterr().err

    def test_constant_simulator_input_is_data_error(self, workdir):
        prob = make_linear_problem()
        write_experimental_csv(workdir / "tiny.csv", generate_experimental(prob, 8, 0, "grid"))
        x = np.full((6, 1), 0.5)
        theta = np.random.default_rng(1).uniform(-5, 5, (6, 2))
        write_simulator_csv(workdir / "flat.csv", SimulatorDataset(x, theta, theta[:, 0]))
        cfg = write_config(workdir, experimental="tiny.csv", simulator="flat.csv",
                           parameter_space="space.json", seed=1)
        assert run(["calibrate", "--config", str(cfg)]) == 2
