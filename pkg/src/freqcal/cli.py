"""Command-line front end.

::

    freqcal {calibrate,bootstrap,emulate,rate-study,coverage-study} --config run.json
            [--out DIR] [--seed N] [--threads N]

Exit status is 0 on success, 1 for usage errors, 2 for bad input data or
configuration and 3 when a numerical procedure fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, prediction_grid, run_bootstrap
from .calibrate import OptimizerConfig, two_step
from .core import (
    ParameterSpace,
    format_float,
    parse_parameter_space,
    read_experimental_csv,
    read_simulator_csv,
    write_csv,
    write_text_atomic,
)
from .emulator import KernelConfig, fit_emulator
from .exceptions import CalibrationError, DataError, NumericalFailure
from .problems import (
    RATE_LAMBDA_CONSTANT,
    coverage_study,
    make_linear_problem,
    make_nonlinear_problem,
    rate_study,
)

__all__ = ["RunConfig", "load_config", "run", "main"]

log = logging.getLogger("freqcal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("calibrate", "bootstrap", "emulate", "rate-study", "coverage-study")

_TOP_KEYS = {
    "experimental",
    "simulator",
    "exact_simulator",
    "parameter_space",
    "output_dir",
    "seed",
    "optimizer",
    "lambda_grid",
    "knot_cap",
    "input_bounds",
    "emulator",
    "bootstrap",
    "grid_resolution",
    "study",
}
_OPT_KEYS = {"popsize", "mutation", "crossover", "max_generations", "stall_generations", "stall_tol", "polish"}
_EMU_KEYS = {"alpha", "alpha_grid", "lengthscales"}
_BOOT_KEYS = {"B", "alpha", "resample_design", "undersmooth"}
_STUDY_KEYS = {
    "problem",
    "amplitude",
    "bump",
    "sigma",
    "sizes",
    "replicates",
    "lambda_constant",
    "n",
    "B",
    "M",
    "levels",
}
_EXACT = {"linear": make_linear_problem, "nonlinear": make_nonlinear_problem}


@dataclass(frozen=True)
class StudySettings:
    problem: str = "linear"
    amplitude: float = 1.0
    bump: float = 0.05
    sigma: float = 0.1
    sizes: tuple = (100, 200, 400, 800, 1600, 3200)
    replicates: int = 100
    lambda_constant: float = RATE_LAMBDA_CONSTANT
    n: int = 200
    B: int = 500
    M: int = 200
    levels: tuple = (0.05,)

    def make_problem(self):
        if self.problem == "linear":
            return make_linear_problem(self.amplitude, self.sigma)
        return make_nonlinear_problem(self.bump, self.sigma)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; paths are absolute."""

    seed: int
    output_dir: Path
    experimental: Path | None = None
    simulator: Path | None = None
    exact_simulator: str | None = None
    parameter_space: ParameterSpace | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    lambda_grid: tuple | None = None
    knot_cap: int = 200
    input_bounds: tuple | None = None
    emulator: KernelConfig = field(default_factory=KernelConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    grid_resolution: int = 101
    study: StudySettings = field(default_factory=StudySettings)


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise DataError(f"{where} must be a JSON object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise DataError(f"unknown configuration key {unknown[0]!r} in {where}")


def _existing(base: Path, value, key: str) -> Path:
    if not isinstance(value, str):
        raise DataError(f"{key} must be a path string")
    path = (base / value).resolve()
    if not path.exists():
        raise DataError(f"{key}: file not found: {path}")
    return path


def _int(value, key: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise DataError(f"{key} must be an integer")
    if minimum is not None and value < minimum:
        raise DataError(f"{key} must be >= {minimum}")
    return int(value)


def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DataError(f"{key} must be a number")
    return float(value)


def _build(section: dict, cls, key: str, converters: dict):
    try:
        return cls(**{k: converters[k](v, f"{key}.{k}") for k, v in section.items()})
    except TypeError as exc:
        raise DataError(f"{key}: {exc}") from exc


def load_config(path, *, seed=None, output_dir=None) -> RunConfig:
    """Read and validate a JSON run configuration.

    Relative paths are resolved against the configuration file's directory.
    ``seed`` and ``output_dir`` override the file; a seed is mandatory from
    one source or the other.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read configuration ({exc.strerror})") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno <= len(text.splitlines()) else ""
        raise DataError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}\n    {line}"
        ) from exc
    _check_keys(raw, _TOP_KEYS, "configuration")
    base = path.resolve().parent

    seed = raw.get("seed") if seed is None else seed
    if seed is None:
        raise DataError("configuration must set 'seed' (there is no default)")
    kw = {"seed": _int(seed, "seed", 0)}

    out = output_dir if output_dir is not None else raw.get("output_dir", "out")
    kw["output_dir"] = (base / out).resolve() if output_dir is None else Path(out).resolve()

    for key in ("experimental", "simulator"):
        if key in raw:
            kw[key] = _existing(base, raw[key], key)
    if "exact_simulator" in raw:
        if raw["exact_simulator"] not in _EXACT:
            raise DataError(f"exact_simulator must be one of {sorted(_EXACT)}")
        kw["exact_simulator"] = raw["exact_simulator"]
    if "simulator" in kw and "exact_simulator" in kw:
        raise DataError("give either simulator or exact_simulator, not both")

    if "parameter_space" in raw:
        spec = raw["parameter_space"]
        if isinstance(spec, str):
            ps_path = _existing(base, spec, "parameter_space")
            try:
                spec = ps_path.read_text(encoding="utf-8")
            except OSError as exc:
                raise DataError(f"{ps_path}: cannot read ({exc.strerror})") from exc
        kw["parameter_space"] = parse_parameter_space(spec)

    if "optimizer" in raw:
        sec = raw["optimizer"]
        _check_keys(sec, _OPT_KEYS, "optimizer")
        conv = {
            "popsize": lambda v, k: _int(v, k, 4),
            "mutation": _number,
            "crossover": _number,
            "max_generations": lambda v, k: _int(v, k, 1),
            "stall_generations": lambda v, k: _int(v, k, 1),
            "stall_tol": _number,
            "polish": lambda v, k: bool(v),
        }
        kw["optimizer"] = _build(sec, OptimizerConfig, "optimizer", conv)

    if "lambda_grid" in raw:
        grid = raw["lambda_grid"]
        if not isinstance(grid, list) or not grid:
            raise DataError("lambda_grid must be a non-empty list of numbers")
        kw["lambda_grid"] = tuple(_number(v, "lambda_grid") for v in grid)
    if "knot_cap" in raw:
        kw["knot_cap"] = _int(raw["knot_cap"], "knot_cap", 4)
    if "input_bounds" in raw:
        b = np.asarray(raw["input_bounds"], dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 0] >= b[:, 1]):
            raise DataError("input_bounds must be a list of [lower, upper] pairs with lower < upper")
        kw["input_bounds"] = tuple(map(tuple, b.tolist()))
    if "grid_resolution" in raw:
        kw["grid_resolution"] = _int(raw["grid_resolution"], "grid_resolution", 2)

    if "emulator" in raw:
        sec = raw["emulator"]
        _check_keys(sec, _EMU_KEYS, "emulator")
        conv = {
            "alpha": _number,
            "alpha_grid": lambda v, k: tuple(_number(a, k) for a in v),
            "lengthscales": lambda v, k: tuple(_number(a, k) for a in v),
        }
        kw["emulator"] = _build(sec, KernelConfig, "emulator", conv)

    boot = dict(raw.get("bootstrap", {}))
    _check_keys(boot, _BOOT_KEYS, "bootstrap")
    conv = {
        "B": lambda v, k: _int(v, k),
        "alpha": _number,
        "resample_design": lambda v, k: bool(v),
        "undersmooth": _number,
    }
    kw["bootstrap"] = replace(_build(boot, BootstrapConfig, "bootstrap", conv), seed=kw["seed"])

    if "study" in raw:
        sec = raw["study"]
        _check_keys(sec, _STUDY_KEYS, "study")
        if sec.get("problem", "linear") not in _EXACT:
            raise DataError(f"study.problem must be one of {sorted(_EXACT)}")
        conv = {
            "problem": lambda v, k: v,
            "amplitude": _number,
            "bump": _number,
            "sigma": _number,
            "sizes": lambda v, k: tuple(_int(a, k, 4) for a in v),
            "replicates": lambda v, k: _int(v, k, 10),
            "lambda_constant": lambda v, k: None if v is None else _number(v, k),
            "n": lambda v, k: _int(v, k, 4),
            "B": lambda v, k: _int(v, k, 2),
            "M": lambda v, k: _int(v, k, 50),
            "levels": lambda v, k: tuple(_number(a, k) for a in v),
        }
        settings = _build(sec, StudySettings, "study", conv)
        if settings.sigma < 0:
            raise DataError("study.sigma must be >= 0")
        if not all(0 < a < 1 for a in settings.levels):
            raise DataError("study.levels must lie in (0, 1)")
        kw["study"] = settings
    return RunConfig(**kw)


# -- commands --------------------------------------------------------------


def _require(cfg: RunConfig, *keys):
    for key in keys:
        if getattr(cfg, key) is None:
            raise DataError(f"this command needs '{key}' in the configuration")


def _load_inputs(cfg: RunConfig):
    """Experimental data, simulator (emulator or exact) and optional simulator data."""
    _require(cfg, "experimental", "parameter_space")
    space = cfg.parameter_space
    exp = read_experimental_csv(cfg.experimental)
    if cfg.exact_simulator is not None:
        simulator = _EXACT[cfg.exact_simulator]().simulator
        if space.d != 2 or exp.p != 1:
            raise DataError("exact simulators take one input and two parameters")
        return exp, simulator, None
    if cfg.simulator is None:
        raise DataError("configuration needs 'simulator' (CSV) or 'exact_simulator'")
    sim = read_simulator_csv(cfg.simulator, exp.p, space.d)
    emulator = fit_emulator(sim, space, cfg.emulator, cfg.input_bounds)
    return exp, emulator, sim


def _calibrate(cfg: RunConfig, exp, simulator):
    opt = replace(cfg.optimizer, seed=cfg.seed)
    return two_step(
        exp,
        simulator,
        cfg.parameter_space,
        opt,
        cfg.lambda_grid,
        input_bounds=cfg.input_bounds,
        knot_cap=cfg.knot_cap,
    )


def cmd_calibrate(cfg: RunConfig, out: Path, threads: int) -> dict:
    exp, simulator, sim = _load_inputs(cfg)
    res = _calibrate(cfg, exp, simulator)
    space = cfg.parameter_space
    write_csv(out / "theta_estimates.csv", ["parameter", "estimate"], [[n, t] for n, t in zip(space.names, res.theta)])
    grid = prediction_grid(res.x_scaling, cfg.grid_resolution)
    delta = res.discrepancy_at(grid)
    reality = np.asarray(simulator(grid, res.theta), dtype=float) + delta
    write_csv(
        out / "discrepancy_grid.csv",
        list(exp.input_names) + ["estimate", "reality"],
        [list(g) + [d, z] for g, d, z in zip(grid, delta, reality)],
    )
    summary = {
        "command": "calibrate",
        "n": exp.n,
        "theta": dict(zip(space.names, res.theta.tolist())),
        "objective": res.objective,
        "lambda": res.lam,
        "edf": res.discrepancy.edf,
        "optimizer": {
            "generations": res.optimizer.generations,
            "evaluations": res.optimizer.nfev,
            "stalled": res.optimizer.stalled,
            "polished": res.optimizer.polished,
        },
    }
    if sim is not None:
        simulator.save(out / "emulator.json")
        summary["emulator"] = _emulator_summary(simulator)
    return summary


def cmd_bootstrap(cfg: RunConfig, out: Path, threads: int) -> dict:
    exp, simulator, sim = _load_inputs(cfg)
    res = _calibrate(cfg, exp, simulator)
    bcfg = cfg.bootstrap
    grid = prediction_grid(res.x_scaling, cfg.grid_resolution)
    ens = run_bootstrap(
        res,
        exp,
        simulator,
        bcfg,
        sim=sim,
        opt_cfg=replace(cfg.optimizer, seed=cfg.seed),
        lam_grid=cfg.lambda_grid,
        grid=grid,
        knot_cap=cfg.knot_cap,
        n_jobs=threads,
    )
    alpha = bcfg.alpha
    cis = ens.theta_intervals(alpha)
    write_csv(
        out / "theta_estimates.csv",
        ["parameter", "estimate", "lower", "upper"],
        [[n, t, ci.lower, ci.upper] for n, t, ci in zip(res.space.names, res.theta, cis)],
    )
    d_lo, d_hi = ens.delta_band(alpha)
    z_lo, z_hi = ens.reality_band(alpha)
    write_csv(
        out / "discrepancy_grid.csv",
        list(exp.input_names) + ["estimate", "lower", "upper", "reality", "reality_lower", "reality_upper"],
        [
            list(g) + [d, lo, hi, z, zlo, zhi]
            for g, d, lo, hi, z, zlo, zhi in zip(
                grid, ens.point_delta, d_lo, d_hi, ens.point_reality, z_lo, z_hi
            )
        ],
    )
    ens.write_csv(out / "ensemble.csv")
    summary = {"command": "bootstrap", "n": exp.n, "resample_design": bcfg.resample_design,
               "undersmooth": bcfg.undersmooth, **ens.summary(alpha)}
    summary.pop("grid")
    if sim is not None:
        summary["emulator"] = _emulator_summary(simulator)
    return summary


def _emulator_summary(model) -> dict:
    loocv = model.loocv_rmse_
    return {
        "alpha": model.alpha_,
        "lengthscales": model.lengthscales_.tolist(),
        "train_rmse": model.train_rmse_,
        "loocv_rmse": None if not np.isfinite(loocv) else loocv,
        "m": int(model.y_train_.size),
    }


def cmd_emulate(cfg: RunConfig, out: Path, threads: int) -> dict:
    _require(cfg, "simulator", "parameter_space")
    space = cfg.parameter_space
    p = len(cfg.input_bounds) if cfg.input_bounds is not None else None
    if p is None:
        if cfg.experimental is not None:
            p = read_experimental_csv(cfg.experimental).p
        else:
            with open(cfg.simulator, encoding="utf-8") as fh:
                p = len(fh.readline().split(",")) - space.d - 1
            if p < 1:
                raise DataError(f"{cfg.simulator}: too few columns for {space.d} parameters")
    sim = read_simulator_csv(cfg.simulator, p, space.d)
    model = fit_emulator(sim, space, cfg.emulator, cfg.input_bounds)
    model.save(out / "emulator.json")
    scores = model.alpha_scores_
    summary = {"command": "emulate", **_emulator_summary(model)}
    if scores is not None:
        grid = cfg.emulator.alpha_grid
        summary["alpha_scores"] = [
            {"alpha": float(a), "loocv_rmse": float(s) if np.isfinite(s) else None}
            for a, s in zip(grid, scores)
        ]
    return summary


def cmd_rate_study(cfg: RunConfig, out: Path, threads: int) -> dict:
    st = cfg.study
    report = rate_study(
        st.make_problem(),
        st.sizes,
        st.replicates,
        replace(cfg.optimizer, seed=cfg.seed),
        seed=cfg.seed,
        lambda_constant=st.lambda_constant,
        knot_cap=cfg.knot_cap,
        n_jobs=threads,
        windows={"slope_theta": (-0.65, -0.35), "slope_delta": (-0.55, -0.25)},
    )
    log.info("rate study finished in %.1f s", report.wall_clock)
    report.write_csv(out / "study_report.csv")
    return report.to_dict(timing=False)


def cmd_coverage_study(cfg: RunConfig, out: Path, threads: int) -> dict:
    st = cfg.study
    bcfg = cfg.bootstrap
    windows = {}
    for a in st.levels:
        lo, hi = (0.88, 0.99) if a == 0.05 else (1 - a - 0.12, 1 - a + 0.12)
        for name in ("theta1", "theta2"):
            windows[f"coverage_{name}@{a:g}"] = (lo, hi)
    report = coverage_study(
        st.make_problem(),
        st.n,
        st.B,
        st.M,
        replace(cfg.optimizer, seed=cfg.seed),
        seed=cfg.seed,
        levels=st.levels,
        undersmooth=bcfg.undersmooth,
        resample_design=bcfg.resample_design,
        n_jobs=threads,
        windows=windows,
    )
    log.info("coverage study finished in %.1f s", report.wall_clock)
    report.write_csv(out / "study_report.csv")
    return report.to_dict(timing=False)


_HANDLERS = {
    "calibrate": cmd_calibrate,
    "bootstrap": cmd_bootstrap,
    "emulate": cmd_emulate,
    "rate-study": cmd_rate_study,
    "coverage-study": cmd_coverage_study,
}


# -- entry points ----------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="freqcal", description="Two-step calibration of computer models.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides the configuration)")
        sp.add_argument("--seed", type=int, help="random seed (overrides the configuration)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes, 0 = one per CPU")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def _clean(obj):
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(format_float(v)) if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    return obj


def run(argv=None) -> int:
    """Run one command; returns the exit status."""
    try:
        args = _parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 0:
        print("freqcal: error: --threads must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        out = cfg.output_dir
        os.makedirs(out, exist_ok=True)
        summary = _HANDLERS[args.command](cfg, out, args.threads)
        summary["seed"] = cfg.seed
        write_text_atomic(out / "summary.json", json.dumps(_clean(summary), indent=2) + "\n")
    except NumericalFailure as exc:
        print(f"freqcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CalibrationError, OSError) as exc:
        print(f"freqcal: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
