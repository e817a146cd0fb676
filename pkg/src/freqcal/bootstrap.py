"""Residual bootstrap for the two-step calibration.

Each replicate regenerates both datasets from the point estimates,

    y*_i  = eta_hat(x_i, theta_hat) + delta_hat(x_i) + eps*_i
    y'*_j = eta_hat(x'_j, theta'_j) + tau*_j

with ``eps*`` and ``tau*`` drawn with replacement from the centered
experimental and emulator residuals, then refits the emulator (when one is
used) and reruns the two-step estimator. Designs are optionally resampled
first. Percentile intervals are read off the replicate estimates.

Replicate ``b`` draws all of its randomness from
``numpy.random.SeedSequence(base_seed, spawn_key=(b,))``, so an ensemble
does not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from sklearn.base import clone

from ._parallel import parallel_map
from .calibrate import CalibrationResult, OptimizerConfig, two_step
from .core import ExperimentalDataset, ParameterSpace, SimulatorDataset, format_float, write_csv
from .emulator import KernelRidgeEmulator
from .exceptions import DataError, NumericalFailure
from .nonparam import KNOT_CAP

__all__ = [
    "BootstrapConfig",
    "BootstrapEnsemble",
    "ConfidenceInterval",
    "centered_residuals",
    "make_replicate",
    "replicate_seed",
    "run_bootstrap",
    "percentile_interval",
    "pointwise_band",
    "prediction_grid",
    "quantile",
]

MAX_FAILURE_FRACTION = 0.1


@dataclass(frozen=True)
class BootstrapConfig:
    """``B`` replicates at nominal level ``alpha``.

    ``undersmooth`` (in (0, 1]) multiplies each replicate's GCV-selected
    smoothing parameter; 1 gives the plain, non-adjusted regions.
    """

    B: int = 1000
    alpha: float = 0.05
    resample_design: bool = False
    undersmooth: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 2:
            raise DataError("B must be an integer >= 2")
        if not 0 < self.alpha < 1:
            raise DataError("alpha must lie in (0, 1)")
        if not 0 < self.undersmooth <= 1:
            raise DataError("undersmooth factor must lie in (0, 1]")


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise DataError("interval lower bound exceeds upper bound")

    def contains(self, value) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def centered_residuals(values) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 1:
        raise DataError("need at least one residual")
    return values - values.mean()


def quantile(samples, p) -> np.ndarray:
    """Sample quantile by linear interpolation at 1-based rank ``(B - 1) p + 1``."""
    s = np.asarray(samples, dtype=float)
    return np.quantile(s, p, axis=0, method="linear")


def percentile_interval(samples, alpha: float) -> ConfidenceInterval:
    """``(alpha/2, 1 - alpha/2)`` sample quantiles of ``samples``."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 2:
        raise DataError("percentile interval needs at least 2 samples")
    if not np.isfinite(s).all():
        raise DataError("samples must be finite")
    lo, hi = quantile(s, [alpha / 2, 1 - alpha / 2])
    return ConfidenceInterval(float(lo), float(hi), 1 - alpha)


def pointwise_band(values, alpha: float):
    """Column-wise percentile interval of a (replicates, G) array."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] < 2:
        raise DataError("band needs at least 2 replicates")
    lo, hi = quantile(v, [alpha / 2, 1 - alpha / 2])
    return lo, hi


def prediction_grid(x_scaling, resolution: int = 101) -> np.ndarray:
    """Evaluation points (original units) for discrepancy and reality bands.

    With one input this is an even grid over the input range. With several
    inputs it concatenates one sweep per input, the others held at the
    middle of their range.
    """
    lo, hi = x_scaling.lower, x_scaling.upper
    p = lo.size
    t = np.linspace(0.0, 1.0, resolution)
    if p == 1:
        return (lo + t[:, None] * (hi - lo)).reshape(-1, 1)
    blocks = []
    for j in range(p):
        U = np.full((resolution, p), 0.5)
        U[:, j] = t
        blocks.append(lo + U * (hi - lo))
    return np.vstack(blocks)


def replicate_seed(base_seed: int, b: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(b),))


def make_replicate(
    point: CalibrationResult,
    exp: ExperimentalDataset,
    cfg: BootstrapConfig,
    b: int,
    *,
    emulator: KernelRidgeEmulator | None = None,
    sim: SimulatorDataset | None = None,
):
    """Synthetic ``(exp*, sim*)`` for replicate ``b``; ``sim*`` is None without simulator data."""
    rng = np.random.default_rng(replicate_seed(cfg.seed, b).spawn(2)[0])
    n = exp.n
    idx = rng.integers(0, n, n) if cfg.resample_design else np.arange(n)
    eps = centered_residuals(point.residuals)
    fitted = point.fitted[idx]
    y_star = fitted + eps[rng.integers(0, n, n)]
    exp_star = ExperimentalDataset(exp.inputs[idx], y_star, exp.input_names, exp.output_name)

    sim_star = None
    if sim is not None:
        if emulator is None:
            raise DataError("simulator data needs the fitted emulator to build replicates")
        m = sim.m
        jdx = rng.integers(0, m, m) if cfg.resample_design else np.arange(m)
        tau = centered_residuals(emulator.residuals_)
        y_sim = emulator.fitted_[jdx] + tau[rng.integers(0, m, m)]
        sim_star = SimulatorDataset(
            sim.inputs[jdx], sim.params[jdx], y_sim, sim.input_names, sim.param_names, sim.output_name
        )
    return exp_star, sim_star


@dataclass(frozen=True, eq=False)
class BootstrapEnsemble:
    """Replicate estimates; rows are successful replicates in index order."""

    thetas: np.ndarray
    delta_grid: np.ndarray
    reality_grid: np.ndarray
    grid: np.ndarray
    indices: np.ndarray
    seeds: np.ndarray
    failures: int
    B: int
    param_names: tuple = ()
    input_names: tuple = ()
    point_theta: np.ndarray = field(default=None, repr=False)
    point_delta: np.ndarray = field(default=None, repr=False)
    point_reality: np.ndarray = field(default=None, repr=False)

    def theta_intervals(self, alpha: float) -> list:
        return [percentile_interval(self.thetas[:, k], alpha) for k in range(self.thetas.shape[1])]

    def delta_band(self, alpha: float):
        return pointwise_band(self.delta_grid, alpha)

    def reality_band(self, alpha: float):
        return pointwise_band(self.reality_grid, alpha)

    def write_csv(self, path) -> None:
        """One row per replicate: index, theta* columns, delta* grid columns."""
        header = ["replicate"] + list(self.param_names)
        header += [f"delta_{g}" for g in range(self.grid.shape[0])]
        rows = (
            [str(int(i))] + list(t) + list(dg)
            for i, t, dg in zip(self.indices, self.thetas, self.delta_grid)
        )
        write_csv(path, header, rows)

    def summary(self, alpha: float) -> dict:
        d_lo, d_hi = self.delta_band(alpha)
        z_lo, z_hi = self.reality_band(alpha)
        cis = self.theta_intervals(alpha)
        return {
            "B": self.B,
            "failures": self.failures,
            "alpha": alpha,
            "theta": [
                {
                    "name": name,
                    "estimate": None if self.point_theta is None else float(self.point_theta[k]),
                    "lower": ci.lower,
                    "upper": ci.upper,
                    "level": ci.level,
                }
                for k, (name, ci) in enumerate(zip(self.param_names, cis))
            ],
            "grid": self.grid.tolist(),
            "delta_band": {"lower": d_lo.tolist(), "upper": d_hi.tolist()},
            "reality_band": {"lower": z_lo.tolist(), "upper": z_hi.tolist()},
        }

    def summary_json(self, alpha: float) -> str:
        return json.dumps(_round_floats(self.summary(alpha)), indent=2)


def _round_floats(obj):
    # 17 significant digits, written identically on every run
    if isinstance(obj, float):
        return float(format_float(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


@dataclass(frozen=True, eq=False)
class _Context:
    point: CalibrationResult
    exp: ExperimentalDataset
    simulator: object
    space: ParameterSpace
    cfg: BootstrapConfig
    opt_cfg: OptimizerConfig
    lam_grid: object
    grid: np.ndarray
    knot_cap: int
    sim: SimulatorDataset = None


def _one_replicate(ctx: _Context, b: int):
    ss = replicate_seed(ctx.cfg.seed, b)
    opt_seed = int(ss.spawn(2)[1].generate_state(1)[0])
    record_seed = int(ss.generate_state(1)[0])
    emulator = ctx.simulator if ctx.sim is not None else None
    exp_star, sim_star = make_replicate(ctx.point, ctx.exp, ctx.cfg, b, emulator=emulator, sim=ctx.sim)
    x_map = ctx.point.x_scaling
    bounds = np.column_stack([x_map.lower, x_map.upper])
    opt_cfg = OptimizerConfig(**{**ctx.opt_cfg.__dict__, "seed": opt_seed})
    try:
        if sim_star is not None:
            xb = emulator.x_scaling_
            sim_model = clone(emulator).set_params(input_bounds=np.column_stack([xb.lower, xb.upper]))
            sim_model.fit(sim_star.joint_inputs, sim_star.outputs)
        else:
            sim_model = ctx.simulator
        res = two_step(
            exp_star,
            sim_model,
            ctx.space,
            opt_cfg,
            ctx.lam_grid,
            input_bounds=bounds,
            knot_cap=ctx.knot_cap,
            lam_scale=ctx.cfg.undersmooth,
        )
        delta = res.discrepancy_at(ctx.grid)
        reality = np.asarray(sim_model(ctx.grid, res.theta), dtype=float) + delta
    except NumericalFailure:
        return b, record_seed, None
    if not ctx.space.contains(res.theta):
        return b, record_seed, None
    return b, record_seed, (np.array(res.theta), delta, reality)


def run_bootstrap(
    point: CalibrationResult,
    exp: ExperimentalDataset,
    simulator,
    cfg: BootstrapConfig | None = None,
    *,
    sim: SimulatorDataset | None = None,
    opt_cfg: OptimizerConfig | None = None,
    lam_grid=None,
    grid=None,
    grid_resolution: int = 101,
    knot_cap: int = KNOT_CAP,
    n_jobs: int = 1,
) -> BootstrapEnsemble:
    """Run ``cfg.B`` bootstrap replicates around ``point``.

    Parameters
    ----------
    point : CalibrationResult
        Point estimates from :func:`two_step` on ``exp``.
    simulator : callable
        The simulator used for ``point``. If ``sim`` is given it must be the
        fitted :class:`KernelRidgeEmulator`; it is refit on every replicate
        of the simulator data. Otherwise it is an exact simulator and only
        the experimental residuals are resampled.
    grid : array-like (G, p), optional
        Where to record discrepancy and reality replicates (original units);
        defaults to :func:`prediction_grid`.
    n_jobs : int
        Worker processes; 0 means one per CPU. Results do not depend on it.

    Raises
    ------
    NumericalFailure
        When more than 10% of replicates fail.
    """
    cfg = cfg or BootstrapConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    if sim is not None and not isinstance(simulator, KernelRidgeEmulator):
        raise DataError("bootstrapping simulator data requires a KernelRidgeEmulator")
    if grid is None:
        grid = prediction_grid(point.x_scaling, grid_resolution)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid.reshape(-1, 1)
    ctx = _Context(point, exp, simulator, point.space, cfg, opt_cfg, lam_grid, grid, knot_cap, sim)
    out = parallel_map(partial(_one_replicate, ctx), range(cfg.B), n_jobs)

    ok = [r for r in out if r[2] is not None]
    failures = cfg.B - len(ok)
    if failures > MAX_FAILURE_FRACTION * cfg.B:
        raise NumericalFailure(f"{failures} of {cfg.B} bootstrap replicates failed; estimates unstable")
    d = point.space.d
    thetas = np.array([r[2][0] for r in ok]).reshape(-1, d)
    G = grid.shape[0]
    delta_grid = np.array([r[2][1] for r in ok]).reshape(-1, G)
    reality_grid = np.array([r[2][2] for r in ok]).reshape(-1, G)
    point_delta = point.discrepancy_at(grid)
    point_reality = np.asarray(simulator(grid, point.theta), dtype=float) + point_delta
    return BootstrapEnsemble(
        thetas=thetas,
        delta_grid=delta_grid,
        reality_grid=reality_grid,
        grid=grid,
        indices=np.array([r[0] for r in ok], dtype=int),
        seeds=np.array([r[1] for r in out], dtype=np.uint64),
        failures=failures,
        B=cfg.B,
        param_names=point.space.names,
        input_names=exp.input_names,
        point_theta=np.array(point.theta),
        point_delta=point_delta,
        point_reality=point_reality,
    )
