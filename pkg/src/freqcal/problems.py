"""Synthetic calibration problems with known truth, and Monte Carlo studies.

Each :class:`SyntheticProblem` carries the reality ``zeta``, an exact
simulator ``eta``, the best-fitting parameter ``theta0`` under the uniform
distribution on [0, 1]^p and the discrepancy ``delta0 = zeta - eta(., theta0)``.
The study harnesses repeat the two-step fit (and optionally the bootstrap)
on fresh data and summarise errors, log-log slopes and interval coverage.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
from scipy.optimize import least_squares

from ._parallel import parallel_map
from .bootstrap import BootstrapConfig, pointwise_band, run_bootstrap, percentile_interval
from .calibrate import OptimizerConfig, two_step
from .core import (
    ExperimentalDataset,
    ParameterSpace,
    SimulatorDataset,
    write_csv,
    write_text_atomic,
)
from .exceptions import DataError, NumericalFailure

__all__ = [
    "SyntheticProblem",
    "StudyReport",
    "make_linear_problem",
    "make_nonlinear_problem",
    "quadrature_theta0",
    "population_objective",
    "design_points",
    "generate_data",
    "generate_experimental",
    "loglog_slope",
    "rate_study",
    "coverage_study",
    "DESIGNS",
]

DESIGNS = ("grid", "uniform-random", "latin-hypercube")

# least-squares minimiser of the nonlinear problem with its default bump,
# from 200-node Gauss-Legendre quadrature (400 nodes agree to 1.3e-10)
NONLINEAR_THETA0 = (1.0088918448298576, 0.9932150531278984)
NONLINEAR_BUMP = 0.05
THETA0_TOL = 1e-6

# lam_n = c * n**(-2/5) for the discrepancy rate study; c from a pilot run
RATE_LAMBDA_CONSTANT = 0.01
DEGENERATE_RMSE = 1e-6


# -- problem definitions ---------------------------------------------------


def _col(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, 0] if x.ndim == 2 else x


def _linear_reality(x, amplitude):
    x = _col(x)
    return 1.0 + 2.0 * x + amplitude * np.sin(2 * np.pi * x)


def _linear_eta(x, theta):
    x = _col(x)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        return theta[0] + theta[1] * x
    return theta[:, :1] + theta[:, 1:2] * x[None, :]


def _nonlinear_reality(x, bump):
    x = _col(x)
    return np.exp(x) + bump * x * (1.0 - x)


def _nonlinear_eta(x, theta):
    x = _col(x)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        return theta[0] * np.exp(theta[1] * x)
    return theta[:, :1] * np.exp(theta[:, 1:2] * x[None, :])


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    """Known-truth calibration problem on ``x`` in [0, 1]^p.

    ``reality`` and ``simulator`` are module-level callables (or partials of
    them) so problems can be shipped to worker processes.
    """

    name: str
    reality: object
    simulator: object
    theta0: np.ndarray
    space: ParameterSpace
    sigma: float = 0.1
    p: int = 1
    theta0_tol: float = 0.0

    def __post_init__(self):
        theta0 = np.array(self.theta0, dtype=float).ravel()
        theta0.setflags(write=False)
        object.__setattr__(self, "theta0", theta0)
        if theta0.size != self.space.d:
            raise DataError("theta0 length does not match the parameter space")
        if not self.space.contains(theta0):
            raise DataError("theta0 lies outside the parameter box")
        if not self.sigma >= 0:
            raise DataError("sigma must be >= 0")

    @property
    def d(self) -> int:
        return self.space.d

    @property
    def input_bounds(self) -> np.ndarray:
        return np.tile([0.0, 1.0], (self.p, 1))

    def discrepancy(self, x) -> np.ndarray:
        """``delta0(x) = zeta(x) - eta(x, theta0)``."""
        x = _as_matrix(x, self.p)
        return self.reality(x) - self.simulator(x, self.theta0)

    def with_sigma(self, sigma: float) -> "SyntheticProblem":
        return replace(self, sigma=float(sigma))

    def check(self, n_probe: int = 1000, seed: int = 0) -> float:
        """Largest ``|delta0 - (zeta - eta(., theta0))|`` over random probe points."""
        x = np.random.default_rng(seed).random((n_probe, self.p))
        gap = self.discrepancy(x) - (self.reality(x) - self.simulator(x, self.theta0))
        return float(np.max(np.abs(gap)))


def _as_matrix(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, p) if x.ndim < 2 else x


def make_linear_problem(amplitude: float = 1.0, sigma: float = 0.1) -> SyntheticProblem:
    """``zeta = 1 + 2x + a sin(2 pi x)``, ``eta = theta1 + theta2 x`` on [-5, 5]^2.

    Projecting the sine onto lines gives ``theta0 = (1 + 3a/pi, 2 - 6a/pi)``
    and ``delta0(x) = a (sin(2 pi x) - 3/pi + 6x/pi)``.
    """
    a = float(amplitude)
    space = ParameterSpace(("theta1", "theta2"), np.array([-5.0, -5.0]), np.array([5.0, 5.0]))
    theta0 = (1.0 + 3.0 * a / np.pi, 2.0 - 6.0 * a / np.pi)
    return SyntheticProblem(
        name="linear",
        reality=partial(_linear_reality, amplitude=a),
        simulator=_linear_eta,
        theta0=theta0,
        space=space,
        sigma=sigma,
    )


def make_nonlinear_problem(bump: float = NONLINEAR_BUMP, sigma: float = 0.1) -> SyntheticProblem:
    """``zeta = exp(x) + b x (1 - x)``, ``eta = theta1 exp(theta2 x)`` on [0.5, 2]^2.

    Without the bump ``theta0 = (1, 1)`` exactly; with the default bump the
    stored quadrature value is used, otherwise it is computed on the fly.
    """
    b = float(bump)
    space = ParameterSpace(("theta1", "theta2"), np.array([0.5, 0.5]), np.array([2.0, 2.0]))
    reality = partial(_nonlinear_reality, bump=b)
    if b == 0.0:
        theta0, tol = (1.0, 1.0), 0.0
    elif b == NONLINEAR_BUMP:
        theta0, tol = NONLINEAR_THETA0, THETA0_TOL
    else:
        theta0, tol = quadrature_theta0(reality, _nonlinear_eta, space), THETA0_TOL
    return SyntheticProblem(
        name="nonlinear",
        reality=reality,
        simulator=_nonlinear_eta,
        theta0=theta0,
        space=space,
        sigma=sigma,
        theta0_tol=tol,
    )


def _gauss_nodes(nodes: int):
    t, w = np.polynomial.legendre.leggauss(nodes)
    return (t + 1.0) / 2.0, w / 2.0


def population_objective(problem: SyntheticProblem, theta, nodes: int = 200) -> np.ndarray:
    """``int_0^1 (zeta - eta(., theta))**2 dx`` by Gauss-Legendre quadrature (p = 1)."""
    x, w = _gauss_nodes(nodes)
    X = x[:, None]
    pred = np.asarray(problem.simulator(X, np.asarray(theta, dtype=float)), dtype=float)
    return ((problem.reality(X) - pred) ** 2) @ w


def quadrature_theta0(reality, simulator, space: ParameterSpace, nodes: int = 200, start=None) -> np.ndarray:
    """Minimise the quadrature L2 misfit over the box (p = 1)."""
    x, w = _gauss_nodes(nodes)
    X = x[:, None]
    sw = np.sqrt(w)
    z = reality(X)
    start = (space.lower + space.upper) / 2 if start is None else np.asarray(start, dtype=float)
    res = least_squares(
        lambda th: sw * (z - simulator(X, th)),
        start,
        bounds=(space.lower, space.upper),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
    )
    return res.x


# -- data generation -------------------------------------------------------


def design_points(n: int, q: int, design: str, rng: np.random.Generator) -> np.ndarray:
    """``n`` points in [0, 1]^q.

    ``grid`` is the midpoint grid ``(i - 0.5)/k`` (a product grid when
    ``q > 1``, which needs ``n = k**q``); ``latin-hypercube`` puts one point
    in each of the ``n`` strata of every coordinate, using an independent
    random permutation per coordinate and a uniform position within each
    stratum.
    """
    if design == "grid":
        k = int(round(n ** (1.0 / q)))
        if k**q != n:
            raise DataError(f"grid design in {q} dimensions needs a perfect power, got n={n}")
        axis = (np.arange(k) + 0.5) / k
        mesh = np.meshgrid(*([axis] * q), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])
    if design == "uniform-random":
        return rng.random((n, q))
    if design == "latin-hypercube":
        strata = np.column_stack([rng.permutation(n) for _ in range(q)])
        return (strata + rng.random((n, q))) / n
    raise DataError(f"unknown design scheme {design!r}; choose from {', '.join(DESIGNS)}")


def generate_experimental(
    problem: SyntheticProblem, n: int, seed, design: str = "grid"
) -> ExperimentalDataset:
    """``y_i = zeta(x_i) + eps_i`` with Gaussian noise of sd ``problem.sigma``."""
    if n < 4:
        raise DataError("need n >= 4 experimental points")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    design_ss, noise_ss = ss.spawn(2)
    x = design_points(n, problem.p, design, np.random.default_rng(design_ss))
    y = problem.reality(x)
    if problem.sigma > 0:
        y = y + problem.sigma * np.random.default_rng(noise_ss).standard_normal(n)
    return ExperimentalDataset(x, y)


def generate_data(
    problem: SyntheticProblem,
    n: int,
    m: int,
    seed: int,
    design: str = "grid",
    tau: float = 0.0,
):
    """Experimental and simulator datasets for ``problem``.

    The simulator design covers [0, 1]^p times the parameter box with the
    same scheme; outputs are exact unless ``tau > 0`` adds Gaussian jitter.
    A pure function of its arguments.
    """
    q = problem.p + problem.d
    if m < q + 1:
        raise DataError(f"need m >= p + d + 1 = {q + 1} simulator runs, got {m}")
    if design not in DESIGNS:
        raise DataError(f"unknown design scheme {design!r}; choose from {', '.join(DESIGNS)}")
    exp_ss, sim_ss, jitter_ss = np.random.SeedSequence(seed).spawn(3)
    exp = generate_experimental(problem, n, exp_ss, design)
    U = design_points(m, q, design, np.random.default_rng(sim_ss))
    xs = U[:, : problem.p]
    thetas = problem.space.from_unit(U[:, problem.p :])
    ys = np.array([problem.simulator(xs[j : j + 1], thetas[j])[0] for j in range(m)])
    if tau > 0:
        ys = ys + tau * np.random.default_rng(jitter_ss).standard_normal(m)
    return exp, SimulatorDataset(xs, thetas, ys)


# -- study reports ---------------------------------------------------------


def loglog_slope(sizes, rmse, rmse_se=None):
    """OLS slope of ``log rmse`` on ``log n`` and its standard error.

    The error propagates the Monte Carlo standard errors of the RMSEs, so
    it shrinks as replicates are added. Returns ``(nan, nan)`` when every
    RMSE is below 1e-6, where the slope carries no information.
    """
    n = np.asarray(sizes, dtype=float)
    r = np.asarray(rmse, dtype=float)
    if np.max(r) < DEGENERATE_RMSE or np.any(r <= 0):
        return float("nan"), float("nan")
    lx = np.log(n) - np.log(n).mean()
    a = lx / (lx @ lx)
    slope = float(a @ np.log(r))
    if rmse_se is None:
        return slope, float("nan")
    se_log = np.asarray(rmse_se, dtype=float) / r
    return slope, float(np.sqrt(np.sum(a**2 * se_log**2)))


def _rmse_with_se(sq_errors):
    """RMSE over replicates and its delta-method Monte Carlo standard error."""
    sq = np.asarray(sq_errors, dtype=float)
    mse = sq.mean()
    rmse = math.sqrt(mse)
    se_mse = sq.std(ddof=1) / math.sqrt(sq.size) if sq.size > 1 else 0.0
    return rmse, (se_mse / (2 * rmse) if rmse > 0 else 0.0)


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.floating):
        return _clean(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


@dataclass(frozen=True, eq=False)
class StudyReport:
    """Result of :func:`rate_study` or :func:`coverage_study`.

    Rate studies fill the per-size RMSE arrays and slopes; coverage studies
    fill ``coverage`` (per level ``alpha``, one fraction per parameter),
    ``band_coverage`` and ``mean_width``. ``windows`` maps a quantity name
    to an acceptance interval used by :meth:`passes`.
    """

    kind: str
    problem: str
    sizes: np.ndarray
    replicates: int
    seed: int
    wall_clock: float
    sigma: float
    rmse_theta: np.ndarray = None
    rmse_theta_se: np.ndarray = None
    rmse_delta: np.ndarray = None
    rmse_delta_se: np.ndarray = None
    slope_theta: float = float("nan")
    slope_theta_se: float = float("nan")
    slope_delta: float = float("nan")
    slope_delta_se: float = float("nan")
    coverage: dict = field(default_factory=dict)
    band_coverage: dict = field(default_factory=dict)
    mean_width: dict = field(default_factory=dict)
    B: int = 0
    failures: int = 0
    param_names: tuple = ()
    windows: dict = field(default_factory=dict)

    def values(self) -> dict:
        """Scalar quantities that windows can refer to."""
        out = {"slope_theta": self.slope_theta, "slope_delta": self.slope_delta}
        for alpha, cov in self.coverage.items():
            for name, c in zip(self.param_names, cov):
                out[f"coverage_{name}@{alpha:g}"] = float(c)
        for alpha, c in self.band_coverage.items():
            out[f"band_coverage@{alpha:g}"] = float(c)
        return out

    def passes(self) -> dict:
        vals = self.values()
        return {
            key: bool(key in vals and lo <= vals[key] <= hi)
            for key, (lo, hi) in self.windows.items()
        }

    def to_dict(self, timing: bool = True) -> dict:
        """Plain-data summary; ``timing=False`` drops the wall-clock entry."""
        d = {
            "kind": self.kind,
            "problem": self.problem,
            "sizes": self.sizes,
            "replicates": self.replicates,
            "seed": self.seed,
            "sigma": self.sigma,
            "wall_clock_seconds": self.wall_clock,
            "failures": self.failures,
        }
        if not timing:
            del d["wall_clock_seconds"]
        if self.kind == "rate":
            d.update(
                rmse_theta=self.rmse_theta,
                rmse_theta_se=self.rmse_theta_se,
                rmse_delta=self.rmse_delta,
                rmse_delta_se=self.rmse_delta_se,
                slope_theta={"estimate": self.slope_theta, "se": self.slope_theta_se},
                slope_delta={"estimate": self.slope_delta, "se": self.slope_delta_se},
            )
        else:
            d.update(
                B=self.B,
                coverage={
                    f"{a:g}": dict(zip(self.param_names, cov)) for a, cov in self.coverage.items()
                },
                band_coverage={f"{a:g}": c for a, c in self.band_coverage.items()},
                mean_width={
                    f"{a:g}": dict(zip(self.param_names, w)) for a, w in self.mean_width.items()
                },
            )
        if self.windows:
            d["windows"] = {k: list(v) for k, v in self.windows.items()}
            d["pass"] = self.passes()
        return _clean(d)

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2)

    def write_json(self, path, timing: bool = True) -> None:
        write_text_atomic(path, self.to_json(timing) + "\n")

    def write_csv(self, path) -> None:
        def cell(v):
            return "nan" if not math.isfinite(v) else v

        if self.kind == "rate":
            header = ["n", "rmse_theta", "rmse_theta_se", "rmse_delta", "rmse_delta_se"]
            rows = [
                [str(int(n)), cell(a), cell(b), cell(c), cell(e)]
                for n, a, b, c, e in zip(
                    self.sizes, self.rmse_theta, self.rmse_theta_se, self.rmse_delta, self.rmse_delta_se
                )
            ]
        else:
            header = ["n", "alpha", "quantity", "coverage", "mean_width"]
            rows = []
            for alpha, cov in self.coverage.items():
                widths = self.mean_width[alpha]
                for name, c, w in zip(self.param_names, cov, widths):
                    rows.append([str(int(self.sizes[0])), alpha, name, float(c), float(w)])
                rows.append([str(int(self.sizes[0])), alpha, "delta_band", self.band_coverage[alpha], "nan"])
        write_csv(path, header, rows)


# -- rate study ------------------------------------------------------------


def _study_seed(seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def _optimizer_for(base: OptimizerConfig, ss: np.random.SeedSequence) -> OptimizerConfig:
    return replace(base, seed=int(ss.generate_state(1)[0]))


def _rate_replicate(problem, opt_cfg, lam_constant, knot_cap, seed, job):
    i, n, r = job
    data_ss, opt_ss = _study_seed(seed, i, r).spawn(2)
    exp = generate_experimental(problem, n, data_ss, "grid")
    lam = None if lam_constant is None else [lam_constant * n ** (-0.4)]
    res = two_step(
        exp,
        problem.simulator,
        problem.space,
        _optimizer_for(opt_cfg, opt_ss),
        lam,
        input_bounds=problem.input_bounds,
        knot_cap=knot_cap,
    )
    err_theta = float(np.sum((res.theta - problem.theta0) ** 2))
    gap = res.discrepancy_values - problem.discrepancy(exp.inputs)
    err_delta = float(np.mean(gap**2))
    return err_theta, err_delta


def rate_study(
    problem: SyntheticProblem,
    sizes=(100, 200, 400, 800, 1600, 3200),
    replicates: int = 100,
    cfg: OptimizerConfig | None = None,
    *,
    seed: int = 0,
    lambda_constant: float | None = RATE_LAMBDA_CONSTANT,
    knot_cap: int = 200,
    n_jobs: int = 1,
    windows: dict | None = None,
) -> StudyReport:
    """Convergence rates of the two-step estimates on the midpoint grid.

    For each ``n`` the exact simulator is calibrated on ``replicates`` fresh
    datasets; the discrepancy uses ``lam_n = lambda_constant * n**(-2/5)``
    (``None`` selects by GCV instead). Reports the RMSE of ``||theta_hat -
    theta0||`` and of the empirical norm ``||delta_hat - delta0||_n`` with
    their log-log slopes. Replicate ``r`` at size index ``i`` is seeded by
    ``(seed, i, r)``, so adding replicates keeps earlier ones unchanged.
    """
    sizes = np.asarray(sizes, dtype=int)
    if sizes.size < 2 or np.any(np.diff(sizes) <= 0):
        raise DataError("sizes must be strictly ascending with at least two entries")
    if replicates < 10:
        raise DataError("rate study needs at least 10 replicates per size")
    opt_cfg = cfg or OptimizerConfig()
    start = time.perf_counter()
    jobs = [(i, int(n), r) for i, n in enumerate(sizes) for r in range(replicates)]
    fn = partial(_rate_replicate, problem, opt_cfg, lambda_constant, knot_cap, seed)
    out = np.array(parallel_map(fn, jobs, n_jobs)).reshape(sizes.size, replicates, 2)
    rt = np.array([_rmse_with_se(out[i, :, 0]) for i in range(sizes.size)])
    rd = np.array([_rmse_with_se(out[i, :, 1]) for i in range(sizes.size)])
    st, st_se = loglog_slope(sizes, rt[:, 0], rt[:, 1])
    sd, sd_se = loglog_slope(sizes, rd[:, 0], rd[:, 1])
    return StudyReport(
        kind="rate",
        problem=problem.name,
        sizes=sizes,
        replicates=replicates,
        seed=seed,
        wall_clock=time.perf_counter() - start,
        sigma=problem.sigma,
        rmse_theta=rt[:, 0],
        rmse_theta_se=rt[:, 1],
        rmse_delta=rd[:, 0],
        rmse_delta_se=rd[:, 1],
        slope_theta=st,
        slope_theta_se=st_se,
        slope_delta=sd,
        slope_delta_se=sd_se,
        param_names=problem.space.names,
        windows=dict(windows or {}),
    )


# -- coverage study --------------------------------------------------------


def _coverage_replicate(problem, n, boot_cfg, opt_cfg, levels, grid, cover_tol, seed, k):
    data_ss, opt_ss, boot_ss = _study_seed(seed, k).spawn(3)
    exp = generate_experimental(problem, n, data_ss, "grid")
    try:
        point = two_step(
            exp,
            problem.simulator,
            problem.space,
            _optimizer_for(opt_cfg, opt_ss),
            input_bounds=problem.input_bounds,
        )
        cfg = replace(boot_cfg, seed=int(boot_ss.generate_state(1)[0]))
        ens = run_bootstrap(
            point, exp, problem.simulator, cfg, opt_cfg=opt_cfg, grid=grid, n_jobs=1
        )
    except NumericalFailure:
        return None
    delta0 = problem.discrepancy(grid)
    rows = []
    for alpha in levels:
        covered, widths = [], []
        for j in range(problem.d):
            ci = percentile_interval(ens.thetas[:, j], alpha)
            t0 = problem.theta0[j]
            covered.append(ci.lower - cover_tol <= t0 <= ci.upper + cover_tol)
            widths.append(ci.width)
        lo, hi = pointwise_band(ens.delta_grid, alpha)
        band = float(np.mean((lo - cover_tol <= delta0) & (delta0 <= hi + cover_tol)))
        rows.append((covered, widths, band))
    return rows


def coverage_study(
    problem: SyntheticProblem,
    n: int = 200,
    B: int = 500,
    M: int = 200,
    cfg: OptimizerConfig | None = None,
    *,
    seed: int = 0,
    levels=(0.05,),
    undersmooth: float = 1.0,
    resample_design: bool = False,
    grid_resolution: int = 100,
    cover_tol: float = 1e-6,
    n_jobs: int = 1,
    windows: dict | None = None,
) -> StudyReport:
    """Empirical coverage of bootstrap percentile intervals.

    Draws ``M`` datasets of size ``n`` on the midpoint grid, runs the
    two-step fit with the exact simulator and a ``B``-replicate bootstrap on
    each, and records how often each interval contains ``theta0``. All
    levels in ``levels`` are read from the same ensembles. Band coverage is
    the average fraction of the ``grid_resolution`` cell midpoints of [0, 1]
    at which the pointwise band contains ``delta0``. Intervals are widened
    by ``cover_tol`` on each side to absorb optimizer resolution when they
    collapse to a point.
    """
    if M < 50:
        raise DataError("coverage study needs M >= 50 outer replicates")
    if problem.p != 1:
        raise DataError("coverage study supports one input dimension")
    levels = tuple(float(a) for a in levels)
    boot_cfg = BootstrapConfig(B=B, alpha=levels[0], resample_design=resample_design, undersmooth=undersmooth)
    opt_cfg = cfg or OptimizerConfig()
    grid = ((np.arange(grid_resolution) + 0.5) / grid_resolution)[:, None]
    start = time.perf_counter()
    fn = partial(_coverage_replicate, problem, n, boot_cfg, opt_cfg, levels, grid, cover_tol, seed)
    out = parallel_map(fn, range(M), n_jobs)
    ok = [r for r in out if r is not None]
    failures = M - len(ok)
    if not ok:
        raise NumericalFailure("every outer replicate of the coverage study failed")
    coverage, band, widths = {}, {}, {}
    for li, alpha in enumerate(levels):
        coverage[alpha] = np.mean([r[li][0] for r in ok], axis=0)
        widths[alpha] = np.mean([r[li][1] for r in ok], axis=0)
        band[alpha] = float(np.mean([r[li][2] for r in ok]))
    return StudyReport(
        kind="coverage",
        problem=problem.name,
        sizes=np.array([n]),
        replicates=M,
        seed=seed,
        wall_clock=time.perf_counter() - start,
        sigma=problem.sigma,
        coverage=coverage,
        band_coverage=band,
        mean_width=widths,
        B=B,
        failures=failures,
        param_names=problem.space.names,
        windows=dict(windows or {}),
    )
