"""Two-step calibration: global minimisation of the empirical L2 misfit,
then a nonparametric fit of the discrepancy to the residuals.

Simulators follow one calling convention throughout the package::

    eta(x, theta) -> array

with ``x`` of shape (n, p) in original units and ``theta`` either of shape
(d,) (returns (n,)) or (k, d) (returns (k, n)). Fitted
:class:`~freqcal.emulator.KernelRidgeEmulator` objects obey it, and
:func:`vectorize_simulator` adapts a function that only handles one
``theta`` at a time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import ExperimentalDataset, ParameterSpace, ScalingMap
from .exceptions import ClippedInputWarning, DataError, NumericalFailure
from .nonparam import KNOT_CAP, AdditiveModel, fit_additive

__all__ = [
    "Objective",
    "OptimizerConfig",
    "OptimizeResult",
    "CalibrationResult",
    "TwoStepCalibrator",
    "objective_eval",
    "minimize",
    "two_step",
    "predict_reality",
    "vectorize_simulator",
]


def vectorize_simulator(fn):
    """Wrap ``fn(x, theta_1d) -> (n,)`` to accept a batch of thetas."""

    def eta(x, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            return np.asarray(fn(x, theta), dtype=float)
        return np.stack([np.asarray(fn(x, t), dtype=float) for t in theta])

    eta.__wrapped__ = fn
    return eta


class Objective:
    """Weighted empirical misfit ``M_n(theta) = (1/n) sum w_i (y_i - eta(x_i, theta))**2``.

    Weights are rescaled to mean one; the default is uniform.
    """

    def __init__(self, x, y, simulator, space: ParameterSpace, weights=None):
        x = np.asarray(x, dtype=float)
        self.x = x.reshape(-1, 1) if x.ndim == 1 else x
        self.y = np.asarray(y, dtype=float).ravel()
        if self.x.shape[0] != self.y.size:
            raise DataError("x and y row counts differ")
        self.simulator = simulator
        self.space = space
        if weights is None:
            self.weights = None
        else:
            w = np.asarray(weights, dtype=float).ravel()
            if w.size != self.y.size:
                raise DataError(f"need {self.y.size} weights, got {w.size}")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise DataError("weights must be positive and finite")
            self.weights = w / w.mean()

    @property
    def n(self) -> int:
        return self.y.size

    def residuals(self, theta) -> np.ndarray:
        return self.y - np.asarray(self.simulator(self.x, np.asarray(theta, dtype=float)))

    def batch(self, thetas) -> np.ndarray:
        """Objective at each row of ``thetas`` (original units); no box check."""
        pred = np.asarray(self.simulator(self.x, np.atleast_2d(thetas)), dtype=float)
        r2 = (self.y[None, :] - pred) ** 2
        if self.weights is not None:
            r2 = r2 * self.weights[None, :]
        # summing in sorted order makes the value independent of row order
        return np.sort(r2, axis=1).sum(axis=1) / self.n

    def __call__(self, theta) -> float:
        return objective_eval(self, theta)


def objective_eval(obj: Objective, theta) -> float:
    """``M_n(theta)``; raises :class:`DataError` outside the parameter box."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != obj.space.d:
        raise DataError(f"theta must have {obj.space.d} components")
    if not obj.space.contains(theta):
        raise DataError(f"theta {theta.tolist()} outside the parameter space")
    return float(obj.batch(theta[None, :])[0])


@dataclass(frozen=True)
class OptimizerConfig:
    """Differential evolution (rand/1/bin) settings.

    ``popsize=None`` means ``max(20, 10 d)``. The run stops when the best
    value has improved by less than ``stall_tol`` over the last
    ``stall_generations`` generations, or after ``max_generations``.
    """

    popsize: int = None
    mutation: float = 0.8
    crossover: float = 0.9
    max_generations: int = 500
    stall_generations: int = 50
    stall_tol: float = 1e-12
    seed: int = 0
    polish: bool = True

    def __post_init__(self):
        if self.popsize is not None and self.popsize < 4:
            raise DataError("population size must be at least 4")
        if not 0 < self.mutation < 2:
            raise DataError("mutation factor F must lie in (0, 2)")
        if not 0 <= self.crossover <= 1:
            raise DataError("crossover rate CR must lie in [0, 1]")
        if self.max_generations < 1 or self.stall_generations < 1:
            raise DataError("generation limits must be positive")

    def population(self, d: int) -> int:
        return self.popsize if self.popsize is not None else max(20, 10 * d)


@dataclass(frozen=True)
class OptimizeResult:
    theta: np.ndarray
    fun: float
    trace: np.ndarray
    generations: int
    nfev: int
    stalled: bool
    polished: bool
    de_theta: np.ndarray
    de_fun: float


def _reflect(u: np.ndarray) -> np.ndarray:
    # fold onto [0, 1] with period 2, so any overshoot lands inside
    u = np.mod(u, 2.0)
    return np.where(u > 1.0, 2.0 - u, u)


def _checked(values, units, space) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        theta = space.from_unit(units[bad])
        raise NumericalFailure(f"objective is not finite at theta={theta.tolist()}")
    return values


def minimize(obj: Objective, space: ParameterSpace, cfg: OptimizerConfig | None = None) -> OptimizeResult:
    """Minimise ``obj`` over the parameter box.

    Differential evolution runs in the unit box with reflection at the
    faces; the optional Nelder-Mead polish starts from the DE best and is
    clipped to the box. Deterministic for a fixed ``cfg.seed``.
    """
    cfg = cfg or OptimizerConfig()
    d = space.d
    NP = cfg.population(d)
    rng = np.random.default_rng(cfg.seed)

    def f_unit(U):
        return _checked(obj.batch(space.from_unit(U)), U, space)

    pop = rng.random((NP, d))
    fit = f_unit(pop)
    nfev = NP
    best = int(np.argmin(fit))
    trace = [fit[best]]
    stalled = False
    gen = 0
    not_self = ~np.eye(NP, dtype=bool)
    for gen in range(1, cfg.max_generations + 1):
        keys = rng.random((NP, NP))
        keys[~not_self] = 2.0
        r = np.argsort(keys, axis=1)[:, :3]
        mutant = pop[r[:, 0]] + cfg.mutation * (pop[r[:, 1]] - pop[r[:, 2]])
        cross = rng.random((NP, d)) < cfg.crossover
        cross[np.arange(NP), rng.integers(0, d, NP)] = True
        trial = _reflect(np.where(cross, mutant, pop))
        f_trial = f_unit(trial)
        nfev += NP
        better = f_trial <= fit
        pop[better] = trial[better]
        fit[better] = f_trial[better]
        best = int(np.argmin(fit))
        trace.append(fit[best])
        if gen >= cfg.stall_generations and trace[-1 - cfg.stall_generations] - trace[-1] < cfg.stall_tol:
            stalled = True
            break

    de_u, de_f = pop[best].copy(), float(fit[best])
    u, fun, polished = de_u, de_f, False
    if cfg.polish:
        res = _scipy_minimize(
            lambda v: float(f_unit(np.clip(v, 0.0, 1.0)[None, :])[0]),
            de_u,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * d,
            options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 400 * d, "maxfev": 800 * d},
        )
        nfev += res.nfev
        cand = np.clip(res.x, 0.0, 1.0)
        f_cand = float(f_unit(cand[None, :])[0])
        if f_cand < de_f:
            u, fun, polished = cand, f_cand, True
    theta = np.clip(space.from_unit(u), space.lower, space.upper)
    return OptimizeResult(
        theta=theta,
        fun=fun,
        trace=np.asarray(trace),
        generations=gen,
        nfev=nfev,
        stalled=stalled,
        polished=polished,
        de_theta=space.from_unit(de_u),
        de_fun=de_f,
    )


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Output of :func:`two_step`.

    ``residuals`` are ``y - eta(x, theta) - delta(x)`` on the experimental
    design; ``x_scaling`` carries original inputs onto the unit box used by
    the discrepancy model.
    """

    theta: np.ndarray
    objective: float
    discrepancy: AdditiveModel
    lam: float
    residuals: np.ndarray
    x_scaling: ScalingMap
    space: ParameterSpace
    optimizer: OptimizeResult = field(repr=False)
    simulator_values: np.ndarray = field(default=None, repr=False)
    discrepancy_values: np.ndarray = field(default=None, repr=False)

    @property
    def fitted(self) -> np.ndarray:
        return self.simulator_values + self.discrepancy_values

    def discrepancy_at(self, x) -> np.ndarray:
        u, clipped = self.x_scaling.transform(_as_matrix(x))
        if clipped.any():
            warnings.warn("inputs outside bounds were clipped", ClippedInputWarning, stacklevel=2)
        return self.discrepancy.predict(u)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def two_step(
    exp: ExperimentalDataset,
    simulator,
    space: ParameterSpace,
    opt_cfg: OptimizerConfig | None = None,
    lam_grid=None,
    *,
    input_bounds=None,
    weights=None,
    knot_cap: int = KNOT_CAP,
    lam_scale: float = 1.0,
) -> CalibrationResult:
    """Estimate ``theta`` by minimising ``M_n``, then smooth the residuals.

    Parameters
    ----------
    exp : ExperimentalDataset
    simulator : callable
        Exact simulator or fitted emulator, held fixed throughout.
    space : ParameterSpace
    opt_cfg : OptimizerConfig, optional
    lam_grid : array-like, optional
        Smoothing grid for the discrepancy; a single value fixes ``lam``.
    input_bounds : array-like (p, 2), optional
        Bounds for scaling ``x`` onto [0, 1]. Defaults to the emulator's
        input scaling if it has one, else to the experimental min/max.
        Values outside are clipped with a warning.
    weights : array-like, optional
        Positive observation weights for ``M_n``.
    lam_scale : float
        Multiplier on the selected smoothing parameter.
    """
    exp.check()
    X = exp.inputs
    if input_bounds is not None:
        b = np.asarray(input_bounds, dtype=float).reshape(-1, 2)
        x_map = ScalingMap.from_bounds(b[:, 0], b[:, 1])
    elif getattr(simulator, "x_scaling_", None) is not None:
        x_map = simulator.x_scaling_
    else:
        x_map = ScalingMap.from_bounds(X.min(axis=0), X.max(axis=0))
    if x_map.offset.size != exp.p:
        raise DataError(f"input scaling has {x_map.offset.size} dimensions, data has {exp.p}")
    U, clipped = x_map.transform(X)
    if clipped.any():
        warnings.warn(
            f"{int(clipped.any(axis=1).sum())} experimental row(s) outside the input bounds were clipped",
            ClippedInputWarning,
            stacklevel=2,
        )

    obj = Objective(X, exp.outputs, simulator, space, weights)
    opt = minimize(obj, space, opt_cfg)
    theta = opt.theta
    eta_hat = np.asarray(simulator(X, theta), dtype=float)
    partial = exp.outputs - eta_hat
    delta = fit_additive(U, partial, lam_grid, knot_cap=knot_cap, lam_scale=lam_scale)
    delta_values = exp.outputs - eta_hat - delta.residuals
    theta.setflags(write=False)
    result = CalibrationResult(
        theta=theta,
        objective=opt.fun,
        discrepancy=delta,
        lam=delta.lam,
        residuals=delta.residuals,
        x_scaling=x_map,
        space=space,
        optimizer=opt,
        simulator_values=eta_hat,
        discrepancy_values=delta_values,
    )
    return result


def predict_reality(result: CalibrationResult, simulator, x_new) -> np.ndarray:
    """``eta(x_new, theta_hat) + delta_hat(x_new)`` for rows of ``x_new`` (original units)."""
    x = _as_matrix(x_new)
    return np.asarray(simulator(x, result.theta), dtype=float) + result.discrepancy_at(x)


class TwoStepCalibrator(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`two_step`.

    ``fit(X, y)`` takes the experimental inputs and outputs; ``predict``
    returns the reality prediction ``eta(x, theta_hat) + delta_hat(x)``.

    Parameters
    ----------
    simulator : callable
    parameter_space : ParameterSpace
    optimizer : OptimizerConfig, optional
    lam_grid : array-like, optional
    input_bounds : array-like, optional
    knot_cap : int, default=200
    lam_scale : float, default=1.0
    """

    def __init__(
        self,
        simulator=None,
        parameter_space=None,
        optimizer=None,
        lam_grid=None,
        input_bounds=None,
        knot_cap=KNOT_CAP,
        lam_scale=1.0,
    ):
        self.simulator = simulator
        self.parameter_space = parameter_space
        self.optimizer = optimizer
        self.lam_grid = lam_grid
        self.input_bounds = input_bounds
        self.knot_cap = knot_cap
        self.lam_scale = lam_scale

    def fit(self, X, y, sample_weight=None):
        if self.simulator is None or self.parameter_space is None:
            raise DataError("TwoStepCalibrator needs a simulator and a parameter_space")
        exp = ExperimentalDataset(X, y)
        self.result_ = two_step(
            exp,
            self.simulator,
            self.parameter_space,
            self.optimizer,
            self.lam_grid,
            input_bounds=self.input_bounds,
            weights=sample_weight,
            knot_cap=self.knot_cap,
            lam_scale=self.lam_scale,
        )
        self.theta_ = self.result_.theta
        self.discrepancy_ = self.result_.discrepancy
        self.n_features_in_ = exp.p
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return predict_reality(self.result_, self.simulator, X)

    def predict_discrepancy(self, X):
        check_is_fitted(self, "result_")
        return self.result_.discrepancy_at(X)

