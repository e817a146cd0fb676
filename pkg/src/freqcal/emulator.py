"""Kernel ridge surrogate for the simulator on the joint (x, theta) box.

The emulator is a penalized least-squares fit

    y' ~ P beta + K c,   penalty  m * alpha * c' K c,

with an unpenalized linear trend ``P = [1, u]`` in the scaled joint input
``u`` and an anisotropic squared-exponential kernel ``K``. The trend makes
constant and linear simulators exact; ``alpha = 0`` interpolates.

Everything is computed from one eigendecomposition of the kernel projected
onto the orthogonal complement of the trend, so fits over a grid of
``alpha`` values and the closed-form leave-one-out residuals are cheap.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, qr
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import ClippedInputWarning, ParameterSpace, ScalingMap, SimulatorDataset, write_text_atomic
from .exceptions import DataError, NumericalFailure

__all__ = [
    "DEFAULT_ALPHA_GRID",
    "KernelConfig",
    "KernelRidgeEmulator",
    "fit_emulator",
    "emulator_predict",
    "loocv_rmse",
    "median_lengthscales",
    "se_kernel",
]

DEFAULT_ALPHA_GRID = np.logspace(-10, 0, 11)
_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)
_LEVERAGE_TOL = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    """Kernel hyperparameters.

    ``lengthscales=None`` means the per-dimension median heuristic and
    ``alpha=None`` means LOOCV selection over ``alpha_grid``.
    """

    lengthscales: tuple = None
    alpha: float = None
    alpha_grid: tuple = tuple(DEFAULT_ALPHA_GRID)

    def __post_init__(self):
        if self.lengthscales is not None:
            ls = tuple(float(v) for v in self.lengthscales)
            if any(not np.isfinite(v) or v <= 0 for v in ls):
                raise DataError("lengthscales must be positive and finite")
            object.__setattr__(self, "lengthscales", ls)
        if self.alpha is not None and not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise DataError("alpha must be finite and >= 0")
        grid = tuple(float(v) for v in self.alpha_grid)
        if not grid or any(not np.isfinite(v) or v < 0 for v in grid):
            raise DataError("alpha_grid must be a non-empty list of values >= 0")
        object.__setattr__(self, "alpha_grid", grid)


def se_kernel(U, V, lengthscales) -> np.ndarray:
    """``exp(-sum_j (u_j - v_j)**2 / (2 l_j**2))`` for all row pairs."""
    ls = np.asarray(lengthscales, dtype=float)
    A = np.asarray(U, dtype=float) / ls
    B = np.asarray(V, dtype=float) / ls
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-0.5 * sq)


def median_lengthscales(U, fallback: float = 0.3) -> np.ndarray:
    """Median absolute pairwise difference per column (``fallback`` if zero)."""
    U = np.asarray(U, dtype=float)
    out = np.empty(U.shape[1])
    for j in range(U.shape[1]):
        med = float(np.median(pdist(U[:, [j]], "cityblock"))) if U.shape[0] > 1 else 0.0
        out[j] = med if med > 0 else fallback
    return out


def _trend(U) -> np.ndarray:
    return np.column_stack([np.ones(U.shape[0]), U])


@dataclass(frozen=True, eq=False)
class _Spectral:
    """Eigen-system of the trend-projected kernel, shared across alphas."""

    vectors: np.ndarray  # A = Q2 V, (m, m - q)
    values: np.ndarray
    z: np.ndarray  # A' y
    trend: np.ndarray
    gram: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, U, y, lengthscales):
        P = _trend(U)
        m, q = P.shape
        K = se_kernel(U, U, lengthscales)
        Q, R = qr(P, mode="full")
        if np.min(np.abs(np.diag(R))) < 1e-12 * max(1.0, np.abs(R).max()):
            raise DataError("simulator design is degenerate: the linear trend is not identifiable")
        Q2 = Q[:, q:]
        W = Q2.T @ K @ Q2
        vals, vecs = eigh((W + W.T) / 2)
        A = Q2 @ vecs
        return cls(A, vals, A.T @ y, P, K)

    def ridge(self, alpha: float, m: int):
        """Effective ridge (m*alpha plus any jitter) for a positive-definite solve."""
        base = m * alpha
        top = max(float(self.values.max()), 1.0)
        for jitter in _JITTERS:
            lam = self.values + base + jitter
            if lam.min() > 1e-13 * top:
                return base + jitter, jitter
        raise NumericalFailure(
            f"kernel Gram matrix not positive definite after jitter {_JITTERS[-1]:g}"
        )

    def solve(self, y, alpha: float):
        m = y.size
        ridge, jitter = self.ridge(alpha, m)
        w = 1.0 / (np.maximum(self.values, 0.0) + ridge)
        c = self.vectors @ (w * self.z)
        beta, *_ = np.linalg.lstsq(self.trend, y - self.gram @ c, rcond=None)
        return c, beta, w, ridge, jitter

    def loo(self, alpha: float, m: int):
        """Residuals, leverages ``1 - S_jj`` and LOO residuals at ``alpha``."""
        ridge, _ = self.ridge(alpha, m)
        w = 1.0 / (np.maximum(self.values, 0.0) + ridge)
        if alpha == 0.0:
            one_minus = np.zeros(m)
            resid = np.zeros(m)
        else:
            resid = m * alpha * (self.vectors @ (w * self.z))
            one_minus = m * alpha * ((self.vectors**2) @ w)
        with np.errstate(divide="ignore", invalid="ignore"):
            loo = resid / one_minus
        return resid, one_minus, loo


def _loocv_from(one_minus, loo) -> float:
    if np.any(one_minus <= _LEVERAGE_TOL):
        return float("nan")
    return float(np.sqrt(np.mean(loo**2)))


class KernelRidgeEmulator(RegressorMixin, BaseEstimator):
    """Squared-exponential kernel ridge emulator with a linear trend.

    Parameters
    ----------
    parameter_space : ParameterSpace
        Box for the calibration parameters; the last ``d`` columns of ``X``.
        Simulator parameter settings must lie inside it.
    input_bounds : array-like of shape (p, 2), optional
        Bounds used to scale the control inputs. Defaults to the min/max of
        the simulator inputs seen in ``fit``.
    lengthscales, alpha, alpha_grid
        See :class:`KernelConfig`.

    Attributes
    ----------
    X_train_ : ndarray (m, p + d)
        Scaled joint training inputs.
    dual_coef_, trend_coef_ : ndarray
    alpha_ : float
    lengthscales_ : ndarray
    train_rmse_, loocv_rmse_ : float
        ``loocv_rmse_`` is NaN when some leverage is (numerically) one,
        always the case for ``alpha = 0``.
    """

    def __init__(
        self,
        parameter_space=None,
        input_bounds=None,
        lengthscales=None,
        alpha=None,
        alpha_grid=tuple(DEFAULT_ALPHA_GRID),
    ):
        self.parameter_space = parameter_space
        self.input_bounds = input_bounds
        self.lengthscales = lengthscales
        self.alpha = alpha
        self.alpha_grid = alpha_grid

    # -- fitting ---------------------------------------------------------

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        space = self.parameter_space
        if not isinstance(space, ParameterSpace):
            raise DataError("KernelRidgeEmulator needs a ParameterSpace")
        d = space.d
        if X.ndim != 2 or X.shape[1] <= d:
            raise DataError(f"X must have p >= 1 input columns followed by {d} parameter columns")
        m, pd = X.shape
        p = pd - d
        if y.size != m:
            raise DataError(f"X has {m} rows but y has {y.size}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("simulator data must be finite")
        if m < pd + 1:
            raise DataError(f"insufficient simulator rows: need at least p + d + 1 = {pd + 1}, got {m}")
        theta = X[:, p:]
        if not space.contains(theta.min(axis=0)) or not space.contains(theta.max(axis=0)):
            raise DataError("simulator parameter settings fall outside the parameter space")
        cfg = KernelConfig(self.lengthscales, self.alpha, tuple(self.alpha_grid))

        if self.input_bounds is None:
            lo, hi = X[:, :p].min(axis=0), X[:, :p].max(axis=0)
            if np.any(lo >= hi):
                raise DataError("simulator inputs are constant in some dimension; give input_bounds")
            x_map = ScalingMap.from_bounds(lo, hi)
        else:
            b = np.asarray(self.input_bounds, dtype=float).reshape(-1, 2)
            if b.shape[0] != p:
                raise DataError(f"input_bounds has {b.shape[0]} rows for {p} inputs")
            x_map = ScalingMap.from_bounds(b[:, 0], b[:, 1])
        ux, clipped = x_map.transform(X[:, :p])
        if clipped.any():
            warnings.warn("simulator inputs outside input_bounds were clipped", ClippedInputWarning)
        U = np.hstack([ux, space.to_unit(theta)])

        ls = (
            median_lengthscales(U)
            if cfg.lengthscales is None
            else np.asarray(cfg.lengthscales, dtype=float)
        )
        if ls.size != pd:
            raise DataError(f"need {pd} lengthscales, got {ls.size}")

        spec = _Spectral.build(U, y, ls)
        if cfg.alpha is None:
            grid = np.asarray(cfg.alpha_grid)
            scores = []
            for a in grid:
                _, one_minus, loo = spec.loo(float(a), m)
                s = _loocv_from(one_minus, loo)
                scores.append(np.inf if np.isnan(s) else s)
            scores = np.asarray(scores)
            if not np.isfinite(scores).any():
                raise NumericalFailure("LOOCV is unstable for every alpha in the grid")
            best = int(np.flatnonzero(scores == scores.min())[-1])
            alpha = float(grid[best])
            self.alpha_scores_ = scores
        else:
            alpha = float(cfg.alpha)
            self.alpha_scores_ = None

        c, beta, _, _, jitter = spec.solve(y, alpha)
        resid, one_minus, loo = spec.loo(alpha, m)
        fitted = spec.gram @ c + spec.trend @ beta

        self.n_inputs_ = p
        self.n_params_ = d
        self.n_features_in_ = pd
        self.x_scaling_ = x_map
        self.X_train_ = U
        self.y_train_ = y.copy()
        self.lengthscales_ = ls
        self.alpha_ = alpha
        self.jitter_ = jitter
        self.dual_coef_ = c
        self.trend_coef_ = beta
        self.fitted_ = fitted
        self.residuals_ = y - fitted
        self.train_rmse_ = float(np.sqrt(np.mean(self.residuals_**2)))
        self.leverage_complement_ = one_minus
        self.loo_residuals_ = loo
        self.loocv_rmse_ = _loocv_from(one_minus, loo)
        for arr in (U, self.y_train_, c, beta):
            arr.setflags(write=False)
        return self

    # -- prediction ------------------------------------------------------

    def _scale_joint(self, X, check_box=True):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        p = self.n_inputs_
        if X.shape[1] != p + self.n_params_:
            raise DataError(f"expected {p + self.n_params_} columns, got {X.shape[1]}")
        theta = X[:, p:]
        space = self.parameter_space
        if check_box and not (
            np.all(theta >= space.lower) and np.all(theta <= space.upper)
        ):
            raise DataError("theta outside the parameter space")
        ux, clipped = self.x_scaling_.transform(X[:, :p])
        if clipped.any():
            warnings.warn("emulator inputs outside bounds were clipped", ClippedInputWarning)
        return np.hstack([ux, space.to_unit(theta)])

    def _predict_scaled(self, U) -> np.ndarray:
        return se_kernel(U, self.X_train_, self.lengthscales_) @ self.dual_coef_ + _trend(U) @ self.trend_coef_

    def predict(self, X) -> np.ndarray:
        """Predict at joint rows ``[x_1..x_p, theta_1..theta_d]`` (original units)."""
        check_is_fitted(self, "dual_coef_")
        return self._predict_scaled(self._scale_joint(X))

    def __call__(self, x, theta) -> np.ndarray:
        """Simulator protocol: ``x`` (n, p), ``theta`` (k, d) -> (k, n).

        A 1-d ``theta`` returns shape (n,).
        """
        check_is_fitted(self, "dual_coef_")
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if self.n_inputs_ == 1 else x.reshape(1, -1)
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        T = theta.reshape(-1, self.n_params_)
        space = self.parameter_space
        if not (np.all(T >= space.lower) and np.all(T <= space.upper)):
            raise DataError("theta outside the parameter space")
        ux, clipped = self.x_scaling_.transform(x)
        if clipped.any():
            warnings.warn("emulator inputs outside bounds were clipped", ClippedInputWarning)
        ut = space.to_unit(T)
        k, n = T.shape[0], ux.shape[0]
        U = np.hstack([np.tile(ux, (k, 1)), np.repeat(ut, n, axis=0)])
        out = self._predict_scaled(U).reshape(k, n)
        return out[0] if single else out

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "dual_coef_")
        return {
            "kind": "kernel_ridge_emulator",
            "parameter_space": self.parameter_space.to_list(),
            "x_scaling": self.x_scaling_.to_dict(),
            "lengthscales": self.lengthscales_.tolist(),
            "alpha": self.alpha_,
            "train_inputs_scaled": self.X_train_.tolist(),
            "train_outputs": self.y_train_.tolist(),
            "dual_coef": self.dual_coef_.tolist(),
            "trend_coef": self.trend_coef_.tolist(),
            "train_rmse": self.train_rmse_,
            "loocv_rmse": None if np.isnan(self.loocv_rmse_) else self.loocv_rmse_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelRidgeEmulator":
        from .core import parse_parameter_space

        space = parse_parameter_space(d["parameter_space"])
        smap = ScalingMap.from_dict(d["x_scaling"])
        est = cls(
            parameter_space=space,
            input_bounds=np.column_stack([smap.lower, smap.upper]),
            lengthscales=tuple(d["lengthscales"]),
            alpha=float(d["alpha"]),
        )
        est.n_params_ = space.d
        est.n_inputs_ = smap.offset.size
        est.n_features_in_ = est.n_inputs_ + est.n_params_
        est.x_scaling_ = smap
        est.X_train_ = np.asarray(d["train_inputs_scaled"], dtype=float)
        est.y_train_ = np.asarray(d["train_outputs"], dtype=float)
        est.lengthscales_ = np.asarray(d["lengthscales"], dtype=float)
        est.alpha_ = float(d["alpha"])
        est.dual_coef_ = np.asarray(d["dual_coef"], dtype=float)
        est.trend_coef_ = np.asarray(d["trend_coef"], dtype=float)
        est.train_rmse_ = float(d["train_rmse"])
        est.loocv_rmse_ = float("nan") if d["loocv_rmse"] is None else float(d["loocv_rmse"])
        return est

    def save(self, path) -> None:
        write_text_atomic(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "KernelRidgeEmulator":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_emulator(
    sim: SimulatorDataset,
    space: ParameterSpace,
    cfg: KernelConfig | None = None,
    input_bounds=None,
) -> KernelRidgeEmulator:
    """Fit the emulator to simulator runs only."""
    cfg = cfg or KernelConfig()
    if sim.d != space.d:
        raise DataError(f"simulator data has {sim.d} parameters, parameter space has {space.d}")
    est = KernelRidgeEmulator(
        parameter_space=space,
        input_bounds=input_bounds,
        lengthscales=cfg.lengthscales,
        alpha=cfg.alpha,
        alpha_grid=cfg.alpha_grid,
    )
    return est.fit(sim.joint_inputs, sim.outputs)


def emulator_predict(model: KernelRidgeEmulator, x, theta) -> float:
    """Emulator value at a single ``(x, theta)`` point (original units)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return float(model(x.reshape(1, -1), theta)[0])


def loocv_rmse(model: KernelRidgeEmulator) -> float:
    """Closed-form leave-one-out RMSE ``sqrt(mean((r_j / (1 - S_jj))**2))``.

    Raises :class:`NumericalFailure` when any ``S_jj >= 1 - 1e-12``.
    """
    check_is_fitted(model, "dual_coef_")
    one_minus = getattr(model, "leverage_complement_", None)
    if one_minus is None:
        raise NumericalFailure("model was loaded without leverage information")
    if np.any(one_minus <= _LEVERAGE_TOL):
        bad = np.flatnonzero(one_minus <= _LEVERAGE_TOL)
        raise NumericalFailure(f"LOOCV unstable: leverage ~1 at training rows {bad.tolist()}")
    return float(np.sqrt(np.mean(model.loo_residuals_**2)))
