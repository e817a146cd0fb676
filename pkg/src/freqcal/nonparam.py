"""Penalized cubic smoothing splines and additive backfitting.

The smoother minimises ``(1/n) sum (y_i - f(x_i))**2 + lam**2 * J(f)**2``
where ``J(f)**2`` is the integrated squared second derivative, over the
natural cubic splines with knots at (a quantile-thinned subset of) the
unique inputs. Natural splines are linear beyond the boundary knots, which
is also how predictions outside the knot range are extrapolated.

Internally every basis is rotated so that its first two coordinates span
the straight lines (the null space of the penalty). The penalty block then
acts on the remaining coordinates only, which keeps very large ``lam``
numerically harmless.
"""

from __future__ import annotations

import json
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import LinAlgError, cho_factor, cho_solve, null_space, qr
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import write_text_atomic
from .exceptions import ConvergenceWarning, DataError, NumericalFailure

__all__ = [
    "DEFAULT_LAMBDA_GRID",
    "KNOT_CAP",
    "NaturalSplineSpace",
    "SplineBasis",
    "PenalizedFit",
    "AdditiveModel",
    "build_spline_basis",
    "fit_penalized",
    "gcv_score",
    "select_lambda",
    "spline_predict",
    "fit_additive",
    "PenalizedSplineRegressor",
    "AdditiveSplineRegressor",
]

DEFAULT_LAMBDA_GRID = np.logspace(-8, 2, 41)
KNOT_CAP = 200
RIDGE_JITTER = 1e-10
_DEGREE = 3


class NaturalSplineSpace:
    """Natural cubic splines on a fixed knot sequence.

    The basis is the cubic B-spline basis on ``knots`` (boundary knots
    repeated) restricted to functions with zero second derivative at both
    boundary knots, giving exactly ``len(knots)`` basis functions.
    """

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float).ravel()
        if knots.size < 4 or np.any(np.diff(knots) <= 0):
            raise DataError("natural cubic splines need at least 4 strictly increasing knots")
        self.knots = knots
        a, b = knots[0], knots[-1]
        self._t = np.r_[[a] * _DEGREE, knots, [b] * _DEGREE]
        self._nfull = knots.size + 2
        self._bspl = BSpline(self._t, np.eye(self._nfull), _DEGREE, extrapolate=False)

        d2a = self._full(np.array([a]), 2)[0, :3]
        d2b = self._full(np.array([b]), 2)[0, -3:]
        K = knots.size
        Z = np.zeros((self._nfull, K))
        Z[:3, :2] = null_space(d2a[None, :])
        Z[3 : K - 1, 2 : K - 2] = np.eye(K - 4)
        Z[-3:, -2:] = null_space(d2b[None, :])
        self._Z = Z

    @property
    def n_basis(self) -> int:
        return self.knots.size

    def _full(self, x, nu=0):
        if nu == 0 and x.size > 8:
            return BSpline.design_matrix(x, self._t, _DEGREE).toarray()
        out = self._bspl(x, nu)
        return np.nan_to_num(out, nan=0.0)

    def greville(self) -> np.ndarray:
        t = self._t
        return np.array([t[i + 1 : i + 4].mean() for i in range(self._nfull)])

    def evaluate(self, x, nu: int = 0) -> np.ndarray:
        """Basis matrix (or its ``nu``-th derivative) at ``x``.

        Outside ``[knots[0], knots[-1]]`` the functions continue linearly.
        """
        x = np.asarray(x, dtype=float).ravel()
        a, b = self.knots[0], self.knots[-1]
        inside = (x >= a) & (x <= b)
        out = np.empty((x.size, self.n_basis))
        if inside.any():
            out[inside] = self._full(x[inside], nu) @ self._Z
        for edge, mask in ((a, x < a), (b, x > b)):
            if not mask.any():
                continue
            if nu >= 2:
                out[mask] = 0.0
                continue
            slope = self._full(np.array([edge]), 1) @ self._Z
            if nu == 1:
                out[mask] = slope
            else:
                value = self._full(np.array([edge]), 0) @ self._Z
                out[mask] = value + (x[mask] - edge)[:, None] * slope
        return out

    def penalty(self) -> np.ndarray:
        """Integrated products of basis second derivatives, computed exactly."""
        lo, hi = self.knots[:-1], self.knots[1:]
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        g = 1.0 / np.sqrt(3.0)
        nodes = np.concatenate([mid - g * half, mid + g * half])
        weights = np.concatenate([half, half])
        D = self._full(nodes, 2) @ self._Z
        omega = D.T @ (weights[:, None] * D)
        return (omega + omega.T) / 2

    def line_coefficients(self) -> np.ndarray:
        """Coefficient vectors (K, 2) reproducing ``1`` and ``x`` exactly."""
        full = np.column_stack([np.ones(self._nfull), self.greville()])
        return self._Z.T @ full


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """A natural cubic spline basis evaluated on a training design.

    Attributes
    ----------
    x : ndarray (n,)
        Training inputs.
    space : NaturalSplineSpace
    design : ndarray (n, K)
        Basis evaluation matrix ``B``.
    penalty : ndarray (K, K)
        ``Omega`` with ``c @ Omega @ c = int f''(x)**2 dx``. Its null space is
        exactly the span of the constant and linear coefficient vectors.
    """

    x: np.ndarray
    space: NaturalSplineSpace
    design: np.ndarray
    penalty: np.ndarray
    knot_cap: int
    rotation: np.ndarray = field(repr=False)
    _design_rot: np.ndarray = field(repr=False)
    _gram_rot: np.ndarray = field(repr=False)
    _pen_block: np.ndarray = field(repr=False)
    _factors: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def knots(self) -> np.ndarray:
        return self.space.knots

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def n_basis(self) -> int:
        return self.space.n_basis

    def factor(self, lam: float):
        """Cached Cholesky factor of the normal matrix and its edf at ``lam``.

        The hat-matrix trace does not depend on ``y`` so it is computed once
        per ``(basis, lam)`` pair.
        """
        key = float(lam)
        hit = self._factors.get(key)
        if hit is not None:
            return hit
        n = self.n
        gram = self._gram_rot / n
        A = gram.copy()
        A[2:, 2:] += key**2 * self._pen_block
        jitter = 0.0
        try:
            cf = cho_factor(A, lower=True, check_finite=False)
        except LinAlgError:
            jitter = RIDGE_JITTER
            A[np.diag_indices_from(A)] += jitter
            try:
                cf = cho_factor(A, lower=True, check_finite=False)
            except LinAlgError as exc:
                raise NumericalFailure(
                    f"penalized normal system is singular at lam={key:g} even with jitter"
                ) from exc
        edf = float(np.trace(cho_solve(cf, gram, check_finite=False)))
        entry = (cf, edf, jitter)
        with self._lock:
            self._factors[key] = entry
        return entry


_BASIS_CACHE: "OrderedDict[tuple, SplineBasis]" = OrderedDict()
_BASIS_CACHE_SIZE = 4
_BASIS_LOCK = threading.Lock()


def _select_knots(ux: np.ndarray, knot_cap: int) -> np.ndarray:
    if ux.size <= knot_cap:
        return ux.copy()
    idx = np.round(np.linspace(0, ux.size - 1, knot_cap)).astype(int)
    return ux[idx]


def build_spline_basis(x, knot_cap: int = KNOT_CAP) -> SplineBasis:
    """Natural cubic spline basis with knots at the unique ``x`` values.

    When there are more than ``knot_cap`` unique values, ``knot_cap`` of them
    are kept at evenly spaced quantile ranks (both extremes included).
    Bases are memoised on ``(x, knot_cap)`` so repeated fits on a fixed
    design reuse factorizations.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=float).ravel())
    if knot_cap < 4:
        raise DataError("knot_cap must be at least 4")
    if not np.isfinite(x).all():
        raise DataError("spline inputs must be finite")
    key = (x.tobytes(), int(knot_cap))
    with _BASIS_LOCK:
        hit = _BASIS_CACHE.get(key)
        if hit is not None:
            _BASIS_CACHE.move_to_end(key)
            return hit

    ux = np.unique(x)
    if ux.size < 4:
        raise DataError(f"need at least 4 unique input values for a cubic spline, got {ux.size}")
    space = NaturalSplineSpace(_select_knots(ux, knot_cap))
    design = space.evaluate(x)
    omega = space.penalty()

    Q, _ = qr(space.line_coefficients(), mode="full")
    Q2 = Q[:, 2:]
    pen_block = Q2.T @ omega @ Q2
    pen_block = (pen_block + pen_block.T) / 2
    penalty = Q2 @ pen_block @ Q2.T
    penalty = (penalty + penalty.T) / 2
    design_rot = design @ Q

    frozen_x = x.copy()
    for arr in (frozen_x, design, penalty):
        arr.setflags(write=False)
    basis = SplineBasis(
        x=frozen_x,
        space=space,
        design=design,
        penalty=penalty,
        knot_cap=int(knot_cap),
        rotation=Q,
        _design_rot=design_rot,
        _gram_rot=design_rot.T @ design_rot,
        _pen_block=pen_block,
    )
    with _BASIS_LOCK:
        _BASIS_CACHE[key] = basis
        while len(_BASIS_CACHE) > _BASIS_CACHE_SIZE:
            _BASIS_CACHE.popitem(last=False)
    return basis


@dataclass(frozen=True, eq=False)
class PenalizedFit:
    """Result of a penalized spline fit at a fixed smoothing parameter."""

    space: NaturalSplineSpace
    coef: np.ndarray
    lam: float
    edf: float
    penalty_value: float
    residuals: np.ndarray = None
    fitted: np.ndarray = None
    x: np.ndarray = None
    jitter: float = 0.0

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)

    @property
    def n(self) -> int:
        return self.residuals.size

    def objective(self) -> float:
        """``(1/n) RSS + lam**2 J**2`` at the stored coefficients."""
        return self.rss / self.n + self.lam**2 * self.penalty_value

    def predict(self, x) -> np.ndarray:
        return spline_predict(self, x)

    def to_dict(self) -> dict:
        return {
            "kind": "penalized_spline",
            "knots": self.space.knots.tolist(),
            "coef": self.coef.tolist(),
            "lam": self.lam,
            "edf": self.edf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PenalizedFit":
        return cls(
            space=NaturalSplineSpace(d["knots"]),
            coef=np.asarray(d["coef"], dtype=float),
            lam=float(d["lam"]),
            edf=float(d["edf"]),
            penalty_value=float("nan"),
        )


def fit_penalized(basis: SplineBasis, y, lam: float) -> PenalizedFit:
    """Solve ``(B'B/n + lam**2 Omega) c = B'y/n`` for the spline coefficients.

    A ridge jitter of 1e-10 is added to the diagonal only when the plain
    Cholesky factorization fails; if that also fails a
    :class:`NumericalFailure` is raised.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size != basis.n:
        raise DataError(f"y has {y.size} values but the basis has {basis.n} rows")
    if not np.isfinite(lam) or lam < 0:
        raise DataError(f"smoothing parameter must be finite and >= 0, got {lam}")
    cf, edf, jitter = basis.factor(lam)
    rhs = basis._design_rot.T @ y / basis.n
    c_rot = cho_solve(cf, rhs, check_finite=False)
    fitted = basis._design_rot @ c_rot
    coef = basis.rotation @ c_rot
    tail = c_rot[2:]
    fit = PenalizedFit(
        space=basis.space,
        coef=coef,
        lam=float(lam),
        edf=edf,
        penalty_value=float(tail @ basis._pen_block @ tail),
        residuals=y - fitted,
        fitted=fitted,
        x=basis.x,
        jitter=jitter,
    )
    return fit


def gcv_score(fit) -> float:
    """Generalized cross-validation ``(RSS/n) / (1 - edf/n)**2``.

    Returns ``inf`` once ``edf`` reaches ``n`` (saturated fits); a relative
    slack of 1e-9 absorbs rounding in the trace.
    """
    n = fit.n
    if fit.edf >= n * (1 - 1e-9):
        return float("inf")
    return (fit.rss / n) / (1.0 - fit.edf / n) ** 2


def _argmin_prefer_last(scores) -> int:
    scores = np.asarray(scores, dtype=float)
    best = np.min(scores)
    return int(np.flatnonzero(scores == best)[-1])


def select_lambda(basis: SplineBasis, y, grid=None):
    """Grid search for the GCV-optimal smoothing parameter.

    ``grid`` must be sorted ascending; ties go to the larger value.

    Returns
    -------
    lam : float
    scores : ndarray
        GCV score for each grid value.
    """
    grid = DEFAULT_LAMBDA_GRID if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise DataError("lambda grid is empty")
    if np.any(np.diff(grid) < 0):
        raise DataError("lambda grid must be sorted ascending")
    scores = np.array([gcv_score(fit_penalized(basis, y, lam)) for lam in grid])
    return float(grid[_argmin_prefer_last(scores)]), scores


def spline_predict(fit: PenalizedFit, x_new) -> np.ndarray:
    """Evaluate a fitted spline; linear beyond the boundary knots."""
    return fit.space.evaluate(x_new) @ fit.coef


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    """``f(x) = intercept + sum_j (g_j(x_j) - offset_j)``.

    Each ``g_j`` is a :class:`PenalizedFit`; ``offset_j`` is its mean over the
    training design so the centered components average to zero there.
    With one input the model is the univariate fit itself.
    """

    intercept: float
    components: tuple
    offsets: tuple
    lam: float
    edf: float
    residuals: np.ndarray = None
    converged: bool = True
    n_cycles: int = 0
    lam_selected: float = None
    gcv_scores: np.ndarray = None

    @property
    def p(self) -> int:
        return len(self.components)

    def component(self, j: int, x) -> np.ndarray:
        """Centered main effect of input ``j``."""
        return spline_predict(self.components[j], x) - self.offsets[j]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if self.p == 1 else X.reshape(1, -1)
        if X.shape[1] != self.p:
            raise DataError(f"expected {self.p} input columns, got {X.shape[1]}")
        if self.p == 1:
            return spline_predict(self.components[0], X[:, 0])
        out = np.full(X.shape[0], self.intercept)
        for j in range(self.p):
            out += self.component(j, X[:, j])
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "additive_spline",
            "intercept": self.intercept,
            "offsets": list(self.offsets),
            "lam": self.lam,
            "edf": self.edf,
            "converged": self.converged,
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdditiveModel":
        return cls(
            intercept=float(d["intercept"]),
            components=tuple(PenalizedFit.from_dict(c) for c in d["components"]),
            offsets=tuple(float(v) for v in d["offsets"]),
            lam=float(d["lam"]),
            edf=float(d["edf"]),
            converged=bool(d.get("converged", True)),
        )

    def save(self, path) -> None:
        write_text_atomic(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "AdditiveModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _backfit(bases, y, lam, tol, max_cycles):
    n, p = y.size, len(bases)
    intercept = float(y.mean())
    f = np.zeros((p, n))
    fits = [None] * p
    converged = False
    cycles = 0
    for cycles in range(1, max_cycles + 1):
        change = 0.0
        for j, basis in enumerate(bases):
            partial = y - intercept - f.sum(axis=0) + f[j]
            fits[j] = fit_penalized(basis, partial, lam)
            new = fits[j].fitted - fits[j].fitted.mean()
            change = max(change, float(np.max(np.abs(new - f[j]))))
            f[j] = new
        if change < tol:
            converged = True
            break
    resid = y - intercept - f.sum(axis=0)
    edf = 1.0 + sum(fit.edf - 1.0 for fit in fits)
    return intercept, fits, resid, edf, converged, cycles


def fit_additive(
    inputs,
    y,
    lam_grid=None,
    knot_cap: int = KNOT_CAP,
    lam_scale: float = 1.0,
    tol: float = 1e-8,
    max_cycles: int = 100,
) -> AdditiveModel:
    """Additive main-effects spline model with GCV smoothing selection.

    Parameters
    ----------
    inputs : array-like of shape (n, p), values in [0, 1]
    y : array-like of shape (n,)
    lam_grid : array-like, optional
        Ascending smoothing grid; one common ``lam`` is shared by all
        components. Defaults to :data:`DEFAULT_LAMBDA_GRID`.
    lam_scale : float
        Multiplier applied to the selected ``lam`` before the final fit
        (values below one undersmooth).
    tol, max_cycles
        Backfitting stops when no centered component moves by more than
        ``tol`` or after ``max_cycles`` sweeps. Non-convergence is flagged on
        the model and warned about, not raised.
    """
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if p < 1:
        raise DataError("need at least one input column")
    if y.size != n:
        raise DataError(f"inputs have {n} rows but y has {y.size} values")
    if n < 4 * p:
        raise DataError(f"additive fit needs n >= 4p ({4 * p}), got n={n}")
    grid = DEFAULT_LAMBDA_GRID if lam_grid is None else np.asarray(lam_grid, dtype=float).ravel()

    if p == 1:
        basis = build_spline_basis(X[:, 0], knot_cap)
        lam, scores = select_lambda(basis, y, grid)
        lam_used = lam * lam_scale
        fit = fit_penalized(basis, y, lam_used)
        level = float(fit.fitted.mean())
        return AdditiveModel(
            intercept=level,
            components=(fit,),
            offsets=(level,),
            lam=lam_used,
            edf=fit.edf,
            residuals=fit.residuals,
            lam_selected=lam,
            gcv_scores=scores,
        )

    bases = [build_spline_basis(X[:, j], knot_cap) for j in range(p)]
    if np.any(np.diff(grid) < 0):
        raise DataError("lambda grid must be sorted ascending")
    runs, scores = [], []
    for lam in grid:
        run = _backfit(bases, y, lam, tol, max_cycles)
        runs.append(run)
        _, _, resid, edf, _, _ = run
        rss = float(resid @ resid)
        scores.append(float("inf") if edf >= n * (1 - 1e-9) else (rss / n) / (1 - edf / n) ** 2)
    best = _argmin_prefer_last(scores)
    lam = float(grid[best])
    lam_used = lam * lam_scale
    run = runs[best] if lam_scale == 1.0 else _backfit(bases, y, lam_used, tol, max_cycles)
    intercept, fits, resid, edf, converged, cycles = run
    if not converged:
        warnings.warn(
            f"backfitting did not converge in {max_cycles} cycles", ConvergenceWarning, stacklevel=2
        )
    return AdditiveModel(
        intercept=intercept,
        components=tuple(fits),
        offsets=tuple(float(fit.fitted.mean()) for fit in fits),
        lam=lam_used,
        edf=edf,
        residuals=resid,
        converged=converged,
        n_cycles=cycles,
        lam_selected=lam,
        gcv_scores=np.asarray(scores),
    )


class PenalizedSplineRegressor(RegressorMixin, BaseEstimator):
    """Univariate penalized cubic smoothing spline.

    Parameters
    ----------
    lam : float, optional
        Fixed smoothing parameter. When ``None`` it is chosen by GCV over
        ``lam_grid``.
    lam_grid : array-like, optional
    knot_cap : int, default=200
    """

    def __init__(self, lam=None, lam_grid=None, knot_cap=KNOT_CAP):
        self.lam = lam
        self.lam_grid = lam_grid
        self.knot_cap = knot_cap

    def fit(self, X, y):
        x = _as_column(X)
        self.basis_ = build_spline_basis(x, self.knot_cap)
        if self.lam is None:
            self.lam_, self.gcv_scores_ = select_lambda(self.basis_, y, self.lam_grid)
        else:
            self.lam_, self.gcv_scores_ = float(self.lam), None
        self.fit_ = fit_penalized(self.basis_, y, self.lam_)
        self.edf_ = self.fit_.edf
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return spline_predict(self.fit_, _as_column(X))


class AdditiveSplineRegressor(RegressorMixin, BaseEstimator):
    """Additive main-effects smoothing spline fit by backfitting."""

    def __init__(self, lam_grid=None, knot_cap=KNOT_CAP, lam_scale=1.0, tol=1e-8, max_cycles=100):
        self.lam_grid = lam_grid
        self.knot_cap = knot_cap
        self.lam_scale = lam_scale
        self.tol = tol
        self.max_cycles = max_cycles

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        self.model_ = fit_additive(
            X, y, self.lam_grid, self.knot_cap, self.lam_scale, self.tol, self.max_cycles
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)


def _as_column(X) -> np.ndarray:
    x = np.asarray(X, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise DataError("univariate spline expects a single input column")
        x = x[:, 0]
    return x.ravel()
