"""Data model, validation, parameter boxes and unit-box scaling.

Everything here is immutable once built. Arrays stored on the dataclasses
are copied and flagged read-only so that sharing them between threads or
worker processes is safe.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ClippedInputWarning, DataError

__all__ = [
    "ExperimentalDataset",
    "SimulatorDataset",
    "ParameterSpace",
    "ScalingMap",
    "UnitBoxScaler",
    "ValidationReport",
    "parse_parameter_space",
    "scale_inputs",
    "validate_dataset",
    "read_experimental_csv",
    "read_simulator_csv",
    "write_experimental_csv",
    "write_simulator_csv",
    "write_csv",
    "write_text_atomic",
    "format_float",
]


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ExperimentalDataset:
    """Field observations ``y_i = zeta(x_i) + eps_i``.

    The constructor only normalises shapes; use :func:`validate_dataset`
    (or :meth:`check`) to find non-finite values or row-count mismatches.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    input_names: tuple = ()
    output_name: str = "y"

    def __post_init__(self):
        object.__setattr__(self, "inputs", _frozen(self.inputs, 2))
        object.__setattr__(self, "outputs", _frozen(self.outputs, 1).ravel())
        if not self.input_names:
            names = tuple(f"x{j + 1}" for j in range(self.inputs.shape[1]))
            object.__setattr__(self, "input_names", names)
        else:
            object.__setattr__(self, "input_names", tuple(self.input_names))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    def check(self) -> "ExperimentalDataset":
        """Raise :class:`DataError` if the dataset has any violation."""
        report = validate_dataset(self)
        if not report.ok:
            raise DataError("; ".join(report.violations))
        return self

    def with_outputs(self, outputs) -> "ExperimentalDataset":
        return ExperimentalDataset(self.inputs, outputs, self.input_names, self.output_name)


@dataclass(frozen=True)
class SimulatorDataset:
    """Simulator runs ``y'_j = eta(x'_j, theta'_j) + tau_j``."""

    inputs: np.ndarray
    params: np.ndarray
    outputs: np.ndarray
    input_names: tuple = ()
    param_names: tuple = ()
    output_name: str = "y"

    def __post_init__(self):
        object.__setattr__(self, "inputs", _frozen(self.inputs, 2))
        object.__setattr__(self, "params", _frozen(self.params, 2))
        object.__setattr__(self, "outputs", _frozen(self.outputs, 1).ravel())
        if not self.input_names:
            object.__setattr__(
                self, "input_names", tuple(f"x{j + 1}" for j in range(self.inputs.shape[1]))
            )
        if not self.param_names:
            object.__setattr__(
                self, "param_names", tuple(f"t{k + 1}" for k in range(self.params.shape[1]))
            )
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "param_names", tuple(self.param_names))

    @property
    def m(self) -> int:
        return self.outputs.shape[0]

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    @property
    def d(self) -> int:
        return self.params.shape[1]

    @property
    def joint_inputs(self) -> np.ndarray:
        return np.hstack([self.inputs, self.params])

    def check(self) -> "SimulatorDataset":
        report = validate_dataset(self)
        if not report.ok:
            raise DataError("; ".join(report.violations))
        return self

    def with_outputs(self, outputs) -> "SimulatorDataset":
        return SimulatorDataset(
            self.inputs, self.params, outputs, self.input_names, self.param_names, self.output_name
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _nonfinite_rows(name: str, arr: np.ndarray) -> list:
    if arr.ndim == 1:
        bad = np.flatnonzero(~np.isfinite(arr))
    else:
        bad = np.flatnonzero(~np.isfinite(arr).all(axis=1))
    return [f"non-finite value in {name} at row {i}" for i in bad]


def validate_dataset(ds) -> ValidationReport:
    """List problems with an experimental or simulator dataset.

    Never raises and never mutates ``ds``. Duplicate design rows are only
    reported as warnings since replicated runs are legitimate.
    """
    violations = []
    warns = []
    if isinstance(ds, SimulatorDataset):
        blocks = {"inputs": ds.inputs, "params": ds.params}
        design = [ds.inputs, ds.params]
    else:
        blocks = {"inputs": ds.inputs}
        design = [ds.inputs]
    n_out = ds.outputs.shape[0]
    if n_out < 1:
        violations.append("dataset has no rows")
    for name, arr in blocks.items():
        if arr.shape[0] != n_out:
            violations.append(
                f"shape mismatch: {name} has {arr.shape[0]} rows but outputs has {n_out}"
            )
        if arr.shape[1] < 1:
            violations.append(f"{name} has no columns")
        violations.extend(_nonfinite_rows(name, arr))
    violations.extend(_nonfinite_rows("outputs", ds.outputs))
    if isinstance(ds, SimulatorDataset) and not violations:
        need = ds.p + ds.d + 1
        if ds.m < need:
            violations.append(f"simulator dataset needs at least p + d + 1 = {need} rows, got {ds.m}")

    if all(a.shape[0] == design[0].shape[0] for a in design) and design[0].shape[0] > 1:
        rows = np.hstack(design)
        _, first, counts = np.unique(rows, axis=0, return_index=True, return_counts=True)
        for i in sorted(first[counts > 1]):
            warns.append(f"duplicate design row {i}")
    return ValidationReport(violations, warns)


@dataclass(frozen=True)
class ParameterSpace:
    """Axis-aligned box of admissible calibration parameters."""

    names: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        names = tuple(str(s) for s in self.names)
        lower = _frozen(self.lower, 1).ravel()
        upper = _frozen(self.upper, 1).ravel()
        if len(names) < 1:
            raise DataError("parameter space needs at least one parameter")
        if not (len(names) == lower.size == upper.size):
            raise DataError("names, lower and upper must have the same length")
        if len(set(names)) != len(names):
            dup = sorted({s for s in names if names.count(s) > 1})
            raise DataError(f"duplicate parameter name(s): {', '.join(dup)}")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise DataError("parameter bounds must be finite")
        for k, (lo, hi) in enumerate(zip(lower, upper)):
            if lo == hi:
                raise DataError(f"degenerate bound for {names[k]!r}: lower == upper == {lo}")
            if lo > hi:
                raise DataError(f"lower > upper for {names[k]!r}: {lo} > {hi}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return len(self.names)

    @property
    def scaling(self) -> "ScalingMap":
        return ScalingMap.from_bounds(self.lower, self.upper)

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        span = self.upper - self.lower
        return bool(
            np.all(theta >= self.lower - tol * span) and np.all(theta <= self.upper + tol * span)
        )

    def to_unit(self, theta) -> np.ndarray:
        return (np.asarray(theta, dtype=float) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)

    def to_list(self) -> list:
        return [
            {"name": n, "lower": float(lo), "upper": float(hi)}
            for n, lo, hi in zip(self.names, self.lower, self.upper)
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2)


def parse_parameter_space(spec) -> ParameterSpace:
    """Build a :class:`ParameterSpace` from JSON text or a list of dicts.

    Each entry must carry ``name``, ``lower`` and ``upper``.

    >>> parse_parameter_space('[{"name": "a", "lower": 0, "upper": 1}]').d
    1
    """
    if isinstance(spec, (str, bytes)):
        try:
            entries = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise DataError(
                f"malformed parameter space (line {exc.lineno}, column {exc.colno}): {exc.msg}"
            ) from exc
    else:
        entries = spec
    if not isinstance(entries, list) or not entries:
        raise DataError("parameter space must be a non-empty array of {name, lower, upper}")
    names, lower, upper = [], [], []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or set(entry) != {"name", "lower", "upper"}:
            raise DataError(f"malformed parameter entry {i}: expected keys name, lower, upper")
        name = entry["name"]
        if not isinstance(name, str) or not name:
            raise DataError(f"malformed parameter entry {i}: name must be a non-empty string")
        try:
            lo, hi = float(entry["lower"]), float(entry["upper"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"malformed parameter entry {i}: bounds must be numbers") from exc
        if isinstance(entry["lower"], bool) or isinstance(entry["upper"], bool):
            raise DataError(f"malformed parameter entry {i}: bounds must be numbers")
        names.append(name)
        lower.append(lo)
        upper.append(hi)
    return ParameterSpace(tuple(names), np.array(lower), np.array(upper))


@dataclass(frozen=True)
class ScalingMap:
    """Per-column affine map ``u = (v - offset) / scale`` onto [0, 1]."""

    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        offset = _frozen(self.offset, 1).ravel()
        scale = _frozen(self.scale, 1).ravel()
        if offset.shape != scale.shape:
            raise DataError("offset and scale must have equal length")
        if not (np.isfinite(offset).all() and np.isfinite(scale).all()):
            raise DataError("scaling bounds must be finite")
        if np.any(scale <= 0):
            raise DataError("scaling requires min < max in every dimension")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def from_bounds(cls, lower, upper) -> "ScalingMap":
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise DataError("bounds must have matching shapes")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise DataError("scaling bounds must be finite")
        if np.any(lower >= upper):
            raise DataError("scaling requires min < max in every dimension")
        return cls(lower, upper - lower)

    @property
    def lower(self) -> np.ndarray:
        return self.offset

    @property
    def upper(self) -> np.ndarray:
        return self.offset + self.scale

    def transform(self, data, clip: bool = True):
        """Map to the unit box; returns ``(scaled, clipped_mask)``."""
        data = np.asarray(data, dtype=float)
        u = (data - self.offset) / self.scale
        mask = np.zeros(u.shape, dtype=bool)
        if clip:
            mask = (u < 0.0) | (u > 1.0)
            if mask.any():
                u = np.clip(u, 0.0, 1.0)
        return u, mask

    def inverse_transform(self, u) -> np.ndarray:
        return self.offset + np.asarray(u, dtype=float) * self.scale

    def to_dict(self) -> dict:
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingMap":
        return cls(np.asarray(d["offset"], dtype=float), np.asarray(d["scale"], dtype=float))


def scale_inputs(data, bounds):
    """Scale the columns of ``data`` onto [0, 1].

    Parameters
    ----------
    data : array-like of shape (n, p)
    bounds : sequence of (min, max) pairs, one per column

    Returns
    -------
    scaled : ndarray of shape (n, p)
        Values outside their bounds are clipped and a
        :class:`ClippedInputWarning` is emitted.
    scaling : ScalingMap
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if bounds.shape[0] != data.shape[1]:
        raise DataError(f"got {bounds.shape[0]} bounds for {data.shape[1]} columns")
    smap = ScalingMap.from_bounds(bounds[:, 0], bounds[:, 1])
    scaled, clipped = smap.transform(data)
    if clipped.any():
        rows = np.flatnonzero(clipped.any(axis=1))
        warnings.warn(
            f"{clipped.sum()} value(s) in {rows.size} row(s) outside bounds were clipped",
            ClippedInputWarning,
            stacklevel=2,
        )
    return scaled, smap


class UnitBoxScaler(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`scale_inputs`.

    Parameters
    ----------
    bounds : array-like of shape (p, 2), optional
        Fixed column bounds. When omitted the column min/max seen in ``fit``
        are used.
    """

    def __init__(self, bounds=None):
        self.bounds = bounds

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if self.bounds is None:
            b = np.column_stack([X.min(axis=0), X.max(axis=0)])
        else:
            b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        self.scaling_ = ScalingMap.from_bounds(b[:, 0], b[:, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scaling_")
        u, mask = self.scaling_.transform(np.asarray(X, dtype=float))
        if mask.any():
            warnings.warn("inputs outside bounds were clipped", ClippedInputWarning, stacklevel=2)
        return u

    def inverse_transform(self, X):
        check_is_fitted(self, "scaling_")
        return self.scaling_.inverse_transform(X)


# -- CSV -----------------------------------------------------------------------


def _read_csv(path) -> tuple[list, np.ndarray]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: expected a header row and at least one record")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno} has {len(row)} fields, header has {width}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return header, np.array(values, dtype=float)


def read_experimental_csv(path, p: int | None = None) -> ExperimentalDataset:
    """Read ``x1..xp, y`` records. The last column is the output."""
    header, values = _read_csv(path)
    if len(header) < 2:
        raise DataError(f"{path}: need at least one input column and one output column")
    if p is not None and len(header) != p + 1:
        raise DataError(f"{path}: expected {p + 1} columns (x1..x{p}, y), found {len(header)}")
    ds = ExperimentalDataset(values[:, :-1], values[:, -1], tuple(header[:-1]), header[-1])
    report = validate_dataset(ds)
    if not report.ok:
        raise DataError(f"{path}: " + "; ".join(report.violations))
    return ds


def read_simulator_csv(path, p: int, d: int) -> SimulatorDataset:
    """Read ``x1..xp, t1..td, y`` records."""
    header, values = _read_csv(path)
    if len(header) != p + d + 1:
        raise DataError(
            f"{path}: expected {p + d + 1} columns (p={p} inputs, d={d} parameters, output), "
            f"found {len(header)}"
        )
    ds = SimulatorDataset(
        values[:, :p],
        values[:, p : p + d],
        values[:, -1],
        tuple(header[:p]),
        tuple(header[p : p + d]),
        header[-1],
    )
    report = validate_dataset(ds)
    if not report.ok:
        raise DataError(f"{path}: " + "; ".join(report.violations))
    return ds


def format_float(v: float) -> str:
    return format(float(v), ".17g")


def write_text_atomic(path, text: str) -> None:
    """Write ``text`` to a sibling temporary file, then rename it over ``path``."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([c if isinstance(c, str) else format_float(c) for c in r])
    write_text_atomic(path, buf.getvalue())


def write_experimental_csv(path, ds: ExperimentalDataset) -> None:
    write_csv(
        path,
        list(ds.input_names) + [ds.output_name],
        np.column_stack([ds.inputs, ds.outputs]).tolist(),
    )


def write_simulator_csv(path, ds: SimulatorDataset) -> None:
    write_csv(
        path,
        list(ds.input_names) + list(ds.param_names) + [ds.output_name],
        np.column_stack([ds.inputs, ds.params, ds.outputs]).tolist(),
    )
