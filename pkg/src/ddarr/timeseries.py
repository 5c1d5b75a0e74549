"""Uniformly sampled multivariate time series and derived features.

A :class:`Dataset` is an immutable table of equally long, finite, real
valued columns sampled every ``dt`` seconds from ``t0``. Everything the
search and detection code consumes is built from it: integral columns,
lagged design matrices and chronological train/validation splits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    MissingVariableError,
    NameCollisionError,
    SchemaError,
    ValidationError,
)

IDENTITY = "identity"
INTEGRAL = "integral"
INTEGRAL_PREFIX = "int_"


def integral_name(name: str) -> str:
    return INTEGRAL_PREFIX + name


def base_name(name: str) -> str:
    """Strip one integral prefix, ``int_u1 -> u1``."""
    if name.startswith(INTEGRAL_PREFIX) and len(name) > len(INTEGRAL_PREFIX):
        return name[len(INTEGRAL_PREFIX):]
    return name


@dataclass(frozen=True)
class Dataset:
    names: tuple[str, ...]
    values: np.ndarray  # shape (N, len(names))
    dt: float
    t0: float = 0.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if any(not n for n in names):
            raise ValidationError("variable names must be non-empty")
        if len(set(names)) != len(names):
            raise NameCollisionError(f"duplicate variable names in {names}")
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1 and len(names) == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] != len(names):
            raise SchemaError(
                f"values of shape {values.shape} do not match {len(names)} names")
        if values.shape[0] < 2:
            raise InsufficientDataError("a dataset needs at least 2 samples")
        if not np.all(np.isfinite(values)):
            raise ValidationError("non-finite sample values are not supported")
        dt = float(self.dt)
        if not (math.isfinite(dt) and dt > 0):
            raise ValidationError(f"dt must be finite and > 0, got {self.dt}")
        if not math.isfinite(float(self.t0)):
            raise ValidationError("t0 must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[float]], dt: float,
                     t0: float = 0.0) -> "Dataset":
        names = list(columns)
        lengths = {len(columns[n]) for n in names}
        if len(lengths) > 1:
            raise SchemaError(f"columns have unequal lengths {sorted(lengths)}")
        if not names:
            raise SchemaError("a dataset needs at least one column")
        values = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
        return cls(tuple(names), values, dt, t0)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self._index[name]]
        except KeyError:
            raise MissingVariableError(f"unknown variable {name!r}") from None

    @property
    def n_samples(self) -> int:
        return len(self)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def require(self, names: Iterable[str]) -> None:
        missing = [n for n in names if n not in self._index]
        if missing:
            raise MissingVariableError(f"unknown variable(s) {missing}")

    def columns(self) -> dict[str, np.ndarray]:
        return {n: self[n] for n in self.names}

    def with_columns(self, new: Mapping[str, Sequence[float]]) -> "Dataset":
        for n in new:
            if n in self._index:
                raise NameCollisionError(f"column {n!r} already exists")
        if not new:
            return self
        extra = np.column_stack([np.asarray(v, dtype=float) for v in new.values()])
        if extra.shape[0] != len(self):
            raise SchemaError("new columns must match the dataset length")
        return Dataset(self.names + tuple(new), np.hstack([self.values, extra]),
                       self.dt, self.t0)

    def select(self, names: Sequence[str]) -> "Dataset":
        self.require(names)
        idx = [self._index[n] for n in names]
        return Dataset(tuple(names), self.values[:, idx], self.dt, self.t0)

    def slice(self, start: int, stop: int | None = None) -> "Dataset":
        """Rows ``[start, stop)`` with ``t0`` advanced accordingly."""
        stop = len(self) if stop is None else stop
        start, stop, _ = slice(start, stop).indices(len(self))
        return Dataset(self.names, self.values[start:stop], self.dt,
                       self.t0 + start * self.dt)

    def index_at(self, time: float) -> int:
        """First sample index whose time is >= ``time`` (clipped to [0, N])."""
        k = math.ceil((time - self.t0) / self.dt - 1e-9)
        return min(max(k, 0), len(self))

    def slice_time(self, start: float, stop: float | None = None) -> "Dataset":
        return self.slice(self.index_at(start),
                          None if stop is None else self.index_at(stop))


@dataclass(frozen=True)
class FeatureRef:
    """One regressor column: ``variable`` delayed by ``lag`` samples."""

    variable: str
    lag: int = 0
    transform: str = IDENTITY

    def __post_init__(self):
        if int(self.lag) != self.lag or self.lag < 0:
            raise ValidationError(f"lag must be a non-negative integer, got {self.lag}")
        object.__setattr__(self, "lag", int(self.lag))
        if self.transform not in (IDENTITY, INTEGRAL):
            raise ValidationError(f"unknown transform {self.transform!r}")
        if self.transform == INTEGRAL and self.lag != 0:
            raise ValidationError(
                "integral features are taken at lag 0; materialize the integral "
                "column first to lag it")

    @property
    def label(self) -> str:
        name = self.variable
        if self.transform == INTEGRAL:
            name = integral_name(name)
        return name if self.lag == 0 else f"{name}[t-{self.lag}]"

    def to_dict(self) -> dict:
        return {"variable": self.variable, "lag": self.lag, "transform": self.transform}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureRef":
        return cls(d["variable"], int(d.get("lag", 0)), d.get("transform", IDENTITY))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    mode: str = "chronological"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.mode != "chronological":
            raise ValidationError("only chronological splits are supported")


def integrate(series: Sequence[float], dt: float) -> np.ndarray:
    """Cumulative trapezoidal integral starting from 0.

    The output has the same length as ``series`` and ``out[0] == 0``.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DegenerateInputError("integration needs a 1-D series of length >= 2")
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    out = np.empty_like(x)
    out[0] = 0.0
    np.cumsum((x[1:] + x[:-1]) * (0.5 * dt), out=out[1:])
    return out


def add_integral_columns(ds: Dataset, variables: Sequence[str]) -> Dataset:
    """Append an ``int_<name>`` column for every name in ``variables``."""
    ds.require(variables)
    new: dict[str, np.ndarray] = {}
    for name in variables:
        derived = integral_name(name)
        if derived in ds or derived in new:
            raise NameCollisionError(f"derived column {derived!r} already exists")
        new[derived] = integrate(ds[name], ds.dt)
    return ds.with_columns(new)


def feature_column(ds: Dataset, feature: FeatureRef) -> np.ndarray:
    """Unlagged source column for ``feature``."""
    col = ds[feature.variable]
    if feature.transform == INTEGRAL:
        col = integrate(col, ds.dt)
    return col


def max_lag(features: Iterable[FeatureRef]) -> int:
    return max((f.lag for f in features), default=0)


def build_design_matrix(ds: Dataset, features: Sequence[FeatureRef],
                        target: str) -> tuple[np.ndarray, np.ndarray]:
    """Lagged regressor matrix and aligned target vector.

    Row ``i`` corresponds to time index ``t = L + i`` where ``L`` is the
    largest lag; column ``j`` holds ``features[j]`` at ``t - lag_j``.
    """
    ds.require([f.variable for f in features] + [target])
    n = len(ds)
    lag = max_lag(features)
    if lag >= n:
        raise InsufficientDataError(f"max lag {lag} needs more than {n} samples")
    X = np.empty((n - lag, len(features)))
    for j, f in enumerate(features):
        X[:, j] = feature_column(ds, f)[lag - f.lag:n - f.lag]
    return X, ds[target][lag:].copy()


def chrono_split(ds: Dataset, spec: SplitSpec | None = None,
                 max_lag: int = 0) -> tuple[Dataset, Dataset]:
    """First ``ceil(fraction * N)`` samples for training, the rest for validation."""
    spec = spec or SplitSpec()
    n = len(ds)
    n_train = math.ceil(spec.train_fraction * n - 1e-9)
    need = max_lag + 2
    if n_train < need or n - n_train < need:
        raise InsufficientDataError(
            f"split of {n} samples at {spec.train_fraction} leaves "
            f"{n_train}/{n - n_train} rows; each side needs >= {need}")
    return ds.slice(0, n_train), ds.slice(n_train)


def concat(first: Dataset, second: Dataset) -> Dataset:
    """Join two adjacent pieces of one recording (inverse of :func:`chrono_split`)."""
    if first.names != second.names or first.dt != second.dt:
        raise SchemaError("datasets differ in schema or sampling")
    return Dataset(first.names, np.vstack([first.values, second.values]),
                   first.dt, first.t0)


def read_csv(path: str | Path, rtol: float = 1e-9) -> Dataset:
    """Load a dataset whose first column is a uniform ``time`` axis."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not header or header[0].strip() != "time":
        raise SchemaError(f"{path}: first column must be 'time'")
    try:
        table = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if table.ndim != 2 or table.shape[1] != len(header):
        raise SchemaError(f"{path}: ragged rows")
    if table.shape[0] < 2:
        raise InsufficientDataError(f"{path}: fewer than 2 samples")
    t = table[:, 0]
    steps = np.diff(t)
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if not dt > 0 or np.any(steps <= 0):
        raise ValidationError(f"{path}: time must be strictly increasing")
    if np.max(np.abs(steps - dt)) > rtol * max(abs(dt), np.max(np.abs(t))):
        raise ValidationError(f"{path}: time axis is not uniformly sampled")
    return Dataset(tuple(h.strip() for h in header[1:]), table[:, 1:], dt, t[0])


def write_csv(ds: Dataset, path: str | Path) -> None:
    # repr() gives the shortest string that round-trips the double exactly
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time",) + ds.names)
        for t, row in zip(ds.times, ds.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
