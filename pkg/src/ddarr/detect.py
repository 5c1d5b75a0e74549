"""Runtime detection with learned residual bounds, and the ROC experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .arrgen import ResidualSpec
from .errors import ConfigurationError, DegenerateLabelsError, InsufficientSamplesError, SchemaError
from .evaluate import MIN_SAMPLES, residual_signal, residual_times
from .regress import LogisticModel, fit_logistic
from .tanksim import MEASURED, FaultScenario, label_fault
from .timeseries import Dataset


@dataclass(frozen=True)
class Thresholds:
    mean: float
    sigma: float
    upper: float
    lower: float
    persistence: int = 3

    def __post_init__(self):
        if self.sigma < 0 or self.upper < self.lower:
            raise SchemaError("thresholds need sigma >= 0 and upper >= lower")
        if self.persistence < 1:
            raise SchemaError("persistence must be >= 1")

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sigma": self.sigma, "upper": self.upper,
                "lower": self.lower, "persistence": self.persistence}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Thresholds":
        return cls(float(d["mean"]), float(d["sigma"]), float(d["upper"]),
                   float(d["lower"]), int(d.get("persistence", 3)))


def learn_thresholds(r_normal: Sequence[float], persistence: int = 3) -> Thresholds:
    """Mean ± 3 population standard deviations of a normal-operation residual."""
    r = np.asarray(r_normal, dtype=float)
    if r.size < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need >= {MIN_SAMPLES} normal samples, got {r.size}")
    if np.ptp(r) == 0.0:
        mean, sigma = float(r[0]), 0.0
    else:
        mean, sigma = float(r.mean()), float(r.std())
    return Thresholds(mean, sigma, mean + 3.0 * sigma, mean - 3.0 * sigma, persistence)


def raise_alarms(signal: Sequence[float], th: Thresholds) -> np.ndarray:
    """``alarm[t]`` is set once the signal has been outside the band for k samples."""
    s = np.asarray(signal, dtype=float)
    out = (s > th.upper) | (s < th.lower)
    if th.persistence == 1:
        return out
    # length of the current out-of-band run ending at each index
    idx = np.arange(out.size)
    last_in = np.maximum.accumulate(np.where(out, -1, idx))
    run = idx - last_in
    return run >= th.persistence


def _intervals(alarm: np.ndarray, times: np.ndarray, dt: float) -> list[list[float]]:
    edges = np.diff(np.concatenate([[0], alarm.astype(np.int8), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    return [[float(times[a]), float(times[b - 1] + dt)] for a, b in zip(starts, stops)]


@dataclass
class DetectionReport:
    residuals: tuple[str, ...]
    times: dict[str, np.ndarray] = field(repr=False)
    alarms: dict[str, np.ndarray] = field(repr=False)
    first_alarm: dict[str, float | None]
    onset: float | None
    delays: dict[str, float | None]
    false_alarms: dict[str, int]
    dt: float = 1.0

    @property
    def detection_delay(self) -> float | None:
        found = [d for d in self.delays.values() if d is not None]
        return min(found) if found else None

    @property
    def detected(self) -> bool:
        if self.onset is None:
            return any(a.any() for a in self.alarms.values())
        return self.detection_delay is not None

    def to_dict(self) -> dict:
        return {
            "onset": self.onset,
            "detected": self.detected,
            "detection_delay": self.detection_delay,
            "residuals": {
                r: {
                    "first_alarm": self.first_alarm[r],
                    "detection_delay": self.delays[r],
                    "false_alarms": self.false_alarms[r],
                    "alarm_intervals": _intervals(self.alarms[r], self.times[r], self.dt),
                } for r in self.residuals
            },
        }


def detection_report(bank: Sequence[ResidualSpec], ds: Dataset,
                     scenario: FaultScenario | None,
                     th_map: Mapping[str, Thresholds]) -> DetectionReport:
    """Alarms, first alarm, delay after onset and pre-onset false alarms per residual.

    ``first_alarm`` is the first alarm at or after onset (or anywhere when
    there is no fault); ``false_alarms`` counts alarmed samples before onset.
    """
    onset = None if scenario is None or scenario.kind == "none" else float(scenario.onset)
    names, times, alarms, first, delays, fa = [], {}, {}, {}, {}, {}
    for spec in bank:
        if spec.name not in th_map:
            raise ConfigurationError(f"no thresholds for {spec.name}")
        t = residual_times(spec, ds)
        a = raise_alarms(residual_signal(spec, ds), th_map[spec.name])
        names.append(spec.name)
        times[spec.name], alarms[spec.name] = t, a
        if onset is None:
            hits = np.flatnonzero(a)
            fa[spec.name] = int(a.sum())
            first[spec.name] = float(t[hits[0]]) if hits.size else None
            delays[spec.name] = None
            continue
        post = t >= onset - 1e-9
        fa[spec.name] = int(a[~post].sum())
        hits = np.flatnonzero(a & post)
        if hits.size:
            first[spec.name] = float(t[hits[0]])
            delays[spec.name] = max(first[spec.name] - onset, 0.0)
        else:
            first[spec.name] = delays[spec.name] = None
    return DetectionReport(tuple(names), times, alarms, first, onset, delays, fa, ds.dt)


# --------------------------------------------------------------------------
# ROC

@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        return {"auc": self.auc, "fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(),
                "thresholds": [t if math.isfinite(t) else None for t in self.thresholds.tolist()]}

    def to_csv(self) -> str:
        lines = ["fpr,tpr"] + [f"{f!r},{t!r}" for f, t in zip(self.fpr.tolist(), self.tpr.tolist())]
        return "\n".join(lines) + "\n"


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Exact empirical ROC, one point per distinct score, AUC by trapezoid."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise SchemaError("scores and labels must be 1-D and equally long")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thr = np.r_[np.inf, s[last]]
    return RocCurve(fpr, tpr, thr, float(np.trapezoid(tpr, fpr)))


def _standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd == 0] = 1.0
    return [(a - mu) / sd for a in (train,) + others]


@dataclass(frozen=True)
class RocExperiment:
    without_residual: RocCurve
    with_residual: RocCurve | None
    classifiers: tuple[LogisticModel, ...] = field(repr=False, default=())

    @property
    def auc_gain(self) -> float | None:
        if self.with_residual is None:
            return None
        return self.with_residual.auc - self.without_residual.auc

    def to_dict(self) -> dict:
        d = {"auc_without_residual": self.without_residual.auc,
             "without_residual": self.without_residual.to_dict()}
        if self.with_residual is not None:
            d["auc_with_residual"] = self.with_residual.auc
            d["auc_gain"] = self.auc_gain
            d["with_residual"] = self.with_residual.to_dict()
        return d


def roc_experiment(train_ds: Dataset, train_fault: FaultScenario, test_ds: Dataset,
                   test_fault: FaultScenario, residual: ResidualSpec | None = None,
                   sensors: Sequence[str] = MEASURED, max_iters: int = 100,
                   tolerance: float = 1e-8) -> RocExperiment:
    """Train logistic detectors on one fault run and score another.

    Samples at or after onset are labelled faulty. The first classifier
    sees the raw sensors, the second the sensors plus the residual signal.
    Both use the same rows (those where the residual is defined).
    """
    lag = residual.max_lag if residual is not None else 0

    def design(ds: Dataset, fault: FaultScenario):
        X = ds.select(list(sensors)).values[lag:]
        y = label_fault(ds.times[lag:], fault)
        r = residual_signal(residual, ds)[:, None] if residual is not None else None
        return X, y, r

    Xtr, ytr, rtr = design(train_ds, train_fault)
    Xte, yte, rte = design(test_ds, test_fault)
    for y in (ytr, yte):
        if y.min() == y.max():
            raise DegenerateLabelsError("both normal and faulty samples are required")

    def run(train, test):
        train, test = _standardize(train, test)
        clf = fit_logistic(train, ytr, max_iters=max_iters, tolerance=tolerance)
        return roc_curve(clf.decision_function(test), yte), clf

    without, clf0 = run(Xtr, Xte)
    if residual is None:
        return RocExperiment(without, None, (clf0,))
    with_r, clf1 = run(np.hstack([Xtr, rtr]), np.hstack([Xte, rte]))
    return RocExperiment(without, with_r, (clf0, clf1))
