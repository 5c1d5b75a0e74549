"""Which residuals react to which faults.

A residual is useful for a fault when a two-sample Z-test separates its
normal-operation distribution from its distribution under the fault. The
boolean residual x fault table of those tests is the fault signature
matrix; two faults are isolable when their signature columns differ.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .arrgen import ResidualSpec
from .errors import InsufficientSamplesError, ValidationError
from .regress import predict
from .timeseries import Dataset, build_design_matrix

MIN_SAMPLES = 30


@dataclass(frozen=True)
class ZTestResult:
    statistic: float
    p_value: float
    significant: bool
    n_normal: int
    n_fault: int
    alpha: float = 0.01

    def to_dict(self) -> dict:
        return asdict(self)


def z_test(r_normal: Sequence[float], r_fault: Sequence[float],
           alpha: float = 0.01) -> ZTestResult:
    """Welch-form two-sample Z-test on the means, two-sided.

    ``statistic = (mean_f - mean_n) / sqrt(s_n²/n_n + s_f²/n_f)`` with
    sample (ddof=1) variances; the p-value comes from the standard normal.
    """
    a = np.asarray(r_normal, dtype=float)
    b = np.asarray(r_fault, dtype=float)
    if a.size < MIN_SAMPLES or b.size < MIN_SAMPLES:
        raise InsufficientSamplesError(
            f"z_test needs >= {MIN_SAMPLES} samples per group, got {a.size}/{b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("z_test inputs must be finite")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    diff = b.mean() - a.mean()
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    if se == 0.0:
        stat = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    else:
        stat = diff / se
    p = math.erfc(abs(stat) / math.sqrt(2.0))
    return ZTestResult(float(stat), p, p < alpha, int(a.size), int(b.size), alpha)


def residual_signal(spec: ResidualSpec, ds: Dataset) -> np.ndarray:
    """``target(t) - model(loads(t))`` for every ``t >= max lag``."""
    X, y = build_design_matrix(ds, spec.loads, spec.target)
    return y - predict(spec.model, X)


def residual_times(spec: ResidualSpec, ds: Dataset) -> np.ndarray:
    return ds.times[spec.max_lag:]


def _alpha(alpha: float, n_tests: int, bonferroni: bool) -> float:
    return alpha / max(n_tests, 1) if bonferroni else alpha


def detectability(bank: Sequence[ResidualSpec], normal: Dataset, faulty: Dataset,
                  alpha: float = 0.01, bonferroni: bool = False) -> list[ZTestResult]:
    """One test per residual, normal data against (post-onset) faulty data."""
    a = _alpha(alpha, len(bank), bonferroni)
    return [z_test(residual_signal(s, normal), residual_signal(s, faulty), a)
            for s in bank]


def is_detectable(results: Sequence[ZTestResult]) -> bool:
    return any(r.significant for r in results)


@dataclass(frozen=True)
class SignatureMatrix:
    residuals: tuple[str, ...]
    faults: tuple[str, ...]
    tests: tuple[tuple[ZTestResult, ...], ...]  # [residual][fault]

    @property
    def sensitivity(self) -> np.ndarray:
        return np.array([[t.significant for t in row] for row in self.tests],
                        dtype=bool).reshape(len(self.residuals), len(self.faults))

    def signature(self, fault: str) -> tuple[bool, ...]:
        j = self.faults.index(fault)
        return tuple(bool(v) for v in self.sensitivity[:, j])

    def isolable(self, fi: str, fj: str) -> bool:
        return self.signature(fi) != self.signature(fj)

    def isolable_pairs(self) -> dict[tuple[str, str], bool]:
        return {(fi, fj): self.isolable(fi, fj) for fi, fj in combinations(self.faults, 2)}

    def detectable(self) -> dict[str, bool]:
        return {f: any(self.signature(f)) for f in self.faults}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("residual",) + self.faults)
        for name, row in zip(self.residuals, self.sensitivity):
            w.writerow((name,) + tuple(int(v) for v in row))
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "residuals": list(self.residuals),
            "faults": list(self.faults),
            "sensitivity": self.sensitivity.astype(int).tolist(),
            "tests": {r: {f: t.to_dict() for f, t in zip(self.faults, row)}
                      for r, row in zip(self.residuals, self.tests)},
            "detectable": self.detectable(),
            "isolable_pairs": [{"faults": [a, b], "isolable": v}
                               for (a, b), v in self.isolable_pairs().items()],
        }


def isolability_matrix(bank: Sequence[ResidualSpec], fault_datasets: Mapping[str, Dataset],
                       normal: Dataset, alpha: float = 0.01,
                       bonferroni: bool = False) -> SignatureMatrix:
    """Residual x fault sensitivity, each cell a Z-test against ``normal``."""
    if not fault_datasets:
        raise ValidationError("at least one fault dataset is required")
    faults = tuple(fault_datasets)
    a = _alpha(alpha, len(bank), bonferroni)
    rows = []
    for spec in bank:
        r_n = residual_signal(spec, normal)
        rows.append(tuple(z_test(r_n, residual_signal(spec, fault_datasets[f]), a)
                          for f in faults))
    return SignatureMatrix(tuple(s.name for s in bank), faults, tuple(rows))
