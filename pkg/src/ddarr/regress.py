"""Regression models used to learn and score redundancy relations.

Ordinary least squares with an intercept is the estimator behind every
residual; R² is its score. A small L2-conditioned logistic regression is
provided for the classifier comparison experiment.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateLabelsError,
    InsufficientDataError,
    SchemaError,
    UndefinedScoreError,
    ValidationError,
)
from .timeseries import FeatureRef


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    feature_schema: tuple[FeatureRef, ...] = ()
    train_score: float = float("nan")
    valid_score: float = float("nan")
    rank_deficient: bool = False

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float).reshape(-1)
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "feature_schema", tuple(self.feature_schema))
        if self.feature_schema and len(self.feature_schema) != coef.size:
            raise SchemaError("one coefficient per feature is required")
        if not (np.all(np.isfinite(coef)) and np.isfinite(self.intercept)):
            raise ValidationError("model parameters must be finite")

    def with_scores(self, train: float | None = None,
                    valid: float | None = None) -> "LinearModel":
        return LinearModel(
            self.coefficients, self.intercept, self.feature_schema,
            self.train_score if train is None else float(train),
            self.valid_score if valid is None else float(valid),
            self.rank_deficient)

    def to_dict(self) -> dict:
        return {
            "features": [f.to_dict() for f in self.feature_schema],
            "coefficients": [float(c) for c in self.coefficients],
            "intercept": self.intercept,
            "train_score": self.train_score,
            "valid_score": self.valid_score,
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            np.array(d["coefficients"], dtype=float),
            d["intercept"],
            tuple(FeatureRef.from_dict(f) for f in d.get("features", ())),
            float(d.get("train_score", float("nan"))),
            float(d.get("valid_score", float("nan"))),
            bool(d.get("rank_deficient", False)),
        )

    def to_json(self) -> str:
        # float repr is round-trip exact, NaN scores become the JSON token NaN
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        return cls.from_dict(json.loads(text))


def fit_least_squares(X, y, feature_schema: Sequence[FeatureRef] = ()) -> LinearModel:
    """Minimum-norm OLS fit of ``y ~ X @ coef + intercept``.

    Columns are centred so the intercept is not part of the norm being
    minimised; the centred problem is solved by SVD. Rank deficiency is
    reported through ``rank_deficient`` and a warning, not an exception.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if y.size != n:
        raise SchemaError(f"X has {n} rows but y has {y.size}")
    if n <= p + 1:
        raise InsufficientDataError(f"{n} rows cannot fit {p} features and an intercept")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    # centring a constant column leaves rounding dust; treat it as exactly zero
    dust = np.abs(Xc).max(axis=0) <= 8 * n * np.finfo(float).eps * np.abs(X).max(axis=0)
    Xc[:, dust] = 0.0
    coef, _, rank, _ = np.linalg.lstsq(Xc, y - y_mean, rcond=None)
    deficient = bool(rank < p)
    if deficient:
        warnings.warn(f"design matrix has rank {rank} < {p}; using the "
                      "minimum-norm solution", RankDeficiencyWarning, stacklevel=2)
    intercept = y_mean - x_mean @ coef
    model = LinearModel(coef, intercept, tuple(feature_schema), rank_deficient=deficient)
    yhat = predict(model, X)
    ss_tot = float(np.sum((y - y_mean) ** 2))
    train = 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot if ss_tot > 0 else float("nan")
    return model.with_scores(train=train)


def predict(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != model.coefficients.size:
        raise SchemaError(
            f"expected {model.coefficients.size} columns, got {X.shape[1]}")
    return X @ model.coefficients + model.intercept


def r2_score(y, yhat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise SchemaError("y and yhat must be 1-D and equally long")
    if y.size < 2:
        raise InsufficientDataError("R² needs at least two samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedScoreError("target has zero variance")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


# --------------------------------------------------------------------------
# logistic regression

@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    converged: bool = True
    n_iter: int = 0
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercept", float(self.intercept))
        if not (np.all(np.isfinite(w)) and np.isfinite(self.intercept)):
            raise ValidationError("logistic parameters must be finite")

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.weights.size:
            raise SchemaError(f"expected {self.weights.size} columns, got {X.shape[1]}")
        return X @ self.weights + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(params, X, labels, l2: float = 1e-6) -> float:
    """Mean negative log-likelihood plus ``l2/2 * |w|²``; ``params = [w..., b]``."""
    params = np.asarray(params, dtype=float)
    z = X @ params[:-1] + params[-1]
    nll = np.logaddexp(0.0, z) - labels * z
    return float(nll.mean() + 0.5 * l2 * params[:-1] @ params[:-1])


def logistic_gradient(params, X, labels, l2: float = 1e-6) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    z = X @ params[:-1] + params[-1]
    err = _sigmoid(z) - labels
    n = X.shape[0]
    g = np.empty_like(params)
    g[:-1] = X.T @ err / n + l2 * params[:-1]
    g[-1] = err.mean()
    return g


def _logistic_hessian(params, X, l2: float) -> np.ndarray:
    z = X @ params[:-1] + params[-1]
    p = _sigmoid(z)
    w = p * (1.0 - p)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    H = (Xa * w[:, None]).T @ Xa / X.shape[0]
    H[:-1, :-1] += l2 * np.eye(X.shape[1])
    return H


def fit_logistic(X, labels, max_iters: int = 100, tolerance: float = 1e-8,
                 l2: float = 1e-6) -> LogisticModel:
    """Damped Newton maximisation of the L2-conditioned log-likelihood.

    Each step is halved until the loss does not increase, so the recorded
    loss history is monotone non-increasing.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.size != X.shape[0]:
        raise SchemaError("labels and X differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0/1")
    if y.min() == y.max():
        raise DegenerateLabelsError("both classes must be present")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features must be finite")

    params = np.zeros(X.shape[1] + 1)
    loss = logistic_loss(params, X, y, l2)
    history = [loss]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g = logistic_gradient(params, X, y, l2)
        if np.max(np.abs(g)) < tolerance:
            converged = True
            it -= 1
            break
        H = _logistic_hessian(params, X, l2)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            trial = params - t * step
            trial_loss = logistic_loss(trial, X, y, l2)
            if trial_loss <= loss:
                break
            t *= 0.5
        else:
            break  # no descent possible along the Newton direction
        params, loss = trial, trial_loss
        history.append(loss)
    else:
        converged = bool(np.max(np.abs(logistic_gradient(params, X, y, l2))) < tolerance)
    return LogisticModel(params[:-1], params[-1], converged, it, tuple(history))
