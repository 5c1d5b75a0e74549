"""Search for data-driven analytical redundancy relations.

Two strategies learn residuals from normal-operation data:

* :func:`exhaustive_minimal_arrs` walks the subset lattice top-down from the
  full candidate set and returns every minimal feature set that predicts the
  target to the required validation R².
* :func:`forward_select_with_delays` greedily grows one feature set over
  (variable, delay) pairs and prunes it afterwards.

Both fit on the chronologically first part of the data and score on the
rest.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BudgetExceededError,
    SchemaError,
    UndefinedScoreError,
    ValidationError,
)
from .regress import LinearModel, fit_least_squares, predict, r2_score
from .timeseries import (
    INTEGRAL_PREFIX,
    Dataset,
    FeatureRef,
    SplitSpec,
    add_integral_columns,
    build_design_matrix,
    chrono_split,
    integral_name,
)

log = logging.getLogger(__name__)

FORWARD = "forward"
EXHAUSTIVE = "exhaustive"
_TIE = 1e-12


@dataclass(frozen=True)
class SearchConfig:
    r2_min: float = 0.99
    improvement_margin: float = 0.005
    max_loads: int = 5
    delays: tuple[int, ...] = (0, 1, 2, 3)
    candidate_variables: tuple[str, ...] | None = None
    train_fraction: float = 0.7
    max_subsets: int = 20_000

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(sorted({int(d) for d in self.delays})))
        if self.candidate_variables is not None:
            object.__setattr__(self, "candidate_variables",
                               tuple(self.candidate_variables))
        if not 0.0 < self.r2_min <= 1.0:
            raise ValidationError("r2_min must lie in (0, 1]")
        if self.improvement_margin < 0:
            raise ValidationError("improvement_margin must be >= 0")
        if self.max_loads < 1:
            raise ValidationError("max_loads must be >= 1")
        if not self.delays or self.delays[0] < 0:
            raise ValidationError("delays must be a non-empty set of integers >= 0")
        if self.max_subsets < 1:
            raise ValidationError("max_subsets must be >= 1")
        SplitSpec(self.train_fraction)

    @property
    def max_delay(self) -> int:
        return self.delays[-1]

    def split(self, ds: Dataset) -> tuple[Dataset, Dataset]:
        return chrono_split(ds, SplitSpec(self.train_fraction), self.max_delay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delays"] = list(self.delays)
        if self.candidate_variables is not None:
            d["candidate_variables"] = list(self.candidate_variables)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "delays" in known:
            known["delays"] = tuple(known["delays"])
        return cls(**known)


@dataclass(frozen=True)
class ResidualSpec:
    target: str
    loads: tuple[FeatureRef, ...]
    model: LinearModel
    valid_score: float
    minimal: bool = False
    config: SearchConfig = field(default_factory=SearchConfig, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "loads", tuple(self.loads))
        if not self.loads:
            raise ValidationError("a residual needs at least one load")
        check_no_self_reference(self.target, self.loads)

    @property
    def name(self) -> str:
        return f"r_{self.target}"

    @property
    def max_lag(self) -> int:
        return max(f.lag for f in self.loads)

    def describe(self) -> str:
        return f"{self.name} = {self.target} - model({', '.join(f.label for f in self.loads)})"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "target": self.target,
            "loads": [f.to_dict() for f in self.loads],
            "model": self.model.to_dict(),
            "train_score": self.model.train_score,
            "valid_score": self.valid_score,
            "minimal": self.minimal,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualSpec":
        return cls(
            d["target"],
            tuple(FeatureRef.from_dict(f) for f in d["loads"]),
            LinearModel.from_dict(d["model"]),
            float(d["valid_score"]),
            bool(d.get("minimal", False)),
            SearchConfig.from_dict(d.get("config", {})),
        )


def check_no_self_reference(target: str, features: Iterable[FeatureRef]) -> None:
    """Reject loads that read the target itself, at any lag.

    The integral of a raw target is rejected as well; the raw variable may
    still be used to predict its own integral.
    """
    for f in features:
        col = integral_name(f.variable) if f.transform == "integral" else f.variable
        if col == target or col == integral_name(target):
            raise ValidationError(f"load {f.label} references target {target!r}")


def prepare_dataset(ds: Dataset, variables: Sequence[str] | None = None) -> Dataset:
    """Materialize ``int_<x>`` for every raw column (or ``variables``) not yet present."""
    if variables is None:
        variables = [n for n in ds.names if not n.startswith(INTEGRAL_PREFIX)]
    todo = [v for v in variables if integral_name(v) not in ds]
    return add_integral_columns(ds, todo)


def is_constant(col: np.ndarray) -> bool:
    return bool(np.ptp(col) == 0.0)


def candidate_features(ds: Dataset, target: str, config: SearchConfig,
                       delays: Sequence[int] | None = None) -> list[FeatureRef]:
    """(variable, lag) pairs eligible as loads for ``target``, in tie-break order."""
    names = config.candidate_variables if config.candidate_variables is not None else ds.names
    ds.require(list(names) + [target])
    banned = {target, integral_name(target)}
    usable = sorted(n for n in set(names) if n not in banned and not is_constant(ds[n]))
    delays = config.delays if delays is None else sorted(delays)
    return [FeatureRef(n, lag) for lag in delays for n in usable]


def fit_and_score(ds_train: Dataset, ds_valid: Dataset, target: str,
                  features: Sequence[FeatureRef]) -> LinearModel:
    X, y = build_design_matrix(ds_train, features, target)
    model = fit_least_squares(X, y, features)
    Xv, yv = build_design_matrix(ds_valid, features, target)
    return model.with_scores(valid=r2_score(yv, predict(model, Xv)))


def is_arr(ds_train: Dataset, ds_valid: Dataset, target: str,
           features: Sequence[FeatureRef], config: SearchConfig) -> tuple[bool, LinearModel]:
    """Fit on training rows; the set is an ARR iff validation R² >= ``r2_min``."""
    if not features:
        raise ValidationError("is_arr needs at least one feature")
    check_no_self_reference(target, features)
    model = fit_and_score(ds_train, ds_valid, target, features)
    return model.valid_score >= config.r2_min, model


class _Scorer:
    """Memoized, budgeted ``is_arr`` over feature subsets of one target."""

    def __init__(self, ds_train, ds_valid, target, config, budget=None):
        self.ds_train, self.ds_valid = ds_train, ds_valid
        self.target, self.config = target, config
        self.budget = budget
        self.memo: dict[frozenset, tuple[bool, LinearModel]] = {}

    def __call__(self, subset: frozenset, order: Sequence[FeatureRef]) -> tuple[bool, LinearModel]:
        hit = self.memo.get(subset)
        if hit is not None:
            return hit
        if self.budget is not None and len(self.memo) >= self.budget:
            raise BudgetExceededError(
                f"exhaustive search for {self.target!r} exceeded {self.budget} "
                "fitted subsets; use forward selection instead")
        feats = [f for f in order if f in subset]
        res = is_arr(self.ds_train, self.ds_valid, self.target, feats, self.config)
        self.memo[subset] = res
        return res


def exhaustive_minimal_arrs(ds: Dataset, target: str,
                            config: SearchConfig | None = None) -> list[ResidualSpec]:
    """All minimal feature sets (over variables x delays) that form an ARR.

    Starts from every candidate at once. If that fails there is no residual
    for ``target``. Otherwise each single-feature deletion that is still an
    ARR is explored in turn; sets none of whose deletions are ARRs are
    minimal. Subsets are scored at most once.
    """
    config = config or SearchConfig()
    feats = candidate_features(ds, target, config)
    if not feats:
        return []
    ds_train, ds_valid = config.split(ds)
    scorer = _Scorer(ds_train, ds_valid, target, config, config.max_subsets)
    full = frozenset(feats)
    if not scorer(full, feats)[0]:
        return []
    found: list[frozenset] = []
    seen = {full}
    stack = [full]
    while stack:
        s = stack.pop()
        children = []
        if len(s) > 1:
            for f in reversed([f for f in feats if f in s]):
                c = s - {f}
                if scorer(c, feats)[0]:
                    children.append(c)
        if not children:
            found.append(s)
        for c in children:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    # validation R² is not strictly monotone in the feature set, so drop any
    # result that contains a smaller passing set seen during the walk
    passing = [k for k, (ok, _) in scorer.memo.items() if ok]
    minimal = [s for s in found if not any(p < s for p in passing)]
    specs = []
    for s in minimal:
        order = [f for f in feats if f in s]
        _, model = scorer(s, feats)
        specs.append(ResidualSpec(target, tuple(order), model, model.valid_score,
                                  True, config))
    return sorted(specs, key=lambda sp: _loads_key(sp.loads))


def _loads_key(loads: Sequence[FeatureRef]):
    return (len(loads), sorted((f.variable, f.lag) for f in loads))


def brute_force_minimal_arrs(ds: Dataset, target: str,
                             config: SearchConfig | None = None) -> list[frozenset]:
    """Reference enumeration of every subset; only for small candidate sets."""
    config = config or SearchConfig()
    feats = candidate_features(ds, target, config)
    ds_train, ds_valid = config.split(ds)
    ok = set()
    for k in range(1, len(feats) + 1):
        for combo in combinations(feats, k):
            if is_arr(ds_train, ds_valid, target, list(combo), config)[0]:
                ok.add(frozenset(combo))
    return [s for s in ok if not any(o < s for o in ok)]


def forward_select_with_delays(ds: Dataset, target: str,
                               config: SearchConfig | None = None) -> ResidualSpec | None:
    """Greedy (variable, delay) selection followed by backward pruning.

    Each round tries every unused pair appended to the current loads and
    keeps the best one only if it beats the current validation R² by more
    than ``improvement_margin``. Ties go to the smaller lag, then the
    lexicographically smaller name. Returns ``None`` when ``r2_min`` is
    never reached.
    """
    config = config or SearchConfig()
    feats = candidate_features(ds, target, config)
    if not feats:
        return None
    ds_train, ds_valid = config.split(ds)
    loads: list[FeatureRef] = []
    score = 0.0
    model = None
    for _ in range(config.max_loads):
        best = None
        for f in feats:
            if f in loads:
                continue
            m = fit_and_score(ds_train, ds_valid, target, loads + [f])
            if best is None or m.valid_score > best[1].valid_score + _TIE:
                best = (f, m)
        if best is None or not best[1].valid_score > score + config.improvement_margin:
            break
        loads.append(best[0])
        model = best[1]
        score = model.valid_score
        log.debug("%s: + %s -> R2 %.6f", target, best[0].label, score)
        if score >= config.r2_min:
            break
    if model is None or score < config.r2_min:
        return None
    spec = ResidualSpec(target, tuple(loads), model, score, False, config)
    return _prune(ds_train, ds_valid, spec, config)


def prune_loads(ds: Dataset, spec: ResidualSpec,
                config: SearchConfig | None = None) -> ResidualSpec:
    """Drop loads, newest first, while the refit keeps ``r2_min``."""
    config = config or spec.config
    ds_train, ds_valid = config.split(ds)
    return _prune(ds_train, ds_valid, spec, config)


def _prune(ds_train, ds_valid, spec, config) -> ResidualSpec:
    loads = list(spec.loads)
    model = spec.model
    for f in reversed(spec.loads):
        if len(loads) == 1:
            break
        rest = [g for g in loads if g != f]
        ok, m = is_arr(ds_train, ds_valid, spec.target, rest, config)
        if ok:
            loads, model = rest, m
    minimal = True
    if len(loads) > 1:
        for f in loads:
            if is_arr(ds_train, ds_valid, spec.target,
                      [g for g in loads if g != f], config)[0]:
                minimal = False
                break
    return ResidualSpec(spec.target, tuple(loads), model, model.valid_score,
                        minimal, config)


def generate_residual_bank(ds: Dataset, config: SearchConfig | None = None,
                           mode: str = FORWARD, targets: Sequence[str] | None = None,
                           workers: int = 1) -> list[ResidualSpec]:
    """Run the chosen search for every non-constant column.

    The result is ordered by dataset column order (then by load set for the
    exhaustive mode), independent of ``workers``.
    """
    config = config or SearchConfig()
    if mode not in (FORWARD, EXHAUSTIVE):
        raise ValidationError(f"unknown search mode {mode!r}")
    names = list(ds.names if targets is None else targets)
    ds.require(names)
    names = [n for n in names if not is_constant(ds[n])]

    def one(target: str) -> list[ResidualSpec]:
        try:
            if mode == FORWARD:
                spec = forward_select_with_delays(ds, target, config)
                return [] if spec is None else [spec]
            return exhaustive_minimal_arrs(ds, target, config)
        except UndefinedScoreError:
            log.info("no residual possible for %s (constant on a split)", target)
            return []

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, names))
    else:
        results = [one(n) for n in names]
    return [spec for group in results for spec in group]


# --------------------------------------------------------------------------
# bank files

def bank_to_json(bank: Sequence[ResidualSpec], metadata: dict | None = None) -> str:
    doc = {"metadata": metadata or {}, "residuals": [s.to_dict() for s in bank]}
    return json.dumps(doc, indent=2, allow_nan=True)


def bank_from_json(text: str) -> tuple[list[ResidualSpec], dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"residual bank is not valid JSON: {exc}") from None
    if isinstance(doc, list):
        return [ResidualSpec.from_dict(d) for d in doc], {}
    try:
        return [ResidualSpec.from_dict(d) for d in doc["residuals"]], doc.get("metadata", {})
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed residual bank: {exc}") from None


def bank_table(bank: Sequence[ResidualSpec], targets: Sequence[str]) -> str:
    """Plain-text table: one row per target with its loads, or ``x``."""
    by_target: dict[str, list[ResidualSpec]] = {}
    for s in bank:
        by_target.setdefault(s.target, []).append(s)
    rows = [("target", "selected variables", "valid R2")]
    for t in targets:
        specs = by_target.get(t)
        if not specs:
            rows.append((t, "x", "x"))
            continue
        for s in specs:
            rows.append((t, ", ".join(f.label for f in s.loads), f"{s.valid_score:.5f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


__all__ = [
    "SearchConfig", "ResidualSpec", "is_arr",
    "exhaustive_minimal_arrs", "brute_force_minimal_arrs",
    "forward_select_with_delays", "prune_loads", "generate_residual_bank",
    "prepare_dataset", "candidate_features", "bank_to_json", "bank_from_json",
    "bank_table",
]
