"""Command-line pipeline: simulate -> generate -> evaluate -> detect -> roc.

Stages talk only through files in the output directory::

    normal.csv, <scenario>.csv      simulate
    scenarios.json                  simulate (fault timing + run metadata)
    bank.json, bank_table.txt       generate
    signature.csv, evaluation.json  evaluate
    detection.json                  detect
    roc.json, roc_*.csv             roc

Configuration is a YAML file; ``--seed``, ``--out`` and ``--mode`` override
the file. Exit codes: 0 ok / nothing detected, 10 fault detected (detect
only), 1 usage error, 2 validation or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .arrgen import (
    EXHAUSTIVE,
    FORWARD,
    ResidualSpec,
    SearchConfig,
    bank_from_json,
    bank_table,
    bank_to_json,
    generate_residual_bank,
    prepare_dataset,
)
from .detect import detection_report, learn_thresholds, roc_experiment
from .errors import ConfigurationError, DdarrError
from .evaluate import isolability_matrix, residual_signal
from .tanksim import (
    ABRUPT,
    INCIPIENT,
    NO_FAULT,
    FaultScenario,
    TankParams,
    simulate,
)
from .timeseries import Dataset, read_csv, write_csv

log = logging.getLogger("ddarr")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_FAULT = 0, 1, 2, 10
# seed of the reference run; the four-tank acceptance checks are tied to it
DEFAULT_SEED = 1

DEFAULT_SCENARIOS = (
    FaultScenario("tank1", INCIPIENT, name="tank1_incipient"),
    FaultScenario("tank1", ABRUPT, name="tank1_abrupt"),
)


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    out: Path = Path("ddarr-run")
    mode: str = FORWARD
    params: TankParams = field(default_factory=TankParams)
    scenarios: tuple[FaultScenario, ...] = DEFAULT_SCENARIOS
    keep_states: bool = False
    normal: Path | None = None
    faults: dict[str, Path] = field(default_factory=dict)
    integrals: list[str] | None = None  # None: every raw column
    search: SearchConfig = field(default_factory=SearchConfig)
    alpha: float = 0.01
    bonferroni: bool = False
    persistence: int = 3
    monitor: list[str] | None = None  # scenario names or csv paths for detect
    roc_train: str = "tank1_abrupt"
    roc_test: str = "tank1_incipient"
    roc_residual: str = "r_int_u1"

    @property
    def normal_path(self) -> Path:
        return self.normal or self.out / "normal.csv"

    def fault_path(self, name: str) -> Path:
        return self.faults.get(name, self.out / f"{name}.csv")

    def scenario(self, name: str) -> FaultScenario:
        for s in self.scenarios:
            if s.label == name:
                return s
        if name == "normal":
            return NO_FAULT
        raise ConfigurationError(f"unknown scenario {name!r}")

    def snapshot(self) -> dict:
        return {
            "seed": self.seed, "mode": self.mode,
            "search": self.search.to_dict(),
            "integrals": self.integrals,
            "alpha": self.alpha, "bonferroni": self.bonferroni,
            "persistence": self.persistence,
        }


def _section(doc: dict, key: str) -> dict:
    val = doc.get(key) or {}
    if not isinstance(val, dict):
        raise ConfigurationError(f"config section {key!r} must be a mapping")
    return val


def load_config(path: str | Path | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a mapping")
    base = Path(path).parent

    def rel(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        if "seed" in doc:
            cfg.seed = int(doc["seed"])
        if "out" in doc:
            cfg.out = rel(doc["out"])
        if "mode" in doc:
            cfg.mode = str(doc["mode"])
        sim = _section(doc, "simulator")
        if "params" in sim:
            cfg.params = TankParams.from_dict(sim["params"] or {})
        if "scenarios" in sim:
            cfg.scenarios = tuple(FaultScenario(**s) for s in sim["scenarios"] or ())
        cfg.keep_states = bool(sim.get("keep_states", False))
        data = _section(doc, "data")
        if data.get("normal"):
            cfg.normal = rel(data["normal"])
        cfg.faults = {k: rel(v) for k, v in (data.get("faults") or {}).items()}
        if "integrals" in doc:
            integ = doc["integrals"]
            cfg.integrals = None if integ in (None, "all") else list(integ)
        if "search" in doc:
            cfg.search = SearchConfig.from_dict(_section(doc, "search"))
        ev = _section(doc, "evaluation")
        cfg.alpha = float(ev.get("alpha", cfg.alpha))
        cfg.bonferroni = bool(ev.get("bonferroni", cfg.bonferroni))
        det = _section(doc, "detection")
        cfg.persistence = int(det.get("persistence", cfg.persistence))
        if det.get("monitor") is not None:
            cfg.monitor = list(det["monitor"])
        roc = _section(doc, "roc")
        cfg.roc_train = roc.get("train", cfg.roc_train)
        cfg.roc_test = roc.get("test", cfg.roc_test)
        cfg.roc_residual = roc.get("residual", cfg.roc_residual)
    except TypeError as exc:
        raise ConfigurationError(f"bad config value: {exc}") from None
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _metadata(cfg: RunConfig, stage: str) -> dict:
    return {"tool": "ddarr", "version": __version__, "stage": stage, "seed": cfg.seed}


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _load(path: Path, cfg: RunConfig) -> Dataset:
    if not path.exists():
        raise ConfigurationError(f"missing dataset {path}")
    return prepare_dataset(read_csv(path), cfg.integrals)


def _load_bank(cfg: RunConfig) -> list[ResidualSpec]:
    path = cfg.out / "bank.json"
    if not path.exists():
        raise ConfigurationError(f"missing residual bank {path}; run 'generate' first")
    return bank_from_json(path.read_text(encoding="utf-8"))[0]


def _scenario_index(cfg: RunConfig) -> dict[str, FaultScenario]:
    """Scenarios recorded by ``simulate`` when present, else from the config."""
    path = cfg.out / "scenarios.json"
    found = {s.label: s for s in cfg.scenarios}
    if path.exists():
        doc = json.loads(path.read_text(encoding="utf-8"))
        for s in doc.get("scenarios", []):
            sc = FaultScenario(**{k: v for k, v in s.items() if k not in ("seed", "file")})
            found[sc.label] = sc
    return found


# --------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: RunConfig) -> int:
    runs = [NO_FAULT] + list(cfg.scenarios)
    labels = [s.label for s in runs]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"scenario names must be unique: {labels}")
    seeds = _child_seeds(cfg.seed, len(runs))
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory: {exc}") from None
    index = []
    for scenario, seed in zip(runs, seeds):
        ds = simulate(cfg.params, scenario, seed, keep_states=cfg.keep_states)
        path = cfg.out / f"{scenario.label}.csv"
        measured = ds.select([n for n in ds.names if n.startswith(("u", "y"))])
        write_csv(measured, path)
        if cfg.keep_states:
            write_csv(ds.select([n for n in ds.names if n not in measured.names]),
                      cfg.out / f"{scenario.label}.states.csv")
        index.append({**scenario.to_dict(), "name": scenario.label, "seed": seed,
                      "file": path.name})
        log.info("wrote %s", path)
    _write(cfg.out / "scenarios.json", _dump({
        "metadata": _metadata(cfg, "simulate"),
        "params": cfg.params.to_dict(),
        "scenarios": index[1:],
        "normal": index[0],
    }))
    print(f"simulated {len(runs)} datasets into {cfg.out}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig) -> int:
    ds = _load(cfg.normal_path, cfg)
    bank = generate_residual_bank(ds, cfg.search, cfg.mode)
    meta = {**_metadata(cfg, "generate"), "config": cfg.snapshot(),
            "dataset": str(cfg.normal_path.name)}
    _write(cfg.out / "bank.json", bank_to_json(bank, meta) + "\n")
    table = bank_table(bank, ds.names)
    _write(cfg.out / "bank_table.txt", table + "\n")
    print(table)
    if not bank:
        log.warning("no residuals found; the bank is empty")
    return EXIT_OK


def _post_onset(ds: Dataset, scenario: FaultScenario) -> Dataset:
    return ds if scenario.kind == "none" else ds.slice_time(scenario.onset)


def cmd_evaluate(cfg: RunConfig) -> int:
    bank = _load_bank(cfg)
    normal = _load(cfg.normal_path, cfg)
    scenarios = _scenario_index(cfg)
    names = [s.label for s in cfg.scenarios]
    if not names:
        raise ConfigurationError("evaluate needs at least one fault scenario")
    faulty = {n: _post_onset(_load(cfg.fault_path(n), cfg), scenarios[n]) for n in names}
    if not bank:
        log.warning("empty residual bank; nothing to evaluate")
    matrix = isolability_matrix(bank, faulty, normal, cfg.alpha, cfg.bonferroni)
    _write(cfg.out / "signature.csv", matrix.to_csv())
    useful = sorted({r for r, row in zip(matrix.residuals, matrix.sensitivity) if row.any()},
                    key=matrix.residuals.index)
    _write(cfg.out / "evaluation.json", _dump({
        "metadata": {**_metadata(cfg, "evaluate"), "config": cfg.snapshot()},
        "selected_residuals": useful,
        **matrix.to_dict(),
    }))
    print(matrix.to_csv(), end="")
    return EXIT_OK


def _selected(cfg: RunConfig, bank: list[ResidualSpec]) -> list[ResidualSpec]:
    """Residuals kept by ``evaluate`` (all of them if it has not run)."""
    path = cfg.out / "evaluation.json"
    if not path.exists():
        return bank
    keep = set(json.loads(path.read_text(encoding="utf-8")).get("selected_residuals", []))
    return [s for s in bank if s.name in keep]


def cmd_detect(cfg: RunConfig) -> int:
    bank = _selected(cfg, _load_bank(cfg))
    normal = _load(cfg.normal_path, cfg)
    th = {s.name: learn_thresholds(residual_signal(s, normal), cfg.persistence) for s in bank}
    scenarios = _scenario_index(cfg)
    targets = cfg.monitor if cfg.monitor is not None else [s.label for s in cfg.scenarios]
    reports = {}
    any_fault = False
    for target in targets:
        if target in scenarios or target == "normal":
            scenario = scenarios.get(target, NO_FAULT)
            path = cfg.normal_path if target == "normal" else cfg.fault_path(target)
        else:
            scenario, path = None, Path(target)
        rep = detection_report(bank, _load(path, cfg), scenario, th)
        any_fault |= rep.detected
        reports[target] = rep.to_dict()
        print(f"{target}: detected={rep.detected} delay={rep.detection_delay}")
    _write(cfg.out / "detection.json", _dump({
        "metadata": {**_metadata(cfg, "detect"), "config": cfg.snapshot()},
        "thresholds": {k: v.to_dict() for k, v in th.items()},
        "reports": reports,
    }))
    return EXIT_FAULT if any_fault else EXIT_OK


def cmd_roc(cfg: RunConfig) -> int:
    bank = _load_bank(cfg)
    scenarios = _scenario_index(cfg)
    for name in (cfg.roc_train, cfg.roc_test):
        if name not in scenarios:
            raise ConfigurationError(f"unknown ROC scenario {name!r}")
    spec = next((s for s in bank if s.name == cfg.roc_residual), None)
    if spec is None:
        log.warning("residual %s not in bank; reporting sensors-only ROC", cfg.roc_residual)
    train = _load(cfg.fault_path(cfg.roc_train), cfg)
    test = _load(cfg.fault_path(cfg.roc_test), cfg)
    exp = roc_experiment(train, scenarios[cfg.roc_train], test, scenarios[cfg.roc_test], spec)
    _write(cfg.out / "roc.json", _dump({
        "metadata": {**_metadata(cfg, "roc"), "train": cfg.roc_train,
                     "test": cfg.roc_test, "residual": cfg.roc_residual if spec else None},
        **exp.to_dict(),
    }))
    _write(cfg.out / "roc_without_residual.csv", exp.without_residual.to_csv())
    if exp.with_residual is not None:
        _write(cfg.out / "roc_with_residual.csv", exp.with_residual.to_csv())
        print(f"AUC without residual {exp.without_residual.auc:.4f}, "
              f"with {cfg.roc_residual} {exp.with_residual.auc:.4f}")
    else:
        print(f"AUC without residual {exp.without_residual.auc:.4f}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "detect": cmd_detect,
    "roc": cmd_roc,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies must not reset values given before the subcommand
    d = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration", **d)
    common.add_argument("--out", help="output directory (overrides config)", **d)
    common.add_argument("--seed", type=int, help="top-level random seed (overrides config)", **d)
    common.add_argument("--mode", choices=(FORWARD, EXHAUSTIVE),
                        help="residual search strategy (overrides config)", **d)
    common.add_argument("-v", "--verbose", action="store_true", **d)
    return common


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddarr", description=__doc__.splitlines()[0], parents=[_common(False)])
    p.add_argument("--version", action="version", version=f"ddarr {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, parents=[_common(True)], help=fn.__name__[4:])
        if name == "detect":
            sp.add_argument("--data", action="append",
                            help="dataset or scenario name to monitor (repeatable)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError("seed must be non-negative")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = Path(args.out)
        if args.mode is not None:
            cfg.mode = args.mode
        if cfg.mode not in (FORWARD, EXHAUSTIVE):
            raise ConfigurationError(f"unknown mode {cfg.mode!r}")
        if getattr(args, "data", None):
            cfg.monitor = args.data
        return COMMANDS[args.command](cfg)
    except (DdarrError, ValueError) as exc:
        print(f"ddarr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
