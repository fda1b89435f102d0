"""Experiment protocols: separation sweep, poison-fraction sweep, transfer study.

Every run derives its seed as ``seed + run_index`` and is independent of the
others, so runs may execute in worker processes; records are always
assembled in (parameter, run) order.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import transfer
from .attack import AttackConfig, ModelSpec, run_attack, run_generic_attack
from .data import (DataSplit, SampleSet, SyntheticConfig, generate_synthetic, split)
from .fairness import MetricsRecord, evaluate
from .models import LossKind, predict, select_c, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
C_GRID = (0.5, 1.0, 5.0, 10.0)
FRACTIONS = (0.5, 0.3, 0.2)
TRANSFER_TARGETS = ("logistic_regression", "linear_svm", "rbf_svm", "gaussian_nb",
                    "decision_tree", "random_forest")


@dataclass(frozen=True)
class WhiteBox:
    name = "white_box"


@dataclass(frozen=True)
class BlackBox:
    """Attack a surrogate trained on data disjoint from the target's."""

    surrogate: LossKind = LossKind.LOGISTIC
    surrogate_data_seed: int | None = None
    name = "black_box"


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    dataset: str
    parameter: float        # separation S or poison fraction
    budget: int
    run: int
    model: str
    clean: MetricsRecord
    poisoned: MetricsRecord


@dataclass
class ExperimentReport:
    sweep: str
    config: dict
    records: list[RunRecord] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for r in self.records:
            for phase, m in (("clean", r.clean), ("poisoned", r.poisoned)):
                out.append({"schema_version": SCHEMA_VERSION, "sweep": self.sweep,
                            "scenario": r.scenario, "dataset": r.dataset,
                            "parameter": r.parameter, "budget": r.budget, "run": r.run,
                            "model": r.model, "phase": phase, **m.to_dict()})
        return out

    def select(self, **kw) -> list[RunRecord]:
        return [r for r in self.records if all(getattr(r, k) == v for k, v in kw.items())]

    def aggregate(self) -> list[dict]:
        """Mean and sample std per (scenario, dataset, parameter, model, phase)."""
        groups: dict[tuple, list[MetricsRecord]] = {}
        for r in self.records:
            for phase, m in (("clean", r.clean), ("poisoned", r.poisoned)):
                key = (r.scenario, r.dataset, r.parameter, r.model, phase)
                groups.setdefault(key, []).append(m)
        out = []
        for key, recs in groups.items():
            row = dict(zip(("scenario", "dataset", "parameter", "model", "phase"), key))
            row["runs"] = len(recs)
            for name in MetricsRecord.field_names():
                if name == "fairness_epsilon":
                    continue
                vals = [getattr(m, name) for m in recs if getattr(m, name) is not None]
                row[name] = summarize(vals, len(recs))
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        rows = self.rows()
        cols = ["schema_version", "sweep", "scenario", "dataset", "parameter", "budget",
                "run", "model", "phase", *MetricsRecord.field_names()]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: _fmt(v) for k, v in row.items()})

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, "sweep": self.sweep,
                           "config": self.config, "failures": self.failures,
                           "aggregates": self.aggregate()}, indent=2, sort_keys=True)

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def summarize(values: Sequence[float], total: int) -> dict:
    n = len(values)
    if n == 0:
        return {"mean": None, "std": None, "count": 0, "excluded": total}
    arr = np.asarray(values, float)
    std = float(arr.std(ddof=1)) if n > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "count": n, "excluded": total - n}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


# --- building blocks ------------------------------------------------------

def metrics(model_predict: Callable, test: SampleSet) -> MetricsRecord:
    return evaluate(model_predict(test.features), test.labels, test.groups)


def fit_linear(data: SampleSet, kind: LossKind, seed: int, grid=C_GRID):
    c = select_c(data, kind, grid, seed=seed)
    return train(data, kind, c), c


def _poison_train(train_set: SampleSet, poison: SampleSet | None) -> SampleSet:
    return train_set if poison is None else train_set.concat(poison)


def white_box(sp: DataSplit, cfg: AttackConfig, kind=LossKind.LOGISTIC, seed=0,
              generic=False):
    """Clean and poisoned target models when the attacker knows the target."""
    clean, c = fit_linear(sp.train, kind, seed)
    attack = run_generic_attack if generic else run_attack
    res = attack(sp.train, sp.validation, ModelSpec(kind, c), cfg)
    poisoned = train(res.poisoned_train, kind, c, warm_start=clean.theta)
    return clean, poisoned, res


def surrogate_split(sp: DataSplit, seed: int) -> DataSplit:
    """Attacker data drawn from the validation part, disjoint from the target train set."""
    val = sp.validation
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(len(val))
    half = len(val) // 2
    return DataSplit(val.subset(perm[:half]), val.subset(perm[half:]), sp.test)


def craft_black_box(attacker: DataSplit, target_train: SampleSet, cfg: AttackConfig,
                    seed: int, surrogate_kind=LossKind.LOGISTIC) -> SampleSet | None:
    """Optimize poison against a surrogate fitted on the attacker's own data.

    The budget is counted relative to the target training set.
    """
    _check_disjoint(attacker.train, target_train)
    _, c = fit_linear(attacker.train, surrogate_kind, seed)
    cfg = replace(cfg, poison_count=cfg.budget(len(target_train)))
    return run_attack(attacker.train, attacker.validation, ModelSpec(surrogate_kind, c), cfg).poison


def _check_disjoint(a: SampleSet, b: SampleSet):
    rows_a = {r.tobytes() for r in a.features}
    if any(r.tobytes() in rows_a for r in b.features):
        raise AssertionError("surrogate training data overlaps the target training set")


def _synthetic_surrogate_seed(scenario: BlackBox, run_seed: int, run: int) -> int:
    if scenario.surrogate_data_seed is not None:
        return scenario.surrogate_data_seed + run
    return int(np.random.SeedSequence([run_seed, 1]).generate_state(1)[0])


# --- separation sweep -------------------------------------------------------

def _separation_run(args):
    S, run, seed, n, cfg, bb = args
    rs = seed + run
    sp = split(generate_synthetic(SyntheticConfig(n, S, seed=rs)), FRACTIONS, rs)
    cfg = replace(cfg, seed=rs)
    budget = cfg.budget(len(sp.train))
    recs = []
    clean, poisoned, _ = white_box(sp, cfg, LossKind.LOGISTIC, rs)
    recs.append(RunRecord(WhiteBox.name, "synthetic", S, budget, run, "logistic_regression",
                          metrics(lambda X: predict(clean, X), sp.test),
                          metrics(lambda X: predict(poisoned, X), sp.test)))
    sur = generate_synthetic(SyntheticConfig(n, S, seed=_synthetic_surrogate_seed(bb, rs, run)))
    attacker = split(sur, FRACTIONS, rs)
    poison = craft_black_box(attacker, sp.train, cfg, rs, bb.surrogate)
    target, c = fit_linear(sp.train, LossKind.SQUARED_HINGE, rs)
    target_p = train(_poison_train(sp.train, poison), LossKind.SQUARED_HINGE, c,
                     warm_start=target.theta)
    recs.append(RunRecord(BlackBox.name, "synthetic", S, budget, run, "linear_svm",
                          metrics(lambda X: predict(target, X), sp.test),
                          metrics(lambda X: predict(target_p, X), sp.test)))
    return recs


def run_separation_sweep(S_values: Sequence[float] = tuple(range(10)), runs_per_S: int = 10,
                         attack_config: AttackConfig = AttackConfig(), *,
                         n_samples: int = 2000, seed: int = 0, jobs: int = 1,
                         black_box: BlackBox = BlackBox()) -> ExperimentReport:
    """White-box (logistic) and black-box (logistic surrogate -> linear SVM)
    attacks on synthetic data for each separation value."""
    tasks = [(float(S), r, seed, n_samples, attack_config, black_box) for S in S_values
             for r in range(runs_per_S)]
    report = ExperimentReport("separation", {
        "S_values": [float(s) for s in S_values], "runs_per_S": runs_per_S,
        "n_samples": n_samples, "seed": seed, "attack": attack_config_dict(attack_config),
        "surrogate": black_box.surrogate.value,
        "surrogate_data_seed": black_box.surrogate_data_seed})
    _collect(report, _separation_run, tasks, jobs)
    return report


# --- poison-fraction sweep ------------------------------------------------

def _fraction_run(args):
    data, name, frac, run, seed, cfg, generic = args
    rs = seed + run
    sp = split(data, FRACTIONS, rs)
    cfg = replace(cfg, seed=rs, poison_fraction=frac, poison_count=None)
    budget = cfg.budget(len(sp.train))
    recs = []
    clean, poisoned, _ = white_box(sp, cfg, LossKind.LOGISTIC, rs)
    recs.append(RunRecord(WhiteBox.name, name, frac, budget, run, "logistic_regression",
                          metrics(lambda X: predict(clean, X), sp.test),
                          metrics(lambda X: predict(poisoned, X), sp.test)))
    poison = craft_black_box(surrogate_split(sp, rs), sp.train, cfg, rs)
    target, c = fit_linear(sp.train, LossKind.SQUARED_HINGE, rs)
    target_p = train(_poison_train(sp.train, poison), LossKind.SQUARED_HINGE, c,
                     warm_start=target.theta)
    recs.append(RunRecord(BlackBox.name, name, frac, budget, run, "linear_svm",
                          metrics(lambda X: predict(target, X), sp.test),
                          metrics(lambda X: predict(target_p, X), sp.test)))
    if generic:
        clean_g, poisoned_g, _ = white_box(sp, cfg, LossKind.LOGISTIC, rs, generic=True)
        recs.append(RunRecord("generic", name, frac, budget, run, "logistic_regression",
                              metrics(lambda X: predict(clean_g, X), sp.test),
                              metrics(lambda X: predict(poisoned_g, X), sp.test)))
    return recs


def run_fraction_sweep(data: SampleSet, fractions: Sequence[float] = (0.05, 0.1, 0.2, 0.3),
                       runs: int = 10, attack_config: AttackConfig = AttackConfig(),
                       include_generic_baseline: bool = True, *, dataset_name: str = "data",
                       seed: int = 0, jobs: int = 1) -> ExperimentReport:
    """White-box, black-box and (optionally) error-generic attacks per poison fraction.

    Each run re-splits ``data`` 50/30/20; the black-box attacker works on
    halves of the validation part.
    """
    tasks = [(data, dataset_name, float(f), r, seed, attack_config, include_generic_baseline)
             for f in fractions for r in range(runs)]
    report = ExperimentReport("fraction", {
        "fractions": [float(f) for f in fractions], "runs": runs, "seed": seed,
        "dataset": dataset_name, "include_generic_baseline": include_generic_baseline,
        "attack": attack_config_dict(attack_config)})
    _collect(report, _fraction_run, tasks, jobs)
    return report


# --- transfer study ---------------------------------------------------------

def train_target(name: str, data: SampleSet, seed: int):
    """Fit one transfer target and return its predict function."""
    if name == "logistic_regression":
        m, _ = fit_linear(data, LossKind.LOGISTIC, seed)
        return lambda X: predict(m, X)
    if name == "linear_svm":
        m, _ = fit_linear(data, LossKind.SQUARED_HINGE, seed)
        return lambda X: predict(m, X)
    if name == "rbf_svm":
        return transfer.train_rbf_svm(data).predict
    if name == "gaussian_nb":
        return transfer.train_gaussian_nb(data).predict
    if name == "decision_tree":
        return transfer.train_decision_tree(data).predict
    if name == "random_forest":
        return transfer.train_random_forest(data, seed=seed).predict
    raise ValueError(f"unknown target model {name!r}")


def black_box_records(sp: DataSplit, poison: SampleSet | None, targets: Sequence[str],
                      seed: int, dataset: str, parameter: float, budget: int, run: int):
    poisoned_train = _poison_train(sp.train, poison)
    recs = []
    for name in targets:
        clean = train_target(name, sp.train, seed)
        pois = train_target(name, poisoned_train, seed)
        recs.append(RunRecord(BlackBox.name, dataset, parameter, budget, run, name,
                              metrics(clean, sp.test), metrics(pois, sp.test)))
    return recs


def _transfer_run(args):
    data, name, run, seed, cfg = args
    rs = seed + run
    sp = split(data, FRACTIONS, rs)
    cfg = replace(cfg, seed=rs)
    budget = cfg.budget(len(sp.train))
    poison = craft_black_box(surrogate_split(sp, rs), sp.train, cfg, rs)
    return black_box_records(sp, poison, TRANSFER_TARGETS, rs, name,
                             float(cfg.poison_fraction or 0.0), budget, run)


def run_transfer_study(data: SampleSet, attack_config: AttackConfig = AttackConfig(),
                       runs: int = 5, *, dataset_name: str = "data", seed: int = 0,
                       jobs: int = 1) -> ExperimentReport:
    """Poison crafted once per run on a logistic surrogate, replayed on six targets."""
    tasks = [(data, dataset_name, r, seed, attack_config) for r in range(runs)]
    report = ExperimentReport("transfer", {
        "runs": runs, "seed": seed, "dataset": dataset_name,
        "targets": list(TRANSFER_TARGETS), "attack": attack_config_dict(attack_config)})
    _collect(report, _transfer_run, tasks, jobs)
    return report


# --- plumbing -----------------------------------------------------------------

def attack_config_dict(cfg: AttackConfig) -> dict:
    d = asdict(cfg)
    if cfg.bounds is not None:
        d["bounds"] = {"lower": cfg.bounds.lower.tolist(), "upper": cfg.bounds.upper.tolist()}
    return d


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _safe(fn, args):
    try:
        return fn(args), None
    except Exception as exc:  # a failed run is reported, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def _collect(report: ExperimentReport, fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe, [fn] * len(tasks), tasks))
    else:
        results = [_safe(fn, t) for t in tasks]
    for task, (recs, err) in zip(tasks, results):
        if err is None:
            report.records.extend(recs)
        else:
            report.failures.append({"task": _task_label(task), "error": err})
    if report.failures:
        log.warning("%d of %d runs failed and are excluded from aggregates",
                    len(report.failures), len(tasks))


def _task_label(task) -> str:
    return ", ".join(str(t) for t in task if isinstance(t, (int, float, str)))
