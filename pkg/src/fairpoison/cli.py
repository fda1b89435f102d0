"""Command-line front end.

Usage::

    python -m fairpoison generate --n 2000 --separation 5 --seed 7 --out-dir runs/data
    python -m fairpoison train --train runs/data/train.csv --test runs/data/test.csv --out-dir runs/clean
    python -m fairpoison attack --train runs/data/train.csv --validation runs/data/validation.csv \\
        --budget-fraction 0.05 --out-dir runs/attack
    python -m fairpoison evaluate --model runs/attack/poisoned_model.json --data runs/data/test.csv
    python -m fairpoison experiment --sweep separation --runs 10 --out-dir runs/sweep

Settings come from a flat TOML file (``--config``) with command-line flags
taking precedence. Unknown keys are rejected, every field is validated
before any work starts, and the merged configuration is written to
``config.toml`` in the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import tomli
import tomli_w

from . import transfer
from .attack import (PRIORS_RATIO, AttackConfig, ModelSpec, run_attack, write_trace)
from .data import (DataError, SyntheticConfig, generate_synthetic, group_sizes, load_csv,
                   read_samples, split, write_samples)
from .experiments import (BlackBox, default_jobs, run_fraction_sweep, run_separation_sweep,
                          run_transfer_study)
from .fairness import evaluate
from .models import (ConvergenceError, LinearModel, LossKind, TrainConfig, predict, select_c,
                     train)

log = logging.getLogger("fairpoison")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OTHER = 2, 3, 4, 1


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# --- typed fields -------------------------------------------------------------

def _int(v):
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise ValueError("expected an integer")
    return int(v)


def _float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    out = float(v)
    if not math.isfinite(out):
        raise ValueError("expected a finite number")
    return out


def _str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "false"):
        return v.lower() == "true"
    raise ValueError("expected true or false")


def _float_list(v):
    if isinstance(v, str):
        v = [p for p in v.split(",") if p.strip()]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list of numbers")
    return [_float(x) for x in v]


def _choice(*options):
    def parse(v):
        v = _str(v)
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


def _lambda(v):
    if v == PRIORS_RATIO:
        return v
    try:
        return _float(v)
    except (TypeError, ValueError):
        raise ValueError(f"expected {PRIORS_RATIO!r} or a number") from None


@dataclass(frozen=True)
class Field:
    parse: Callable[[Any], Any]
    default: Any
    help: str
    check: Callable[[Any], bool] = lambda v: True
    requirement: str = ""


_pos = (lambda v: v > 0, "must be positive")
_nonneg = (lambda v: v >= 0, "must be >= 0")

FIELDS: dict[str, Field] = {
    # synthetic data
    "n_samples": Field(_int, 2000, "synthetic sample count", *(lambda v: v >= 4, "must be >= 4")),
    "separation": Field(_float, 0.0, "class-centroid distance S", *_nonneg),
    "rotation": Field(_float, math.pi / 4, "group-tag rotation angle (radians)"),
    "seed": Field(_int, 0, "master seed", *_nonneg),
    # external CSV data
    "data": Field(_str, None, "dataset CSV"),
    "train": Field(_str, None, "training CSV"),
    "validation": Field(_str, None, "attacker validation CSV"),
    "test": Field(_str, None, "test CSV"),
    "model": Field(_str, None, "model JSON"),
    "label_column": Field(_str, None, "label column of a raw CSV"),
    "sensitive_column": Field(_str, None, "sensitive-attribute column of a raw CSV"),
    "favorable_value": Field(_str, None, "label value mapped to +1"),
    "privileged_value": Field(_str, None, "sensitive value mapped to the privileged group"),
    # training
    "loss_kind": Field(_choice("logistic", "squared_hinge"), "logistic", "linear model loss"),
    "reg_c": Field(_float_list, [0.5, 1.0, 5.0, 10.0], "C value or CV grid",
                   lambda v: all(c > 0 for c in v), "values must be positive"),
    "cv_folds": Field(_int, 5, "cross-validation folds", lambda v: v >= 2, "must be >= 2"),
    "tolerance": Field(_float, 1e-8, "training gradient-norm tolerance", *_pos),
    "max_iterations": Field(_int, 1000, "training iteration cap", *_pos),
    # attack
    "step_size": Field(_float, 0.1, "attack step size (standardized units)", *_pos),
    "stop_threshold": Field(_float, 1e-5, "attack stop threshold on A", *_pos),
    "attack_iterations": Field(_int, 100, "attack iteration cap per point", *_pos),
    "budget_fraction": Field(_float, 0.05, "poison points as a fraction of train size", *_nonneg),
    "budget_count": Field(_int, None, "absolute poison count (overrides the fraction)", *_nonneg),
    "lambda_policy": Field(_lambda, PRIORS_RATIO, "privileged-term weight"),
    # experiments
    "sweep": Field(_choice("separation", "fraction", "transfer"), "separation", "experiment kind"),
    "runs": Field(_int, None, "runs per setting (default 10, transfer 5)", *_pos),
    "s_values": Field(_float_list, [float(s) for s in range(10)], "separations to sweep",
                      lambda v: all(s >= 0 for s in v), "values must be >= 0"),
    "fractions": Field(_float_list, [0.05, 0.1, 0.2, 0.3], "poison fractions to sweep",
                       lambda v: all(f >= 0 for f in v), "values must be >= 0"),
    "include_generic": Field(_bool, True, "add the error-generic baseline"),
    "surrogate_data_seed": Field(_int, None, "seed of the black-box surrogate data", *_nonneg),
    # plumbing
    "out_dir": Field(_str, "out", "output directory"),
    "jobs": Field(_int, None, "worker processes (default: available CPUs)", *_pos),
}


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"config: {path}: {exc}"]) from None
    return raw


def resolve(file_values: dict, overrides: dict) -> dict:
    """Merge file values and flag overrides, then validate every field.

    All problems are collected and raised together.
    """
    problems = [f"{k}: unknown key" for k in sorted(file_values) if k not in FIELDS]
    merged = {}
    for key, spec in FIELDS.items():
        raw = overrides.get(key, file_values.get(key, spec.default))
        if raw is None:
            merged[key] = None
            continue
        try:
            value = spec.parse(raw)
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: {exc} (got {raw!r})")
            continue
        if not spec.check(value):
            problems.append(f"{key}: {spec.requirement} (got {raw!r})")
            continue
        merged[key] = value
    raw_cols = [merged.get(k) for k in ("label_column", "sensitive_column",
                                         "favorable_value", "privileged_value")]
    if any(v is not None for v in raw_cols) and not all(v is not None for v in raw_cols):
        problems.append("label_column, sensitive_column, favorable_value, privileged_value: "
                        "set all four to read a raw CSV")
    if problems:
        raise ConfigError(problems)
    return merged


def command_keys(command: str) -> list[str]:
    keys = COMMANDS[command][2]
    raw = RAW_CSV_KEYS if {"data", "train"} & set(keys) else []
    return ["seed", "out_dir", "jobs", *keys, *raw]


def echo_config(cfg: dict, command: str, out_dir: Path) -> None:
    """Write the settings that drive ``command`` (unset optional ones omitted)."""
    doc = {"command": command}
    doc.update((k, cfg[k]) for k in command_keys(command) if cfg[k] is not None)
    (out_dir / "config.toml").write_text(tomli_w.dumps(doc), encoding="utf-8")


# --- helpers ------------------------------------------------------------------

def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError([f"{k}: required by this command" for k in missing])


def load_data(cfg, path):
    if cfg["label_column"] is not None:
        return load_csv(path, cfg["label_column"], cfg["sensitive_column"],
                        cfg["favorable_value"], cfg["privileged_value"])
    return read_samples(path)


def _regularization(cfg, data, kind) -> float:
    grid = cfg["reg_c"]
    if len(grid) == 1:
        return grid[0]
    return select_c(data, kind, grid, cfg["cv_folds"], cfg["seed"], cfg["tolerance"])


def _attack_config(cfg) -> AttackConfig:
    return AttackConfig(step_size=cfg["step_size"], stop_threshold=cfg["stop_threshold"],
                        max_iterations=cfg["attack_iterations"],
                        poison_fraction=cfg["budget_fraction"], poison_count=cfg["budget_count"],
                        lambda_policy=cfg["lambda_policy"], seed=cfg["seed"])


def load_model(path):
    """Linear-model JSON, or a tagged transfer-model JSON."""
    text = Path(path).read_text(encoding="utf-8")
    if '"kind"' in text:
        return transfer.from_json(text)
    return LinearModel.from_json(text)


def _predictor(model):
    if isinstance(model, LinearModel):
        return lambda X: predict(model, X)
    return model.predict


# --- commands -----------------------------------------------------------------

def cmd_generate(cfg, out: Path):
    data = generate_synthetic(SyntheticConfig(cfg["n_samples"], cfg["separation"],
                                              cfg["rotation"], cfg["seed"]))
    write_samples(data, out / "data.csv")
    parts = split(data, seed=cfg["seed"])
    for name in ("train", "validation", "test"):
        write_samples(getattr(parts, name), out / f"{name}.csv")
    log.info("wrote %d samples (+ 50/30/20 split) to %s", len(data), out)


def cmd_inspect(cfg, out: Path):
    _require(cfg, "data")
    data = load_data(cfg, cfg["data"])
    p, m = group_sizes(data)
    summary = {"samples": len(data), "features": list(data.feature_names),
               "positive": int(np.sum(data.labels == 1)),
               "negative": int(np.sum(data.labels == -1)),
               "unprivileged": p, "privileged": m,
               "feature_min": data.features.min(axis=0).tolist(),
               "feature_max": data.features.max(axis=0).tolist()}
    text = json.dumps(summary, indent=2, sort_keys=True)
    sys.stdout.write(text + "\n")
    (out / "summary.json").write_text(text + "\n", encoding="utf-8")


def cmd_train(cfg, out: Path):
    _require(cfg, "train")
    data = load_data(cfg, cfg["train"])
    kind = LossKind(cfg["loss_kind"])
    c = _regularization(cfg, data, kind)
    model = train(data, kind, c, TrainConfig(c, cfg["cv_folds"], cfg["tolerance"],
                                             cfg["max_iterations"], cfg["seed"]))
    (out / "model.json").write_text(model.to_json() + "\n", encoding="utf-8")
    eval_set = load_data(cfg, cfg["test"]) if cfg["test"] else data
    rec = evaluate(predict(model, eval_set.features), eval_set.labels, eval_set.groups)
    _dump_json(rec.to_dict(), out / "metrics.json")
    log.info("trained %s model with C=%g", kind.value, c)


def cmd_attack(cfg, out: Path):
    _require(cfg, "train", "validation")
    tr = load_data(cfg, cfg["train"])
    val = load_data(cfg, cfg["validation"])
    if cfg["model"]:
        target = load_model(cfg["model"])
        if not isinstance(target, LinearModel):
            raise ConfigError(["model: the attack needs a linear (differentiable) model"])
        kind, c = target.loss_kind, target.reg_c
    else:
        kind = LossKind(cfg["loss_kind"])
        c = _regularization(cfg, tr, kind)
    spec = ModelSpec(kind, c, cfg["tolerance"], cfg["max_iterations"])
    result = run_attack(tr, val, spec, _attack_config(cfg))
    poison = result.poison
    if poison is not None:
        write_samples(poison, out / "poison.csv")
    else:
        (out / "poison.csv").write_text(",".join([*tr.feature_names, "label", "group"]) + "\n",
                                        encoding="utf-8")
    poisoned = train(result.poisoned_train, kind, c)
    (out / "poisoned_model.json").write_text(poisoned.to_json() + "\n", encoding="utf-8")
    write_trace(result.trace, out / "trace.csv")
    log.info("crafted %d poison points (C=%g)", 0 if poison is None else len(poison), c)


def cmd_evaluate(cfg, out: Path):
    _require(cfg, "model", "data")
    model = load_model(cfg["model"])
    data = load_data(cfg, cfg["data"])
    rec = evaluate(_predictor(model)(data.features), data.labels, data.groups)
    _dump_json(rec.to_dict(), out / "metrics.json")
    sys.stdout.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def cmd_experiment(cfg, out: Path):
    attack = _attack_config(cfg)
    jobs = cfg["jobs"] or default_jobs()
    sweep = cfg["sweep"]
    if sweep == "separation":
        report = run_separation_sweep(cfg["s_values"], cfg["runs"] or 10, attack,
                                      n_samples=cfg["n_samples"], seed=cfg["seed"], jobs=jobs,
                                      black_box=BlackBox(surrogate_data_seed=cfg["surrogate_data_seed"]))
    else:
        if cfg["data"]:
            data, name = load_data(cfg, cfg["data"]), Path(cfg["data"]).stem
        else:
            data = generate_synthetic(SyntheticConfig(cfg["n_samples"], cfg["separation"],
                                                      cfg["rotation"], cfg["seed"]))
            name = f"synthetic_S{cfg['separation']:g}"
        if sweep == "fraction":
            report = run_fraction_sweep(data, cfg["fractions"], cfg["runs"] or 10, attack,
                                        cfg["include_generic"], dataset_name=name,
                                        seed=cfg["seed"], jobs=jobs)
        else:
            report = run_transfer_study(data, attack, cfg["runs"] or 5, dataset_name=name,
                                        seed=cfg["seed"], jobs=jobs)
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")
    log.info("%s sweep: %d records, %d failed runs", sweep, len(report.records),
             len(report.failures))


COMMANDS = {
    "generate": (cmd_generate, "generate a synthetic dataset and its 50/30/20 split",
                 ["n_samples", "separation", "rotation"]),
    "inspect": (cmd_inspect, "summarize a dataset CSV", ["data"]),
    "train": (cmd_train, "train a linear model and report clean metrics",
              ["train", "test", "loss_kind", "reg_c", "cv_folds", "tolerance", "max_iterations"]),
    "attack": (cmd_attack, "craft fairness poisoning points against a linear model",
               ["train", "validation", "model", "loss_kind", "reg_c", "cv_folds", "tolerance",
                "max_iterations", "step_size", "stop_threshold", "attack_iterations",
                "budget_fraction", "budget_count", "lambda_policy"]),
    "evaluate": (cmd_evaluate, "fairness metrics of a model on a dataset", ["model", "data"]),
    "experiment": (cmd_experiment, "run a separation, fraction or transfer sweep",
                   ["sweep", "runs", "s_values", "fractions", "include_generic",
                    "surrogate_data_seed", "data", "n_samples", "separation", "rotation",
                    "step_size", "stop_threshold", "attack_iterations", "budget_fraction",
                    "budget_count", "lambda_policy"]),
}
RAW_CSV_KEYS = ["label_column", "sensitive_column", "favorable_value", "privileged_value"]
FLAG_ALIASES = {"n_samples": ["--n"]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairpoison", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, _keys) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat TOML configuration file")
        for key in command_keys(name):
            flags = [f"--{key.replace('_', '-')}", *FLAG_ALIASES.get(key, [])]
            p.add_argument(*flags, dest=key, default=argparse.SUPPRESS, help=FIELDS[key].help)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        file_values = load_config_file(config_path) if config_path else {}
        file_values.pop("command", None)  # echoed configs may be fed back in
        cfg = resolve(file_values, args)
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        echo_config(cfg, command, out)
        COMMANDS[command][0](cfg, out)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error[config]: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, RuntimeError) as exc:
        print(f"error[run]: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return 0


if __name__ == "__main__":
    sys.exit(main())
