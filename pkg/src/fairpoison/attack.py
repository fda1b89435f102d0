"""Gradient-based poisoning of linear classifiers against group fairness.

The attacker maximizes a validation loss ``A(x_c)`` evaluated at the
parameters ``theta*(x_c)`` learned on ``train + {(x_c, y_c)}``. For the
fairness attack the validation samples are relabeled (unprivileged -> +1,
privileged -> -1) and the privileged term is weighted by ``lambda``::

    A = sum_unpriv loss(x_k, +1) + lambda * sum_priv loss(x_j, -1)

so that increasing ``A`` pushes unprivileged samples to the negative class
and privileged ones to the positive class. ``dA/dx_c`` is obtained by
implicit differentiation of the inner optimality condition.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from .data import DataError, GroupTag, SampleSet, group_sizes
from .models import (LinearModel, LossKind, fit_theta, margin_derivatives,
                     objective_derivatives)

log = logging.getLogger(__name__)

PRIORS_RATIO = "priors_ratio"


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("bounds need equal shapes and lower <= upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_data(cls, data: SampleSet) -> "BoxBounds":
        return cls(data.features.min(axis=0), data.features.max(axis=0))

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class PoisonPoint:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class ModelSpec:
    """The (surrogate or target) linear model the attack differentiates through."""

    loss_kind: LossKind = LossKind.LOGISTIC
    reg_c: float = 1.0
    tolerance: float = 1e-8
    max_iterations: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if not self.reg_c > 0:
            raise ValueError("reg_c must be positive")


@dataclass(frozen=True)
class AttackConfig:
    """Algorithm parameters.

    ``step_size`` is in standardized feature units (clean-train std).
    ``lambda_policy`` is ``"priors_ratio"`` (p/m) or a fixed float.
    ``bounds=None`` uses the per-feature min/max of the clean training set.
    ``poison_count``, when set, overrides ``poison_fraction``.
    """

    step_size: float = 0.1
    stop_threshold: float = 1e-5
    max_iterations: int = 100
    poison_fraction: float | None = 0.05
    poison_count: int | None = None
    lambda_policy: str | float = PRIORS_RATIO
    bounds: BoxBounds | None = None
    seed: int = 0

    def __post_init__(self):
        if not (self.step_size > 0 and self.stop_threshold > 0):
            raise ValueError("step_size and stop_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.poison_fraction is None and self.poison_count is None:
            raise ValueError("set poison_fraction or poison_count")
        if self.poison_fraction is not None and self.poison_fraction < 0:
            raise ValueError("poison_fraction must be >= 0")
        if self.poison_count is not None and self.poison_count < 0:
            raise ValueError("poison_count must be >= 0")
        if self.lambda_policy != PRIORS_RATIO and not isinstance(self.lambda_policy, (int, float)):
            raise ValueError(f"bad lambda_policy {self.lambda_policy!r}")

    def budget(self, n_train: int) -> int:
        if self.poison_count is not None:
            return int(self.poison_count)
        return int(round(self.poison_fraction * n_train))


@dataclass(frozen=True)
class AttackObjective:
    """Validation samples with attacker target labels and per-sample weights."""

    features: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    lam: float
    p: int
    m: int


def build_objective(validation: SampleSet, lambda_policy: str | float = PRIORS_RATIO
                    ) -> AttackObjective:
    p, m = group_sizes(validation)
    if p == 0 or m == 0:
        raise DataError(f"validation set needs both groups (unprivileged={p}, privileged={m})")
    lam = p / m if lambda_policy == PRIORS_RATIO else float(lambda_policy)
    priv = validation.groups == GroupTag.PRIVILEGED
    unpriv = validation.groups == GroupTag.UNPRIVILEGED
    keep = priv | unpriv
    targets = np.where(unpriv, 1.0, -1.0)[keep]
    weights = np.where(unpriv, 1.0, lam)[keep]
    return AttackObjective(validation.features[keep], targets, weights, lam, p, m)


def build_generic_objective(validation: SampleSet) -> AttackObjective:
    """Error-generic baseline: unweighted loss on the true labels."""
    n = len(validation)
    p, m = group_sizes(validation)
    return AttackObjective(validation.features, validation.labels.astype(float),
                           np.ones(n), 1.0, p, m)


def _objective_terms(obj: AttackObjective, theta: np.ndarray, kind: LossKind):
    """Attacker loss and its gradient w.r.t. theta."""
    f = obj.features @ theta[:-1] + theta[-1]
    loss, d1, _ = margin_derivatives(kind, obj.targets * f)
    value = float(obj.weights @ loss)
    coef = obj.weights * d1 * obj.targets
    grad = np.append(obj.features.T @ coef, coef.sum())
    return value, grad


def attacker_loss(objective: AttackObjective, model: LinearModel) -> float:
    return _objective_terms(objective, model.theta, model.loss_kind)[0]


def attacker_loss_gradient(objective: AttackObjective, model: LinearModel) -> np.ndarray:
    """Gradient of the attacker loss w.r.t. ``theta = (w, b)``."""
    return _objective_terms(objective, model.theta, model.loss_kind)[1]


def _mixed_derivative(theta, x_c, y_c, kind):
    """d/dx_c of grad_theta loss(x_c, y_c, theta): a d x (d+1) matrix."""
    w = theta[:-1]
    _, d1, d2 = margin_derivatives(kind, y_c * (w @ x_c + theta[-1]))
    d = x_c.size
    mixed = float(d2) * np.outer(w, np.append(x_c, 1.0))
    mixed[:, :d] += float(d1) * y_c * np.eye(d)
    return mixed


def implicit_gradient(theta, hessian, grad_theta_outer, x_c, y_c, kind) -> np.ndarray:
    """``-(d/dx_c grad_theta L_train) H^-1 grad_theta A`` for a linear model.

    The explicit term ``d A / d x_c`` vanishes because the poison point
    does not enter the decision function of a linear classifier.
    """
    factor = linalg.cho_factor(hessian)
    v = linalg.cho_solve(factor, grad_theta_outer)
    return -_mixed_derivative(theta, np.asarray(x_c, float), float(y_c), kind) @ v


def poison_gradient(objective: AttackObjective, train: SampleSet, point: PoisonPoint,
                    model_at_optimum: LinearModel) -> np.ndarray:
    """Gradient of the attacker loss w.r.t. the poison features.

    ``model_at_optimum`` must be trained on ``train + {point}``.
    """
    X = np.vstack([train.features, point.features])
    y = np.append(train.labels.astype(float), point.label)
    theta, kind = model_at_optimum.theta, model_at_optimum.loss_kind
    _, _, H = objective_derivatives(theta, X, y, kind, model_at_optimum.reg_c)
    _, g_outer = _objective_terms(objective, theta, kind)
    grad = implicit_gradient(theta, H, g_outer, point.features, point.label, kind)
    assert np.all(np.isfinite(grad))
    return grad


class _Inner:
    """Training problem ``base + {(x_c, y_c)}`` with warm-started refits."""

    def __init__(self, X: np.ndarray, y: np.ndarray, spec: ModelSpec):
        self.X, self.y, self.spec = X, y, spec

    def fit(self, x_c, y_c, warm=None):
        X = np.vstack([self.X, x_c])
        y = np.append(self.y, y_c)
        theta = fit_theta(X, y, self.spec.loss_kind, self.spec.reg_c,
                          tolerance=self.spec.tolerance,
                          max_iterations=self.spec.max_iterations, warm_start=warm)
        return theta, X, y

    def gradient(self, objective, theta, X, y, x_c, y_c):
        kind = self.spec.loss_kind
        _, _, H = objective_derivatives(theta, X, y, kind, self.spec.reg_c)
        value, g_outer = _objective_terms(objective, theta, kind)
        return value, implicit_gradient(theta, H, g_outer, x_c, y_c, kind)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    point_index: int
    value: float
    step_size: float


def _feature_scale(data: SampleSet) -> np.ndarray:
    s = data.features.std(axis=0)
    return np.where(s > 0, s, 1.0)


def _optimize(inner: _Inner, objective, x0, y_c, bounds, config, scale,
              point_index=0, warm=None):
    x = bounds.project(np.asarray(x0, float))
    theta, X, y = inner.fit(x, y_c, warm)
    value, grad = inner.gradient(objective, theta, X, y, x, y_c)
    eta = config.step_size
    trace = [TraceRow(0, point_index, value, eta)]
    for it in range(1, config.max_iterations + 1):
        direction = scale * grad
        norm = np.linalg.norm(direction)
        if not norm > 0:
            break
        cand = bounds.project(x + eta * scale * direction / norm)
        if np.array_equal(cand, x):
            break
        theta_c, Xc, yc = inner.fit(cand, y_c, theta)
        value_c, grad_c = inner.gradient(objective, theta_c, Xc, yc, cand, y_c)
        if value_c >= value:
            delta = value_c - value
            x, theta, value, grad = cand, theta_c, value_c, grad_c
            trace.append(TraceRow(it, point_index, value, eta))
            if delta <= config.stop_threshold:
                break
        else:
            eta *= 0.5
    return x, theta, value, trace


def optimize_point(train: SampleSet, objective: AttackObjective, init: PoisonPoint,
                   bounds: BoxBounds, config: AttackConfig,
                   model_spec: ModelSpec = ModelSpec(), *,
                   scale: np.ndarray | None = None):
    """Projected gradient ascent on a single poison point.

    Each step moves by ``step_size`` (standardized units) along the
    normalized, std-scaled gradient, clamps to ``bounds`` and retrains.
    Steps that lower the attacker loss are rejected and halve the step.
    Stops once an accepted step changes the loss by at most
    ``stop_threshold``. Returns ``(point, trace)``.
    """
    if not bounds.contains(init.features):
        raise ValueError("initial point outside bounds")
    scale = _feature_scale(train) if scale is None else scale
    inner = _Inner(train.features, train.labels.astype(float), model_spec)
    x, _, _, trace = _optimize(inner, objective, init.features, init.label, bounds,
                               config, scale)
    return PoisonPoint(x, init.label), trace


def init_points(train: SampleSet, budget: int, seed: int = 0) -> list[PoisonPoint]:
    """Random training samples with flipped labels."""
    if budget <= 0:
        return []
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.choice(len(train), size=budget, replace=budget > len(train))
    return [PoisonPoint(train.features[i].copy(), -int(train.labels[i])) for i in idx]


@dataclass(frozen=True)
class AttackResult:
    poisoned_train: SampleSet
    poison: SampleSet | None
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def points(self) -> list[PoisonPoint]:
        if self.poison is None:
            return []
        return [PoisonPoint(x, int(y)) for x, y in zip(self.poison.features, self.poison.labels)]


def poison_set(points: Sequence[PoisonPoint], feature_names) -> SampleSet | None:
    if not points:
        return None
    return SampleSet(np.array([p.features for p in points]),
                     np.array([p.label for p in points]),
                     np.full(len(points), GroupTag.NONE), feature_names)


def _greedy(train, objective, model_spec, config):
    budget = config.budget(len(train))
    if budget == 0:
        return AttackResult(train, None, [])
    bounds = config.bounds or BoxBounds.from_data(train)
    if bounds.lower.size != train.n_features:
        raise ValueError("bounds dimension does not match the data")
    scale = _feature_scale(train)
    starts = init_points(train, budget, config.seed)
    X, y = train.features, train.labels.astype(float)
    done, trace, warm = [], [], None
    for k, p0 in enumerate(starts):
        inner = _Inner(X, y, model_spec)
        x, warm, value, tr = _optimize(inner, objective, p0.features, p0.label,
                                       bounds, config, scale, k, warm)
        trace.extend(tr)
        done.append(PoisonPoint(x, p0.label))
        X = np.vstack([X, x])
        y = np.append(y, p0.label)
        log.debug("poison point %d/%d: A=%.6g after %d steps", k + 1, budget, value, len(tr))
    poison = poison_set(done, train.feature_names)
    return AttackResult(train.concat(poison), poison, trace)


def run_attack(train: SampleSet, validation: SampleSet, model_spec: ModelSpec = ModelSpec(),
               config: AttackConfig = AttackConfig()) -> AttackResult:
    """Greedy fairness attack: each poison point is added and optimized once."""
    return _greedy(train, build_objective(validation, config.lambda_policy), model_spec, config)


def run_generic_attack(train: SampleSet, validation: SampleSet,
                       model_spec: ModelSpec = ModelSpec(),
                       config: AttackConfig = AttackConfig()) -> AttackResult:
    """Error-generic baseline: maximize the plain validation loss."""
    return _greedy(train, build_generic_objective(validation), model_spec, config)


def point_value(train: SampleSet, objective: AttackObjective, x_c, y_c,
                model_spec: ModelSpec = ModelSpec(), warm=None):
    """``(A(x_c), theta*)`` with theta* retrained on ``train + {(x_c, y_c)}``."""
    inner = _Inner(train.features, train.labels.astype(float), model_spec)
    theta, _, _ = inner.fit(np.asarray(x_c, float), y_c, warm)
    return _objective_terms(objective, theta, model_spec.loss_kind)[0], theta


def loss_surface(train: SampleSet, objective: AttackObjective, xs, ys, y_c: int,
                 model_spec: ModelSpec = ModelSpec()):
    """Attacker loss over a 2-D grid of single poison points.

    Returns ``(values, thetas)`` of shapes ``(len(ys), len(xs))`` and
    ``(len(ys), len(xs), 3)``.
    """
    if train.n_features != 2:
        raise ValueError("loss_surface needs 2-D features")
    values = np.empty((len(ys), len(xs)))
    thetas = np.empty((len(ys), len(xs), 3))
    warm = None
    for i, yv in enumerate(ys):
        for j, xv in enumerate(xs):
            values[i, j], thetas[i, j] = point_value(train, objective, [xv, yv], y_c,
                                                     model_spec, warm)
            warm = thetas[i, j]
    return values, thetas


def write_trace(trace: Sequence[TraceRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "point_index", "value", "step_size"])
        for r in trace:
            w.writerow([r.iteration, r.point_index, repr(float(r.value)), repr(float(r.step_size))])
