"""Differentiable linear classifiers and their regularized training objective.

The training objective for parameters ``theta = (w, b)`` is::

    (1/C) * ||w||^2 / 2 + sum_i loss(y_i * (w . x_i + b))

with an unregularized bias. Two per-sample losses are supported: logistic
and squared hinge (a twice-differentiable-a.e. stand-in for the linear SVM).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit

from .data import DataError, SampleSet


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float = float("nan")):
        super().__init__(message)
        self.grad_norm = grad_norm


class LossKind(str, enum.Enum):
    LOGISTIC = "logistic"
    SQUARED_HINGE = "squared_hinge"


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    loss_kind: LossKind
    reg_c: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if not self.reg_c > 0:
            raise ValueError(f"reg_c must be positive, got {self.reg_c}")
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    @classmethod
    def from_theta(cls, theta, loss_kind, reg_c) -> "LinearModel":
        return cls(theta[:-1], theta[-1], loss_kind, reg_c)

    def to_dict(self) -> dict:
        return {"loss_kind": self.loss_kind.value, "reg_c": float(self.reg_c),
                "bias": self.bias, "weights": [float(v) for v in self.weights]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(np.array(d["weights"], dtype=float), d["bias"], d["loss_kind"], d["reg_c"])

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrainConfig:
    reg_c: float | tuple[float, ...] = (0.5, 1.0, 5.0, 10.0)
    cv_folds: int = 5
    tolerance: float = 1e-8
    max_iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        grid = self.grid
        if not grid or any(not c > 0 for c in grid) or len(set(grid)) != len(grid):
            raise ValueError(f"reg_c values must be positive and distinct, got {self.reg_c}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if not self.tolerance > 0 or self.max_iterations < 1:
            raise ValueError("tolerance and max_iterations must be positive")

    @property
    def grid(self) -> tuple[float, ...]:
        if np.isscalar(self.reg_c):
            return (float(self.reg_c),)
        return tuple(float(c) for c in self.reg_c)


def margin_derivatives(kind: LossKind, margin: np.ndarray):
    """Loss and its first two derivatives as functions of ``m = y * f(x)``."""
    m = np.asarray(margin, dtype=float)
    if LossKind(kind) is LossKind.LOGISTIC:
        loss = np.logaddexp(0.0, -m)
        d1 = -expit(-m)
        d2 = expit(m) * expit(-m)
    else:
        r = np.maximum(0.0, 1.0 - m)
        loss = r * r
        d1 = -2.0 * r
        d2 = 2.0 * (m < 1.0)
    return loss, d1, d2


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _reg_diag(d: int, reg_c: float) -> np.ndarray:
    r = np.full(d + 1, 1.0 / reg_c)
    r[-1] = 0.0
    return r


def objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, kind: LossKind,
              reg_c: float) -> float:
    w = theta[:-1]
    m = y * (X @ w + theta[-1])
    loss, _, _ = margin_derivatives(kind, m)
    return float(0.5 * (w @ w) / reg_c + loss.sum())


def objective_derivatives(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                          kind: LossKind, reg_c: float):
    """Objective value, gradient and Hessian w.r.t. ``theta = (w, b)``."""
    w = theta[:-1]
    Xa = _augment(X)
    m = y * (Xa @ theta)
    loss, d1, d2 = margin_derivatives(kind, m)
    reg = _reg_diag(X.shape[1], reg_c)
    value = float(0.5 * (w @ w) / reg_c + loss.sum())
    grad = Xa.T @ (d1 * y) + reg * theta
    hess = (Xa.T * d2) @ Xa + np.diag(reg)
    return value, grad, hess


def _newton(theta, X, y, kind, reg_c, tol, max_iter):
    f, g, H = objective_derivatives(theta, X, y, kind, reg_c)
    history = [f]
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return theta, gnorm, history
        try:
            step = -linalg.cho_solve(linalg.cho_factor(H), g)
        except linalg.LinAlgError:
            # squared hinge with no sample in the margin leaves the bias flat
            step = -np.linalg.lstsq(H + 1e-10 * np.eye(H.shape[0]), g, rcond=None)[0]
        slope = float(g @ step)
        slack = 16 * np.finfo(float).eps * max(1.0, abs(f))
        alpha = 1.0
        while True:
            cand = theta + alpha * step
            f_new = objective(cand, X, y, kind, reg_c)
            if f_new <= f + 1e-4 * alpha * slope + slack:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                return theta, gnorm, history
        theta = cand
        f, g, H = objective_derivatives(theta, X, y, kind, reg_c)
        history.append(f)
    return theta, float(np.linalg.norm(g)), history


def fit_theta(X: np.ndarray, y: np.ndarray, kind: LossKind, reg_c: float, *,
              tolerance: float = 1e-8, max_iterations: int = 1000,
              warm_start: np.ndarray | None = None) -> np.ndarray:
    """Array-level trainer used by :func:`train` and the attack inner loop."""
    theta = np.zeros(X.shape[1] + 1) if warm_start is None else np.array(warm_start, float)
    theta, gnorm, _ = _newton(theta, X, y, LossKind(kind), reg_c, tolerance, max_iterations)
    if gnorm > tolerance:
        # cold restart once; a warm start far from the optimum can stall
        if warm_start is not None:
            return fit_theta(X, y, kind, reg_c, tolerance=tolerance,
                             max_iterations=max_iterations)
        raise ConvergenceError(
            f"training did not reach gradient norm {tolerance:g} "
            f"(final {gnorm:.3e})", gnorm)
    return theta


def train(data: SampleSet, loss_kind: LossKind | str = LossKind.LOGISTIC,
          reg_c: float = 1.0, config: TrainConfig | None = None, *,
          warm_start: np.ndarray | None = None) -> LinearModel:
    """Minimize the regularized empirical loss on ``data``."""
    config = config or TrainConfig(reg_c=reg_c)
    if len(data) < 2 or np.unique(data.labels).size < 2:
        raise DataError("training data needs at least two samples of both labels")
    kind = LossKind(loss_kind)
    theta = fit_theta(data.features, data.labels.astype(float), kind, reg_c,
                      tolerance=config.tolerance, max_iterations=config.max_iterations,
                      warm_start=warm_start)
    return LinearModel.from_theta(theta, kind, reg_c)


def training_history(data: SampleSet, loss_kind, reg_c: float, tolerance: float = 1e-8,
                     max_iterations: int = 1000) -> list[float]:
    """Objective values at every accepted optimizer iterate (for diagnostics)."""
    X, y = data.features, data.labels.astype(float)
    _, _, hist = _newton(np.zeros(X.shape[1] + 1), X, y, LossKind(loss_kind), reg_c,
                         tolerance, max_iterations)
    return hist


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.empty(len(labels), dtype=int)
    offset = 0
    for cls in (-1, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return folds


def cv_accuracy(data: SampleSet, loss_kind, reg_c: float, folds: np.ndarray,
                k: int, tolerance: float = 1e-8) -> float:
    accs = []
    for f in range(k):
        test = folds == f
        model = train(data.subset(~test), loss_kind, reg_c,
                      TrainConfig(reg_c=reg_c, tolerance=tolerance))
        accs.append(np.mean(predict(model, data.features[test]) == data.labels[test]))
    return float(np.mean(accs))


def select_c(data: SampleSet, loss_kind=LossKind.LOGISTIC,
             grid: Sequence[float] = (0.5, 1.0, 5.0, 10.0), cv_folds: int = 5,
             seed: int = 0, tolerance: float = 1e-8) -> float:
    """Grid value with the best mean stratified k-fold accuracy (ties: smallest)."""
    grid = [float(c) for c in grid]
    if not grid:
        raise ValueError("empty C grid")
    if len(grid) == 1:
        return grid[0]
    counts = [int(np.sum(data.labels == c)) for c in (-1, 1)]
    if min(counts) < 2 or len(data) < cv_folds:
        raise DataError(f"cannot build {cv_folds} folds with both classes "
                        f"in training (class counts {counts})")
    folds = stratified_folds(data.labels, cv_folds, seed)
    best_c, best_acc = None, -1.0
    for c in sorted(grid):
        acc = cv_accuracy(data, loss_kind, c, folds, cv_folds, tolerance)
        if acc > best_acc:
            best_c, best_acc = c, acc
    return best_c


def decision_values(model: LinearModel, features: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != model.weights.size:
        raise DataError(f"expected {model.weights.size} features, got {X.shape[1]}")
    return X @ model.weights + model.bias


def predict(model: LinearModel, features: np.ndarray) -> np.ndarray:
    return np.where(decision_values(model, features) >= 0, 1, -1)


def loss_terms(model: LinearModel, data: SampleSet):
    """Per-sample losses, per-sample gradients w.r.t. theta and the full Hessian.

    The Hessian is that of the regularized training objective on ``data``
    and includes the ``1/C`` ridge block on the weights.
    """
    X = data.features
    if X.shape[1] != model.weights.size:
        raise DataError("model/data dimension mismatch")
    y = data.labels.astype(float)
    Xa = _augment(X)
    loss, d1, d2 = margin_derivatives(model.loss_kind, y * (Xa @ model.theta))
    grads = (d1 * y)[:, None] * Xa
    hess = (Xa.T * d2) @ Xa + np.diag(_reg_diag(X.shape[1], model.reg_c))
    return loss, grads, hess
