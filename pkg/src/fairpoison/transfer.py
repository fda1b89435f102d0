"""Non-differentiable target models for black-box transfer evaluation.

None of these is ever differentiated through; they are trained on clean and
poisoned data and only their predictions are compared.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, SampleSet

VAR_FLOOR = 1e-9


def _check_two_classes(data: SampleSet):
    if np.unique(data.labels).size < 2:
        raise DataError("training data must contain both labels")


def _vote(values: np.ndarray) -> np.ndarray:
    return np.where(values >= 0, 1, -1)


@dataclass(frozen=True)
class GaussianNB:
    priors: np.ndarray  # (2,) for classes (-1, +1)
    means: np.ndarray   # (2, d)
    variances: np.ndarray

    kind = "gaussian_nb"

    def log_posteriors(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        out = []
        for c in range(2):
            v = self.variances[c]
            ll = -0.5 * np.sum(np.log(2 * np.pi * v) + (X - self.means[c]) ** 2 / v, axis=1)
            out.append(ll + np.log(self.priors[c]))
        return np.stack(out, axis=1)

    def predict(self, X) -> np.ndarray:
        lp = self.log_posteriors(X)
        return _vote(lp[:, 1] - lp[:, 0])

    def to_dict(self):
        return {"priors": self.priors.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["priors"]), np.array(d["means"]), np.array(d["variances"]))


def train_gaussian_nb(data: SampleSet) -> GaussianNB:
    _check_two_classes(data)
    X, y = data.features, data.labels
    priors, means, vars_ = [], [], []
    for c in (-1, 1):
        Xc = X[y == c]
        priors.append(len(Xc) / len(X))
        means.append(Xc.mean(axis=0))
        vars_.append(np.maximum(Xc.var(axis=0), VAR_FLOOR))
    return GaussianNB(np.array(priors), np.array(means), np.array(vars_))


# --- CART -----------------------------------------------------------------

def _gini(pos, n):
    p = pos / n
    return 2.0 * p * (1.0 - p)


def best_split(X: np.ndarray, y: np.ndarray, features, min_leaf: int = 1):
    """Lowest weighted-Gini axis split over ``features``.

    Thresholds are midpoints between consecutive distinct sorted values.
    Returns ``(feature, threshold, impurity)`` or ``None`` if no split
    leaves ``min_leaf`` samples on both sides. Ties keep the first
    candidate in (feature order, increasing threshold).
    """
    n = len(y)
    best = None
    pos = (y == 1).astype(float)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ps = X[order, f], pos[order]
        left_n = np.arange(1, n)
        left_pos = np.cumsum(ps)[:-1]
        right_n = n - left_n
        right_pos = ps.sum() - left_pos
        valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not valid.any():
            continue
        imp = (left_n * _gini(left_pos, left_n) + right_n * _gini(right_pos, right_n)) / n
        imp = np.where(valid, imp, np.inf)
        k = int(np.argmin(imp))
        if best is None or imp[k] < best[2]:
            best = (int(f), 0.5 * (xs[k] + xs[k + 1]), float(imp[k]))
    return best


@dataclass(frozen=True)
class DecisionTree:
    # parallel node arrays; leaves have feature == -1
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    kind = "decision_tree"

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        node = np.zeros(len(X), dtype=int)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            idx = np.flatnonzero(inner)
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.value[node].astype(int)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], int), np.array(d["threshold"], float),
                   np.array(d["left"], int), np.array(d["right"], int), np.array(d["value"], int))


def _grow(X, y, max_depth, min_leaf, feature_picker=None):
    feat, thr, left, right, val = [], [], [], [], []

    def new_node():
        for lst, v in ((feat, -1), (thr, 0.0), (left, -1), (right, -1), (val, 1)):
            lst.append(v)
        return len(feat) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yy = y[idx]
        val[node] = 1 if np.sum(yy == 1) >= np.sum(yy == -1) else -1
        if depth >= max_depth or np.unique(yy).size < 2:
            continue
        d = X.shape[1]
        features = range(d) if feature_picker is None else feature_picker(d)
        split_ = best_split(X[idx], yy, features, min_leaf)
        if split_ is None:
            continue
        f, t, _ = split_
        mask = X[idx, f] <= t
        l, r = new_node(), new_node()
        feat[node], thr[node], left[node], right[node] = f, t, l, r
        # right pushed first so the left subtree is numbered first
        stack.append((r, idx[~mask], depth + 1))
        stack.append((l, idx[mask], depth + 1))
    return DecisionTree(np.array(feat), np.array(thr), np.array(left), np.array(right), np.array(val))


def train_decision_tree(data: SampleSet, max_depth: int = 8, min_leaf: int = 5) -> DecisionTree:
    """CART with Gini impurity; leaves predict the majority label (ties: +1)."""
    if len(data) == 0:
        raise DataError("empty training data")
    return _grow(data.features, data.labels, max_depth, min_leaf)


@dataclass(frozen=True)
class RandomForest:
    trees: tuple[DecisionTree, ...]
    seed: int

    kind = "random_forest"

    def predict(self, X) -> np.ndarray:
        votes = np.sum([t.predict(X) for t in self.trees], axis=0)
        return _vote(votes)

    def to_dict(self):
        return {"seed": self.seed, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(DecisionTree.from_dict(t) for t in d["trees"]), d["seed"])


def train_random_forest(data: SampleSet, n_trees: int = 100, max_depth: int = 8,
                        feature_subsample: int | None = None, seed: int = 0,
                        min_leaf: int = 1) -> RandomForest:
    """Bagged CART trees with ``feature_subsample`` (default sqrt(d)) features per split.

    Tree ``k`` draws from its own stream seeded by ``(seed, k)``.
    """
    X, y = data.features, data.labels
    n, d = X.shape
    k_feat = feature_subsample or max(1, int(round(math.sqrt(d))))
    trees = []
    for k in range(n_trees):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, k])))
        boot = rng.integers(0, n, size=n)
        picker = lambda dd, rng=rng: np.sort(rng.choice(dd, size=min(k_feat, dd), replace=False))
        trees.append(_grow(X[boot], y[boot], max_depth, min_leaf, picker))
    return RandomForest(tuple(trees), seed)


# --- RBF SVM ----------------------------------------------------------------

def rbf_kernel(A, B, gamma):
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2 * A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass(frozen=True)
class RbfSvm:
    support: np.ndarray      # support vectors
    coef: np.ndarray         # alpha_i * y_i
    bias: float
    gamma: float
    alphas: np.ndarray = field(repr=False, default=None)
    objective: float = float("nan")
    iterations: int = 0

    kind = "rbf_svm"

    def decision_values(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        if len(self.coef) == 0:
            return np.full(len(X), self.bias)
        return rbf_kernel(X, self.support, self.gamma) @ self.coef + self.bias

    def predict(self, X) -> np.ndarray:
        return _vote(self.decision_values(X))

    def to_dict(self):
        return {"support": self.support.tolist(), "coef": self.coef.tolist(),
                "bias": self.bias, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d):
        support = np.array(d["support"], float)
        if support.ndim != 2:
            support = support.reshape(0, int(d.get("n_features", 0)))
        return cls(support, np.array(d["coef"], float), d["bias"], d["gamma"])


def dual_objective(alphas, y, K) -> float:
    """Dual value ``sum(a) - 0.5 * sum_ij a_i a_j y_i y_j K_ij`` (maximized)."""
    ay = alphas * y
    return float(alphas.sum() - 0.5 * ay @ K @ ay)


def train_rbf_svm(data: SampleSet, reg_c: float = 1.0, gamma: float | None = None,
                  tol: float = 1e-3, max_iterations: int = 100_000) -> RbfSvm:
    """Kernel SVM dual solved by SMO with maximal-violating-pair selection."""
    _check_two_classes(data)
    X, y = data.features, data.labels.astype(float)
    n, d = X.shape
    gamma = 1.0 / d if gamma is None else float(gamma)
    K = rbf_kernel(X, X, gamma)
    Q = (y[:, None] * y[None, :]) * K
    C = float(reg_c)
    a = np.zeros(n)
    G = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    it = 0
    while True:
        up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
        low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
        score = -y * G
        i = int(np.argmax(np.where(up, score, -np.inf)))
        j = int(np.argmin(np.where(low, score, np.inf)))
        gap = score[i] - score[j]
        if gap <= tol:
            break
        if it >= max_iterations:
            raise RuntimeError(f"SMO did not converge in {max_iterations} iterations (gap {gap:.3e})")
        it += 1
        curv = max(K[i, i] + K[j, j] - 2 * K[i, j], 1e-12)
        t = gap / curv
        # a_i += y_i t, a_j -= y_j t, both kept in [0, C]
        t = min(t, C - a[i] if y[i] > 0 else a[i])
        t = min(t, a[j] if y[j] > 0 else C - a[j])
        di, dj = y[i] * t, -y[j] * t
        a[i] += di
        a[j] += dj
        a[i] = min(max(a[i], 0.0), C)
        a[j] = min(max(a[j], 0.0), C)
        G += Q[:, i] * di + Q[:, j] * dj
    free = (a > 1e-12) & (a < C - 1e-12)
    yG = y * G
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub = np.min(np.where(up, -score, np.inf)) if up.any() else 0.0
        lb = np.max(np.where(low, -score, -np.inf)) if low.any() else 0.0
        rho = 0.5 * (ub + lb)
    sv = a > 0
    return RbfSvm(X[sv].copy(), (a * y)[sv], -rho, gamma, a, dual_objective(a, y, K), it)


# --- serialization ----------------------------------------------------------

_KINDS = {cls.kind: cls for cls in (GaussianNB, DecisionTree, RandomForest, RbfSvm)}


def to_json(model) -> str:
    return json.dumps({"kind": model.kind, **model.to_dict()})


def from_json(text: str):
    d = json.loads(text)
    return _KINDS[d.pop("kind")].from_dict(d)
