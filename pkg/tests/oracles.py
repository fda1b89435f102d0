"""Independent reference computations shared by the unit and acceptance tests.

Nothing here reuses the analytic machinery under test: gradients come from
retraining plus finite differences, optima from exhaustive grids, metrics
from per-sample loops.
"""

import numpy as np

from fairpoison.attack import BoxBounds, ModelSpec, point_value
from fairpoison.data import GroupTag, SampleSet, SyntheticConfig, generate_synthetic


def toy_problem(seed, n=40, separation=2.0):
    """A 2-D training set of size ``n`` and a validation set of the same size.

    Both sets contain both labels and both groups.
    """
    k = 0
    while True:
        d = generate_synthetic(SyntheticConfig(2 * n, separation, seed=seed * 1000 + k))
        train, val = d.subset(np.arange(n)), d.subset(np.arange(n, 2 * n))
        ok = all(len(np.unique(s.labels)) == 2 and len(np.unique(s.groups)) == 2
                 for s in (train, val))
        if ok:
            return train, val
        k += 1


def retrain_fd_gradient(train, objective, x_c, y_c, spec: ModelSpec, h=1e-4):
    """Central differences of the attacker loss, retraining at each probe."""
    x_c = np.asarray(x_c, float)
    grad = np.empty_like(x_c)
    for i in range(x_c.size):
        e = np.zeros_like(x_c)
        e[i] = h
        up, _ = point_value(train, objective, x_c + e, y_c, spec)
        dn, _ = point_value(train, objective, x_c - e, y_c, spec)
        grad[i] = (up - dn) / (2 * h)
    return grad


def grid_values(train, objective, bounds: BoxBounds, y_c, spec: ModelSpec, n=50):
    """Attacker loss of a single poison point on an ``n x n`` grid over the box."""
    xs = np.linspace(bounds.lower[0], bounds.upper[0], n)
    ys = np.linspace(bounds.lower[1], bounds.upper[1], n)
    out = np.empty((n, n))
    for i, yv in enumerate(ys):
        for j, xv in enumerate(xs):
            out[i, j], _ = point_value(train, objective, [xv, yv], y_c, spec)
    return xs, ys, out


def loop_positive_rates(pred, groups):
    """(unprivileged, privileged) positive rates by explicit counting."""
    counts = {GroupTag.UNPRIVILEGED: [0, 0], GroupTag.PRIVILEGED: [0, 0]}
    for p, g in zip(pred, groups):
        c = counts[GroupTag(int(g))]
        c[0] += p == 1
        c[1] += 1
    return tuple(c[0] / c[1] if c[1] else None
                 for c in (counts[GroupTag.UNPRIVILEGED], counts[GroupTag.PRIVILEGED]))


def as_sample_set(X, y, g):
    return SampleSet(np.asarray(X, float), np.asarray(y), np.asarray(g))
