"""What one poison point can do: the attacker's loss over the input box.

For every location of a single poison point (label +1) we retrain the
model and evaluate (a) the attacker's smooth loss and (b) the disparate
impact on the validation set. Regions with a large loss should coincide
with a low disparate impact. The gradient-based optimizer is then started
from a label-flipped training point and compared with the grid.
"""

import numpy as np
from scipy import stats

from fairpoison.attack import (AttackConfig, BoxBounds, PoisonPoint, build_objective,
                               loss_surface, optimize_point)
from fairpoison.data import SyntheticConfig, generate_synthetic
from fairpoison.fairness import confusion, disparate_impact

data = generate_synthetic(SyntheticConfig(160, separation=2.0, seed=3))
train, val = data.subset(np.arange(80)), data.subset(np.arange(80, 160))
objective = build_objective(val)
box = BoxBounds.from_data(train)

# %% Grid of single-point attacks
xs = np.linspace(box.lower[0], box.upper[0], 25)
ys = np.linspace(box.lower[1], box.upper[1], 25)
A, thetas = loss_surface(train, objective, xs, ys, y_c=1)
DI = np.empty_like(A)
for idx in np.ndindex(A.shape):
    t = thetas[idx]
    pred = np.where(val.features @ t[:2] + t[2] >= 0, 1, -1)
    DI[idx] = disparate_impact(confusion(pred, val.labels, val.groups)) or np.nan

ok = ~np.isnan(DI)
print(f"Spearman(A, DI) over the grid: {stats.spearmanr(A[ok], DI[ok]).statistic:+.3f}")
i, j = np.unravel_index(np.argmax(A), A.shape)
print(f"best grid cell: x=({xs[j]:.2f}, {ys[i]:.2f})  A={A[i, j]:.3f}  DI={DI[i, j]:.3f}")

# %% Gradient ascent from a flipped training point
k = int(np.flatnonzero(train.labels == -1)[0])
start = PoisonPoint(train.features[k].copy(), 1)
point, trace = optimize_point(train, objective, start, box, AttackConfig(max_iterations=100))
print(f"optimizer: {len(trace)} accepted steps, x=({point.features[0]:.2f}, "
      f"{point.features[1]:.2f})  A={trace[-1].value:.3f}")
print(f"share of grid cells with a higher loss: {np.mean(A > trace[-1].value):.3f}")
