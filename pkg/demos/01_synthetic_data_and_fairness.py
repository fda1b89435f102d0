"""Synthetic data, a clean classifier, and its group-fairness metrics.

The two classes are Gaussians whose centroids are S apart; the sensitive
attribute is drawn from a rotated copy of the class densities, so it is
correlated with the label. As S grows, a plain logistic regression becomes
more accurate and, because the groups follow the classes, less fair.
"""

from fairpoison.data import GroupTag, SyntheticConfig, generate_synthetic, split
from fairpoison.fairness import evaluate
from fairpoison.models import predict, select_c, train

# %% One dataset, inspected
data = generate_synthetic(SyntheticConfig(n_samples=2000, separation=4.0, seed=0))
priv = data.groups == GroupTag.PRIVILEGED
print(f"{len(data)} samples, {priv.sum()} privileged")
print(f"P(y=+1 | privileged)   = {(data.labels[priv] == 1).mean():.3f}")
print(f"P(y=+1 | unprivileged) = {(data.labels[~priv] == 1).mean():.3f}")

# %% Accuracy and fairness as the classes separate
print(f"\n{'S':>3} {'C':>5} {'acc':>6} {'DP':>7} {'DI':>6} {'AOD':>6}")
for S in range(0, 10, 2):
    parts = split(generate_synthetic(SyntheticConfig(2000, float(S), seed=1)), seed=1)
    c = select_c(parts.train)
    model = train(parts.train, "logistic", c)
    m = evaluate(predict(model, parts.test.features), parts.test.labels, parts.test.groups)
    print(f"{S:>3} {c:>5g} {m.accuracy:6.3f} {m.demographic_parity:+7.3f} "
          f"{m.disparate_impact:6.3f} {m.average_odds_difference:+6.3f}")
