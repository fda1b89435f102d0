"""Black-box transfer: poison crafted on a logistic surrogate, replayed on six models.

The attacker never sees the target's training data: it trains a logistic
surrogate on its own sample (half of the validation part), optimizes the
poison there, and the same points are then added to the target's
training set for each model family.
"""

from fairpoison.attack import AttackConfig
from fairpoison.data import SyntheticConfig, generate_synthetic
from fairpoison.experiments import run_transfer_study

data = generate_synthetic(SyntheticConfig(1000, separation=3.0, seed=5))
report = run_transfer_study(data, AttackConfig(poison_fraction=0.1, max_iterations=30), runs=2)

print(f"{'model':<20} {'acc clean':>9} {'acc pois':>9} {'DP clean':>9} {'DP pois':>9}")
rows = {}
for agg in report.aggregate():
    rows.setdefault(agg["model"], {})[agg["phase"]] = agg
for model, r in rows.items():
    print(f"{model:<20} {r['clean']['accuracy']['mean']:9.3f} {r['poisoned']['accuracy']['mean']:9.3f} "
          f"{r['clean']['demographic_parity']['mean']:+9.3f} "
          f"{r['poisoned']['demographic_parity']['mean']:+9.3f}")
