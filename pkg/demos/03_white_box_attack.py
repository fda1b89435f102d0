"""A white-box poisoning attack on a logistic-regression model.

The attacker knows the model and its regularization, and holds a
validation set drawn from the same distribution. It adds 5% poison points,
optimizing each one in turn, and the defender retrains on the union.
"""

from fairpoison.attack import AttackConfig, ModelSpec, run_attack, run_generic_attack
from fairpoison.data import SyntheticConfig, generate_synthetic, split
from fairpoison.fairness import evaluate
from fairpoison.models import predict, select_c, train

parts = split(generate_synthetic(SyntheticConfig(2000, separation=3.0, seed=4)), seed=4)
c = select_c(parts.train)
spec = ModelSpec("logistic", c)
config = AttackConfig(poison_fraction=0.05, seed=4)


def report(name, model):
    m = evaluate(predict(model, parts.test.features), parts.test.labels, parts.test.groups)
    print(f"{name:<16} acc={m.accuracy:.3f}  DP={m.demographic_parity:+.3f}  "
          f"DI={m.disparate_impact:.3f}  AOD={m.average_odds_difference:+.3f}  "
          f"FPR_priv={m.fpr_priv:.3f}  FNR_unpriv={m.fnr_unpriv:.3f}")


clean = train(parts.train, "logistic", c)
report("clean", clean)

# %% Fairness attack
result = run_attack(parts.train, parts.validation, spec, config)
print(f"\n{len(result.poison)} poison points, {len(result.trace)} trace rows")
report("fairness attack", train(result.poisoned_train, "logistic", c))

# %% Error-generic baseline with the same budget
generic = run_generic_attack(parts.train, parts.validation, spec, config)
report("generic attack", train(generic.poisoned_train, "logistic", c))
