"""Group fairness metrics computed from a per-group confusion table.

Rates with a zero denominator are ``None`` (undefined), never NaN or inf.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import DataError, GroupTag

DEFAULT_EPSILON = 0.2


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positive_rate(self) -> float | None:
        return _ratio(self.tp + self.fp, self.n)

    @property
    def tpr(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self) -> float | None:
        return _ratio(self.fp, self.fp + self.tn)

    @property
    def fnr(self) -> float | None:
        return _ratio(self.fn, self.fn + self.tp)


@dataclass(frozen=True)
class GroupedConfusion:
    privileged: Counts
    unprivileged: Counts

    def swapped(self) -> "GroupedConfusion":
        return GroupedConfusion(self.unprivileged, self.privileged)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def confusion(predictions, labels, groups) -> GroupedConfusion:
    pred, y, g = (np.asarray(a) for a in (predictions, labels, groups))
    if not (pred.shape == y.shape == g.shape) or pred.ndim != 1:
        raise DataError(f"length mismatch: {pred.shape}, {y.shape}, {g.shape}")
    if np.any(g == GroupTag.NONE):
        raise DataError("confusion: sample with group tag 'none'")
    out = {}
    for tag in (GroupTag.PRIVILEGED, GroupTag.UNPRIVILEGED):
        sel = g == tag
        p, t = pred[sel] == 1, y[sel] == 1
        out[tag] = Counts(tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)),
                          tn=int(np.sum(~p & ~t)), fn=int(np.sum(~p & t)))
    return GroupedConfusion(out[GroupTag.PRIVILEGED], out[GroupTag.UNPRIVILEGED])


def demographic_parity(conf: GroupedConfusion) -> float | None:
    """P(yhat=1 | unprivileged) - P(yhat=1 | privileged); 0 is fair."""
    ru, rp = conf.unprivileged.positive_rate, conf.privileged.positive_rate
    if ru is None or rp is None:
        return None
    return ru - rp


def disparate_impact(conf: GroupedConfusion) -> float | None:
    """Ratio of unprivileged to privileged positive rates."""
    ru, rp = conf.unprivileged.positive_rate, conf.privileged.positive_rate
    if ru is None or not rp:
        return None
    return ru / rp


def is_disparate(di: float | None, epsilon: float = DEFAULT_EPSILON) -> bool | None:
    """Four-fifths style rule: unfair when ``D < 1 - epsilon``."""
    return None if di is None else di < 1.0 - epsilon


def average_odds_difference(conf: GroupedConfusion) -> float | None:
    """0.5 * ((FPR_p - FPR_u) + (TPR_p - TPR_u))."""
    p, u = conf.privileged, conf.unprivileged
    vals = (p.fpr, u.fpr, p.tpr, u.tpr)
    if any(v is None for v in vals):
        return None
    return 0.5 * ((p.fpr - u.fpr) + (p.tpr - u.tpr))


def rates(conf: GroupedConfusion):
    """``(fnr_priv, fnr_unpriv, fpr_priv, fpr_unpriv, accuracy)``."""
    p, u = conf.privileged, conf.unprivileged
    acc = _ratio(p.tp + p.tn + u.tp + u.tn, p.n + u.n)
    return p.fnr, u.fnr, p.fpr, u.fpr, acc


@dataclass(frozen=True)
class MetricsRecord:
    accuracy: float | None
    demographic_parity: float | None
    disparate_impact: float | None
    average_odds_difference: float | None
    fnr_priv: float | None
    fnr_unpriv: float | None
    fpr_priv: float | None
    fpr_unpriv: float | None
    fairness_epsilon: float = DEFAULT_EPSILON

    @property
    def unfair(self) -> bool | None:
        return is_disparate(self.disparate_impact, self.fairness_epsilon)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def metrics_from_confusion(conf: GroupedConfusion,
                           epsilon: float = DEFAULT_EPSILON) -> MetricsRecord:
    fnr_p, fnr_u, fpr_p, fpr_u, acc = rates(conf)
    return MetricsRecord(acc, demographic_parity(conf), disparate_impact(conf),
                         average_odds_difference(conf), fnr_p, fnr_u, fpr_p, fpr_u,
                         epsilon)


def evaluate(predictions, labels, groups, epsilon: float = DEFAULT_EPSILON) -> MetricsRecord:
    """Metrics of ``predictions``; samples tagged ``none`` are ignored."""
    g = np.asarray(groups)
    keep = g != GroupTag.NONE
    conf = confusion(np.asarray(predictions)[keep], np.asarray(labels)[keep], g[keep])
    return metrics_from_confusion(conf, epsilon)
