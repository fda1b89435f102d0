"""Datasets: the ``SampleSet`` container, synthetic generation, CSV I/O and splits."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed datasets or inputs."""


class GroupTag(enum.IntEnum):
    UNPRIVILEGED = 0
    PRIVILEGED = 1
    NONE = -1  # synthetic poison points only

    @property
    def text(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "GroupTag":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise DataError(f"unknown group tag {text!r}") from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Feature matrix, +/-1 labels and per-sample group tags.

    Arrays are copied on construction and made read-only. The sensitive
    attribute lives in ``groups`` only, never as a feature column.
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise DataError(f"need n >= 1 and d >= 1, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        y = np.asarray(self.labels)
        if y.shape != (n,):
            raise DataError(f"labels must have shape ({n},), got {y.shape}")
        if not np.all((y == 1) | (y == -1)):
            raise DataError("labels must be in {-1, +1}")
        g = np.asarray(self.groups)
        if g.shape != (n,):
            raise DataError(f"groups must have shape ({n},), got {g.shape}")
        if not np.all(np.isin(g, [t.value for t in GroupTag])):
            raise DataError("groups must hold GroupTag values")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(d))
        if len(names) != d:
            raise DataError(f"{len(names)} feature names for {d} features")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int8)))
        object.__setattr__(self, "groups", _frozen(g.astype(np.int8)))
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "SampleSet":
        index = np.asarray(index)
        return SampleSet(self.features[index], self.labels[index],
                         self.groups[index], self.feature_names)

    def concat(self, other: "SampleSet") -> "SampleSet":
        if other.n_features != self.n_features:
            raise DataError("feature dimension mismatch in concat")
        return SampleSet(np.vstack([self.features, other.features]),
                         np.concatenate([self.labels, other.labels]),
                         np.concatenate([self.groups, other.groups]),
                         self.feature_names)

    def equals(self, other: "SampleSet") -> bool:
        return (self.feature_names == other.feature_names
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.groups, other.groups))


@dataclass(frozen=True)
class DataSplit:
    train: SampleSet
    validation: SampleSet
    test: SampleSet
    # permutation positions of each part in the input set
    indices: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 2000
    separation: float = 0.0
    rotation: float = math.pi / 4
    seed: int = 0

    def __post_init__(self):
        if int(self.n_samples) < 4:
            raise DataError(f"n_samples must be >= 4, got {self.n_samples}")
        if not self.separation >= 0:
            raise DataError(f"separation must be >= 0, got {self.separation}")
        if not np.isfinite(self.rotation):
            raise DataError("rotation must be finite")
        if int(self.seed) < 0:
            raise DataError("seed must be unsigned")


POSITIVE_MEAN = np.array([2.0, 2.0])
POSITIVE_COV = np.array([[5.0, 1.0], [1.0, 5.0]])
NEGATIVE_COV = np.array([[10.0, 1.0], [1.0, 3.0]])


def negative_mean(separation: float) -> np.ndarray:
    """Class -1 centroid at Euclidean distance ``separation`` from [2, 2],
    moved along the -(1, 1) diagonal."""
    return POSITIVE_MEAN - separation * np.array([1.0, 1.0]) / math.sqrt(2.0)


def _gaussian_logpdf(x, mean, cov):
    diff = x - mean
    prec = np.linalg.inv(cov)
    maha = np.einsum("ni,ij,nj->n", diff, prec, diff)
    return -0.5 * (maha + np.log(np.linalg.det(cov)) + 2 * math.log(2 * math.pi))


def generate_synthetic(config: SyntheticConfig) -> SampleSet:
    """Two-Gaussian synthetic data with a rotation-correlated sensitive attribute.

    Labels are fair coin flips. The group of each sample is Bernoulli with
    ``p(z=+1) = p(x'|+1) / (p(x'|+1) + p(x'|-1))`` where ``x'`` is ``x``
    rotated by ``config.rotation``; ``z=+1`` is the privileged group.
    """
    n = int(config.n_samples)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    y = np.where(rng.random(n) < 0.5, 1, -1)
    z = rng.standard_normal((n, 2))
    mu_neg = negative_mean(config.separation)
    pos = POSITIVE_MEAN + z @ np.linalg.cholesky(POSITIVE_COV).T
    neg = mu_neg + z @ np.linalg.cholesky(NEGATIVE_COV).T
    X = np.where((y == 1)[:, None], pos, neg)

    c, s = math.cos(config.rotation), math.sin(config.rotation)
    rot = np.array([[c, -s], [s, c]])
    Xr = X @ rot.T
    lp = _gaussian_logpdf(Xr, POSITIVE_MEAN, POSITIVE_COV)
    ln = _gaussian_logpdf(Xr, mu_neg, NEGATIVE_COV)
    p_priv = 1.0 / (1.0 + np.exp(ln - lp))
    groups = np.where(rng.random(n) < p_priv, GroupTag.PRIVILEGED, GroupTag.UNPRIVILEGED)
    return SampleSet(X, y, groups, ("x0", "x1"))


def split(data: SampleSet, fractions: Sequence[float] = (0.5, 0.3, 0.2),
          seed: int = 0) -> DataSplit:
    """Seeded random permutation followed by a contiguous three-way partition."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise DataError(f"fractions must be three positive values summing to 1, got {fractions}")
    n = len(data)
    n_train = int(round(n * fr[0]))
    n_val = int(round(n * fr[1]))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"split of {n} samples by {tuple(fr)} leaves an empty part")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    idx = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return DataSplit(data.subset(idx[0]), data.subset(idx[1]), data.subset(idx[2]), idx)


def partition_by_group(data: SampleSet) -> tuple[SampleSet | None, SampleSet | None]:
    """Return ``(unprivileged, privileged)`` parts; an empty part is ``None``."""
    if np.any(data.groups == GroupTag.NONE):
        raise DataError("partition_by_group: sample with group tag 'none'")
    u = np.flatnonzero(data.groups == GroupTag.UNPRIVILEGED)
    p = np.flatnonzero(data.groups == GroupTag.PRIVILEGED)
    return (data.subset(u) if u.size else None,
            data.subset(p) if p.size else None)


def group_sizes(data: SampleSet) -> tuple[int, int]:
    """``(p, m)``: number of unprivileged and privileged samples."""
    return (int(np.sum(data.groups == GroupTag.UNPRIVILEGED)),
            int(np.sum(data.groups == GroupTag.PRIVILEGED)))


def load_csv(path, label_column: str, sensitive_column: str,
             favorable_value: str, privileged_value: str) -> SampleSet:
    """Load a preprocessed tabular dataset.

    Every column other than the label and sensitive columns must be numeric
    and becomes a feature. Label and sensitive values are compared as
    stripped strings.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for col in (label_column, sensitive_column):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        li, si = header.index(label_column), header.index(sensitive_column)
        fcols = [i for i in range(len(header)) if i not in (li, si)]
        if not fcols:
            raise DataError(f"{path}: no feature columns")
        rows, labels, groups = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for i in fcols:
                try:
                    vals.append(float(row[i]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {header[i]!r}: "
                                    f"non-numeric value {row[i]!r}") from None
            rows.append(vals)
            labels.append(1 if row[li].strip() == str(favorable_value) else -1)
            groups.append(GroupTag.PRIVILEGED if row[si].strip() == str(privileged_value)
                          else GroupTag.UNPRIVILEGED)
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        return SampleSet(np.array(rows), np.array(labels), np.array(groups),
                         tuple(header[i] for i in fcols))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_samples(data: SampleSet, path) -> None:
    """Write the native CSV format: feature columns, ``label``, ``group``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*data.feature_names, "label", "group"])
        for x, y, g in zip(data.features, data.labels, data.groups):
            w.writerow([*(repr(float(v)) for v in x), int(y), GroupTag(int(g)).text])


def read_samples(path) -> SampleSet:
    """Read a file produced by :func:`write_samples` (``none`` groups allowed)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if header[-2:] != ["label", "group"]:
            raise DataError(f"{path}: last two columns must be 'label', 'group'")
        rows, labels, groups = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-2]])
                labels.append(int(row[-2]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            groups.append(GroupTag.parse(row[-1]))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return SampleSet(np.array(rows), np.array(labels), np.array(groups), tuple(header[:-2]))
