"""Synthetic 2-D datasets, stratified splits, forget-set resolution,
inputted-set sampling, and label-permutation augmentation.

Datasets travel as CSV with header ``x0,x1,...,y``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, StratificationError
from .numeric import make_rng

DEFAULT_SET_SIZE_CLS = 128  # inputted-set size for classification training
DEFAULT_SET_SIZE_GEN = 64   # inputted-set size for generation training


@dataclass
class LabeledDataset:
    """N feature vectors with integer class labels in [0, C)."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DomainError("features and labels disagree on N")
        if self.x.shape[0] < 1:
            raise DomainError("dataset must contain at least one sample")
        if not np.all(np.isfinite(self.x)):
            raise DomainError("features must be finite")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise DomainError("labels must lie in [0, num_classes)")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.x[idx], self.y[idx], self.num_classes)

    def one_hot(self) -> np.ndarray:
        return one_hot(self.y, self.num_classes)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass
class ForgetSpec:
    """Declarative description of the forget set: whole classes, explicit row
    indices, or a seeded random fraction of the training set.
    """

    classes: list[int] | None = None
    indices: list[int] | None = None
    random_fraction: float | None = None
    random_seed: int = 0

    def __post_init__(self):
        modes = sum(v is not None for v in (self.classes, self.indices, self.random_fraction))
        if modes != 1:
            raise DomainError("exactly one of classes/indices/random_fraction must be set")
        if self.random_fraction is not None and not (0.0 < self.random_fraction < 1.0):
            raise DomainError("random fraction must lie in (0, 1)")

    @classmethod
    def by_classes(cls, classes) -> "ForgetSpec":
        return cls(classes=list(classes))

    @classmethod
    def by_indices(cls, indices) -> "ForgetSpec":
        return cls(indices=list(indices))

    @classmethod
    def by_random(cls, fraction: float, seed: int) -> "ForgetSpec":
        return cls(random_fraction=float(fraction), random_seed=int(seed))

    def to_json(self) -> dict:
        if self.classes is not None:
            return {"classes": [int(c) for c in self.classes]}
        if self.indices is not None:
            return {"indices": [int(i) for i in self.indices]}
        return {"random": {"fraction": self.random_fraction, "seed": self.random_seed}}

    @classmethod
    def from_json(cls, obj: dict) -> "ForgetSpec":
        if "classes" in obj:
            return cls.by_classes(obj["classes"])
        if "indices" in obj:
            return cls.by_indices(obj["indices"])
        if "random" in obj:
            return cls.by_random(obj["random"]["fraction"], obj["random"].get("seed", 0))
        raise DomainError("forget spec needs one of classes/indices/random")


@dataclass
class LabelPermutation:
    """Bijection on class indices; column j of a one-hot batch moves to
    column perm[j].
    """

    perm: np.ndarray

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        c = self.perm.shape[0]
        if sorted(self.perm.tolist()) != list(range(c)):
            raise DomainError("not a permutation")

    @classmethod
    def identity(cls, num_classes: int) -> "LabelPermutation":
        return cls(np.arange(num_classes))

    @classmethod
    def random(cls, num_classes: int, rng: np.random.Generator) -> "LabelPermutation":
        return cls(rng.permutation(num_classes))

    def inverse(self) -> "LabelPermutation":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.shape[0])
        return LabelPermutation(inv)

    def apply_to_classes(self, labels: np.ndarray) -> np.ndarray:
        return self.perm[np.asarray(labels, dtype=np.int64)]


def apply_label_perm(labels: np.ndarray, perm: LabelPermutation) -> np.ndarray:
    """Permute the columns of a one-hot batch: column j -> column perm[j]."""
    labels = np.asarray(labels, dtype=np.float64)
    ok = np.all(np.isin(labels, (0.0, 1.0))) and np.all(labels.sum(axis=1) == 1.0)
    if not ok:
        raise DomainError("labels must be one-hot rows")
    out = np.zeros_like(labels)
    out[:, perm.perm] = labels
    return out


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def gen_blobs(num_classes: int, per_class: int, centers, sigma: float, seed: int) -> LabeledDataset:
    """Isotropic Gaussian cluster per class around its center."""
    if num_classes < 2:
        raise DomainError("need at least two classes")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] != num_classes:
        raise DomainError("one center per class required")
    rng = make_rng(seed)
    xs, ys = [], []
    for c in range(num_classes):
        xs.append(centers[c] + sigma * rng.standard_normal((per_class, centers.shape[1])))
        ys.append(np.full(per_class, c))
    return LabeledDataset(np.vstack(xs), np.concatenate(ys), num_classes)


def gen_moons(per_class: int, noise: float, seed: int) -> LabeledDataset:
    """Two interleaving half-circles with additive Gaussian noise."""
    if noise < 0:
        raise DomainError("noise must be non-negative")
    rng = make_rng(seed)
    t = np.linspace(0.0, np.pi, per_class)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([upper, lower])
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    y = np.concatenate([np.zeros(per_class), np.ones(per_class)])
    return LabeledDataset(x, y, 2)


def gen_moons_with_outliers(per_class: int, noise: float, n_outliers: int,
                            outlier_center, outlier_sigma: float,
                            outlier_class: int, seed: int):
    """Moons plus a small cluster of ``outlier_class`` points dropped into
    foreign territory; the cluster rows are the natural forget set.

    Returns (dataset, outlier_indices).
    """
    base = gen_moons(per_class, noise, seed)
    rng = make_rng(seed + 1)
    cluster = np.asarray(outlier_center, dtype=np.float64) + \
        outlier_sigma * rng.standard_normal((n_outliers, 2))
    x = np.vstack([base.x, cluster])
    y = np.concatenate([base.y, np.full(n_outliers, outlier_class)])
    ds = LabeledDataset(x, y, 2)
    return ds, np.arange(base.n, base.n + n_outliers)


def split(ds: LabeledDataset, test_fraction: float, seed: int):
    """Stratified train/test split; per-class proportions hold within +-1."""
    if not (0.0 < test_fraction < 1.0):
        raise DomainError("test fraction must lie in (0, 1)")
    rng = make_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        rows = np.flatnonzero(ds.y == c)
        if rows.size == 0:
            continue
        if rows.size < 2:
            raise StratificationError(f"class {c} has fewer than 2 samples")
        rows = rng.permutation(rows)
        n_test = int(round(test_fraction * rows.size))
        n_test = max(1, min(rows.size - 1, n_test))
        test_idx.append(rows[:n_test])
        train_idx.append(rows[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return ds.subset(train_idx), ds.subset(test_idx)


def resolve_forget(ds: LabeledDataset, spec: ForgetSpec) -> np.ndarray:
    """Resolve a ForgetSpec to sorted row indices of ``ds``; the retain set
    must stay non-empty.
    """
    if spec.classes is not None:
        bad = [c for c in spec.classes if not (0 <= c < ds.num_classes)]
        if bad:
            raise DomainError(f"unknown classes {bad}")
        idx = np.flatnonzero(np.isin(ds.y, spec.classes))
    elif spec.indices is not None:
        idx = np.asarray(sorted(set(spec.indices)), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= ds.n):
            raise DomainError("forget indices out of range")
    else:
        rng = make_rng(spec.random_seed)
        k = int(np.floor(spec.random_fraction * ds.n))
        idx = np.sort(rng.choice(ds.n, size=k, replace=False))
    if idx.size == 0:
        raise DomainError("forget set is empty — nothing to unlearn")
    if idx.size >= ds.n:
        raise DomainError("forget set covers the whole training set")
    return idx


def retain_indices(n: int, forget_idx: np.ndarray) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(forget_idx, dtype=np.int64)] = False
    return np.flatnonzero(mask)


def sample_inputted_set(n: int, m: int, rng: np.random.Generator,
                        exclude: int | None = None) -> np.ndarray:
    """m distinct indices from range(n), never containing ``exclude``."""
    avail = n - (1 if exclude is not None else 0)
    if m > avail:
        raise DomainError(f"cannot sample {m} of {avail} indices")
    if exclude is None:
        return rng.choice(n, size=m, replace=False)
    pool = np.delete(np.arange(n), exclude)
    return rng.choice(pool, size=m, replace=False)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def save_csv(ds: LabeledDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(ds.dim)] + ["y"])
        for row, label in zip(ds.x, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    path = Path(path)
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "y":
            raise DomainError(f"{path}: expected trailing label column 'y'")
        xs, ys = [], []
        for row in reader:
            xs.append([float(v) for v in row[:-1]])
            ys.append(int(row[-1]))
    y = np.asarray(ys, dtype=np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1
    return LabeledDataset(np.asarray(xs), y, c)
