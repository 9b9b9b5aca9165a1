"""Classification SPM: a parametric backbone produces the query latent, a
shared instance encoder turns the inputted set into (embedding, one-hot)
pairs, and a cross-attention head mixes the set's labels into the prediction.

Unlearning is a row deletion on the inputted set; the weights never change.
Also hosts the plain parametric MLP used by the gradient-based baselines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import numeric as nm
from .data import (DEFAULT_SET_SIZE_CLS, LabeledDataset, LabelPermutation,
                   apply_label_perm, one_hot, sample_inputted_set)
from .errors import DomainError, EmptySetError, ShapeError, TrainingDivergenceError
from .numeric import Adam, Var, make_rng

CHECKPOINT_VERSION = 1
LOG_FLOOR = 1e-12


@dataclass
class InstanceSet:
    """Per-layer set contents: one embedding row and one one-hot label row per
    surviving training instance, tagged with its training-set row index.

    ``mode`` records how the set was produced: "full", "clustering" (one row
    per class, source_ids hold class ids) or "retrieval".
    """

    embeddings: np.ndarray
    labels: np.ndarray
    source_ids: np.ndarray
    mode: str = "full"

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.source_ids = np.asarray(self.source_ids, dtype=np.int64)
        if self.embeddings.shape[0] < 1:
            raise EmptySetError("instance set must be non-empty")
        if self.embeddings.shape[0] != self.labels.shape[0]:
            raise ShapeError("embeddings and labels disagree on m")
        if self.source_ids.shape[0] != self.embeddings.shape[0]:
            raise ShapeError("source_ids length mismatch")
        if len(set(self.source_ids.tolist())) != self.source_ids.shape[0]:
            raise DomainError("source_ids must be distinct")
        sums = self.labels.sum(axis=1)
        if not (np.all(np.isin(self.labels, (0.0, 1.0))) and np.all(sums == 1.0)):
            raise DomainError("labels must be one-hot rows")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]


@dataclass
class ClassifierConfig:
    in_dim: int = 2
    num_classes: int = 2
    hidden: tuple = (64, 64)
    embed_dim: int = 32
    attn_dim: int = 32
    set_size: int = DEFAULT_SET_SIZE_CLS
    batch_size: int = 64
    epochs: int = 200
    lr: float = 1e-3
    label_perm: bool = False  # augmentation is aimed at generation; off here

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ClassifierConfig":
        obj = dict(obj)
        obj["hidden"] = tuple(obj.get("hidden", (64, 64)))
        return cls(**obj)


def _init_stack(widths, rng) -> list[tuple[Var, Var]]:
    """Affine+ReLU layers with uniform(+-1/sqrt(fan_in)) weights."""
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = Var(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b = Var(rng.uniform(-bound, bound, size=fan_out))
        layers.append((w, b))
    return layers


def _stack_var(layers, x: Var) -> Var:
    for w, b in layers:
        x = nm.relu(nm.affine(x, w, b))
    return x


def _stack_np(layers, x: np.ndarray) -> np.ndarray:
    for w, b in layers:
        x = np.maximum(x @ w.value + b.value, 0.0)
    return x


@dataclass
class SpmClassifier:
    """Learned parameter bundle: backbone f, shared instance encoder h, and
    the attention projections. Immutable after fit; share freely.
    """

    config: ClassifierConfig
    backbone: list = field(default_factory=list)
    encoder: list = field(default_factory=list)
    wq: Var | None = None
    wk: Var | None = None
    train_accuracy: float | None = None

    @classmethod
    def init(cls, config: ClassifierConfig, rng) -> "SpmClassifier":
        widths = (config.in_dim, *config.hidden, config.embed_dim)
        backbone = _init_stack(widths, rng)
        encoder = _init_stack(widths, rng)
        bound = 1.0 / np.sqrt(config.embed_dim)
        wq = Var(rng.uniform(-bound, bound, size=(config.embed_dim, config.attn_dim)))
        wk = Var(rng.uniform(-bound, bound, size=(config.embed_dim, config.attn_dim)))
        return cls(config=config, backbone=backbone, encoder=encoder, wq=wq, wk=wk)

    def params(self) -> list[Var]:
        out = []
        for w, b in self.backbone + self.encoder:
            out.extend([w, b])
        out.extend([self.wq, self.wk])
        return out

    # -- persistence --------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "kind": "spm_classifier",
            "config": self.config.to_json(),
            "train_accuracy": self.train_accuracy,
            "weights": [p.value.reshape(-1).tolist() for p in self.params()],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SpmClassifier":
        if obj.get("format_version") != CHECKPOINT_VERSION:
            raise DomainError("unsupported checkpoint version")
        config = ClassifierConfig.from_json(obj["config"])
        model = cls.init(config, make_rng(0))
        flats = obj["weights"]
        for p, flat in zip(model.params(), flats):
            p.value[...] = np.asarray(flat, dtype=np.float64).reshape(p.value.shape)
        model.train_accuracy = obj.get("train_accuracy")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "SpmClassifier":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def encode_set(model: SpmClassifier, x_set: np.ndarray, y_set: np.ndarray,
               source_ids: np.ndarray | None = None, mode: str = "full") -> InstanceSet:
    """Run the shared encoder over every set element; labels pass through."""
    x_set = np.asarray(x_set, dtype=np.float64)
    if x_set.shape[1] != model.config.in_dim:
        raise ShapeError("set feature width does not match the encoder")
    if source_ids is None:
        source_ids = np.arange(x_set.shape[0])
    emb = _stack_np(model.encoder, x_set)
    return InstanceSet(emb, y_set, source_ids, mode=mode)


def encode_train_set(model: SpmClassifier, train: LabeledDataset) -> InstanceSet:
    return encode_set(model, train.x, train.one_hot())


def _query_embed(model: SpmClassifier, x: np.ndarray) -> np.ndarray:
    return _stack_np(model.backbone, np.atleast_2d(np.asarray(x, dtype=np.float64)))


def _keep_mask(set_ids: np.ndarray, exclude_ids: np.ndarray | None, batch: int) -> np.ndarray:
    if exclude_ids is None:
        return np.ones((batch, set_ids.shape[0]), dtype=bool)
    return set_ids[None, :] != np.asarray(exclude_ids).reshape(-1, 1)


def _attention_np(model: SpmClassifier, z: np.ndarray, s: InstanceSet,
                  exclude_ids: np.ndarray | None = None) -> np.ndarray:
    """Row-wise attention weights of queries z over the set; excluded rows get
    exact weight 0.
    """
    q = z @ model.wq.value
    k = s.embeddings @ model.wk.value
    logits = q @ k.T
    keep = _keep_mask(s.source_ids, exclude_ids, z.shape[0])
    if not keep.any(axis=1).all():
        raise EmptySetError("inputted set is empty after self-exclusion")
    masked = np.where(keep, logits, -np.inf)
    e = np.exp(masked - masked.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def attention(model: SpmClassifier, z: np.ndarray, s: InstanceSet,
              exclude: int | None = None) -> np.ndarray:
    """Attention weights of a single query latent over the surviving set rows
    (the excluded row is dropped from the output).
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    exclude_ids = None if exclude is None else np.array([exclude])
    alpha = _attention_np(model, z, s, exclude_ids)[0]
    if exclude is None:
        return alpha
    return alpha[s.source_ids != exclude]


def predict_batch(model: SpmClassifier, x: np.ndarray, s: InstanceSet,
                  exclude_ids: np.ndarray | None = None) -> np.ndarray:
    """Class-probability rows: convex combinations of the set's one-hot labels
    under the attention weights.
    """
    z = _query_embed(model, x)
    alpha = _attention_np(model, z, s, exclude_ids)
    return alpha @ s.labels


def predict(model: SpmClassifier, x: np.ndarray, s: InstanceSet,
            exclude: int | None = None) -> np.ndarray:
    exclude_ids = None if exclude is None else np.array([exclude])
    return predict_batch(model, np.atleast_2d(x), s, exclude_ids)[0]


def spm_predict_fn(model: SpmClassifier, s: InstanceSet, chunk: int = 8192):
    """Batched closure over a fixed inputted set, for metrics and grids."""

    def f(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        outs = [predict_batch(model, x[i:i + chunk], s) for i in range(0, x.shape[0], chunk)]
        return np.vstack(outs)

    return f


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _loss_var(model: SpmClassifier, xb: np.ndarray, yb: np.ndarray,
              set_x: np.ndarray, set_labels: np.ndarray, keep: np.ndarray) -> Var:
    z = _stack_var(model.backbone, Var(xb))
    s = _stack_var(model.encoder, Var(set_x))
    logits = nm.matmul_t(nm.matmul(z, model.wq), nm.matmul(s, model.wk))
    alpha = nm.masked_softmax(logits, keep)
    yhat = nm.matmul(alpha, Var(set_labels))
    picked = nm.gather_2d(yhat, np.arange(xb.shape[0]), yb)
    return nm.scale(nm.mean_all(nm.log_floor(picked, LOG_FLOOR)), -1.0)


def loss(model: SpmClassifier, xb: np.ndarray, yb: np.ndarray, train: LabeledDataset,
         set_idx: np.ndarray, batch_ids: np.ndarray | None = None) -> Var:
    """Mean cross-entropy of the attention head over a batch, excluding each
    query's own instance from its softmax when ``batch_ids`` provides it.
    """
    set_x = train.x[set_idx]
    set_labels = one_hot(train.y[set_idx], train.num_classes)
    keep = _keep_mask(set_idx, batch_ids, xb.shape[0])
    if not keep.any(axis=1).all():
        raise EmptySetError("a query excluded the whole inputted set")
    return _loss_var(model, xb, np.asarray(yb, dtype=np.int64), set_x, set_labels, keep)


def fit(config: ClassifierConfig, train: LabeledDataset, seed: int) -> SpmClassifier:
    """Minibatch training; every batch is paired with a freshly sampled
    inputted set and each query excludes its own instance.
    """
    rng = make_rng(seed)
    model = SpmClassifier.init(config, rng)
    opt = Adam(model.params(), lr=config.lr)
    n = train.n
    m = min(config.set_size, n)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            set_idx = sample_inputted_set(n, m, rng)
            yb = train.y[batch]
            set_labels = one_hot(train.y[set_idx], train.num_classes)
            if config.label_perm:
                perm = LabelPermutation.random(config.num_classes, rng)
                set_labels = apply_label_perm(set_labels, perm)
                yb = perm.apply_to_classes(yb)
            keep = _keep_mask(set_idx, batch, batch.shape[0])
            out = _loss_var(model, train.x[batch], yb, train.x[set_idx], set_labels, keep)
            if not np.isfinite(out.value):
                raise TrainingDivergenceError("classification loss became non-finite")
            out.backward()
            opt.step()
    full = encode_train_set(model, train)
    probs = spm_predict_fn(model, full)(train.x)
    model.train_accuracy = float(np.mean(np.argmax(probs, axis=1) == train.y))
    return model


# ---------------------------------------------------------------------------
# set reduction
# ---------------------------------------------------------------------------


def cluster_set(s: InstanceSet) -> InstanceSet:
    """Average-instance reduction: one mean-embedding row per class present in
    the set, labelled with that class; source ids become class ids.
    """
    classes = np.flatnonzero(s.labels.sum(axis=0) > 0)
    embs, labels, ids = [], [], []
    for c in classes:
        rows = s.labels[:, c] == 1.0
        embs.append(s.embeddings[rows].mean(axis=0))
        hot = np.zeros(s.num_classes)
        hot[c] = 1.0
        labels.append(hot)
        ids.append(c)
    return InstanceSet(np.asarray(embs), np.asarray(labels), np.asarray(ids), mode="clustering")


def reduce_clustering(model: SpmClassifier, train: LabeledDataset) -> InstanceSet:
    return cluster_set(encode_train_set(model, train))


def reduce_retrieval(model: SpmClassifier, train: LabeledDataset, x: np.ndarray,
                     k: int, full: InstanceSet | None = None) -> InstanceSet:
    """The k nearest training instances to h(x) in embedding space; ties break
    toward the lower source index. Pass ``full`` to reuse encoded embeddings.
    """
    if k > train.n:
        raise DomainError(f"k={k} exceeds the training set size {train.n}")
    if full is None:
        full = encode_train_set(model, train)
    query = _stack_np(model.encoder, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]
    d2 = ((full.embeddings - query) ** 2).sum(axis=1)
    order = np.lexsort((full.source_ids, d2))[:k]
    order = np.sort(order)
    return InstanceSet(full.embeddings[order], full.labels[order],
                       full.source_ids[order], mode="retrieval")


def retrieval_predict_fn(model: SpmClassifier, train: LabeledDataset, k: int):
    full = encode_train_set(model, train)

    def f(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.vstack([predict(model, row, reduce_retrieval(model, train, row, k, full))
                          for row in x])

    return f


# ---------------------------------------------------------------------------
# plain parametric baseline (for GA/FT)
# ---------------------------------------------------------------------------


@dataclass
class MlpClassifier:
    """Standard MLP with a softmax head; the parametric point of comparison."""

    config: ClassifierConfig
    layers: list = field(default_factory=list)
    head: tuple | None = None

    @classmethod
    def init(cls, config: ClassifierConfig, rng) -> "MlpClassifier":
        widths = (config.in_dim, *config.hidden, config.embed_dim)
        layers = _init_stack(widths, rng)
        bound = 1.0 / np.sqrt(config.embed_dim)
        head = (Var(rng.uniform(-bound, bound, size=(config.embed_dim, config.num_classes))),
                Var(rng.uniform(-bound, bound, size=config.num_classes)))
        return cls(config=config, layers=layers, head=head)

    def params(self) -> list[Var]:
        out = []
        for w, b in self.layers:
            out.extend([w, b])
        out.extend(self.head)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        h = _stack_np(self.layers, np.atleast_2d(np.asarray(x, dtype=np.float64)))
        logits = h @ self.head[0].value + self.head[1].value
        return nm.softmax_rows(logits)

    def to_json(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "kind": "mlp_classifier",
            "config": self.config.to_json(),
            "weights": [p.value.reshape(-1).tolist() for p in self.params()],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MlpClassifier":
        config = ClassifierConfig.from_json(obj["config"])
        model = cls.init(config, make_rng(0))
        for p, flat in zip(model.params(), obj["weights"]):
            p.value[...] = np.asarray(flat, dtype=np.float64).reshape(p.value.shape)
        return model


def mlp_loss(model: MlpClassifier, xb: np.ndarray, yb: np.ndarray) -> Var:
    h = _stack_var(model.layers, Var(xb))
    logits = nm.affine(h, *model.head)
    keep = np.ones(logits.value.shape, dtype=bool)
    probs = nm.masked_softmax(logits, keep)
    picked = nm.gather_2d(probs, np.arange(xb.shape[0]), np.asarray(yb, dtype=np.int64))
    return nm.scale(nm.mean_all(nm.log_floor(picked, LOG_FLOOR)), -1.0)


def fit_mlp(config: ClassifierConfig, train: LabeledDataset, seed: int) -> MlpClassifier:
    rng = make_rng(seed)
    model = MlpClassifier.init(config, rng)
    opt = Adam(model.params(), lr=config.lr)
    for _ in range(config.epochs):
        order = rng.permutation(train.n)
        for start in range(0, train.n, config.batch_size):
            batch = order[start:start + config.batch_size]
            out = mlp_loss(model, train.x[batch], train.y[batch])
            if not np.isfinite(out.value):
                raise TrainingDivergenceError("MLP loss became non-finite")
            out.backward()
            opt.step()
    return model
