"""Initialisation, multi-task loss, Adam, training loop and grid search."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .corpus import Document, batches
from .model import ModelConfig, TdamParams, encode_batch, is_weight_matrix, parameter_shapes, predict
from .numerics import Tensor

log = logging.getLogger(__name__)

INIT_RANGE = 0.1
DEFAULT_GRID = {
    "learning_rate": (0.01, 0.05, 0.1),
    "dropout": (0.0, 0.3, 0.6),
    "topic_vector_size": (50, 100, 200),
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    dropout: float = 0.0
    num_topics: int = 50
    topic_vector_size: int = 100   # also the hidden size n
    embed_dim: int = 200
    batch_size: int = 64
    max_epochs: int = 30
    multitask: bool = True
    task_weights: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    patience: int | None = 5
    clip_norm: float | None = None
    use_topics: bool = True
    freeze_embeddings: bool = False
    sentiment_classes: int = 3
    domain_classes: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0 or self.dropout < 0 or self.dropout >= 1:
            raise ValueError("learning_rate must be >= 0 and dropout in [0, 1)")
        if any(w < 0 for w in self.task_weights):
            raise ValueError("task weights must be non-negative")
        if self.topic_vector_size < 2 or self.topic_vector_size % 2:
            raise ValueError("topic_vector_size (hidden size) must be even and >= 2")

    @property
    def hidden_size(self) -> int:
        return self.topic_vector_size

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, embed_dim=self.embed_dim,
                           hidden_size=self.topic_vector_size, num_topics=self.num_topics,
                           sentiment_classes=self.sentiment_classes,
                           domain_classes=self.domain_classes, use_topics=self.use_topics)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task_weights"] = list(self.task_weights)
        return d


# ---------------------------------------------------------------- initialisation


def semi_orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix whose smaller-dimension Gram matrix is the identity."""
    if rows < 1 or cols < 1:
        raise ValueError(f"degenerate matrix shape ({rows}, {cols})")
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q if rows >= cols else q.T)


def init_params(config: ModelConfig, seed: int, embeddings: np.ndarray | None = None,
                vocab_tokens: list[str] | None = None) -> TdamParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if any(s == 0 for s in shape):
            raise ValueError(f"{name} has a zero-size dimension {shape}")
        if is_weight_matrix(name, shape):
            data = semi_orthogonal(*shape, rng)
        else:
            data = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
        tensors[name] = Tensor(data)
    if embeddings is not None:
        if embeddings.shape != tensors["embedding"].shape:
            raise ValueError(f"embedding table {embeddings.shape} != {tensors['embedding'].shape}")
        tensors["embedding"] = Tensor(np.array(embeddings, dtype=np.float64))
    return TdamParams(config, tensors, vocab_tokens)


# ---------------------------------------------------------------- loss


def total_loss(batch: Sequence[Document], params: TdamParams, config: TrainConfig,
               training: bool = False, rng: np.random.Generator | None = None,
               encoding=None):
    """Weighted sum of per-task summed cross-entropies.

    Returns ``(loss, encoding)``.  With ``multitask=False`` only the
    sentiment term is used.
    """
    for doc in batch:
        if doc.sentiment_label is None or (config.multitask and doc.domain_label is None):
            raise ValueError(f"document {doc.doc_id!r} lacks a label for an active task")
    enc = encoding or encode_batch(batch, params, config.dropout, training, rng)
    y_s = np.array([d.sentiment_label for d in batch])
    loss = nx.scale(nx.cross_entropy(enc.p_sentiment, y_s), config.task_weights[0])
    if config.multitask:
        y_d = np.array([d.domain_label for d in batch])
        loss = nx.add(loss, nx.scale(nx.cross_entropy(enc.p_domain, y_d), config.task_weights[1]))
    return loss, enc


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def update(self, params: TdamParams, lr: float, skip: Sequence[str] = ()) -> None:
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for name, t in params.tensors.items():
            if t.grad is None or name in skip:
                continue
            m = self.m.setdefault(name, np.zeros_like(t.data))
            v = self.v.setdefault(name, np.zeros_like(t.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * t.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * t.grad * t.grad
            t.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(params: TdamParams, max_norm: float) -> float:
    total = math.sqrt(sum(float((t.grad ** 2).sum()) for t in params.values() if t.grad is not None))
    if total > max_norm:
        for t in params.values():
            if t.grad is not None:
                t.grad *= max_norm / total
    return total


# ---------------------------------------------------------------- training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_acc_sentiment: float
    dev_acc_domain: float

    def line(self) -> str:
        return (f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_loss:.6f}\t"
                f"{self.dev_acc_sentiment:.6f}\t{self.dev_acc_domain:.6f}")


METRICS_HEADER = "epoch\ttrain_loss\tdev_loss\tdev_acc_sentiment\tdev_acc_domain"


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def best(self) -> EpochRecord | None:
        for e in self.epochs:
            if e.epoch == self.best_epoch:
                return e
        return None

    def metrics_log(self) -> str:
        return "\n".join([METRICS_HEADER] + [e.line() for e in self.epochs]) + "\n"


def evaluate(docs: Sequence[Document], params: TdamParams, config: TrainConfig) -> tuple[float, float, float]:
    """Inference-mode ``(loss, sentiment accuracy, domain accuracy)``."""
    loss, correct_s, correct_d = 0.0, 0, 0
    for chunk in batches(docs, config.batch_size):
        l, enc = total_loss(chunk, params, config)
        loss += l.item()
        correct_s += int((enc.p_sentiment.data.argmax(1) == [d.sentiment_label for d in chunk]).sum())
        correct_d += int((enc.p_domain.data.argmax(1) == [d.domain_label for d in chunk]).sum())
    n = len(docs)
    return loss, correct_s / n, correct_d / n


def _better(acc: float, loss: float, best: tuple[float, float] | None) -> bool:
    if best is None:
        return True
    return acc > best[0] or (acc == best[0] and loss < best[1])


def train(train_docs: Sequence[Document], dev_docs: Sequence[Document], config: TrainConfig,
          params: TdamParams | None = None, vocab_size: int | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[TdamParams, History]:
    """Adam over length-sorted batches; returns the best-dev parameters.

    Model selection is by dev sentiment accuracy, ties broken by lower dev
    loss.  Training stops after ``patience`` epochs without improvement.
    """
    if not train_docs or not dev_docs:
        raise TrainingError("training needs non-empty train and dev splits")
    if params is None:
        if vocab_size is None:
            vocab_size = 1 + max(w for d in train_docs for s in d.sentences for w in s)
        params = init_params(config.model_config(vocab_size), config.seed)
    params = params.copy()
    params.requires_grad_(True)
    adam = AdamState(config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    skip = ("embedding",) if config.freeze_embeddings else ()

    history = History()
    best_key: tuple[float, float] | None = None
    best_params = params.copy()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        epoch_loss = 0.0
        batch_seed = int(rng.integers(2**31))
        for b, chunk in enumerate(batches(train_docs, config.batch_size, batch_seed)):
            params.zero_grad()
            with nx.Tape() as tape:
                loss, _ = total_loss(chunk, params, config, training=True, rng=rng)
            if not np.isfinite(loss.item()):
                ids = ", ".join(d.doc_id for d in chunk[:5])
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b} (docs {ids}...)")
            tape.backward(loss)
            if config.clip_norm is not None:
                clip_gradients(params, config.clip_norm)
            adam.update(params, config.learning_rate, skip)
            epoch_loss += loss.item()
        params.zero_grad()
        dev_loss, acc_s, acc_d = evaluate(dev_docs, params, config)
        rec = EpochRecord(epoch, epoch_loss, dev_loss, acc_s, acc_d)
        history.epochs.append(rec)
        log.info("epoch %d loss %.4f dev_acc %.4f/%.4f", epoch, epoch_loss, acc_s, acc_d)
        if on_epoch is not None:
            on_epoch(rec)
        if epoch > 5 and epoch_loss > history.epochs[-2].train_loss:
            history.flags.append(f"train loss rose at epoch {epoch}")
        if _better(acc_s, dev_loss, best_key):
            best_key = (acc_s, dev_loss)
            best_params = params.copy()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    best_params.requires_grad_(False)
    return best_params, history


# ---------------------------------------------------------------- grid search


@dataclass
class GridCell:
    config: TrainConfig
    dev_accuracy: float
    dev_loss: float

    def key(self) -> tuple:
        c = self.config
        return (-self.dev_accuracy, self.dev_loss, c.learning_rate, c.dropout, c.topic_vector_size)


@dataclass
class GridResult:
    best: TrainConfig
    cells: list[GridCell]


def expand_grid(base: TrainConfig, grid: dict[str, Sequence]) -> list[TrainConfig]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must have at least one value per axis")
    keys = sorted(grid)
    return [replace(base, **dict(zip(keys, combo)))
            for combo in itertools.product(*(grid[k] for k in keys))]


def grid_search(train_docs: Sequence[Document], dev_docs: Sequence[Document], base: TrainConfig,
                grid: dict[str, Sequence], vocab_size: int | None = None, workers: int = 1,
                embeddings: np.ndarray | None = None) -> GridResult:
    """Train one model per grid cell; pick by dev sentiment accuracy, then dev loss, then config order."""
    configs = expand_grid(base, grid)
    seeds = np.random.SeedSequence(base.seed).generate_state(len(configs))
    configs = [replace(c, seed=int(s)) for c, s in zip(configs, seeds)]
    if vocab_size is None:
        vocab_size = 1 + max(w for d in list(train_docs) + list(dev_docs) for s in d.sentences for w in s)

    def run(cfg: TrainConfig) -> GridCell:
        p0 = init_params(cfg.model_config(vocab_size), cfg.seed, embeddings)
        params, hist = train(train_docs, dev_docs, cfg, params=p0)
        best = hist.best
        return GridCell(cfg, best.dev_acc_sentiment, best.dev_loss)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run, configs))
    else:
        cells = [run(c) for c in configs]
    ranked = sorted(cells, key=GridCell.key)
    return GridResult(ranked[0].config, cells)


# ---------------------------------------------------------------- cross-validation


def kfold_splits(n_docs: int, folds: int, seed: int, dev_fraction: float = 0.125):
    """Yield ``(train, dev, test)`` index arrays; test is one fold, dev is carved from the rest."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    perm = np.random.default_rng(seed).permutation(n_docs)
    parts = np.array_split(perm, folds)
    for i in range(folds):
        test = parts[i]
        rest = np.concatenate([p for j, p in enumerate(parts) if j != i])
        n_dev = max(1, int(round(len(rest) * dev_fraction)))
        yield rest[n_dev:], rest[:n_dev], test


def accuracy_of(docs: Sequence[Document], params: TdamParams) -> tuple[float, float]:
    ps, pd = predict(docs, params)
    gs = np.array([d.sentiment_label for d in docs])
    gd = np.array([d.domain_label for d in docs])
    return float((ps == gs).mean()), float((pd == gd).mean())
