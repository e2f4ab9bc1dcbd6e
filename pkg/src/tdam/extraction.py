"""Local topic embedding dumps, 2-D projection, k-means and topic ranking."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document
from .model import TdamParams, encode_batch, unpack

DUMP_FORMAT = "tdam-dump"
DUMP_VERSION = 1


class DumpError(ValueError):
    pass


@dataclass
class LocalEmbeddingDump:
    """Per-occurrence local topic embeddings (one row per word or sentence).

    ``word_index`` is -1 for sentence-level rows.  ``keys`` holds the word
    type for word rows and ``doc_id#sentence`` for sentence rows.
    """

    levels: list[str]
    keys: list[str]
    doc_ids: list[str]
    sentence_index: np.ndarray
    word_index: np.ndarray
    vectors: np.ndarray
    checkpoint: str = ""

    def __post_init__(self):
        n = len(self.keys)
        if not (len(self.levels) == len(self.doc_ids) == len(self.sentence_index)
                == len(self.word_index) == self.vectors.shape[0] == n):
            raise DumpError("dump columns have different lengths")
        if self.vectors.ndim != 2:
            raise DumpError("dump vectors must be 2-D")

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def select(self, level: str) -> "LocalEmbeddingDump":
        idx = [i for i, lv in enumerate(self.levels) if lv == level]
        return LocalEmbeddingDump([self.levels[i] for i in idx], [self.keys[i] for i in idx],
                                  [self.doc_ids[i] for i in idx], self.sentence_index[idx],
                                  self.word_index[idx], self.vectors[idx], self.checkpoint)

    def write(self, path: str | Path) -> None:
        levels = sorted(set(self.levels))
        level = levels[0] if len(levels) == 1 else "mixed"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#{DUMP_FORMAT}\tversion={DUMP_VERSION}\tn={self.dim}\tlevel={level}"
                     f"\tcheckpoint={self.checkpoint}\tcount={len(self)}\n")
            for i in range(len(self)):
                vec = " ".join(format(x, ".17g") for x in self.vectors[i])
                fh.write(f"{self.levels[i]}\t{self.keys[i]}\t{self.doc_ids[i]}\t"
                         f"{self.sentence_index[i]}\t{self.word_index[i]}\t{vec}\n")

    @classmethod
    def read(cls, path: str | Path) -> "LocalEmbeddingDump":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if not header or header[0] != f"#{DUMP_FORMAT}":
                raise DumpError(f"{path}: missing {DUMP_FORMAT} header")
            meta = dict(item.split("=", 1) for item in header[1:])
            if int(meta.get("version", -1)) != DUMP_VERSION:
                raise DumpError(f"{path}: unsupported dump version {meta.get('version')}")
            n = int(meta["n"])
            levels, keys, docs, sents, words, vecs = [], [], [], [], [], []
            for lineno, line in enumerate(fh, 2):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 6:
                    raise DumpError(f"{path}:{lineno}: expected 6 fields")
                vec = np.array([float(x) for x in parts[5].split()])
                if vec.shape != (n,):
                    raise DumpError(f"{path}:{lineno}: vector has {vec.size} values, header says {n}")
                levels.append(parts[0])
                keys.append(parts[1])
                docs.append(parts[2])
                sents.append(int(parts[3]))
                words.append(int(parts[4]))
                vecs.append(vec)
        vectors = np.array(vecs) if vecs else np.zeros((0, n))
        return cls(levels, keys, docs, np.array(sents, dtype=int), np.array(words, dtype=int),
                   vectors, meta.get("checkpoint", ""))


def collect_dump(docs: Sequence[Document], params: TdamParams, levels: Sequence[str] = ("word", "sentence"),
                 batch_size: int = 64, checkpoint: str = "") -> LocalEmbeddingDump:
    """Run inference and collect word-level and/or sentence-level local topic embeddings."""
    tokens = params.vocab_tokens
    if tokens is not None:
        for doc in docs:
            for s in doc.sentences:
                if any(w >= len(tokens) for w in s):
                    raise DumpError(f"document {doc.doc_id!r} has ids outside the checkpoint vocabulary")
    cols: dict[str, list] = {"levels": [], "keys": [], "doc_ids": [], "sent": [], "word": [], "vec": []}

    def add(level, key, doc_id, si, wi, vec):
        cols["levels"].append(level)
        cols["keys"].append(key)
        cols["doc_ids"].append(doc_id)
        cols["sent"].append(si)
        cols["word"].append(wi)
        cols["vec"].append(vec)

    for start in range(0, len(docs), batch_size):
        chunk = docs[start:start + batch_size]
        for doc, enc in zip(chunk, unpack(encode_batch(chunk, params, diagnostics=True), chunk)):
            if "word" in levels:
                for si, sent in enumerate(doc.sentences):
                    for wi, w in enumerate(sent):
                        key = tokens[w] if tokens is not None else str(w)
                        add("word", key, doc.doc_id, si, wi, enc.word_q[si][wi])
            if "sentence" in levels:
                for si in range(len(doc.sentences)):
                    add("sentence", f"{doc.doc_id}#{si}", doc.doc_id, si, -1, enc.sentence_q[si])
    n = params.config.hidden_size
    vectors = np.array(cols["vec"]) if cols["vec"] else np.zeros((0, n))
    return LocalEmbeddingDump(cols["levels"], cols["keys"], cols["doc_ids"],
                              np.array(cols["sent"], dtype=int), np.array(cols["word"], dtype=int),
                              vectors, checkpoint)


# ---------------------------------------------------------------- projection


def project_2d(vectors: np.ndarray, method: str = "tsne", perplexity: float = 30.0, seed: int = 0,
               learning_rate: float = 200.0, max_iter: int = 1000) -> np.ndarray:
    """Project rows to 2-D with exact t-SNE (PCA-initialised) or PCA."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D array of vectors")
    if method == "pca":
        return _pca_2d(X)
    if method != "tsne":
        raise ValueError(f"unknown projection method {method!r}")
    if len(X) < 3:
        raise ValueError("t-SNE needs at least 3 points")
    if perplexity >= len(X):
        raise ValueError(f"perplexity {perplexity} must be below the number of points {len(X)}")
    from sklearn.manifold import TSNE

    tsne = TSNE(n_components=2, perplexity=perplexity, learning_rate=learning_rate, max_iter=max_iter,
                init="pca", method="exact", random_state=seed)
    return tsne.fit_transform(X)


def _pca_2d(X: np.ndarray) -> np.ndarray:
    if len(X) < 2 or X.shape[1] < 2:
        out = np.zeros((len(X), 2))
        if len(X):
            out[:, : min(2, X.shape[1])] = (X - X.mean(0))[:, :2]
        return out
    from sklearn.decomposition import PCA

    return PCA(n_components=2, svd_solver="full").fit_transform(X)


# ---------------------------------------------------------------- k-means


@dataclass
class ClusterReport:
    k: int
    assignments: np.ndarray        # (N,) cluster per entry
    centroids: np.ndarray          # (k, dim)
    distances: np.ndarray          # (N,) Euclidean distance to own centroid
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0

    def members(self, c: int) -> np.ndarray:
        """Entries of cluster ``c`` ranked by ascending centroid distance (ties by index)."""
        idx = np.flatnonzero(self.assignments == c)
        return idx[np.lexsort((idx, self.distances[idx]))]

    def ranked(self) -> list[np.ndarray]:
        return [self.members(c) for c in range(self.k)]

    def lines(self, labels: Sequence[str]) -> list[str]:
        """``cluster_id<TAB>rank<TAB>member<TAB>distance`` rows."""
        out = []
        for c in range(self.k):
            for rank, i in enumerate(self.members(c), 1):
                out.append(f"{c}\t{rank}\t{labels[i]}\t{self.distances[i]:.10g}")
        return out


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = ((X - X[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[centers].copy()


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 300) -> ClusterReport:
    """k-means++ seeding then Lloyd iterations to an assignment fixpoint.

    An emptied cluster is moved onto the point farthest from its current
    centroid.
    """
    X = np.asarray(points, dtype=np.float64)
    n = len(X)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points {n}")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, k, rng)
    labels = None
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, C)
        new = d2.argmin(axis=1)
        # reseed empty clusters
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            own = d2[np.arange(n), new]
            donors = counts[new] > 1
            far = int(np.argmax(np.where(donors, own, -1.0)))
            C[c] = X[far]
            d2[:, c] = ((X - C[c]) ** 2).sum(axis=1)
            counts[new[far]] -= 1
            new[far] = c
            counts[c] = 1
        history.append(float(d2[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            C[c] = X[labels == c].mean(axis=0)
    dist = np.sqrt(_sq_dists(X, C)[np.arange(n), labels])
    return ClusterReport(k, labels, C, dist, float((dist ** 2).sum()), history, it)


def rank_topics(report: ClusterReport, keys: Sequence[str], top_m: int = 10) -> list[list[str]]:
    """Per cluster, word types ranked by their closest occurrence to the centroid."""
    if top_m < 1:
        raise ValueError("top_m must be >= 1")
    topics = []
    for c in range(report.k):
        best: dict[str, float] = {}
        for i in np.flatnonzero(report.assignments == c):
            w = keys[i]
            d = float(report.distances[i])
            if w not in best or d < best[w]:
                best[w] = d
        ranked = sorted(best, key=lambda w: (best[w], w))
        topics.append(ranked[:top_m])
    return topics


def sentence_clusters(report: ClusterReport, keys: Sequence[str]) -> list[list[str]]:
    return [[keys[i] for i in report.members(c)] for c in range(report.k)]
