"""Accuracy, windowed NPMI topic coherence and aspect-polarity cluster coherence."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


def accuracy(preds: Sequence, golds: Sequence) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(golds)} gold labels")
    if len(golds) == 0:
        raise ValueError("accuracy of an empty set")
    return sum(int(p == g) for p, g in zip(preds, golds)) / len(golds)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation (e.g. over cross-validation folds)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


# ---------------------------------------------------------------- topic coherence


@dataclass(frozen=True)
class CoherenceConfig:
    window: int = 10
    top_m: int = 10
    eps: float = 1e-12

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.top_m < 2:
            raise ValueError("top_m must be >= 2")


class WindowCounts:
    """Boolean sliding-window occurrence counts over a reference corpus.

    Every document (a flat token sequence) contributes ``len - window + 1``
    windows, or a single window if it is shorter than ``window``.  Only
    words in ``vocabulary`` are tracked.
    """

    def __init__(self, documents: Iterable[Sequence[str]], window: int, vocabulary: Iterable[str]):
        vocab = set(vocabulary)
        self.window = window
        self.total = 0
        self.single: Counter = Counter()
        self.joint: Counter = Counter()
        for tokens in documents:
            n_win = max(1, len(tokens) - window + 1)
            for start in range(n_win):
                present = sorted(vocab.intersection(tokens[start:start + window]))
                self.total += 1
                self.single.update(present)
                self.joint.update(itertools.combinations(present, 2))
        if self.total == 0:
            raise ValueError("reference corpus is empty")

    def p(self, w: str) -> float:
        return self.single[w] / self.total

    def p_joint(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        return self.joint[key] / self.total


def npmi(p_a: float, p_b: float, p_ab: float, eps: float = 1e-12) -> float:
    """Normalised PMI with ``eps`` smoothing of the joint probability.

    Pairs that co-occur in every window score 1.
    """
    if p_ab >= 1.0:
        return 1.0
    joint = p_ab + eps
    return math.log(joint / (p_a * p_b)) / -math.log(joint)


@dataclass
class CoherenceResult:
    per_topic: list[float | None]
    mean: float | None
    skipped_pairs: int
    undefined_topics: list[int] = field(default_factory=list)


def topic_coherence(word_lists: Sequence[Sequence[str]], reference: Iterable[Sequence[str]],
                    config: CoherenceConfig = CoherenceConfig(),
                    counts: WindowCounts | None = None) -> CoherenceResult:
    """Mean pairwise NPMI over each topic's top words, averaged over topics.

    ``reference`` is an iterable of token sequences (one per document).
    Pairs with a word absent from the reference are skipped and counted;
    a topic left with no scorable pair is reported as undefined.
    """
    topics = [list(w[: config.top_m]) for w in word_lists]
    if counts is None:
        vocab = {w for t in topics for w in t}
        counts = WindowCounts(reference, config.window, vocab)
    per_topic: list[float | None] = []
    skipped, undefined = 0, []
    for ti, words in enumerate(topics):
        scores = []
        for a, b in itertools.combinations(words, 2):
            pa, pb = counts.p(a), counts.p(b)
            if pa == 0 or pb == 0:
                skipped += 1
                continue
            scores.append(npmi(pa, pb, counts.p_joint(a, b), config.eps))
        if scores:
            per_topic.append(sum(scores) / len(scores))
        else:
            per_topic.append(None)
            undefined.append(ti)
    defined = [s for s in per_topic if s is not None]
    mean = sum(defined) / len(defined) if defined else None
    return CoherenceResult(per_topic, mean, skipped, undefined)


# ---------------------------------------------------------------- aspect-polarity coherence


@dataclass
class AspectClusterEval:
    clusters: list[list[str]]
    gold: Mapping[str, Sequence[tuple[str, str]]]   # sentence id -> (aspect, polarity) pairs
    thresholds: tuple[float, ...] = THRESHOLDS

    def __post_init__(self):
        if not self.thresholds:
            raise ValueError("threshold list is empty")
        if any(not 0 < x <= 1 for x in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1]")


@dataclass
class AspectCoherenceRow:
    threshold: float
    aspect_ratio: float
    aspect_polarity_ratio: float
    clusters: int

    def text(self) -> str:
        return f">={self.threshold:.0%}  ({self.aspect_ratio:.2f}) {self.aspect_polarity_ratio:.2f}"


def _modal_count(members: list[Sequence[tuple[str, str]]], key) -> int:
    counts: Counter = Counter()
    for labels in members:
        counts.update({key(lab) for lab in labels})
    return max(counts.values()) if counts else 0


def aspect_polarity_coherence(ev: AspectClusterEval) -> list[AspectCoherenceRow]:
    """Fraction of clusters whose modal aspect (aspect-polarity) covers at least x of members.

    Sentences without gold labels are left out of a cluster's denominator;
    clusters with no labelled sentence are dropped.  A sentence carrying
    several labels counts towards each of its aspects.
    """
    stats = []
    for cluster in ev.clusters:
        members = [ev.gold[s] for s in cluster if ev.gold.get(s)]
        if not members:
            continue
        a = _modal_count(members, lambda lab: lab[0])
        ap = _modal_count(members, lambda lab: (lab[0], lab[1]))
        stats.append((len(members), a, ap))
    if not stats:
        raise ValueError("no cluster has a labelled sentence")
    rows = []
    for x in ev.thresholds:
        hit_a = sum(1 for n, a, _ in stats if a >= x * n - 1e-9)
        hit_ap = sum(1 for n, _, ap in stats if ap >= x * n - 1e-9)
        rows.append(AspectCoherenceRow(x, hit_a / len(stats), hit_ap / len(stats), len(stats)))
    return rows


def metric_lines(rows: Iterable[tuple[str, str, float]]) -> str:
    """Machine-readable ``metric<TAB>setting<TAB>value`` lines."""
    return "".join(f"{m}\t{s}\t{v!r}\n" for m, s, v in rows)
