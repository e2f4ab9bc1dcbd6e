"""Synthetic review corpora with domain-dependent sentiment words.

Each domain has aspects (with SemEval-style ``ENTITY#ATTRIBUTE`` labels) and
nouns.  Sentences pair a noun with an opinion word.  Some opinion words flip
polarity by domain ("long" battery life is good, a long wait is not), so
sentiment can only be read correctly together with the topic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import SENTIMENT_LABELS, Document

DOMAINS = {
    "restaurants": {
        "FOOD#QUALITY": ["pizza", "pasta", "sushi", "burger", "soup"],
        "SERVICE#GENERAL": ["waiter", "staff", "server", "host"],
        "AMBIENCE#GENERAL": ["patio", "decor", "music", "room"],
    },
    "electronics": {
        "BATTERY#OPERATION": ["battery", "charger", "charge"],
        "DISPLAY#QUALITY": ["screen", "display", "monitor"],
        "KEYBOARD#DESIGN": ["keyboard", "keys", "trackpad"],
    },
    "automotive": {
        "REPAIR#QUALITY": ["mechanic", "repair", "brakes", "engine"],
        "PRICES#GENERAL": ["quote", "bill", "invoice"],
        "SHOP#GENERAL": ["garage", "lobby", "shop"],
    },
    "health": {
        "DOCTOR#GENERAL": ["doctor", "dentist", "nurse", "surgeon"],
        "VISIT#WAIT": ["appointment", "visit", "checkup"],
        "OFFICE#GENERAL": ["clinic", "office", "reception"],
    },
    "home": {
        "APPLIANCE#OPERATION": ["dishwasher", "blender", "kettle", "vacuum"],
        "BUILD#QUALITY": ["handle", "lid", "cord"],
        "DELIVERY#GENERAL": ["delivery", "package", "box"],
    },
}

GENERIC = {
    "positive": ["great", "excellent", "wonderful", "friendly", "superb", "lovely"],
    "negative": ["awful", "terrible", "rude", "horrible", "broken", "disappointing"],
    "neutral": ["okay", "average", "fine", "standard", "ordinary", "typical"],
}

# words whose polarity depends on the domain
AMBIGUOUS = {
    "long": {"electronics": "positive", "restaurants": "negative", "health": "negative",
             "automotive": "negative", "home": "positive"},
    "cold": {"restaurants": "negative", "home": "positive", "health": "negative",
             "electronics": "positive", "automotive": "negative"},
    "quiet": {"home": "positive", "restaurants": "positive", "electronics": "positive",
              "automotive": "negative", "health": "positive"},
    "cheap": {"automotive": "positive", "home": "negative", "electronics": "negative",
              "restaurants": "positive", "health": "positive"},
    "hot": {"restaurants": "positive", "electronics": "negative", "home": "negative",
            "health": "negative", "automotive": "negative"},
    "unpredictable": {"restaurants": "positive", "electronics": "negative", "home": "negative",
                      "automotive": "negative", "health": "negative"},
}

FILLERS = ["the", "my", "our", "this"]
LINKS = ["was", "is", "seemed", "felt"]
ADVERBS = ["really", "very", "quite", "so", "pretty"]
OTHER = ["we", "went", "there", "on", "friday", "and", "it", "i", "think", "again", "would"]


@dataclass
class SyntheticSpec:
    n_docs: int = 200
    min_sentences: int = 2
    max_sentences: int = 5
    consistency: float = 0.8     # probability a sentence carries the document polarity
    ambiguous_rate: float = 0.4  # probability an opinion uses a domain-dependent word
    label_noise: float = 0.0
    filler_rate: float = 0.3
    pronoun_rate: float = 0.0   # probability an opinion sentence names no noun ("it was long .")
    domains: tuple[str, ...] = tuple(DOMAINS)
    annotate: bool = True


def _opinion_words(domain: str, polarity: str) -> list[str]:
    return [w for w, by_dom in AMBIGUOUS.items() if by_dom[domain] == polarity]


def make_corpus(spec: SyntheticSpec, seed: int = 0) -> tuple[list[Document], tuple[str, ...]]:
    """Token documents (not yet vocab-encoded) and the domain label names.

    Sentiment and domain labels are balanced by cycling through all pairs.
    """
    rng = np.random.default_rng(seed)
    docs = []
    pairs = [(s, d) for d in range(len(spec.domains)) for s in range(len(SENTIMENT_LABELS))]
    for i in range(spec.n_docs):
        s_label, d_idx = pairs[i % len(pairs)]
        domain = spec.domains[d_idx]
        aspects = DOMAINS[domain]
        n_sent = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
        sentences, ann = [], []
        for _ in range(n_sent):
            pol = SENTIMENT_LABELS[s_label]
            if rng.random() > spec.consistency:
                pol = SENTIMENT_LABELS[int(rng.integers(3))]
            aspect = list(aspects)[int(rng.integers(len(aspects)))]
            noun = aspects[aspect][int(rng.integers(len(aspects[aspect])))]
            choices = _opinion_words(domain, pol)
            if choices and rng.random() < spec.ambiguous_rate:
                adj = choices[int(rng.integers(len(choices)))]
            else:
                adj = GENERIC[pol][int(rng.integers(len(GENERIC[pol])))]
            if sentences and rng.random() < spec.pronoun_rate:
                head = ["it"]
            else:
                head = [FILLERS[int(rng.integers(len(FILLERS)))], noun]
            toks = head + [LINKS[int(rng.integers(len(LINKS)))]]
            if rng.random() < 0.5:
                toks.append(ADVERBS[int(rng.integers(len(ADVERBS)))])
            toks.append(adj)
            if rng.random() < spec.filler_rate:
                k = int(rng.integers(1, 4))
                toks = [OTHER[int(j)] for j in rng.integers(len(OTHER), size=k)] + toks
            toks.append(".")
            sentences.append(toks)
            ann.append([(aspect, pol)])
        if spec.label_noise and rng.random() < spec.label_noise:
            s_label = int(rng.integers(3))
        docs.append(Document(f"syn{i:05d}", sentences, s_label, d_idx,
                             ann if spec.annotate else None))
    order = rng.permutation(len(docs))
    return [docs[i] for i in order], tuple(spec.domains)


def separable_corpus(n_docs: int = 32, seed: int = 0) -> tuple[list[Document], tuple[str, ...]]:
    """Every sentence carries the document polarity; no label noise."""
    return make_corpus(SyntheticSpec(n_docs=n_docs, min_sentences=1, max_sentences=3,
                                     consistency=1.0, ambiguous_rate=0.3), seed)
