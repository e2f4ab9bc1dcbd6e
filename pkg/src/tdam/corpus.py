"""Review loading, rule-based tokenisation, vocabulary, embeddings, batching."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

SENTIMENT_LABELS = ("negative", "neutral", "positive")
_SENTIMENT_ALIASES = {"neg": "negative", "neut": "neutral", "neu": "neutral", "pos": "positive"}

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

ABBREVIATIONS = frozenset({
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e",
    "approx", "inc", "ltd", "co", "corp", "no", "jan", "feb", "mar", "apr", "jun",
    "jul", "aug", "sep", "sept", "oct", "nov", "dec", "mon", "tue", "wed", "thu", "fri",
})

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?|[^\sa-z0-9]")


class CorpusError(ValueError):
    pass


@dataclass
class Document:
    """A review as sentences of tokens (after loading) or word ids (after ``Vocabulary.encode``)."""

    doc_id: str
    sentences: list[list]
    sentiment_label: int
    domain_label: int
    sentence_annotations: list[list[tuple[str, str]]] | None = None

    def __post_init__(self):
        if not self.sentences:
            raise CorpusError(f"document {self.doc_id!r} has no sentences")
        if any(len(s) == 0 for s in self.sentences):
            raise CorpusError(f"document {self.doc_id!r} has an empty sentence")

    @property
    def num_words(self) -> int:
        return sum(len(s) for s in self.sentences)


@dataclass(frozen=True)
class CorpusSchema:
    sentiment_labels: tuple[str, ...] = SENTIMENT_LABELS
    domain_labels: tuple[str, ...] | None = None   # None: discover, sorted


@dataclass
class LoadReport:
    documents: list[Document]
    malformed: int
    domain_labels: tuple[str, ...]
    problems: list[str] = field(default_factory=list)


# ---------------------------------------------------------------- text


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation, skipping known abbreviations and decimals."""
    out, start = [], 0
    for m in re.finditer(r"[.!?]+", text):
        end = m.end()
        if m.group() == ".":
            before = re.search(r"([A-Za-z.]+)$", text[start:m.start()])
            if before and before.group(1).lower().rstrip(".") in ABBREVIATIONS:
                continue
            if m.start() > 0 and text[m.start() - 1].isdigit() and end < len(text) and text[end].isdigit():
                continue
        # absorb closing quotes/brackets
        while end < len(text) and text[end] in "\"')]":
            end += 1
        if end < len(text) and not text[end].isspace():
            continue
        piece = text[start:end].strip()
        if piece:
            out.append(piece)
        start = end
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def tokenize(sentence: str) -> list[str]:
    """Lowercase; words (with simple clitics) and isolated punctuation marks."""
    return _TOKEN_RE.findall(sentence.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def text_to_sentences(text: str) -> list[list[str]]:
    return [toks for toks in (tokenize(s) for s in split_sentences(text)) if toks]


# ---------------------------------------------------------------- loading


def _parse_annotations(field_text: str, n_sentences: int) -> list[list[tuple[str, str]]]:
    ann: list[list[tuple[str, str]]] = [[] for _ in range(n_sentences)]
    for item in filter(None, (x.strip() for x in field_text.split(";"))):
        try:
            idx, aspect, polarity = item.rsplit(":", 2)
            i = int(idx)
        except ValueError:
            raise CorpusError(f"bad annotation {item!r}") from None
        if not 0 <= i < n_sentences:
            raise CorpusError(f"annotation {item!r} refers to sentence {i} of {n_sentences}")
        ann[i].append((aspect, _SENTIMENT_ALIASES.get(polarity.lower(), polarity.lower())))
    return ann


def _sentiment_index(label: str, schema: CorpusSchema) -> int:
    key = _SENTIMENT_ALIASES.get(label.lower(), label.lower())
    if key in schema.sentiment_labels:
        return schema.sentiment_labels.index(key)
    raise CorpusError(f"unknown sentiment label {label!r}")


def load_corpus_report(path: str | Path, schema: CorpusSchema = CorpusSchema()) -> LoadReport:
    """Parse ``doc_id<TAB>sentiment<TAB>domain<TAB>text[<TAB>annotations]`` lines."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    records = []
    malformed, problems = 0, []
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            malformed += 1
            problems.append(f"line {lineno}: expected at least 4 tab-separated fields")
            continue
        doc_id, sentiment, domain, text = parts[:4]
        sentences = text_to_sentences(text)
        if not sentences:
            malformed += 1
            problems.append(f"line {lineno}: empty text")
            continue
        sent_idx = _sentiment_index(sentiment.strip(), schema)
        ann = None
        if len(parts) > 4 and parts[4].strip():
            try:
                ann = _parse_annotations(parts[4], len(sentences))
            except CorpusError as exc:
                malformed += 1
                problems.append(f"line {lineno}: {exc}")
                continue
        records.append((doc_id.strip(), sentences, sent_idx, domain.strip(), ann))

    if schema.domain_labels is not None:
        domains = tuple(schema.domain_labels)
    else:
        domains = tuple(sorted({r[3] for r in records}))
    docs = []
    for doc_id, sentences, s_idx, domain, ann in records:
        if domain not in domains:
            raise CorpusError(f"unknown domain label {domain!r} in document {doc_id!r}")
        docs.append(Document(doc_id, sentences, s_idx, domains.index(domain), ann))
    if not docs:
        raise CorpusError(f"corpus {path} contains no usable documents")
    if malformed:
        log.warning("%s: %d malformed record(s) skipped", path, malformed)
    return LoadReport(docs, malformed, domains, problems)


def load_corpus(path: str | Path, schema: CorpusSchema = CorpusSchema()) -> list[Document]:
    return load_corpus_report(path, schema).documents


def write_corpus(path: str | Path, docs: Sequence[Document], domain_labels: Sequence[str],
                 sentiment_labels: Sequence[str] = SENTIMENT_LABELS) -> None:
    """Write token documents back in the corpus line format."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            text = " ".join(detokenize(s) for s in doc.sentences)
            fields = [doc.doc_id, sentiment_labels[doc.sentiment_label],
                      domain_labels[doc.domain_label], text]
            if doc.sentence_annotations is not None:
                fields.append(";".join(f"{i}:{a}:{p}" for i, anns in enumerate(doc.sentence_annotations)
                                       for a, p in anns))
            fh.write("\t".join(fields) + "\n")


# ---------------------------------------------------------------- vocabulary


@dataclass
class Vocabulary:
    tokens: list[str]
    counts: dict[str, int]

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, doc: Document) -> Document:
        return replace(doc, sentences=[[self.id_of(t) for t in s] for s in doc.sentences])

    def encode_all(self, docs: Sequence[Document]) -> list[Document]:
        return [self.encode(d) for d in docs]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocab(docs: Sequence[Document], min_count: int = 1) -> Vocabulary:
    """Ids by descending frequency, ties alphabetical; rarer tokens map to ``<unk>``."""
    if not docs:
        raise CorpusError("cannot build a vocabulary from no documents")
    counts = Counter(tok for d in docs for s in d.sentences for tok in s)
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in (PAD, UNK)),
                  key=lambda t: (-counts[t], t))
    return Vocabulary([PAD, UNK] + kept, dict(counts))


# ---------------------------------------------------------------- embeddings


@dataclass
class EmbeddingLoad:
    table: np.ndarray
    covered: int
    total: int

    @property
    def coverage(self) -> float:
        return self.covered / self.total if self.total else 0.0


def load_pretrained_embeddings(path: str | Path, vocab: Vocabulary, dim: int = 200,
                               rng: np.random.Generator | None = None) -> EmbeddingLoad:
    """GloVe-style text vectors; uncovered rows uniform in [-0.1, 0.1]."""
    rng = rng if rng is not None else np.random.default_rng(0)
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise CorpusError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: unparsable float in line {line.strip()!r}") from None
            idx = vocab.index.get(parts[0])
            if idx is not None and idx not in (PAD_ID, UNK_ID):
                table[idx] = vec
                seen.add(idx)
    total = len(vocab) - 2
    log.info("embedding coverage %d/%d", len(seen), total)
    return EmbeddingLoad(table, len(seen), total)


# ---------------------------------------------------------------- batching


def batches(docs: Sequence[Document], batch_size: int, seed: int | None = None) -> Iterator[list[Document]]:
    """Length-sorted (stable, by sentence count) chunks in seeded random order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = sorted(range(len(docs)), key=lambda i: len(docs[i].sentences))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if seed is not None:
        perm = np.random.default_rng(seed).permutation(len(chunks))
        chunks = [chunks[i] for i in perm]
    for chunk in chunks:
        yield [docs[i] for i in chunk]


def corpus_stats(docs: Sequence[Document]) -> dict[str, float]:
    n_sent = [len(d.sentences) for d in docs]
    n_words = [len(s) for d in docs for s in d.sentences]
    return {
        "documents": len(docs),
        "avg_sentences": float(np.mean(n_sent)) if n_sent else 0.0,
        "avg_words": float(np.mean(n_words)) if n_words else 0.0,
        "tokens": int(np.sum(n_words)),
    }
