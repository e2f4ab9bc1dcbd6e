"""Topic-dependent hierarchical attention encoder and classification heads.

Shapes (n = hidden size, h = n // 2 per direction, d = embedding size,
K = number of topics):

* ``topics``                 K x n   global topic embeddings
* ``{level}.topic_proj``     n x h   projects one direction's state before
                                     topic attention (shared by both directions)
* ``{level}.topic_bias``     n
* ``{level}.att_proj``       n x n   final attention projection
* ``{level}.att_bias``       n
* ``{level}.att_context``    n       final attention context vector
* ``{level}.{dir}.W_g``      h x in  input weights for gate g in {r, z, h}
* ``{level}.{dir}.U_g``      h x h   recurrent weights
* ``{level}.{dir}.V_g``      h x n   local topic embedding weights
* ``{level}.{dir}.b_g``      h

``level`` is ``word`` (in = d) or ``sent`` (in = n); ``dir`` is ``fwd`` or
``bwd``.  The n x n topic projection applied to a bidirectional state is
the tied matrix ``[topic_proj | topic_proj]``.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor

CHECKPOINT_FORMAT = "tdam-checkpoint/1"
LEVELS = ("word", "sent")
DIRECTIONS = ("fwd", "bwd")
GATES = ("r", "z", "h")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 200
    hidden_size: int = 100
    num_topics: int = 50
    sentiment_classes: int = 3
    domain_classes: int = 5
    use_topics: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_size", "num_topics",
                     "sentiment_classes", "domain_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_size % 2:
            raise ValueError(f"hidden_size must be even, got {self.hidden_size}")

    @property
    def half(self) -> int:
        return self.hidden_size // 2


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    n, h, d, K = config.hidden_size, config.half, config.embed_dim, config.num_topics
    shapes: dict[str, tuple[int, ...]] = {
        "embedding": (config.vocab_size, d),
        "topics": (K, n),
    }
    for level, in_dim in (("word", d), ("sent", n)):
        shapes[f"{level}.topic_proj"] = (n, h)
        shapes[f"{level}.topic_bias"] = (n,)
        shapes[f"{level}.att_proj"] = (n, n)
        shapes[f"{level}.att_bias"] = (n,)
        shapes[f"{level}.att_context"] = (n,)
        for direction in DIRECTIONS:
            for g in GATES:
                p = f"{level}.{direction}"
                shapes[f"{p}.W_{g}"] = (h, in_dim)
                shapes[f"{p}.U_{g}"] = (h, h)
                shapes[f"{p}.V_{g}"] = (h, n)
                shapes[f"{p}.b_{g}"] = (h,)
    shapes["head.sentiment.W"] = (config.sentiment_classes, n)
    shapes["head.sentiment.b"] = (config.sentiment_classes,)
    shapes["head.domain.W"] = (config.domain_classes, n)
    shapes["head.domain.b"] = (config.domain_classes,)
    return shapes


def is_weight_matrix(name: str, shape: tuple[int, ...]) -> bool:
    """Matrices that receive semi-orthogonal initialisation."""
    return len(shape) == 2 and name not in ("embedding", "topics")


@dataclass
class TdamParams:
    config: ModelConfig
    tensors: dict[str, Tensor]
    vocab_tokens: list[str] | None = None
    meta: dict = field(default_factory=dict)   # e.g. label names

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        missing = set(expected) - set(self.tensors)
        extra = set(self.tensors) - set(expected)
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing={sorted(missing)} extra={sorted(extra)}")
        for name, shape in expected.items():
            got = self.tensors[name].shape
            if got != shape:
                raise CheckpointError(f"{name}: expected shape {shape}, got {got}")
            self.tensors[name].name = name

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> Iterable[Tensor]:
        return self.tensors.values()

    def copy(self) -> "TdamParams":
        return TdamParams(self.config,
                          {k: Tensor(v.data.copy()) for k, v in self.tensors.items()},
                          None if self.vocab_tokens is None else list(self.vocab_tokens),
                          dict(self.meta))

    def with_config(self, **changes) -> "TdamParams":
        cfg = ModelConfig(**{**asdict(self.config), **changes})
        return TdamParams(cfg, {k: Tensor(v.data.copy()) for k, v in self.tensors.items()},
                          self.vocab_tokens, dict(self.meta))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def requires_grad_(self, flag: bool = True) -> "TdamParams":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())

    def tied_topic_projection(self, level: str) -> np.ndarray:
        p = self.tensors[f"{level}.topic_proj"].data
        return np.hstack([p, p])

    # ------------------------------------------------------------ persistence

    def save(self, path: str | Path) -> str:
        """Write an ``.npz`` checkpoint; returns its sha256."""
        arrays = {f"param/{k}": v.data for k, v in self.tensors.items()}
        arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
        arrays["__config__"] = np.array(json.dumps(asdict(self.config), sort_keys=True))
        if self.vocab_tokens is not None:
            arrays["__vocab__"] = np.array(json.dumps(self.vocab_tokens))
        arrays["__meta__"] = np.array(json.dumps(self.meta, sort_keys=True))
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        raw = buf.getvalue()
        Path(path).write_bytes(raw)
        return hashlib.sha256(raw).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "TdamParams":
        try:
            archive = np.load(Path(path), allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        with archive:
            if "__format__" not in archive or str(archive["__format__"]) != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
            config = ModelConfig(**json.loads(str(archive["__config__"])))
            tensors = {k[len("param/"):]: Tensor(archive[k].astype(np.float64))
                       for k in archive.files if k.startswith("param/")}
            vocab = json.loads(str(archive["__vocab__"])) if "__vocab__" in archive else None
            meta = json.loads(str(archive["__meta__"])) if "__meta__" in archive else {}
        return cls(config, tensors, vocab, meta)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- encoder


@dataclass
class LevelOutput:
    """Bidirectional encoding of a padded batch of sequences at one level."""

    states: Tensor            # (B, T, n)
    summary: Tensor           # (B, n) final-attention aggregate
    betas: np.ndarray         # (B, T)
    mask: np.ndarray          # (B, T) bool
    alphas: np.ndarray | None = None   # (B, T, K) from the bidirectional state
    qs: np.ndarray | None = None       # (B, T, n)


@dataclass
class EncodedDocument:
    doc_id: str
    sentence_reps: list[np.ndarray]
    doc_rep: np.ndarray
    word_alphas: list[np.ndarray]        # per sentence: (T_i, K)
    sentence_alphas: np.ndarray          # (L, K)
    word_betas: list[np.ndarray]         # per sentence: (T_i,)
    sentence_betas: np.ndarray           # (L,)
    word_q: list[np.ndarray]             # per sentence: (T_i, n)
    sentence_q: np.ndarray               # (L, n)
    sentence_states: np.ndarray = field(default=None)   # (L, n)
    word_states: list[np.ndarray] = field(default=None)  # per sentence: (T_i, n)
    p_sentiment: np.ndarray | None = None
    p_domain: np.ndarray | None = None


@dataclass
class BatchEncoding:
    doc_reps: Tensor                 # (D, n)
    p_sentiment: Tensor              # (D, C_s)
    p_domain: Tensor                 # (D, C_d)
    words: LevelOutput
    sentences: LevelOutput
    sentence_index: np.ndarray       # (D, L) rows into the flat sentence list


def topic_attention(h: Tensor, W: Tensor, E: Tensor, b: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Attention of projected states over the global topics.

    ``h`` is (B, m) or a single m-vector, ``W`` is (n, m), ``E`` is (K, n).
    Returns ``(alpha, q)`` with ``alpha`` (B, K) and ``q = alpha @ E``.
    """
    h, W, E = nx.as_tensor(h), nx.as_tensor(W), nx.as_tensor(E)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ValueError("topic_attention needs at least one topic")
    single = h.ndim == 1
    if single:
        h = nx.reshape(h, (1, h.shape[0]))
    u = nx.tanh(nx.linear(h, W, b))
    alpha = nx.softmax(nx.topic_scores(u, E))
    q = nx.topic_mix(alpha, E)
    if single:
        alpha = nx.reshape(alpha, (E.shape[0],))
        q = nx.reshape(q, (E.shape[1],))
    return alpha, q


def topical_gru_step(
    xr: Tensor, xz: Tensor, xh: Tensor,
    h_prev: Tensor, q_prev: Tensor | None,
    gates: dict[str, Tensor],
) -> Tensor:
    """One step of the topic-aware GRU.

    ``xr``, ``xz``, ``xh`` are the input projections ``W_g x + b_g``.  The
    topic terms ``V_g q_prev`` are added last, so with ``q_prev=None`` (or
    zero ``V_g``) this is exactly a standard GRU step.
    """
    r_pre = nx.add(xr, nx.linear(h_prev, gates["U_r"]))
    z_pre = nx.add(xz, nx.linear(h_prev, gates["U_z"]))
    cand = nx.linear(h_prev, gates["U_h"])
    if q_prev is not None:
        r_pre = nx.add(r_pre, nx.linear(q_prev, gates["V_r"]))
        z_pre = nx.add(z_pre, nx.linear(q_prev, gates["V_z"]))
        cand = nx.add(cand, nx.linear(q_prev, gates["V_h"]))
    r = nx.sigmoid(r_pre)
    z = nx.sigmoid(z_pre)
    h_hat = nx.tanh(nx.add(xh, nx.mul(r, cand)))
    return nx.add(nx.mul(nx.sub(1.0, z), h_prev), nx.mul(z, h_hat))


def gru_cell(x: Tensor, h_prev: Tensor, q_prev: Tensor | None, gates: dict[str, Tensor]) -> Tensor:
    """``topical_gru_step`` from raw inputs ``x`` (B, in)."""
    x = nx.as_tensor(x)
    single = x.ndim == 1
    if single:
        x = nx.reshape(x, (1, -1))
        h_prev = nx.reshape(nx.as_tensor(h_prev), (1, -1))
        if q_prev is not None:
            q_prev = nx.reshape(nx.as_tensor(q_prev), (1, -1))
    h_dim = gates["U_r"].shape[0]
    if h_prev.shape[-1] != h_dim or x.shape[-1] != gates["W_r"].shape[1]:
        raise nx.ShapeError(f"gru_cell: x {x.shape}, h {h_prev.shape} do not fit gates")
    if q_prev is not None and q_prev.shape[-1] != gates["V_r"].shape[1]:
        raise nx.ShapeError(f"gru_cell: q {q_prev.shape} does not fit V {gates['V_r'].shape}")
    xr = nx.linear(x, gates["W_r"], gates["b_r"])
    xz = nx.linear(x, gates["W_z"], gates["b_z"])
    xh = nx.linear(x, gates["W_h"], gates["b_h"])
    h = topical_gru_step(xr, xz, xh, h_prev, q_prev, gates)
    return nx.reshape(h, (h_dim,)) if single else h


def _gates(params: TdamParams, level: str, direction: str) -> dict[str, Tensor]:
    p = f"{level}.{direction}"
    return {f"{m}_{g}": params[f"{p}.{m}_{g}"] for m in ("W", "U", "V", "b") for g in GATES}


def _blend(mask_col: np.ndarray | None, new: Tensor, old: Tensor) -> Tensor:
    """Keep ``old`` on rows where the position is padding."""
    if mask_col is None:
        return new
    return nx.add(nx.mul(mask_col, new), nx.mul(1.0 - mask_col, old))


def _run_direction(xs: Tensor, mask: np.ndarray, params: TdamParams, level: str,
                   direction: str) -> list[Tensor]:
    """Run one direction over padded inputs ``xs`` (B, T, in); returns states in text order."""
    B, T, in_dim = xs.shape
    gates = _gates(params, level, direction)
    n, h_dim = params.config.hidden_size, params.config.half
    use_topics = params.config.use_topics
    flat = nx.reshape(xs, (B * T, in_dim))
    proj = {g: nx.reshape(nx.linear(flat, gates[f"W_{g}"], gates[f"b_{g}"]), (B, T, h_dim))
            for g in GATES}
    E = params["topics"]
    P, Pb = params[f"{level}.topic_proj"], params[f"{level}.topic_bias"]

    h = Tensor(np.zeros((B, h_dim)))
    q = Tensor(np.zeros((B, n))) if use_topics else None
    out: list[Tensor | None] = [None] * T
    order = range(T) if direction == "fwd" else range(T - 1, -1, -1)
    for t in order:
        col = mask[:, t]
        m = None if col.all() else col.astype(np.float64)[:, None]
        h_new = topical_gru_step(proj["r"][:, t, :], proj["z"][:, t, :], proj["h"][:, t, :],
                                 h, q, gates)
        h = _blend(m, h_new, h)
        if use_topics:
            _, q_new = topic_attention(h, P, E, Pb)
            q = _blend(m, q_new, q)
        out[t] = h
    return out


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout during training needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return nx.mul(x, keep)


def _final_attention(H: Tensor, mask: np.ndarray, params: TdamParams, level: str) -> tuple[Tensor, Tensor]:
    B, T, n = H.shape
    flat = nx.reshape(H, (B * T, n))
    v = nx.tanh(nx.linear(flat, params[f"{level}.att_proj"], params[f"{level}.att_bias"]))
    ctx = nx.reshape(params[f"{level}.att_context"], (1, n))
    scores = nx.reshape(nx.linear(v, ctx), (B, T))
    beta = nx.softmax(scores, mask=None if mask.all() else mask)
    summary = nx.sum(nx.mul(nx.reshape(beta, (B, T, 1)), H), axis=1)
    return beta, summary


def _diagnostic_topics(H: np.ndarray, params: TdamParams, level: str) -> tuple[np.ndarray, np.ndarray]:
    """Topic attention from the full bidirectional states (no tape)."""
    W = params.tied_topic_projection(level)
    b = params[f"{level}.topic_bias"].data
    B, T, n = H.shape
    alpha, q = topic_attention(Tensor(H.reshape(B * T, n)), Tensor(W), Tensor(params["topics"].data), Tensor(b))
    K = params.config.num_topics
    return alpha.data.reshape(B, T, K), q.data.reshape(B, T, n)


def encode_level(xs: Tensor, mask: np.ndarray, params: TdamParams, level: str,
                 dropout: float = 0.0, rng: np.random.Generator | None = None,
                 diagnostics: bool = False) -> LevelOutput:
    fwd = _run_direction(xs, mask, params, level, "fwd")
    bwd = _run_direction(xs, mask, params, level, "bwd")
    H = nx.concat([nx.stack(fwd, axis=1), nx.stack(bwd, axis=1)], axis=-1)
    H_att = _dropout(H, dropout, rng)
    beta, summary = _final_attention(H_att, mask, params, level)
    out = LevelOutput(H, summary, beta.data, mask)
    if diagnostics:
        out.alphas, out.qs = _diagnostic_topics(H.data, params, level)
    return out


def _check_ids(sentence: Sequence[int], vocab_size: int) -> None:
    if len(sentence) == 0:
        raise ValueError("empty sentence")
    for w in sentence:
        if not isinstance(w, (int, np.integer)):
            raise TypeError(f"word ids must be integers, got {w!r}")
        if w < 0 or w >= vocab_size:
            raise IndexError(f"unknown word id {w} (vocabulary size {vocab_size})")


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), T), dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def encode_sentences(sentences: Sequence[Sequence[int]], params: TdamParams, dropout: float = 0.0,
                     training: bool = False, rng: np.random.Generator | None = None,
                     diagnostics: bool = False) -> LevelOutput:
    for s in sentences:
        _check_ids(s, params.config.vocab_size)
    ids, mask = _pad(sentences)
    rate = dropout if training else 0.0
    X = _dropout(nx.take_rows(params["embedding"], ids), rate, rng)
    return encode_level(X, mask, params, "word", rate, rng, diagnostics)


def encode_sentence(word_ids: Sequence[int], params: TdamParams, dropout: float = 0.0,
                    training: bool = False, rng: np.random.Generator | None = None):
    """Encode one sentence; returns ``(s, alphas, betas, qs)``."""
    out = encode_sentences([word_ids], params, dropout, training, rng, diagnostics=True)
    return nx.getitem(out.summary, 0), out.alphas[0], out.betas[0], out.qs[0]


def encode_batch(docs: Sequence, params: TdamParams, dropout: float = 0.0, training: bool = False,
                 rng: np.random.Generator | None = None, diagnostics: bool = False) -> BatchEncoding:
    """Encode documents jointly (sentences of all documents share one word-level pass)."""
    if not docs:
        raise ValueError("empty batch")
    flat: list[Sequence[int]] = []
    owners: list[list[int]] = []
    for doc in docs:
        if not doc.sentences:
            raise ValueError(f"document {doc.doc_id!r} has no sentences")
        rows = []
        for sent in doc.sentences:
            rows.append(len(flat))
            flat.append(sent)
        owners.append(rows)

    words = encode_sentences(flat, params, dropout, training, rng, diagnostics)
    sent_index, sent_mask = _pad(owners)
    rate = dropout if training else 0.0
    S = nx.take_rows(words.summary, sent_index)
    sentences = encode_level(S, sent_mask, params, "sent", rate, rng, diagnostics)
    p_s, p_d = classify(sentences.summary, params)
    return BatchEncoding(sentences.summary, p_s, p_d, words, sentences, sent_index)


def classify(m_d: Tensor, params: TdamParams) -> tuple[Tensor, Tensor]:
    """Sentiment and domain posteriors from document representations."""
    m_d = nx.as_tensor(m_d)
    single = m_d.ndim == 1
    if single:
        m_d = nx.reshape(m_d, (1, m_d.shape[0]))
    if not np.isfinite(m_d.data).all():
        raise ValueError("document representation is not finite")
    p_s = nx.softmax(nx.linear(m_d, params["head.sentiment.W"], params["head.sentiment.b"]))
    p_d = nx.softmax(nx.linear(m_d, params["head.domain.W"], params["head.domain.b"]))
    if single:
        p_s = nx.reshape(p_s, (p_s.shape[1],))
        p_d = nx.reshape(p_d, (p_d.shape[1],))
    return p_s, p_d


def unpack(batch: BatchEncoding, docs: Sequence) -> list[EncodedDocument]:
    """Split a diagnostic batch encoding into per-document records."""
    w, s = batch.words, batch.sentences
    out = []
    for d, doc in enumerate(docs):
        L = len(doc.sentences)
        rows = batch.sentence_index[d, :L]
        lens = [len(x) for x in doc.sentences]
        out.append(EncodedDocument(
            doc_id=doc.doc_id,
            sentence_reps=[w.summary.data[r] for r in rows],
            doc_rep=batch.doc_reps.data[d],
            word_alphas=[w.alphas[r, :k] for r, k in zip(rows, lens)],
            sentence_alphas=s.alphas[d, :L],
            word_betas=[w.betas[r, :k] for r, k in zip(rows, lens)],
            sentence_betas=s.betas[d, :L],
            word_q=[w.qs[r, :k] for r, k in zip(rows, lens)],
            sentence_q=s.qs[d, :L],
            sentence_states=s.states.data[d, :L],
            word_states=[w.states.data[r, :k] for r, k in zip(rows, lens)],
            p_sentiment=batch.p_sentiment.data[d],
            p_domain=batch.p_domain.data[d],
        ))
    return out


def encode_document(doc, params: TdamParams, dropout: float = 0.0, training: bool = False,
                    rng: np.random.Generator | None = None) -> EncodedDocument:
    batch = encode_batch([doc], params, dropout, training, rng, diagnostics=True)
    return unpack(batch, [doc])[0]


def predict(docs: Sequence, params: TdamParams, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Argmax sentiment and domain predictions in inference mode."""
    ps, pd = [], []
    for start in range(0, len(docs), batch_size):
        enc = encode_batch(docs[start:start + batch_size], params)
        ps.append(enc.p_sentiment.data.argmax(axis=1))
        pd.append(enc.p_domain.data.argmax(axis=1))
    if not ps:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(ps), np.concatenate(pd)
