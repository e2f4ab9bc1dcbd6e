"""``tdam`` command-line entry point.

Logs go to stderr, data artifacts to files; stdout carries only
``metric<TAB>setting<TAB>value`` lines.  Every run writes one JSON manifest.
Failures exit non-zero with a single ``error<TAB>kind<TAB>message`` line on
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .corpus import (CorpusError, CorpusSchema, Document, Vocabulary, build_vocab, load_corpus_report,
                     load_pretrained_embeddings, write_corpus)
from .evaluation import (AspectClusterEval, CoherenceConfig, accuracy, aspect_polarity_coherence, mean_std,
                         metric_lines, topic_coherence)
from .extraction import DumpError, LocalEmbeddingDump, collect_dump, kmeans, project_2d, rank_topics
from .model import CheckpointError, TdamParams, encode_batch, file_sha256, predict, unpack
from .synthetic import SyntheticSpec, make_corpus
from .training import METRICS_HEADER, DEFAULT_GRID, TrainConfig, TrainingError, grid_search, init_params, kfold_splits, train

log = logging.getLogger("tdam")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- config files


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(field: dataclasses.Field, value: str):
    t = str(field.type)
    if value.lower() in ("none", "null") and "None" in t:
        return None
    if t.startswith("bool"):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{field.name}: not a boolean: {value!r}")
    if t.startswith("tuple"):
        return tuple(float(x) for x in value.split(","))
    if t.startswith("int"):
        return int(value)
    if t.startswith("float"):
        return float(value)
    return value


def train_config_from(values: dict[str, str], base: TrainConfig = TrainConfig()) -> TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    changes = {}
    for key, value in values.items():
        if key not in fields:
            raise UsageError(f"unknown config key {key!r}")
        try:
            changes[key] = _coerce(fields[key], str(value))
        except ValueError as exc:
            raise UsageError(f"{key}: {exc}") from None
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def write_config(path: str | Path, config: TrainConfig) -> None:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- manifests


class Run:
    def __init__(self, args: argparse.Namespace, argv: Sequence[str]):
        self.args = args
        self.argv = list(argv)
        self.started = time.time()
        self.record: dict = {
            "command": args.command,
            "argv": self.argv,
            "tool_version": __version__,
            "seed": getattr(args, "seed", None),
            "inputs": {},
            "outputs": {},
            "config": {},
            "checkpoint_sha256": None,
        }

    def input(self, name: str, path) -> None:
        if path is not None:
            self.record["inputs"][name] = str(path)

    def output(self, name: str, path) -> None:
        self.record["outputs"][name] = str(path)

    def manifest_path(self) -> Path:
        if self.args.manifest:
            return Path(self.args.manifest)
        out = getattr(self.args, "out", None)
        if out:
            p = Path(out)
            return p / "manifest.json" if p.is_dir() else p.with_name(p.name + ".manifest.json")
        return Path(f"tdam-{self.args.command}.manifest.json")

    def finish(self, status: str) -> None:
        self.record["status"] = status
        self.record["seconds"] = round(time.time() - self.started, 3)
        path = self.manifest_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- shared loading


def _load_checkpoint(path: str, run: Run) -> TdamParams:
    params = TdamParams.load(path)
    run.input("checkpoint", path)
    run.record["checkpoint_sha256"] = file_sha256(path)
    if params.vocab_tokens is None:
        raise CheckpointError(f"{path}: checkpoint carries no vocabulary")
    return params


def _corpus_for_checkpoint(path: str, params: TdamParams, run: Run) -> list[Document]:
    domains = params.meta.get("domain_labels")
    schema = CorpusSchema(domain_labels=tuple(domains) if domains else None)
    report = load_corpus_report(path, schema)
    run.input("corpus", path)
    run.record["malformed_records"] = report.malformed
    vocab = Vocabulary(params.vocab_tokens, {})
    return vocab.encode_all(report.documents)


def _write_stdout(rows) -> None:
    sys.stdout.write(metric_lines(rows))
    sys.stdout.flush()


# ---------------------------------------------------------------- train


PATH_KEYS = ("corpus", "dev", "out", "embeddings")


def _resolve_train_config(args) -> TrainConfig:
    values: dict[str, str] = {}
    if args.config:
        values.update(read_config(args.config))
    # config-file paths are relative to the file; flags win
    for key in PATH_KEYS:
        from_file = values.pop(key, None)
        if getattr(args, key) is None and from_file is not None:
            path = Path(from_file)
            if not path.is_absolute():
                path = Path(args.config).parent / path
            setattr(args, key, str(path))
    for key in ("corpus", "out"):
        if getattr(args, key) is None:
            raise UsageError(f"--{key} is required (flag or config key)")
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    flag_map = {"seed": args.seed, "learning_rate": args.learning_rate, "dropout": args.dropout,
                "num_topics": args.topics, "topic_vector_size": args.topic_vector_size,
                "max_epochs": args.epochs, "batch_size": args.batch_size}
    for k, v in flag_map.items():
        if v is not None:
            values[k] = str(v)
    if args.multitask and args.single_task:
        raise UsageError("--multitask conflicts with --single-task")
    if args.multitask:
        values["multitask"] = "true"
    if args.single_task:
        values["multitask"] = "false"
    if args.no_topics:
        values["use_topics"] = "false"
    return train_config_from(values)


def _prepare(args, run: Run, config: TrainConfig):
    report = load_corpus_report(args.corpus)
    run.input("corpus", args.corpus)
    run.record["malformed_records"] = report.malformed
    docs = report.documents
    domains = report.domain_labels
    dev_docs = None
    if args.dev:
        dev_docs = load_corpus_report(args.dev, CorpusSchema(domain_labels=domains)).documents
        run.input("dev", args.dev)
    vocab = build_vocab(docs, args.min_count)
    embeddings = None
    if args.embeddings:
        loaded = load_pretrained_embeddings(args.embeddings, vocab, config.embed_dim,
                                            np.random.default_rng(config.seed))
        embeddings = loaded.table
        run.input("embeddings", args.embeddings)
        run.record["embedding_coverage"] = loaded.coverage
        log.info("embedding coverage %.3f", loaded.coverage)
    config = dataclasses.replace(config, domain_classes=max(len(domains), 1))
    return docs, dev_docs, domains, vocab, embeddings, config


def _split_dev(docs: list[Document], seed: int, fraction: float = 0.1):
    perm = np.random.default_rng(seed).permutation(len(docs))
    n_dev = max(1, int(round(len(docs) * fraction)))
    if n_dev >= len(docs):
        raise UsageError("corpus too small to carve out a dev split; pass --dev")
    return [docs[i] for i in perm[n_dev:]], [docs[i] for i in perm[:n_dev]]


def _train_one(train_docs, dev_docs, vocab, domains, embeddings, config, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    p0 = init_params(config.model_config(len(vocab)), config.seed, embeddings, list(vocab.tokens))
    p0.meta["domain_labels"] = list(domains)
    p0.meta["train_config"] = config.to_dict()
    metrics = open(out / "metrics.tsv", "w", encoding="utf-8")
    metrics.write(METRICS_HEADER + "\n")

    def on_epoch(rec):
        metrics.write(rec.line() + "\n")
        metrics.flush()

    try:
        params, history = train(train_docs, dev_docs, config, params=p0, on_epoch=on_epoch)
    finally:
        metrics.close()
    sha = params.save(out / "checkpoint.npz")
    write_config(out / "config.cfg", config)
    return params, history, sha


def cmd_train(args, run: Run) -> int:
    config = _resolve_train_config(args)
    docs, dev_docs, domains, vocab, embeddings, config = _prepare(args, run, config)
    run.record["config"] = config.to_dict()
    out = Path(args.out)
    enc = vocab.encode_all(docs)
    if args.folds:
        accs_s, accs_d = [], []
        for fold, (tr, dv, te) in enumerate(kfold_splits(len(enc), args.folds, config.seed)):
            fold_dir = out / f"fold{fold}"
            params, _, _ = _train_one([enc[i] for i in tr], [enc[i] for i in dv], vocab, domains,
                                      embeddings, config, fold_dir)
            test = [enc[i] for i in te]
            ps, pd = predict(test, params)
            accs_s.append(accuracy(ps.tolist(), [d.sentiment_label for d in test]))
            accs_d.append(accuracy(pd.tolist(), [d.domain_label for d in test]))
            run.output(f"fold{fold}", fold_dir)
        ms, ss = mean_std(accs_s)
        md, sd = mean_std(accs_d)
        rows = [("accuracy", f"sentiment.fold{i}", a) for i, a in enumerate(accs_s)]
        rows += [("accuracy", "sentiment.mean", ms), ("accuracy", "sentiment.std", ss),
                 ("accuracy", "domain.mean", md), ("accuracy", "domain.std", sd)]
        (out / "cv.tsv").write_text(metric_lines(rows), encoding="utf-8")
        run.output("cv", out / "cv.tsv")
        _write_stdout(rows)
        return 0
    if dev_docs is not None:
        tr, dv = enc, vocab.encode_all(dev_docs)
    else:
        tr, dv = _split_dev(enc, config.seed)
    params, history, sha = _train_one(tr, dv, vocab, domains, embeddings, config, out)
    run.output("checkpoint", out / "checkpoint.npz")
    run.output("metrics", out / "metrics.tsv")
    run.record["checkpoint_sha256"] = sha
    run.record["flags"] = history.flags
    best = history.best
    _write_stdout([("dev_accuracy", "sentiment", best.dev_acc_sentiment),
                   ("dev_accuracy", "domain", best.dev_acc_domain),
                   ("best_epoch", "epoch", float(history.best_epoch))])
    return 0


def parse_grid(text: str | None) -> dict[str, tuple]:
    if not text:
        return dict(DEFAULT_GRID)
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    grid = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, _, values = part.partition("=")
        key = key.strip().replace("-", "_")
        if key not in fields:
            raise UsageError(f"unknown grid axis {key!r}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise UsageError(f"grid axis {key!r} is empty")
        grid[key] = tuple(_coerce(fields[key], v) for v in vals)
    if not grid:
        raise UsageError("empty grid")
    return grid


def cmd_grid_search(args, run: Run) -> int:
    config = _resolve_train_config(args)
    docs, dev_docs, domains, vocab, embeddings, config = _prepare(args, run, config)
    grid = parse_grid(args.grid)
    run.record["config"] = config.to_dict()
    run.record["grid"] = {k: list(v) for k, v in grid.items()}
    enc = vocab.encode_all(docs)
    if dev_docs is not None:
        tr, dv = enc, vocab.encode_all(dev_docs)
    else:
        tr, dv = _split_dev(enc, config.seed)
    result = grid_search(tr, dv, config, grid, vocab_size=len(vocab), workers=args.threads,
                         embeddings=embeddings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    axes = sorted(grid)
    with open(out / "grid.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(axes + ["seed", "dev_acc_sentiment", "dev_loss"]) + "\n")
        for cell in result.cells:
            vals = [str(getattr(cell.config, a)) for a in axes]
            fh.write("\t".join(vals + [str(cell.config.seed), repr(cell.dev_accuracy), repr(cell.dev_loss)]) + "\n")
    write_config(out / "best.cfg", result.best)
    run.output("grid", out / "grid.tsv")
    run.output("best_config", out / "best.cfg")
    rows = [("grid", "cells", float(len(result.cells)))]
    rows += [("best", a, float(getattr(result.best, a))) for a in axes]
    _write_stdout(rows)
    return 0


# ---------------------------------------------------------------- evaluation commands


def _read_predictions(path: str) -> dict[str, str]:
    preds = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise UsageError(f"{path}:{lineno}: expected doc_id<TAB>label")
        preds[parts[0].strip()] = parts[1].strip()
    return preds


def cmd_eval_accuracy(args, run: Run) -> int:
    if bool(args.checkpoint) == bool(args.predictions):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    if args.checkpoint:
        params = _load_checkpoint(args.checkpoint, run)
        docs = _corpus_for_checkpoint(args.corpus, params, run)
        ps, pd = predict(docs, params)
        rows = [("accuracy", "sentiment", accuracy(ps.tolist(), [d.sentiment_label for d in docs])),
                ("accuracy", "domain", accuracy(pd.tolist(), [d.domain_label for d in docs]))]
    else:
        report = load_corpus_report(args.corpus)
        run.input("corpus", args.corpus)
        run.input("predictions", args.predictions)
        preds = _read_predictions(args.predictions)
        missing = [d.doc_id for d in report.documents if d.doc_id not in preds]
        if missing:
            raise UsageError(f"no prediction for {len(missing)} document(s), e.g. {missing[0]!r}")
        labels = CorpusSchema().sentiment_labels
        gold = [labels[d.sentiment_label] for d in report.documents]
        pred = [preds[d.doc_id].lower() for d in report.documents]
        rows = [("accuracy", "sentiment", accuracy(pred, gold))]
    run.record["results"] = {f"{m}.{s}": v for m, s, v in rows}
    _write_stdout(rows)
    return 0


def cmd_dump_embeddings(args, run: Run) -> int:
    params = _load_checkpoint(args.checkpoint, run)
    docs = _corpus_for_checkpoint(args.corpus, params, run)
    dump = collect_dump(docs, params, levels=(args.level,), checkpoint=run.record["checkpoint_sha256"])
    dump.write(args.out)
    run.output("dump", args.out)
    _write_stdout([("entries", args.level, float(len(dump)))])
    return 0


def _reference_docs(path: str) -> list[list[str]]:
    report = load_corpus_report(path)
    return [[t for s in d.sentences for t in s] for d in report.documents]


def select_k_by_coherence(points: np.ndarray, keys: Sequence[str], ks: Sequence[int],
                          reference: list[list[str]], coherence: CoherenceConfig, seed: int):
    """Cluster for each k and keep the k with the best mean topic coherence."""
    scored = []
    for k in ks:
        if k > len(points):
            log.warning("skipping k=%d: only %d points", k, len(points))
            continue
        report = kmeans(points, k, seed)
        topics = rank_topics(report, keys, coherence.top_m)
        res = topic_coherence(topics, reference, coherence)
        score = res.mean if res.mean is not None else float("-inf")
        scored.append((k, score, report, topics))
    if not scored:
        raise UsageError("no candidate k fits the number of points")
    best = max(scored, key=lambda x: (x[1], -x[0]))
    return best, scored


def cmd_cluster(args, run: Run) -> int:
    if args.k is not None and args.tune_k:
        raise UsageError("--k conflicts with --tune-k")
    if args.k is None and not args.tune_k:
        raise UsageError("give --k or --tune-k")
    dump = LocalEmbeddingDump.read(args.dump).select(args.level)
    run.input("dump", args.dump)
    run.record["checkpoint_sha256"] = dump.checkpoint or None
    if len(dump) == 0:
        raise UsageError(f"dump has no {args.level}-level entries")
    if args.project == "none":
        points = dump.vectors
    else:
        perplexity = args.perplexity
        points = project_2d(dump.vectors, args.project, perplexity, args.seed)
    coh = CoherenceConfig(window=args.window, top_m=args.top_m)
    rows = []
    if args.tune_k:
        if args.level != "word" or not args.reference:
            raise UsageError("--tune-k needs --level word and --reference")
        ks = [int(x) for x in args.tune_k.split(",")]
        run.input("reference", args.reference)
        (k, score, report, topics), scored = select_k_by_coherence(
            points, dump.keys, ks, _reference_docs(args.reference), coh, args.seed)
        rows += [("coherence", f"k={kk}", s) for kk, s, _, _ in scored]
        rows.append(("selected_k", "k", float(k)))
    else:
        report = kmeans(points, args.k, args.seed)
        topics = rank_topics(report, dump.keys, args.top_m) if args.level == "word" else None
    labels = dump.keys
    Path(args.out).write_text("\n".join(report.lines(labels)) + "\n", encoding="utf-8")
    run.output("clusters", args.out)
    if topics is not None:
        tpath = Path(args.out).with_name(Path(args.out).name + ".topics.tsv")
        tpath.write_text("".join(f"{c}\t{' '.join(ws)}\n" for c, ws in enumerate(topics)), encoding="utf-8")
        run.output("topics", tpath)
    rows += [("inertia", f"k={report.k}", report.inertia), ("clusters", "k", float(report.k))]
    _write_stdout(rows)
    return 0


def _read_topics(path: str) -> list[list[str]]:
    topics = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        words = line.split("\t", 1)[1] if "\t" in line else line
        topics.append(words.split())
    return topics


def cmd_coherence(args, run: Run) -> int:
    topics = _read_topics(args.topics)
    run.input("topics", args.topics)
    run.input("reference", args.reference)
    cfg = CoherenceConfig(window=args.window, top_m=args.top_m)
    res = topic_coherence(topics, _reference_docs(args.reference), cfg)
    rows = [("npmi", f"topic{i}", s) for i, s in enumerate(res.per_topic) if s is not None]
    rows += [("npmi", "mean", res.mean if res.mean is not None else float("nan")),
             ("skipped_pairs", "count", float(res.skipped_pairs)),
             ("undefined_topics", "count", float(len(res.undefined_topics)))]
    run.record["results"] = {"mean": res.mean, "undefined_topics": res.undefined_topics}
    _write_stdout(rows)
    return 0


def _read_cluster_report(path: str) -> list[list[str]]:
    clusters: dict[int, list[tuple[int, str]]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise UsageError(f"{path}:{lineno}: expected cluster_id<TAB>rank<TAB>member<TAB>distance")
        clusters.setdefault(int(parts[0]), []).append((int(parts[1]), parts[2]))
    return [[m for _, m in sorted(v)] for _, v in sorted(clusters.items())]


def cmd_aspect_coherence(args, run: Run) -> int:
    clusters = _read_cluster_report(args.clusters)
    report = load_corpus_report(args.corpus)
    run.input("clusters", args.clusters)
    run.input("corpus", args.corpus)
    gold = {}
    for d in report.documents:
        for i, anns in enumerate(d.sentence_annotations or []):
            if anns:
                gold[f"{d.doc_id}#{i}"] = anns
    thresholds = tuple(float(x) for x in args.thresholds.split(",")) if args.thresholds else None
    if thresholds is not None and not thresholds:
        raise UsageError("empty threshold list")
    ev = AspectClusterEval(clusters, gold, thresholds) if thresholds else AspectClusterEval(clusters, gold)
    table = aspect_polarity_coherence(ev)
    for row in table:
        print(row.text(), file=sys.stderr)
    rows = []
    for row in table:
        rows.append(("aspect_ratio", f">={row.threshold}", row.aspect_ratio))
        rows.append(("aspect_polarity_ratio", f">={row.threshold}", row.aspect_polarity_ratio))
    run.record["results"] = {f"{m}{s}": v for m, s, v in rows}
    _write_stdout(rows)
    return 0


def cmd_export_attention(args, run: Run) -> int:
    params = _load_checkpoint(args.checkpoint, run)
    docs = _corpus_for_checkpoint(args.corpus, params, run)
    tokens = params.vocab_tokens
    with open(args.out, "w", encoding="utf-8") as fh:
        for start in range(0, len(docs), 64):
            chunk = docs[start:start + 64]
            for doc, enc in zip(chunk, unpack(encode_batch(chunk, params, diagnostics=True), chunk)):
                rec = {
                    "doc_id": doc.doc_id,
                    "sentences": [[tokens[w] for w in s] for s in doc.sentences],
                    "word_beta": [b.tolist() for b in enc.word_betas],
                    "word_alpha": [a.tolist() for a in enc.word_alphas],
                    "sentence_beta": enc.sentence_betas.tolist(),
                    "sentence_alpha": enc.sentence_alphas.tolist(),
                    "p_sentiment": enc.p_sentiment.tolist(),
                    "p_domain": enc.p_domain.tolist(),
                }
                fh.write(json.dumps(rec) + "\n")
    run.output("attention", args.out)
    _write_stdout([("documents", "exported", float(len(docs)))])
    return 0


def cmd_make_synthetic(args, run: Run) -> int:
    spec = SyntheticSpec(n_docs=args.docs, consistency=args.consistency, ambiguous_rate=args.ambiguous_rate,
                         pronoun_rate=args.pronoun_rate, label_noise=args.label_noise)
    docs, domains = make_corpus(spec, args.seed)
    write_corpus(args.out, docs, domains)
    run.record["config"] = dataclasses.asdict(spec)
    run.output("corpus", args.out)
    _write_stdout([("documents", "written", float(len(docs)))])
    return 0


# ---------------------------------------------------------------- parser


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("TDAM_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tdam", description="Topic-dependent attention model toolkit")
    parser.add_argument("--version", action="version", version=f"tdam {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--manifest", help="manifest path (default derived from --out)")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker threads (default: $TDAM_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def training_args(p):
        p.add_argument("--corpus")
        p.add_argument("--dev")
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--dropout", type=float)
        p.add_argument("--topics", type=int)
        p.add_argument("--topic-vector-size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--multitask", action="store_true")
        p.add_argument("--single-task", action="store_true")
        p.add_argument("--no-topics", action="store_true", help="zero-topic-pathway baseline")
        p.add_argument("--embeddings")
        p.add_argument("--min-count", type=int, default=1)

    p = sub.add_parser("train", parents=[common])
    training_args(p)
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid-search", parents=[common])
    training_args(p)
    p.add_argument("--grid", help="axis=v1,v2;axis=... (default: 3x3x3 grid)")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("eval-accuracy", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_accuracy)

    p = sub.add_parser("dump-embeddings", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--level", choices=("word", "sentence"), default="word")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_embeddings)

    p = sub.add_parser("cluster", parents=[common])
    p.add_argument("--dump", required=True)
    p.add_argument("--level", choices=("word", "sentence"), default="word")
    p.add_argument("--k", type=int)
    p.add_argument("--tune-k")
    p.add_argument("--reference", help="corpus for coherence when tuning k")
    p.add_argument("--project", choices=("tsne", "pca", "none"), default="tsne")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-m", type=int, default=10)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("coherence", parents=[common])
    p.add_argument("--topics", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--top-m", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("aspect-coherence", parents=[common])
    p.add_argument("--clusters", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--thresholds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_aspect_coherence)

    p = sub.add_parser("export-attention", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("make-synthetic", parents=[common])
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--consistency", type=float, default=0.8)
    p.add_argument("--ambiguous-rate", type=float, default=0.8)
    p.add_argument("--pronoun-rate", type=float, default=0.6)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


_ERROR_KINDS = (
    (UsageError, "usage"),
    (CorpusError, "corpus"),
    (CheckpointError, "checkpoint"),
    (DumpError, "dump"),
    (TrainingError, "training"),
    (FileNotFoundError, "missing-input"),
    (OSError, "io"),
    (ValueError, "value"),
)


def _fail(kind: str, message: str) -> int:
    one_line = " ".join(str(message).split())
    sys.stderr.write(f"error\t{kind}\t{one_line}\n")
    return 2 if kind == "usage" else 1


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    rec = Run(args, argv)
    try:
        code = args.func(args, rec)
    except Exception as exc:  # noqa: BLE001 - mapped to a one-line error
        for cls, kind in _ERROR_KINDS:
            if isinstance(exc, cls):
                break
        else:
            raise
        rec.record["error"] = f"{kind}: {exc}"
        try:
            rec.finish("error")
        except OSError:
            pass
        return _fail(kind, exc)
    rec.finish("ok")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
