import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tdam.corpus import Document
from tdam.extraction import (DumpError, LocalEmbeddingDump, collect_dump, kmeans, project_2d, rank_topics,
                             sentence_clusters)
from tdam.model import encode_document
from tdam.training import init_params

from conftest import tiny_config


def three_blobs(seed=0):
    rng = np.random.default_rng(seed)
    centres = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]])
    return np.concatenate([c + rng.normal(0, 0.6, (4, 2)) for c in centres])


def exhaustive_optimum(X, k):
    """Minimum within-cluster sum of squares over every assignment of points to k labels."""
    n = len(X)
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int8)
    sq = (X ** 2).sum()
    best = np.full(len(labels), sq)
    for c in range(k):
        member = labels == c
        cnt = member.sum(axis=1)
        s = member.astype(float) @ X
        with np.errstate(divide="ignore", invalid="ignore"):
            best -= np.where(cnt > 0, (s ** 2).sum(axis=1) / cnt, 0.0)
    return float(best.min())


# ---------------------------------------------------------------- dumps


def test_dump_counts_word_occurrences():
    params = init_params(tiny_config(), 0)
    params.vocab_tokens = [f"t{i}" for i in range(12)]
    docs = [Document("a", [[2, 3], [4, 5, 2]], 0, 0), Document("b", [[6, 7]], 1, 1)]
    dump = collect_dump(docs, params)
    word, sent = dump.select("word"), dump.select("sentence")
    assert len(word) == 7 and len(sent) == 3
    assert word.keys[:2] == ["t2", "t3"] and sent.keys == ["a#0", "a#1", "b#0"]
    assert list(sent.word_index) == [-1, -1, -1]


def test_same_word_in_two_contexts_gets_distinct_vectors():
    params = init_params(tiny_config(), 1)
    docs = [Document("a", [[2, 3, 4]], 0, 0), Document("b", [[9, 3, 8]], 0, 0)]
    dump = collect_dump(docs, params, levels=("word",))
    v = dump.vectors[[i for i, (d, w) in enumerate(zip(dump.doc_ids, dump.word_index)) if w == 1]]
    assert not np.allclose(v[0], v[1])
    enc = encode_document(docs[0], params)
    np.testing.assert_array_equal(dump.vectors[1], enc.word_q[0][1])


def test_dump_vectors_are_convex_combinations_of_topics():
    from scipy.optimize import nnls

    params = init_params(tiny_config(num_topics=5, hidden_size=8), 2)
    docs = [Document("a", [[2, 3, 4], [5]], 0, 0)]
    dump = collect_dump(docs, params)
    E = params["topics"].data
    A = np.vstack([E.T, np.ones(len(E))])
    for q in dump.vectors:
        w, resid = nnls(A, np.append(q, 1.0))
        assert resid < 1e-9 and abs(w.sum() - 1) < 1e-9


def test_dump_rejects_vocabulary_mismatch():
    params = init_params(tiny_config(), 0)
    params.vocab_tokens = ["<pad>", "<unk>", "a"]
    with pytest.raises(DumpError):
        collect_dump([Document("a", [[2, 7]], 0, 0)], params)


def test_dump_file_round_trip(tmp_path):
    params = init_params(tiny_config(), 0)
    params.vocab_tokens = [f"t{i}" for i in range(12)]
    dump = collect_dump([Document("a", [[2, 3], [4]], 0, 0)], params, checkpoint="abc123")
    dump.write(tmp_path / "d.tsv")
    back = LocalEmbeddingDump.read(tmp_path / "d.tsv")
    assert back.keys == dump.keys and back.checkpoint == "abc123"
    assert np.array_equal(back.vectors, dump.vectors)
    header = (tmp_path / "d.tsv").read_text().splitlines()[0]
    assert header.startswith("#tdam-dump\tversion=1\tn=6\tlevel=mixed")


def test_dump_reader_rejects_bad_files(tmp_path):
    (tmp_path / "x").write_text("not a dump\n")
    with pytest.raises(DumpError):
        LocalEmbeddingDump.read(tmp_path / "x")
    (tmp_path / "y").write_text("#tdam-dump\tversion=1\tn=2\tlevel=word\tcheckpoint=\tcount=1\n"
                                "word\ta\td\t0\t0\t1.0 2.0 3.0\n")
    with pytest.raises(DumpError, match="header says 2"):
        LocalEmbeddingDump.read(tmp_path / "y")


# ---------------------------------------------------------------- projection


def test_pca_preserves_distances_in_planar_data():
    rng = np.random.default_rng(0)
    basis, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    X = rng.standard_normal((15, 2)) @ basis.T + rng.standard_normal(6)
    Y = project_2d(X, "pca")
    dx = np.linalg.norm(X[:, None] - X[None], axis=-1)
    dy = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    assert np.abs(dx - dy).max() < 1e-8


def test_tsne_separates_two_blobs():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.3, (10, 8)), rng.normal(6, 0.3, (10, 8))])
    Y = project_2d(X, "tsne", perplexity=5, seed=0)
    a, b = Y[:10], Y[10:]
    spread = max(np.linalg.norm(a - a.mean(0), axis=1).mean(), np.linalg.norm(b - b.mean(0), axis=1).mean())
    assert np.linalg.norm(a.mean(0) - b.mean(0)) > 3 * spread


def test_tsne_is_seed_deterministic():
    X = np.random.default_rng(2).standard_normal((12, 5))
    assert np.array_equal(project_2d(X, "tsne", perplexity=4, seed=3), project_2d(X, "tsne", perplexity=4, seed=3))


def test_tsne_rejects_large_perplexity():
    with pytest.raises(ValueError, match="perplexity"):
        project_2d(np.zeros((5, 3)), "tsne", perplexity=5)
    with pytest.raises(ValueError):
        project_2d(np.zeros((2, 3)), "tsne", perplexity=1)
    with pytest.raises(ValueError):
        project_2d(np.zeros((4, 3)), "umap")


# ---------------------------------------------------------------- k-means


def test_duplicate_groups_are_recovered():
    groups = np.array([[0.0, 0.0], [3.0, 1.0], [-2.0, 5.0]])
    X = np.repeat(groups, 4, axis=0)
    for seed in range(10):
        rep = kmeans(X, 3, seed)
        assert rep.inertia == 0.0
        parts = {frozenset(np.flatnonzero(rep.assignments == c)) for c in range(3)}
        assert parts == {frozenset(range(i, i + 4)) for i in (0, 4, 8)}


def test_blobs_reach_exhaustive_optimum():
    X = three_blobs()
    opt = exhaustive_optimum(X, 3)
    for seed in range(5):
        assert kmeans(X, 3, seed).inertia == pytest.approx(opt, rel=1e-12, abs=1e-12)


def test_k_equal_to_points_has_zero_inertia():
    X = np.random.default_rng(3).standard_normal((9, 3))
    rep = kmeans(X, 9, seed=0)
    assert rep.inertia == 0.0 and sorted(rep.assignments) == list(range(9))


def test_kmeans_argument_errors():
    X = np.zeros((3, 2))
    with pytest.raises(ValueError):
        kmeans(X, 0)
    with pytest.raises(ValueError):
        kmeans(X, 4)


def test_empty_cluster_is_reseeded():
    # all points identical except one: k-means++ may pick duplicate centres
    X = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]])
    rep = kmeans(X, 3, seed=0)
    assert len(set(rep.assignments.tolist())) == 3


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 25), st.integers(1, 3)),
              elements=st.floats(-50, 50, allow_subnormal=False)),
       st.integers(1, 3), st.integers(0, 1000))
def test_kmeans_partition_and_monotone_inertia(X, k, seed):
    k = min(k, len(X))
    rep = kmeans(X, k, seed)
    assert rep.assignments.shape == (len(X),)
    assert set(rep.assignments.tolist()) <= set(range(k))
    hist = rep.inertia_history
    assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(hist, hist[1:]))
    for c in range(k):
        members = rep.members(c)
        assert np.all(np.diff(rep.distances[members]) >= 0)


def test_cluster_report_lines():
    X = np.array([[0.0], [0.2], [5.0]])
    rep = kmeans(X, 2, seed=0)
    lines = rep.lines(["a", "b", "c"])
    assert len(lines) == 3
    c_of = {line.split("\t")[2]: line.split("\t")[0] for line in lines}
    assert c_of["a"] == c_of["b"] != c_of["c"]
    assert all(len(line.split("\t")) == 4 for line in lines)


# ---------------------------------------------------------------- topic ranking


def test_rank_topics_single_type_and_centroid_member():
    X = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [50.0, 50.0], [52.0, 50.0]])
    rep = kmeans(X, 2, seed=0)
    keys = ["x", "y", "mid", "solo", "solo"]
    topics = rank_topics(rep, keys, top_m=10)
    by_first = {tuple(t) for t in topics}
    assert ("solo",) in by_first
    assert ("mid", "x", "y") in by_first


def test_rank_topics_matches_full_sort():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((60, 2))
    keys = [f"w{int(i)}" for i in rng.integers(0, 15, 60)]
    rep = kmeans(X, 4, seed=1)
    topics = rank_topics(rep, keys, top_m=5)
    for c in range(4):
        idx = np.flatnonzero(rep.assignments == c)
        ordered = sorted(idx, key=lambda i: (rep.distances[i], keys[i]))
        seen = []
        for i in ordered:
            if keys[i] not in seen:
                seen.append(keys[i])
        assert topics[c] == seen[:5]


def test_rank_topics_rejects_zero():
    rep = kmeans(np.zeros((2, 1)) + [[0.0], [1.0]], 1)
    with pytest.raises(ValueError):
        rank_topics(rep, ["a", "b"], top_m=0)


def test_sentence_clusters_list_ids():
    X = np.array([[0.0], [0.1], [9.0]])
    rep = kmeans(X, 2, seed=0)
    clusters = sentence_clusters(rep, ["d#0", "d#1", "e#0"])
    assert sorted(map(sorted, clusters)) == [["d#0", "d#1"], ["e#0"]]
