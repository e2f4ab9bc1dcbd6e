import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdam import numerics as nx
from tdam.corpus import Document, batches, build_vocab
from tdam.model import ModelConfig, is_weight_matrix
from tdam.synthetic import separable_corpus
from tdam.training import (INIT_RANGE, DEFAULT_GRID, AdamState, TrainConfig, TrainingError, clip_gradients,
                           expand_grid, grid_search, init_params, kfold_splits, semi_orthogonal, total_loss,
                           train)

from conftest import random_docs, tiny_config, tiny_train_config


# ---------------------------------------------------------------- initialisation


@pytest.mark.parametrize("shape", [(4, 4), (6, 3), (3, 6), (1, 5), (7, 1)])
def test_semi_orthogonal_gram(shape):
    W = semi_orthogonal(*shape, np.random.default_rng(0))
    gram = W.T @ W if shape[0] >= shape[1] else W @ W.T
    assert np.abs(gram - np.eye(min(shape))).max() < 1e-8
    assert W.flags["C_CONTIGUOUS"]


def test_semi_orthogonal_rejects_zero_dimension():
    with pytest.raises(ValueError):
        semi_orthogonal(0, 3, np.random.default_rng(0))


def test_init_params_ranges_and_orthogonality():
    params = init_params(tiny_config(), seed=0)
    for name, t in params.tensors.items():
        if is_weight_matrix(name, t.shape):
            r, c = t.shape
            gram = t.data.T @ t.data if r >= c else t.data @ t.data.T
            assert np.abs(gram - np.eye(min(r, c))).max() < 1e-8, name
        else:
            assert np.all(np.abs(t.data) <= INIT_RANGE), name


def test_init_is_seed_deterministic():
    a, b = init_params(tiny_config(), 5), init_params(tiny_config(), 5)
    c = init_params(tiny_config(), 6)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a.names())
    assert not np.array_equal(a["topics"].data, c["topics"].data)


def test_init_with_pretrained_embeddings():
    table = np.arange(60, dtype=float).reshape(12, 5)
    params = init_params(tiny_config(), 0, embeddings=table)
    assert np.array_equal(params["embedding"].data, table)
    with pytest.raises(ValueError):
        init_params(tiny_config(), 0, embeddings=np.zeros((3, 5)))


# ---------------------------------------------------------------- loss


def _zero_heads(params):
    for k in ("head.sentiment.W", "head.sentiment.b", "head.domain.W", "head.domain.b"):
        params[k].data[...] = 0.0


def test_uniform_heads_loss_is_ln3_plus_ln5():
    cfg = TrainConfig(topic_vector_size=6, num_topics=2, embed_dim=4, domain_classes=5)
    params = init_params(cfg.model_config(10), 0)
    _zero_heads(params)
    loss, _ = total_loss([Document("a", [[2, 3], [4]], 2, 4)], params, cfg)
    assert loss.item() == pytest.approx(math.log(3) + math.log(5), abs=1e-12)


def test_perfect_predictions_have_zero_loss():
    cfg = tiny_train_config()
    params = init_params(cfg.model_config(12), 0)
    _zero_heads(params)
    params["head.sentiment.b"].data[...] = [0.0, 1e4, 0.0]
    params["head.domain.b"].data[...] = [1e4, 0.0]
    loss, _ = total_loss([Document("a", [[2, 3]], 1, 0)], params, cfg)
    assert loss.item() == 0.0


def test_task_weights_one_zero_equal_single_task_bitwise(docs):
    base = tiny_train_config()
    params = init_params(base.model_config(12), 1)
    weighted, _ = total_loss(docs, params, TrainConfig(**{**base.to_dict(), "task_weights": (1.0, 0.0)}))
    single, _ = total_loss(docs, params, TrainConfig(**{**base.to_dict(), "task_weights": (1.0, 1.0),
                                                        "multitask": False}))
    assert weighted.item() == single.item()


def test_task_weights_scale_each_term(docs):
    base = tiny_train_config()
    params = init_params(base.model_config(12), 2)
    enc_loss = lambda w, mt=True: total_loss(docs, params, TrainConfig(**{**base.to_dict(), "task_weights": w,
                                                                           "multitask": mt}))[0].item()
    s = enc_loss((1.0, 0.0))
    d = enc_loss((0.0, 1.0))
    assert enc_loss((2.0, 3.0)) == pytest.approx(2 * s + 3 * d, rel=1e-14)


def test_missing_label_for_active_task(docs):
    cfg = tiny_train_config()
    params = init_params(cfg.model_config(12), 0)
    bad = Document("x", [[2]], 0, None)
    with pytest.raises(ValueError, match="lacks a label"):
        total_loss([bad], params, cfg)
    loss, _ = total_loss([bad], params, TrainConfig(**{**cfg.to_dict(), "multitask": False}))
    assert np.isfinite(loss.item())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(topic_vector_size=7)


# ---------------------------------------------------------------- optimiser


def test_adam_zero_gradient_leaves_parameters_unchanged():
    params = init_params(tiny_config(), 0)
    before = {k: params[k].data.copy() for k in params.names()}
    for t in params.values():
        t.grad = np.zeros(t.shape)
    AdamState().update(params, 0.1)
    assert all(np.array_equal(params[k].data, before[k]) for k in before)


def test_adam_first_step_moves_by_learning_rate():
    params = init_params(tiny_config(), 0)
    t = params["topics"]
    before = t.data.copy()
    t.grad = np.full(t.shape, 0.3)
    AdamState().update(params, 0.01)
    np.testing.assert_allclose(before - t.data, 0.01, rtol=1e-6)


def test_gradient_clipping():
    params = init_params(tiny_config(), 0)
    for t in params.values():
        t.grad = np.ones(t.shape)
    norm = clip_gradients(params, 1.0)
    after = math.sqrt(sum((t.grad ** 2).sum() for t in params.values()))
    assert norm > 1 and after == pytest.approx(1.0)


# ---------------------------------------------------------------- training loop


def _encoded_separable(n=16, seed=0):
    docs, domains = separable_corpus(n, seed)
    vocab = build_vocab(docs)
    return vocab.encode_all(docs), vocab, domains


def test_zero_learning_rate_keeps_parameters():
    enc, vocab, _ = _encoded_separable()
    cfg = tiny_train_config(learning_rate=0.0, max_epochs=1, domain_classes=5)
    p0 = init_params(cfg.model_config(len(vocab)), 0)
    p1, _ = train(enc, enc, cfg, params=p0)
    assert all(np.array_equal(p0[k].data, p1[k].data) for k in p0.names())


def test_training_is_deterministic():
    enc, vocab, _ = _encoded_separable()
    cfg = tiny_train_config(max_epochs=3, domain_classes=5, dropout=0.3, seed=4)
    runs = [train(enc, enc, cfg, vocab_size=len(vocab)) for _ in range(2)]
    assert runs[0][1].losses == runs[1][1].losses
    assert all(np.array_equal(runs[0][0][k].data, runs[1][0][k].data) for k in runs[0][0].names())


def test_training_reduces_loss_and_logs_epochs():
    enc, vocab, _ = _encoded_separable(24)
    cfg = tiny_train_config(max_epochs=8, domain_classes=5, learning_rate=0.02)
    seen = []
    _, hist = train(enc, enc, cfg, vocab_size=len(vocab), on_epoch=seen.append)
    assert [r.epoch for r in seen] == list(range(1, 9))
    assert hist.losses[-1] < hist.losses[0]
    log = hist.metrics_log().splitlines()
    assert log[0].startswith("epoch\ttrain_loss") and len(log) == 9


def test_early_stopping_respects_patience():
    enc, vocab, _ = _encoded_separable()
    cfg = tiny_train_config(learning_rate=0.0, max_epochs=20, patience=2, domain_classes=5)
    _, hist = train(enc, enc, cfg, vocab_size=len(vocab))
    assert hist.best_epoch == 1 and len(hist.epochs) == 3


def test_non_finite_loss_aborts_naming_the_batch():
    enc, vocab, _ = _encoded_separable()
    cfg = tiny_train_config(domain_classes=5)
    params = init_params(cfg.model_config(len(vocab)), 0)
    params["head.sentiment.b"].data[0] = np.nan
    with pytest.raises(TrainingError, match="batch"):
        train(enc, enc, cfg, params=params)


def test_empty_split_rejected():
    with pytest.raises(TrainingError):
        train([], [Document("a", [[2]], 0, 0)], tiny_train_config())


def test_frozen_embeddings_stay_fixed():
    enc, vocab, _ = _encoded_separable()
    cfg = tiny_train_config(max_epochs=1, freeze_embeddings=True, domain_classes=5)
    p0 = init_params(cfg.model_config(len(vocab)), 0)
    p1, _ = train(enc, enc, cfg, params=p0)
    assert np.array_equal(p0["embedding"].data, p1["embedding"].data)
    assert not np.array_equal(p0["topics"].data, p1["topics"].data)


# ---------------------------------------------------------------- batching


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=40), st.integers(1, 9), st.integers(0, 1000))
def test_batches_are_length_sorted_and_deterministic(lengths, size, seed):
    docs = [Document(f"d{i}", [[2]] * n, 0, 0) for i, n in enumerate(lengths)]
    a = [[d.doc_id for d in b] for b in batches(docs, size, seed)]
    b = [[d.doc_id for d in b] for b in batches(docs, size, seed)]
    assert a == b
    order = sorted(range(len(docs)), key=lambda i: lengths[i])
    expected = {tuple(f"d{i}" for i in order[j:j + size]) for j in range(0, len(order), size)}
    assert {tuple(x) for x in a} == expected


# ---------------------------------------------------------------- grid search and folds


def test_default_grid_is_full_cartesian_product():
    cells = expand_grid(TrainConfig(), DEFAULT_GRID)
    assert len(cells) == 27
    assert {(c.learning_rate, c.dropout, c.topic_vector_size) for c in cells} == {
        (a, b, c) for a in (0.01, 0.05, 0.1) for b in (0.0, 0.3, 0.6) for c in (50, 100, 200)}


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        expand_grid(TrainConfig(), {})
    with pytest.raises(ValueError):
        expand_grid(TrainConfig(), {"dropout": ()})


def test_singleton_grid_returns_that_config():
    enc, vocab, _ = _encoded_separable()
    base = tiny_train_config(max_epochs=1, domain_classes=5)
    res = grid_search(enc, enc, base, {"dropout": (0.3,)}, vocab_size=len(vocab))
    assert len(res.cells) == 1 and res.best.dropout == 0.3


def test_zero_learning_rate_cell_loses():
    enc, vocab, _ = _encoded_separable(24, seed=3)
    base = tiny_train_config(max_epochs=40, domain_classes=5, topic_vector_size=8, embed_dim=8)
    res = grid_search(enc, enc, base, {"learning_rate": (0.0, 0.02)}, vocab_size=len(vocab))
    assert res.best.learning_rate == 0.02
    by_lr = {c.config.learning_rate: c.dev_accuracy for c in res.cells}
    assert by_lr[0.02] == 1.0 and by_lr[0.0] < 1.0


def test_grid_search_threads_match_serial():
    enc, vocab, _ = _encoded_separable()
    base = tiny_train_config(max_epochs=1, domain_classes=5)
    grid = {"learning_rate": (0.01, 0.02)}
    a = grid_search(enc, enc, base, grid, vocab_size=len(vocab), workers=1)
    b = grid_search(enc, enc, base, grid, vocab_size=len(vocab), workers=2)
    assert [(c.dev_accuracy, c.dev_loss) for c in a.cells] == [(c.dev_accuracy, c.dev_loss) for c in b.cells]


def test_kfold_splits_partition_documents():
    seen = []
    for tr, dv, te in kfold_splits(50, 5, seed=0):
        assert not set(tr) & set(dv) and not set(tr) & set(te) and not set(dv) & set(te)
        assert len(tr) + len(dv) + len(te) == 50 and len(te) == 10 and len(dv) == 5
        seen.extend(te)
    assert sorted(seen) == list(range(50))
