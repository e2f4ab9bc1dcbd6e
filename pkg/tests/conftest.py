import numpy as np
import pytest

from tdam.corpus import Document
from tdam.model import ModelConfig
from tdam.training import TrainConfig, init_params


def tiny_config(**kw) -> ModelConfig:
    base = dict(vocab_size=12, embed_dim=5, hidden_size=6, num_topics=3,
                sentiment_classes=3, domain_classes=2)
    base.update(kw)
    return ModelConfig(**base)


def tiny_train_config(**kw) -> TrainConfig:
    base = dict(topic_vector_size=6, num_topics=3, embed_dim=5, sentiment_classes=3,
                domain_classes=2, batch_size=4, max_epochs=3, patience=None)
    base.update(kw)
    return TrainConfig(**base)


def random_docs(rng: np.random.Generator, n: int, vocab: int = 12, max_sent: int = 4,
                max_words: int = 6, classes=(3, 2)) -> list[Document]:
    docs = []
    for i in range(n):
        sents = [[int(w) for w in rng.integers(2, vocab, size=rng.integers(1, max_words + 1))]
                 for _ in range(int(rng.integers(1, max_sent + 1)))]
        docs.append(Document(f"d{i}", sents, int(rng.integers(classes[0])), int(rng.integers(classes[1]))))
    return docs


@pytest.fixture
def params():
    return init_params(tiny_config(), seed=3)


@pytest.fixture
def docs():
    return random_docs(np.random.default_rng(11), 6)
