"""Topic-dependent attention model for review sentiment and domain classification."""

__version__ = "0.1.0"

from .corpus import Document, Vocabulary, build_vocab, load_corpus
from .model import ModelConfig, TdamParams, encode_document, predict
from .training import TrainConfig, init_params, train

__all__ = [
    "Document", "ModelConfig", "TdamParams", "TrainConfig", "Vocabulary", "build_vocab",
    "encode_document", "init_params", "load_corpus", "predict", "train", "__version__",
]
