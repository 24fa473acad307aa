"""Latent topic hypertext model: EM training, baselines, sampling and evaluation."""

from lthm.corpus import Corpus, CorpusView, Document, Vocabulary, parse_corpus, split_train_test
from lthm.errors import CorpusError, NumericalError
from lthm.model import Hyperparams, ModelParams, SufficientStats, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusView",
    "Document",
    "Vocabulary",
    "parse_corpus",
    "split_train_test",
    "CorpusError",
    "NumericalError",
    "Hyperparams",
    "ModelParams",
    "SufficientStats",
    "TrainConfig",
    "__version__",
]
