"""Label-indexed neural topic models with an embedded-topic-model baseline.

The numerical core is plain numpy with hand-derived gradients. ``lintm.model``
holds LI-NTM, ``lintm.etm`` the unsupervised baselines, ``lintm.synthlab`` the
synthetic two-source benchmark and ``lintm.evalkit`` the metrics.
``lintm.estimators`` wraps the models as scikit-learn estimators.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus, Document, SplitSpec, Vocabulary, split_dataset
from .estimators import EmbeddedTopicModel, LabelIndexedTopicModel
from .etm import EtmModel, NtmModel, train_etm, train_ntm
from .evalkit import MetricsReport, accuracy, perplexity, top_words
from .exceptions import (CompatibilityError, ConfigError, DataError, DimensionError,
                         DistributionError, IngestionError, LintmError, NumericError)
from .model import LintmModel, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError", "ConfigError", "Corpus", "DataError", "DimensionError",
    "DistributionError", "Document", "EmbeddedTopicModel", "EtmModel", "IngestionError",
    "LabelIndexedTopicModel", "LintmError", "LintmModel", "MetricsReport", "NtmModel",
    "NumericError", "SplitSpec", "TrainConfig", "Vocabulary", "accuracy", "load_checkpoint",
    "perplexity", "save_checkpoint", "split_dataset", "top_words", "train", "train_etm",
    "train_ntm",
]
