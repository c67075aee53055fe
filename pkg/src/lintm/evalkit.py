"""Held-out perplexity, classifier accuracy and topic tables for trained models.

Every function here is deterministic: the encoder is evaluated at its mean and
LI-NTM mixes its label slices with the classifier's soft output, so test labels
never enter the perplexity.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus, Vocabulary
from .exceptions import ConfigError
from .model import LOG_CLAMP
from .ndmath import softmax

EVAL_CHUNK = 512


def _counts(test):
    if isinstance(test, Corpus):
        return test.count_matrix()
    return sp.csr_matrix(test, dtype=np.float64)


def log_likelihood(test, model) -> Tuple[float, float]:
    """Total count-weighted log-likelihood and total token count."""
    X = _counts(test)
    if X.shape[0] == 0:
        raise ConfigError("perplexity needs at least one test document", field="test")
    if X.shape[1] != model.vocab_size:
        raise ConfigError(f"test vocabulary has {X.shape[1]} words, model has {model.vocab_size}",
                          field="vocab")
    ll, n_tok = 0.0, 0.0
    for start in range(0, X.shape[0], EVAL_CHUNK):
        chunk = X[start:start + EVAL_CHUNK].toarray()
        w = model.word_distribution(chunk)
        ll += float(np.sum(chunk * np.log(np.maximum(w, LOG_CLAMP))))
        n_tok += float(chunk.sum())
    return ll, n_tok


def perplexity(test, model) -> float:
    """exp(-sum_d sum_v x_dv log p_d(v) / sum_d sum_v x_dv)."""
    ll, n_tok = log_likelihood(test, model)
    return float(np.exp(-ll / n_tok))


def predict_labels(X, model) -> np.ndarray:
    if not getattr(model, "has_classifier", False):
        raise ConfigError(f"{model.kind} has no classifier", field="model")
    X = _counts(X)
    out = []
    for start in range(0, X.shape[0], EVAL_CHUNK):
        pi = model.predict_proba(X[start:start + EVAL_CHUNK].toarray())
        out.append(np.argmax(pi, axis=1))  # first maximum wins ties
    return np.concatenate(out)


def accuracy(test, model, labels: Optional[Sequence[int]] = None) -> float:
    """Fraction of documents whose argmax classifier output equals the label.

    ``labels`` defaults to the corpus's visible labels.
    """
    if labels is None:
        if not isinstance(test, Corpus) or not test.is_labeled:
            raise ConfigError("accuracy needs a labeled test set", field="test")
        labels = test.labels()
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ConfigError("accuracy needs at least one test document", field="test")
    if np.any(labels < 0):
        raise ConfigError("accuracy needs a labeled test set", field="test")
    return float(np.mean(predict_labels(test, model) == labels))


def aligned_accuracy(y_true, y_pred, num_labels: int) -> float:
    """Accuracy under the best one-to-one relabelling of the predictions.

    The right score for class indices that were never anchored to the reference
    labels (e.g. a classifier organised purely by reconstruction).
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    best = 0.0
    for perm in itertools.permutations(range(num_labels)):
        best = max(best, float(np.mean(np.asarray(perm)[y_pred] == y_true)))
    return best


def top_words(topics, topic: int, n: int, vocab: Vocabulary, label: Optional[int] = None,
              logits: bool = False) -> List[Tuple[str, float]]:
    """The ``n`` most probable words of one topic, descending, ties broken lexicographically.

    ``topics`` is a [K, V] or [L, K, V] array of topic distributions, or logits when
    ``logits=True``.
    """
    arr = np.asarray(topics, dtype=np.float64)
    if arr.ndim == 3:
        if label is None or not 0 <= label < arr.shape[0]:
            raise ConfigError(f"label must lie in [0, {arr.shape[0]})", field="label")
        arr = arr[label]
    elif arr.ndim != 2:
        raise ConfigError("topics must be a 2-D or 3-D array", field="topics")
    if not 0 <= topic < arr.shape[0]:
        raise ConfigError(f"topic must lie in [0, {arr.shape[0]})", field="topic")
    if arr.shape[1] != len(vocab):
        raise ConfigError("topic width does not match the vocabulary", field="vocab")
    row = softmax(arr[topic]) if logits else arr[topic]
    order = sorted(range(len(row)), key=lambda v: (-row[v], vocab.terms[v]))
    return [(vocab.terms[v], float(row[v])) for v in order[:n]]


def label_topic_tables(model, vocab: Vocabulary, n: int = 10):
    """(label, topic, top words) for every topic; label is None for unsupervised models."""
    T = model.topic_matrix()
    if T.ndim == 2:
        return [(None, k, top_words(T, k, n, vocab)) for k in range(T.shape[0])]
    return [(l, k, top_words(T, k, n, vocab, label=l))
            for l in range(T.shape[0]) for k in range(T.shape[1])]


def label_half_mass(model) -> np.ndarray:
    """[L, K] (or [1, K]) share of each topic's mass on the first half of the vocabulary."""
    T = model.topic_matrix()
    if T.ndim == 2:
        T = T[None]
    return T[..., : T.shape[-1] // 2].sum(axis=-1)


def format_topics_text(tables) -> str:
    lines = []
    for label, k, words in tables:
        head = f"topic {k}" if label is None else f"label {label} topic {k}"
        cells = "  ".join(f"{w}({p:.3f})" for w, p in words)
        lines.append(f"{head:<20s} {cells}")
    return "\n".join(lines) + "\n"


def format_topics_csv(tables) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "topic", "rank", "word", "probability"])
    for label, k, words in tables:
        for rank, (w, p) in enumerate(words):
            writer.writerow(["" if label is None else label, k, rank, w, repr(p)])
    return buf.getvalue()


@dataclass
class MetricsReport:
    perplexity: Optional[float]
    accuracy: Optional[float] = None
    per_label_topics: list = field(default_factory=list)
    loss_trace: List[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.perplexity is not None and not self.perplexity >= 1.0 - 1e-12:
            raise ValueError(f"perplexity must be >= 1, got {self.perplexity}")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {self.accuracy}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("perplexity", "accuracy"):
            if d[name] is None:
                d.pop(name)
        d["per_label_topics"] = [
            {"label": label, "topic": k, "words": [[w, p] for w, p in words]}
            for label, k, words in self.per_label_topics
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d.setdefault("perplexity", None)
        d["per_label_topics"] = [(t["label"], t["topic"], [tuple(x) for x in t["words"]])
                                 for t in d.get("per_label_topics", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def scalar_row(self) -> dict:
        row = {"perplexity": self.perplexity, "accuracy": self.accuracy, "seed": self.seed,
               "wall_time": self.wall_time,
               "final_loss": self.loss_trace[-1] if self.loss_trace else None}
        row.update({k: v for k, v in self.extra.items() if np.isscalar(v) or v is None})
        return row

    def to_csv(self) -> str:
        row = self.scalar_row()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()
