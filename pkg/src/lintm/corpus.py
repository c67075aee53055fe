"""Vocabulary, bag-of-words documents, dataset splits and AG-News-style ingestion."""
from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, DataError, DistributionError, IngestionError

logger = logging.getLogger(__name__)

_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> List[str]:
    """Lowercase, replace every non-alphanumeric run by a space, split."""
    return _NON_ALNUM.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class Vocabulary:
    terms: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if any(t == "" for t in terms):
            raise IngestionError("vocabulary contains an empty token")
        index = {t: i for i, t in enumerate(terms)}
        if len(index) != len(terms):
            raise IngestionError("vocabulary terms are not unique")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.terms)

    def __contains__(self, token):
        return token in self.index


@dataclass
class Document:
    counts: Dict[int, int]
    label: Optional[int] = None
    id: str = ""
    # ground truth kept for evaluation only; training code reads ``label``
    hidden_label: Optional[int] = None

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def true_label(self) -> Optional[int]:
        return self.label if self.label is not None else self.hidden_label


@dataclass
class Corpus:
    vocab: Vocabulary
    docs: List[Document]
    num_labels: int

    def __post_init__(self):
        V = len(self.vocab)
        for doc in self.docs:
            for label in (doc.label, doc.hidden_label):
                if label is not None and not 0 <= label < self.num_labels:
                    raise DataError(f"document {doc.id!r} has label {label} outside [0, {self.num_labels})")
            if doc.total < 1:
                raise DataError(f"document {doc.id!r} is empty")
            if any(not 0 <= v < V for v in doc.counts):
                raise DataError(f"document {doc.id!r} has a token index outside the vocabulary")

    def __len__(self):
        return len(self.docs)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def count_matrix(self) -> sp.csr_matrix:
        """Counts as a CSR matrix of shape [num_docs, V]."""
        rows, cols, vals = [], [], []
        for d, doc in enumerate(self.docs):
            for v, c in doc.counts.items():
                rows.append(d)
                cols.append(v)
                vals.append(c)
        return sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)),
                             shape=(len(self.docs), self.vocab_size))

    def labels(self) -> np.ndarray:
        """Visible labels, with -1 marking unlabeled documents."""
        return np.array([-1 if d.label is None else d.label for d in self.docs], dtype=np.int64)

    def true_labels(self) -> np.ndarray:
        return np.array([-1 if d.true_label() is None else d.true_label() for d in self.docs],
                        dtype=np.int64)

    @property
    def is_labeled(self) -> bool:
        return all(d.label is not None for d in self.docs)

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(self.vocab, [self.docs[i] for i in indices], self.num_labels)

    def hide_labels(self) -> "Corpus":
        docs = [replace(d, label=None, hidden_label=d.true_label()) for d in self.docs]
        return Corpus(self.vocab, docs, self.num_labels)

    def reveal_labels(self) -> "Corpus":
        docs = [replace(d, label=d.true_label(), hidden_label=None) for d in self.docs]
        return Corpus(self.vocab, docs, self.num_labels)

    def with_labels(self, labels: Sequence[Optional[int]]) -> "Corpus":
        docs = [replace(d, label=(None if y is None or y < 0 else int(y)), hidden_label=None)
                for d, y in zip(self.docs, labels)]
        return Corpus(self.vocab, docs, self.num_labels)

    # ------------------------------------------------------------ persistence

    def to_dict(self) -> dict:
        docs = []
        for d in self.docs:
            entry = {"id": d.id, "label": d.label,
                     "counts": {str(k): int(v) for k, v in sorted(d.counts.items())}}
            if d.hidden_label is not None:
                entry["hidden_label"] = d.hidden_label
            docs.append(entry)
        return {"vocab": list(self.vocab.terms), "num_labels": self.num_labels, "docs": docs}

    @classmethod
    def from_dict(cls, data: dict) -> "Corpus":
        try:
            vocab = Vocabulary(tuple(data["vocab"]))
            docs = [Document(counts={int(k): int(v) for k, v in d["counts"].items()},
                             label=d.get("label"), id=str(d.get("id", i)),
                             hidden_label=d.get("hidden_label"))
                    for i, d in enumerate(data["docs"])]
            return cls(vocab, docs, int(data["num_labels"]))
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"malformed corpus document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "Corpus":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise DataError(f"corpus file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"corpus file {path} is not valid JSON: {exc}") from exc


def build_vocab(raw_docs: Sequence[Sequence[str]], min_count: int = 1,
                max_vocab: Optional[int] = None) -> Vocabulary:
    """Frequency-thresholded vocabulary.

    Keeps tokens occurring at least ``min_count`` times in the whole corpus, then
    the ``max_vocab`` most frequent of those (ties broken lexicographically). The
    returned terms are ordered by that ranking.
    """
    if not raw_docs:
        raise IngestionError("cannot build a vocabulary from zero documents")
    freq = Counter(tok for doc in raw_docs for tok in doc if tok)
    kept = sorted(((t, c) for t, c in freq.items() if c >= min_count), key=lambda tc: (-tc[1], tc[0]))
    if max_vocab is not None:
        kept = kept[:max_vocab]
    if not kept:
        raise IngestionError(f"no token reaches min_count={min_count}")
    return Vocabulary(tuple(t for t, _ in kept))


def vectorize(tokens: Iterable[str], vocab: Vocabulary, label: Optional[int] = None,
              doc_id: str = "") -> Optional[Document]:
    """Bag-of-words for ``tokens``; out-of-vocabulary tokens are dropped.

    Returns ``None`` when nothing survives, which callers treat as "skip this document".
    """
    counts = Counter(vocab.index[t] for t in tokens if t in vocab.index)
    if not counts:
        return None
    return Document(counts=dict(sorted(counts.items())), label=label, id=doc_id)


def detokenize(doc: Document, vocab: Vocabulary) -> List[str]:
    return [vocab.terms[v] for v, c in sorted(doc.counts.items()) for _ in range(c)]


def normalize_bow(doc: Document, vocab_size: int) -> np.ndarray:
    total = doc.total
    if total < 1:
        raise DistributionError("cannot normalize a document with no tokens")
    x = np.zeros(vocab_size)
    for v, c in doc.counts.items():
        x[v] = c
    return x / total


def normalize_rows(counts) -> np.ndarray:
    """Row-normalise a dense or sparse count matrix into a dense float array."""
    X = counts.toarray() if sp.issparse(counts) else np.asarray(counts, dtype=np.float64)
    totals = X.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise DistributionError("document with zero tokens")
    return X / totals


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitSpec:
    labeled_frac: float
    unlabeled_frac: float
    test_frac: float
    seed: int = 0

    def validate(self):
        for name in ("labeled_frac", "unlabeled_frac", "test_frac"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"must lie in [0, 1], got {value}", field=name)
        if self.test_frac >= 1.0:
            raise ConfigError("must be < 1", field="test_frac")
        if self.labeled_frac + self.unlabeled_frac > 1.0 - self.test_frac + 1e-12:
            raise ConfigError("labeled_frac + unlabeled_frac exceeds 1 - test_frac", field="labeled_frac")


def _split_sizes(n: int, spec: SplitSpec) -> Tuple[int, int, int]:
    n_lab = int(round(spec.labeled_frac * n))
    n_test = int(round(spec.test_frac * n))
    n_unl = int(round(spec.unlabeled_frac * n))
    # rounding can overshoot by one document when fractions add to exactly 1
    n_unl = min(n_unl, n - n_lab - n_test)
    if n_lab + n_test > n or n_unl < 0:
        raise ConfigError(f"split sizes do not fit in {n} documents", field="labeled_frac")
    return n_lab, n_unl, n_test


def split_dataset(corpus: Corpus, spec: SplitSpec) -> Tuple[Corpus, Corpus, Corpus]:
    """Seeded disjoint (labeled, unlabeled, test) split.

    One permutation is drawn from ``spec.seed``; the labeled block comes first,
    the test block second and the unlabeled block last. Changing only
    ``unlabeled_frac`` therefore leaves the labeled and test subsets untouched and
    yields nested unlabeled subsets. Unlabeled documents keep their ground truth
    in ``hidden_label``.
    """
    spec.validate()
    n = len(corpus)
    n_lab, n_unl, n_test = _split_sizes(n, spec)
    perm = np.random.Generator(np.random.PCG64(spec.seed)).permutation(n)
    lab_idx = perm[:n_lab]
    test_idx = perm[n_lab:n_lab + n_test]
    unl_idx = perm[n_lab + n_test:n_lab + n_test + n_unl]
    labeled = corpus.subset(lab_idx)
    if not labeled.is_labeled:
        raise DataError("split_dataset requires a fully labeled corpus")
    return labeled, corpus.subset(unl_idx).hide_labels(), corpus.subset(test_idx)


# ---------------------------------------------------------------- AG News

@dataclass(frozen=True)
class AgNewsFields:
    label_column: int = 0
    text_columns: Tuple[int, ...] = (1, 2)
    label_base: int = 1
    num_labels: int = 4


def load_agnews_csv(path, field_config: AgNewsFields = AgNewsFields(),
                    errors: Optional[list] = None) -> List[Tuple[int, List[str]]]:
    """Parse an AG-News-style CSV into ``(label, tokens)`` rows.

    Malformed rows are skipped and logged; pass a list as ``errors`` to collect
    ``(line_number, message)`` pairs.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"AG News file not found: {path}")
    rows: List[Tuple[int, List[str]]] = []
    skipped = [] if errors is None else errors
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for record in reader:
            line = reader.line_num
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            try:
                if len(record) <= field_config.label_column:
                    raise IngestionError("missing label column")
                label = int(record[field_config.label_column]) - field_config.label_base
                if not 0 <= label < field_config.num_labels:
                    raise IngestionError(f"class index {record[field_config.label_column]} out of range")
                if len(record) <= min(field_config.text_columns):
                    raise IngestionError("missing text columns")
            except (ValueError, IngestionError) as exc:
                skipped.append((line, str(exc)))
                logger.warning("%s:%d: skipping malformed row (%s)", path, line, exc)
                continue
            text = " ".join(record[c] for c in field_config.text_columns if c < len(record))
            rows.append((label, tokenize(text)))
    logger.info("parsed %d rows from %s (%d skipped)", len(rows), path, len(skipped))
    return rows


def corpus_from_rows(rows: Sequence[Tuple[Optional[int], Sequence[str]]], num_labels: int,
                     vocab: Optional[Vocabulary] = None, min_count: int = 10,
                     max_vocab: Optional[int] = 5000, id_prefix: str = "doc") -> Tuple[Corpus, int]:
    """Vectorize token rows into a corpus; returns the corpus and how many rows were dropped."""
    if vocab is None:
        vocab = build_vocab([toks for _, toks in rows], min_count=min_count, max_vocab=max_vocab)
    docs, dropped = [], 0
    for i, (label, toks) in enumerate(rows):
        doc = vectorize(toks, vocab, label=label, doc_id=f"{id_prefix}{i}")
        if doc is None:
            dropped += 1
            continue
        docs.append(doc)
    if dropped:
        logger.info("dropped %d documents with no in-vocabulary tokens", dropped)
    if not docs:
        raise IngestionError("every document was empty after vectorization")
    return Corpus(vocab, docs, num_labels), dropped


def subsample_rows(rows: Sequence, n: Optional[int], seed: int) -> list:
    if n is None or n >= len(rows):
        return list(rows)
    idx = np.random.Generator(np.random.PCG64(seed)).permutation(len(rows))[:n]
    return [rows[i] for i in sorted(idx)]
