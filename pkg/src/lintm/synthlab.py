"""Two-source synthetic corpora with ideal or uninformative (length-parity) labels.

Source D1 puts almost all of its mass on the first half of the vocabulary and
D2 on the second half. In ``ideal`` mode a document's label is its source; in
``worst_case`` mode it is the parity of the document length, which carries no
information about the words.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .corpus import Corpus, Document, Vocabulary
from .exceptions import ConfigError
from .ndmath import make_rng

LABEL_MODES = ("ideal", "worst_case")

# additive offset on the dominant half vs. multiplicative scale on the minor half
DOMINANT_OFFSET = 0.5
MINOR_SCALE = 0.01


@dataclass(frozen=True)
class SyntheticTrialParams:
    d1_weights: np.ndarray
    d2_weights: np.ndarray
    doc_length_dist: Tuple[int, int] = (20, 80)
    num_docs: int = 2500
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return len(self.d1_weights)

    @property
    def sources(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.d1_weights, self.d2_weights


def synthetic_vocab(V: int) -> Vocabulary:
    width = len(str(V - 1))
    return Vocabulary(tuple(f"w{i:0{width}d}" for i in range(V)))


def gen_trial_params(rng: np.random.Generator, V: int = 20, num_docs: int = 2500,
                     doc_length_dist: Tuple[int, int] = (20, 80),
                     seed: int = 0) -> SyntheticTrialParams:
    if V < 2 or V % 2:
        raise ConfigError(f"vocabulary size must be even and >= 2, got {V}", field="V")
    if num_docs < 1:
        raise ConfigError(f"must be positive, got {num_docs}", field="num_docs")
    lo, hi = doc_length_dist
    if not 1 <= lo <= hi:
        raise ConfigError(f"invalid length range {doc_length_dist}", field="doc_length_dist")
    half = V // 2
    d1 = np.concatenate([rng.uniform(size=half) + DOMINANT_OFFSET, rng.uniform(size=half) * MINOR_SCALE])
    d2 = np.concatenate([rng.uniform(size=half) * MINOR_SCALE, rng.uniform(size=half) + DOMINANT_OFFSET])
    return SyntheticTrialParams(d1 / d1.sum(), d2 / d2.sum(), (int(lo), int(hi)), int(num_docs), int(seed))


def make_trial(seed: int, V: int = 20, num_docs: int = 2500,
               doc_length_dist: Tuple[int, int] = (20, 80)) -> SyntheticTrialParams:
    """Trial parameters drawn from their own generator seeded with ``seed``."""
    return gen_trial_params(make_rng(seed), V=V, num_docs=num_docs,
                            doc_length_dist=doc_length_dist, seed=seed)


def _sample_documents(params: SyntheticTrialParams):
    rng = make_rng(params.seed)
    lo, hi = params.doc_length_dist
    sources = rng.integers(0, 2, size=params.num_docs)
    lengths = rng.integers(lo, hi + 1, size=params.num_docs)
    weights = params.sources
    counts = [rng.multinomial(n, weights[s]) for s, n in zip(sources, lengths)]
    return sources, lengths, counts


def gen_dataset(params: SyntheticTrialParams, label_mode: str = "ideal") -> Corpus:
    """Sample ``params.num_docs`` documents.

    The draws depend only on ``params``, so the ideal and worst-case corpora of a
    trial contain exactly the same documents and differ only in their labels.
    """
    if label_mode not in LABEL_MODES:
        raise ConfigError(f"unknown label mode {label_mode!r}", field="label_mode")
    sources, lengths, counts = _sample_documents(params)
    docs = []
    for i, (s, n, c) in enumerate(zip(sources, lengths, counts)):
        label = int(s) if label_mode == "ideal" else int(n % 2)
        nz = np.flatnonzero(c)
        docs.append(Document(counts={int(v): int(c[v]) for v in nz}, label=label, id=f"syn{i}"))
    return Corpus(synthetic_vocab(params.vocab_size), docs, num_labels=2)


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def exact_perplexity_lower_bound(params: SyntheticTrialParams) -> float:
    """exp of the mean source entropy (equal source weights)."""
    return float(np.exp(0.5 * (entropy(params.d1_weights) + entropy(params.d2_weights))))


def empirical_perplexity_lower_bound(params: SyntheticTrialParams, num_samples: int = 100_000,
                                     rng: Optional[np.random.Generator] = None) -> float:
    """Monte-Carlo perplexity of fresh tokens under the true, known source.

    Each sample picks a source uniformly, draws one word from it and scores it
    with that same source; the bound is ``exp`` of the mean negative log-probability.
    """
    if num_samples < 10_000:
        raise ConfigError(f"need at least 10^4 samples, got {num_samples}", field="num_samples")
    if rng is None:
        rng = make_rng(params.seed + 7919)
    weights = params.sources
    src = rng.integers(0, 2, size=num_samples)
    nll = 0.0
    for s in (0, 1):
        n_s = int((src == s).sum())
        if n_s == 0:
            continue
        p = weights[s]
        words = rng.choice(len(p), size=n_s, p=p)
        nll -= np.log(p[words]).sum()
    return float(np.exp(nll / num_samples))
