import numpy as np
import pytest

from lintm.corpus import Corpus, Document, Vocabulary
from lintm.model import TrainConfig, init_lintm_params


def random_counts(rng, B, V, max_count=4):
    X = rng.integers(0, max_count + 1, size=(B, V)).astype(float)
    X[X.sum(axis=1) == 0, 0] = 1.0
    return X


def small_params(rng, V=20, K=2, L=2, H=5, scale=0.5):
    cfg = TrainConfig(num_topics=K, num_labels=L, hidden_enc=H, hidden_clf=H)
    params = init_lintm_params(V, cfg, rng)
    # perturb biases and beta so no gradient block is trivially zero
    for name in ("enc_b1", "enc_b_mu", "enc_b_logvar", "clf_b1", "clf_b2"):
        params[name] = rng.normal(0.0, scale, size=params[name].shape)
    params["beta"] = rng.normal(0.0, 1.0, size=params["beta"].shape)
    return params, cfg


def tiny_corpus(labels=(0, 1, 0, 1), V=4):
    vocab = Vocabulary(tuple(f"t{i}" for i in range(V)))
    docs = [Document(counts={i % V: 2, (i + 1) % V: 1}, label=lab, id=f"d{i}")
            for i, lab in enumerate(labels)]
    return Corpus(vocab, docs, num_labels=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_news_csv(path, n_docs, seed=0, n_classes=4, words_per_class=15, shared=20):
    """AG-News-shaped CSV (class index, title, description) with class-specific words."""
    import csv
    gen = np.random.default_rng(seed)
    topical = [[f"c{c}word{i}" for i in range(words_per_class)] for c in range(n_classes)]
    common = [f"common{i}" for i in range(shared)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for _ in range(n_docs):
            c = int(gen.integers(n_classes))
            words = [topical[c][gen.integers(words_per_class)] if gen.random() < 0.6
                     else common[gen.integers(shared)] for _ in range(int(gen.integers(8, 20)))]
            writer.writerow([c + 1, " ".join(words[:3]).title(), " ".join(words[3:]) + "."])
    return path


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
