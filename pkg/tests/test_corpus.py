import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lintm.corpus import (AgNewsFields, Corpus, Document, SplitSpec, Vocabulary, build_vocab,
                          corpus_from_rows, detokenize, load_agnews_csv, normalize_bow,
                          normalize_rows, split_dataset, subsample_rows, tokenize, vectorize)
from lintm.exceptions import ConfigError, DataError, DistributionError, IngestionError
from lintm.synthlab import gen_dataset, make_trial

from conftest import tiny_corpus

DOCS = [["a", "b", "a"], ["b", "c"]]


class TestVocabulary:
    def test_min_count(self):
        assert build_vocab(DOCS, min_count=2).terms == ("a", "b")

    def test_max_vocab_ties(self):
        assert build_vocab(DOCS, min_count=1, max_vocab=2).terms == ("a", "b")

    def test_deterministic(self):
        assert build_vocab(DOCS) == build_vocab(DOCS)

    def test_lexicographic_ties(self):
        assert build_vocab([["z", "y", "x"]]).terms == ("x", "y", "z")

    def test_empty_result(self):
        with pytest.raises(IngestionError):
            build_vocab(DOCS, min_count=5)
        with pytest.raises(IngestionError):
            build_vocab([])

    def test_bijection(self):
        vocab = build_vocab(DOCS)
        assert [vocab.index[t] for t in vocab.terms] == list(range(len(vocab)))

    @pytest.mark.parametrize("terms", [("a", "a"), ("a", "")])
    def test_invalid_terms(self, terms):
        with pytest.raises(DataError):
            Vocabulary(terms)


class TestVectorize:
    vocab = Vocabulary(("a", "b"))

    def test_counts(self):
        assert vectorize(["a", "a", "b"], self.vocab).counts == {0: 2, 1: 1}

    def test_all_oov_skips(self):
        assert vectorize(["z"], self.vocab) is None

    def test_agnews_line_recount(self):
        vocab = Vocabulary(("wall", "stocks", "rally", "oil"))
        tokens = tokenize("Wall St. Stocks rally; stocks close higher")
        doc = vectorize(tokens, vocab)
        # independent recount: in-vocab tokens of the tokenised line
        expected = sum(1 for t in tokens if t in ("wall", "stocks", "rally", "oil"))
        assert doc.total == expected == 4

    @settings(max_examples=50, deadline=None)
    @given(st.dictionaries(st.integers(0, 19), st.integers(1, 6), min_size=1))
    def test_detokenize_roundtrip(self, counts):
        vocab = Vocabulary(tuple(f"w{i:02d}" for i in range(20)))
        doc = Document(counts=counts)
        assert vectorize(detokenize(doc, vocab), vocab).counts == counts

    def test_synthetic_roundtrip(self):
        corpus = gen_dataset(make_trial(0, num_docs=50))
        for doc in corpus.docs:
            assert vectorize(detokenize(doc, corpus.vocab), corpus.vocab).counts == doc.counts


class TestNormalize:
    def test_values(self):
        np.testing.assert_allclose(normalize_bow(Document({0: 2, 1: 1}), 3), [2 / 3, 1 / 3, 0])

    def test_single_token(self):
        np.testing.assert_array_equal(normalize_bow(Document({2: 1}), 4), [0, 0, 1, 0])

    def test_empty(self):
        with pytest.raises(DistributionError):
            normalize_bow(Document({}), 3)
        with pytest.raises(DistributionError):
            normalize_rows(np.zeros((1, 3)))

    @settings(max_examples=100, deadline=None)
    @given(st.dictionaries(st.integers(0, 9), st.integers(1, 100), min_size=1))
    def test_sums_to_one(self, counts):
        assert abs(normalize_bow(Document(counts), 10).sum() - 1.0) <= 1e-12


class TestCorpus:
    def test_validation(self):
        vocab = Vocabulary(("a", "b"))
        with pytest.raises(DataError):
            Corpus(vocab, [Document({5: 1})], 2)
        with pytest.raises(DataError):
            Corpus(vocab, [Document({0: 1}, label=2)], 2)
        with pytest.raises(DataError):
            Corpus(vocab, [Document({})], 2)

    def test_count_matrix_and_labels(self):
        c = tiny_corpus()
        assert c.count_matrix().shape == (4, 4)
        assert c.count_matrix().sum() == 12
        assert c.labels().tolist() == [0, 1, 0, 1]
        hidden = c.hide_labels()
        assert hidden.labels().tolist() == [-1] * 4
        assert hidden.true_labels().tolist() == [0, 1, 0, 1]
        assert hidden.reveal_labels().labels().tolist() == [0, 1, 0, 1]

    def test_json_roundtrip(self, tmp_path):
        c = tiny_corpus().hide_labels()
        c.save(tmp_path / "c.json")
        back = Corpus.load(tmp_path / "c.json")
        assert back == c
        data = json.loads((tmp_path / "c.json").read_text())
        assert set(data) == {"vocab", "num_labels", "docs"}

    def test_load_errors(self, tmp_path):
        with pytest.raises(DataError):
            Corpus.load(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(DataError):
            Corpus.load(tmp_path / "bad.json")
        (tmp_path / "shape.json").write_text('{"vocab": ["a"]}')
        with pytest.raises(DataError):
            Corpus.load(tmp_path / "shape.json")


def _corpus(n):
    vocab = Vocabulary(("a", "b"))
    return Corpus(vocab, [Document({0: 1 + i % 3}, label=i % 2, id=str(i)) for i in range(n)], 2)


class TestSplit:
    def test_sizes_disjoint(self):
        lab, unl, test = split_dataset(_corpus(100), SplitSpec(0.05, 0.15, 0.20, seed=1))
        assert (len(lab), len(unl), len(test)) == (5, 15, 20)
        ids = [set(d.id for d in c.docs) for c in (lab, unl, test)]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])

    def test_labeled_fixed_across_regimes(self):
        corpus = _corpus(200)
        a = split_dataset(corpus, SplitSpec(0.05, 0.05, 0.1, seed=3))
        b = split_dataset(corpus, SplitSpec(0.05, 0.85, 0.1, seed=3))
        assert [d.id for d in a[0].docs] == [d.id for d in b[0].docs]
        assert [d.id for d in a[2].docs] == [d.id for d in b[2].docs]

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 0.4), st.floats(0.0, 0.4), st.integers(0, 1000))
    def test_nested_unlabeled(self, f1, f2, seed):
        corpus = _corpus(120)
        lo, hi = sorted((f1, f2))
        small = split_dataset(corpus, SplitSpec(0.1, lo, 0.2, seed=seed))[1]
        big = split_dataset(corpus, SplitSpec(0.1, hi, 0.2, seed=seed))[1]
        assert {d.id for d in small.docs} <= {d.id for d in big.docs}

    def test_unsupervised_regime(self):
        lab, unl, test = split_dataset(_corpus(50), SplitSpec(0.0, 0.8, 0.2))
        assert len(lab) == 0 and len(unl) == 40 and len(test) == 10

    def test_hidden_labels_kept(self):
        _, unl, _ = split_dataset(_corpus(40), SplitSpec(0.25, 0.5, 0.25))
        assert np.all(unl.labels() == -1)
        assert np.all(unl.true_labels() >= 0)

    @pytest.mark.parametrize("spec", [SplitSpec(0.6, 0.5, 0.1), SplitSpec(-0.1, 0.5, 0.1),
                                      SplitSpec(0.1, 0.1, 1.0)])
    def test_infeasible(self, spec):
        with pytest.raises(ConfigError):
            split_dataset(_corpus(10), spec)

    def test_requires_labels(self):
        with pytest.raises(DataError):
            split_dataset(_corpus(10).hide_labels(), SplitSpec(0.5, 0.0, 0.2))


class TestAgNews:
    def _write(self, tmp_path, text):
        path = tmp_path / "news.csv"
        path.write_text(text)
        return path

    def test_row(self, tmp_path):
        rows = load_agnews_csv(self._write(tmp_path, '"3","Wall St.","Stocks rally"\n'))
        assert rows == [(2, ["wall", "st", "stocks", "rally"])]

    def test_empty_description(self, tmp_path):
        assert load_agnews_csv(self._write(tmp_path, '"1","Title only",""\n')) == [(0, ["title", "only"])]

    def test_malformed_rows_skipped(self, tmp_path):
        path = self._write(tmp_path, '"1","ok","x"\n"9","bad class","y"\n"abc","bad","z"\n"2"\n"4","fine","w"\n')
        errors = []
        rows = load_agnews_csv(path, errors=errors)
        assert [r[0] for r in rows] == [0, 3]
        assert [line for line, _ in errors] == [2, 3, 4]

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_agnews_csv(tmp_path / "nope.csv")

    def test_custom_fields(self, tmp_path):
        path = self._write(tmp_path, "hello world,0\n")
        rows = load_agnews_csv(path, AgNewsFields(label_column=1, text_columns=(0,), label_base=0))
        assert rows == [(0, ["hello", "world"])]

    def test_corpus_from_rows(self):
        rows = [(0, ["a", "b"]), (1, ["zzz"]), (1, ["a", "a"])]
        corpus, dropped = corpus_from_rows(rows, 2, vocab=Vocabulary(("a", "b")))
        assert dropped == 1 and len(corpus) == 2
        with pytest.raises(IngestionError):
            corpus_from_rows([(0, ["q"])], 2, vocab=Vocabulary(("a",)))

    def test_subsample(self):
        rows = list(range(100))
        sub = subsample_rows(rows, 10, seed=0)
        assert len(sub) == 10 and sub == sorted(sub) and sub == subsample_rows(rows, 10, seed=0)
        assert subsample_rows(rows, None, seed=0) == rows
