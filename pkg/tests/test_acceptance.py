"""Acceptance criteria, each run at its stated tolerance.

Every test prints one ``[PASS]``/``[FAIL]`` line (repeated in the terminal
summary) before asserting. Synthetic experiments use the package defaults
(2500 documents, 100 epochs) and trials 0..4, where trial ``t`` offsets the
trial, split and training seeds by ``t``.

Criterion 7 needs the AG News CSVs: set ``LINTM_AGNEWS_DIR`` to a directory
holding ``train.csv`` and ``test.csv``.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acceptance_log import record
from conftest import random_counts, small_params, write_news_csv
from gradcheck import TOL, lintm_instance, unsupervised_instance
from lintm import cli, evalkit
from lintm import experiments as ex
from lintm.checkpoint import checkpoint_dict, load_checkpoint
from lintm.corpus import Corpus, SplitSpec, split_dataset
from lintm.etm import (EtmModel, init_etm_params, init_ntm_params, NtmModel, train_etm,
                       train_ntm)
from lintm.model import (LintmModel, TrainConfig, classify, decode, encode, kl_diag_gaussian,
                         mix_topics, recon_loglik, reparam_theta, train)
from lintm.synthlab import gen_dataset, make_trial

pytestmark = pytest.mark.acceptance

TRIALS = 5
TOPIC_COUNTS = (2, 8, 20)


# ---------------------------------------------------------------- shared synthetic runs

class RunCache:
    """Trains each (variant, total_topics, trial) cell once for all criteria."""

    def __init__(self):
        self.results = {}

    def get(self, variant, total_topics, trial):
        key = (variant, total_topics, trial)
        if key not in self.results:
            cfg = ex.trial_config({"variant": variant, "total_topics": total_topics}, {}, trial)
            self.results[key] = ex.run_experiment(cfg)
        return self.results[key]

    def cells(self, variant, total_topics):
        return [self.get(variant, total_topics, t) for t in range(TRIALS)]

    @staticmethod
    def seconds(results):
        return sum(r.report.wall_time for r in results)


@pytest.fixture(scope="module")
def runs():
    return RunCache()


def _ppl(results):
    return np.array([r.report.perplexity for r in results])


# ---------------------------------------------------------------- 1

def gradient_instances():
    out = []
    for seed in range(3):
        for K in (1, 2):
            for L in (1, 2):
                for branch in ("unlabeled", "labeled", "total"):
                    out.append(lintm_instance(seed, K, L, branch))
    for branch in ("labeled", "total"):
        out.append(lintm_instance(7, 2, 2, branch, labeled_pi="classifier"))
    out.append(lintm_instance(8, 2, 2, "classifier"))
    for seed in range(3):
        out += [unsupervised_instance(seed, "etm"), unsupervised_instance(seed, "ntm")]
    return out


def test_c1_gradient_oracle():
    start = time.perf_counter()
    instances = gradient_instances()
    worst, worst_label, gaps = 0.0, "", []
    for inst in instances:
        gaps.append(inst.forward_gap())
        for name, err in inst.errors().items():
            if err > worst:
                worst, worst_label = err, f"{inst.label} {name}"
    elapsed = time.perf_counter() - start
    ok = len(instances) >= 20 and worst < TOL and elapsed < 60 and max(gaps) < 1e-12
    record("1 (gradient oracle)", ok,
           f"{len(instances)} instances, max relative error {worst:.2e} ({worst_label}), "
           f"tolerance {TOL:g}, {elapsed:.1f}s (limit 60s)")
    assert ok


# ---------------------------------------------------------------- 2

def test_c2_distribution_validity():
    start = time.perf_counter()
    failures = []

    @settings(max_examples=300, deadline=None, database=None)
    @given(seed=st.integers(0, 2**31 - 1), K=st.integers(1, 4), L=st.integers(1, 4),
           V=st.integers(2, 30), scale=st.floats(0.01, 8.0), spread=st.floats(0.0, 5.0))
    def check(seed, K, L, V, scale, spread):
        rng = np.random.default_rng(seed)
        params, cfg = small_params(rng, V=V, K=K, L=L, H=5, scale=scale)
        params["beta"] *= 1 + 4 * spread
        X = random_counts(rng, 6, V)
        Xn = X / X.sum(axis=1, keepdims=True)
        mu, lv = encode(Xn, params)
        _, theta = reparam_theta(mu, lv, spread * rng.normal(size=mu.shape))
        pi = classify(Xn, params)
        mixed = mix_topics(params["beta"], pi)
        w = decode(theta, mixed)
        model = LintmModel(params, cfg)
        etm_cfg = TrainConfig(num_topics=K, num_labels=1, hidden_enc=5, embed_dim=3)
        etm = EtmModel(init_etm_params(V, etm_cfg, rng), etm_cfg)
        for arr in (theta, pi, mixed.reshape(-1, V), w, model.word_distribution(X),
                    model.topic_matrix().reshape(-1, V), etm.word_distribution(X)):
            assert np.all(arr >= 0)
            np.testing.assert_allclose(arr.sum(axis=-1), 1.0, rtol=0, atol=1e-9)
        assert np.all(kl_diag_gaussian(mu, lv) >= 0)
        assert np.all(recon_loglik(X, w) <= 0)

    try:
        check()
    except AssertionError as exc:
        failures.append(str(exc).splitlines()[0])
    elapsed = time.perf_counter() - start
    ok = not failures
    record("2 (distribution validity)", ok,
           f"300 randomized instances: theta, pi, mixed topic rows and decoder outputs sum to 1 "
           f"within 1e-9, KL >= 0, recon_loglik <= 0; {elapsed:.1f}s"
           + (f"; first failure: {failures[0]}" if failures else ""))
    assert ok


# ---------------------------------------------------------------- 3

def test_c3_ideal_beats_etm(runs):
    ideal = runs.cells("ideal", 20)
    etm = runs.cells("etm", 20)
    p_ideal, p_etm = _ppl(ideal), _ppl(etm)
    bound = np.array([r.report.extra["lower_bound"] for r in ideal])
    ratio = p_ideal.mean() / bound.mean()
    seconds = runs.seconds(ideal + etm)
    ok = p_ideal.mean() < p_etm.mean() and ratio <= 1.30 and seconds < 600
    record("3 (ideal LI-NTM vs ETM, 20 topics, 5 trials)", ok,
           f"mean perplexity ideal {p_ideal.mean():.3f} vs ETM {p_etm.mean():.3f}; "
           f"mean lower bound {bound.mean():.3f}, ideal/bound {ratio:.3f} (limit 1.30); "
           f"{seconds:.0f}s (limit 600s)")
    assert ok


# ---------------------------------------------------------------- 4

def test_c4_worst_case_v2(runs):
    v2 = runs.cells("wc_v2", 20)
    wc_acc = np.array([r.report.accuracy for r in v2])
    ideal_aligned = np.array([r.report.extra["aligned_accuracy_ideal"] for r in v2])
    ideal_raw = np.array([r.report.extra["accuracy_ideal"] for r in v2])
    seconds = runs.seconds(v2)
    # with rho = 0 nothing ties classifier index 0 to source 0, so agreement with the
    # ideal labels is scored under the better of the two index assignments
    ok = ideal_aligned.mean() >= 0.70 and 0.45 <= wc_acc.mean() <= 0.55 and seconds < 600
    record("4 (worst-case V2, rho=0, 20 topics, 5 trials)", ok,
           f"accuracy on ideal labels {ideal_aligned.mean():.3f} +/- {ideal_aligned.std(ddof=1):.3f} "
           f"(label-aligned; raw index agreement {ideal_raw.mean():.3f}), limit >= 0.70; "
           f"accuracy on worst-case labels {wc_acc.mean():.3f} +/- {wc_acc.std(ddof=1):.3f}, "
           f"band [0.45, 0.55]; {seconds:.0f}s (limit 600s)")
    assert ok


# ---------------------------------------------------------------- 5

def test_c5_worst_case_v1(runs):
    gaps = np.zeros((TRIALS, len(TOPIC_COUNTS)))
    for j, K in enumerate(TOPIC_COUNTS):
        gaps[:, j] = _ppl(runs.cells("wc_v1", K)) / _ppl(runs.cells("ideal", K)) - 1.0
    mean_gap_2 = float(np.mean(_ppl(runs.cells("wc_v1", 2))) / np.mean(_ppl(runs.cells("ideal", 2))) - 1)
    monotone = int(np.sum(np.all(np.diff(gaps, axis=1) < 0, axis=1)))
    ok = mean_gap_2 >= 0.30 and monotone >= 4
    per_trial = "; ".join("/".join(f"{g:+.1%}" for g in row) for row in gaps)
    record("5 (worst-case V1 degradation)", ok,
           f"mean gap at 2 topics {mean_gap_2:+.1%} (limit >= +30%); gap shrinks monotonically "
           f"over 2/8/20 topics in {monotone}/5 trials (limit 4); per-trial gaps {per_trial}")
    assert ok


# ---------------------------------------------------------------- 6

def test_c6_label_indexing_structure(runs):
    worst = {0: 1.0, 1: 1.0}
    n_models = 0
    for K in TOPIC_COUNTS:
        for res in runs.cells("ideal", K):
            mass = evalkit.label_half_mass(res.model)  # [L, K] mass on the first V/2 words
            worst[0] = min(worst[0], float(mass[0].min()))
            worst[1] = min(worst[1], float((1.0 - mass[1]).min()))
            n_models += 1
    ok = worst[0] >= 0.70 and worst[1] >= 0.70
    record("6 (label-indexing structure)", ok,
           f"{n_models} ideal models; least first-half mass of a label-0 topic {worst[0]:.3f}, "
           f"least second-half mass of a label-1 topic {worst[1]:.3f} (limit 0.70)")
    assert ok


# ---------------------------------------------------------------- examples on the same runs

def test_ideal_two_topics_below_twelve(runs):
    ppl = _ppl(runs.cells("ideal", 2))
    assert np.all(ppl < 12.0), ppl


def test_ideal_within_bound_band(runs):
    for res in runs.cells("ideal", 20):
        bound = res.report.extra["lower_bound"]
        assert bound <= res.report.perplexity <= bound + 2.5, (res.report.perplexity, bound)


def test_etm_close_to_bound(runs):
    # ETM is judged relative to the trial's own bound: absolute values move with the trial
    for res in runs.cells("etm", 20):
        bound = res.report.extra["lower_bound"]
        assert bound <= res.report.perplexity <= bound + 2.5, (res.report.perplexity, bound)


def test_label_zero_top_words_first_half(runs):
    for res in runs.cells("ideal", 20):
        half = {f"w{i:02d}" for i in range(10)}
        for label, _, words in res.report.per_label_topics:
            in_first = sum(w in half for w, _ in words)
            assert (in_first if label == 0 else 10 - in_first) >= 8, (label, words)


# ---------------------------------------------------------------- 7

def trend_within_noise(ppl, tol=0.02):
    """Non-increasing except for at most one step up of at most ``tol`` (relative)."""
    ups = [b / a - 1.0 for a, b in zip(ppl, ppl[1:]) if b > a]
    return len(ups) == 0 or (len(ups) == 1 and ups[0] <= tol)


def semi_supervised_check(result):
    rows = sorted(result.runs, key=lambda r: r["unlabeled_frac"])
    ppl = [r["perplexity"] for r in rows]
    acc95 = rows[-1]["accuracy"]
    base = rows[-1]["baseline_accuracy"]
    failed = [r["error"] for r in rows if r["status"] != "ok"]
    ok = not failed and trend_within_noise(ppl) and acc95 >= base
    return ok, rows, ppl, acc95, base, failed


def _agnews_dir():
    d = os.environ.get("LINTM_AGNEWS_DIR")
    if not d:
        return None
    d = Path(d)
    return d if (d / "train.csv").exists() and (d / "test.csv").exists() else None


def test_c7_semi_supervised_trend():
    d = _agnews_dir()
    if d is None:
        record("7 (semi-supervised trend, AG News desk scale)", False,
               "AG News CSVs unavailable: set LINTM_AGNEWS_DIR to a directory with train.csv "
               "and test.csv (the pipeline itself is exercised by the surrogate test below)")
        pytest.fail("AG News data not available")
    start = time.perf_counter()
    result = ex.run_preset("news-regimes", {"agnews_train": str(d / "train.csv"),
                                      "agnews_test": str(d / "test.csv")})
    elapsed = time.perf_counter() - start
    ok, rows, ppl, acc95, base, failed = semi_supervised_check(result)
    ok = ok and elapsed < 45 * 60
    record("7 (semi-supervised trend, AG News desk scale)", ok,
           "perplexity at 5/15/55/95% unlabeled " + "/".join(f"{p:.1f}" for p in ppl)
           + f" (one inversion <= 2% allowed); accuracy at 95% {acc95:.4f} vs baseline {base:.4f}; "
           f"{elapsed / 60:.1f} min (limit 45)" + (f"; failures {failed}" if failed else ""))
    assert ok


def test_c7_trend_rule():
    assert trend_within_noise([10.0, 9.5, 9.0, 8.0])
    assert trend_within_noise([10.0, 10.15, 9.0, 8.0])
    assert not trend_within_noise([10.0, 10.3, 9.0, 8.0])
    assert not trend_within_noise([10.0, 10.1, 9.0, 9.1])


def test_c7_surrogate_pipeline(tmp_path):
    """The criterion-7 harness end to end on a small AG-News-shaped corpus."""
    write_news_csv(tmp_path / "train.csv", 2000, seed=0)
    write_news_csv(tmp_path / "test.csv", 300, seed=1)
    result = ex.run_preset("news-regimes", {"agnews_train": str(tmp_path / "train.csv"),
                                      "agnews_test": str(tmp_path / "test.csv"), "train_docs": 2000,
                                      "test_docs": 300, "min_count": 1, "epochs": 15,
                                      "total_topics": 8})
    ok, rows, ppl, acc95, base, failed = semi_supervised_check(result)
    assert not failed
    assert [r["unlabeled_frac"] for r in rows] == [0.05, 0.15, 0.55, 0.95]
    assert len({r["baseline_accuracy"] for r in rows}) == 1
    assert all(np.isfinite(ppl)) and 0 <= acc95 <= 1


# ---------------------------------------------------------------- 8

@pytest.fixture(scope="module")
def synth_corpus():
    return gen_dataset(make_trial(0, num_docs=600))


def test_c8a_single_label_reduction(synth_corpus):
    one_label = synth_corpus.with_labels([0] * len(synth_corpus))
    one_label = Corpus(one_label.vocab, one_label.docs, 1)
    cfg = TrainConfig(num_topics=4, num_labels=1, rho=0.0, epochs=10, seed=11)
    checks = {}
    _, unl, _ = split_dataset(one_label, SplitSpec(0.0, 1.0, 0.0, seed=0))
    lintm_params, lintm_trace = train(None, unl, cfg)
    ntm_params, ntm_trace = train_ntm(unl, cfg)
    checks["unlabeled pool"] = (lintm_trace == ntm_trace
                                and lintm_params["beta"][0].tobytes() == ntm_params["beta"].tobytes())
    lab, _, _ = split_dataset(one_label, SplitSpec(1.0, 0.0, 0.0, seed=0))
    lintm_params, lintm_trace = train(lab, None, cfg)
    ntm_params, ntm_trace = train_ntm(lab, cfg)
    checks["labeled pool"] = (lintm_trace == ntm_trace
                              and lintm_params["beta"][0].tobytes() == ntm_params["beta"].tobytes())
    ok = all(checks.values())
    record("8a (L=1, rho=0 LI-NTM == classifier-free NTM)", ok,
           ", ".join(f"{k}: {'bit-identical' if v else 'differs'}" for k, v in checks.items())
           + f" over {cfg.epochs} epochs of loss trace and final topics")
    assert ok


def test_c8b_identity_embedding_reduction(synth_corpus):
    V = synth_corpus.vocab_size
    # one batch per epoch makes every trace entry a single optimizer step
    cfg = TrainConfig(num_topics=3, num_labels=1, embed_dim=V, epochs=40,
                      batch_size=len(synth_corpus), seed=5)
    etm_init = init_etm_params(V, cfg, np.random.default_rng(21))
    etm_init["rho_embed"] = np.eye(V)
    ntm_init = {k: v.copy() for k, v in etm_init.items() if k.startswith("enc_")}
    ntm_init["beta"] = etm_init["alpha_topics"].T.copy()
    etm_params, etm_trace = train_etm(synth_corpus, cfg, init_params=etm_init, freeze=("rho_embed",))
    ntm_params, ntm_trace = train_ntm(synth_corpus, cfg, init_params=ntm_init)
    step_gap = float(np.max(np.abs(np.array(etm_trace) - np.array(ntm_trace))))
    param_gap = float(np.max(np.abs(etm_params["alpha_topics"].T - ntm_params["beta"])))
    ok = step_gap <= 1e-10 and param_gap <= 1e-10
    record("8b (identity-embedding ETM == NTM)", ok,
           f"max per-step loss difference {step_gap:.1e}, max topic-logit difference "
           f"{param_gap:.1e} over {cfg.epochs} steps (limit 1e-10)")
    assert ok


# ---------------------------------------------------------------- 9

def test_c9_determinism_and_persistence(tmp_path, capsys):
    settings_ = ["--set", "num_docs=500", "--set", "epochs=10", "--set", "lower_bound_samples=10000"]
    details, ok = [], True
    for model in ("lintm", "etm"):
        out = tmp_path / model
        assert cli.main(["train", *settings_, "--model", model, "--out", str(out)]) == 0
        trained = json.loads((out / "report.json").read_text())
        capsys.readouterr()
        assert cli.main(["eval", "--run", str(out)]) == 0
        evaluated = json.loads(capsys.readouterr().out)
        same = all(evaluated.get(k) == trained.get(k) for k in ("perplexity", "accuracy"))
        text = (out / "checkpoint.json").read_text()
        reloaded = load_checkpoint(out / "checkpoint.json")
        lossless = json.dumps(checkpoint_dict(reloaded, reloaded.vocab_terms)) == text
        raw = json.loads(text)["params"]
        raw = raw["etm"] if model == "etm" else raw
        lossless = lossless and all(
            np.array(raw[n]["values"]).tobytes() == reloaded.params[n].ravel().tobytes() for n in raw)
        again = tmp_path / f"{model}_again"
        cli.main(["train", *settings_, "--model", model, "--out", str(again)])
        rerun = json.loads((again / "report.json").read_text())
        repeat = rerun["perplexity"] == trained["perplexity"] and rerun["loss_trace"] == trained["loss_trace"]
        ok = ok and same and lossless and repeat
        details.append(f"{model}: eval {'identical' if same else 'DIFFERS'} "
                       f"(perplexity {trained['perplexity']!r}), checkpoint "
                       f"{'lossless' if lossless else 'LOSSY'}, retrain {'identical' if repeat else 'DIFFERS'}")
    record("9 (determinism and persistence)", ok, "; ".join(details))
    assert ok
