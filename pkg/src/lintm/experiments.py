"""Config-driven experiments: data loading, training, evaluation and sweeps.

An experiment is described by one flat dict (see :data:`DEFAULTS`). Every
training hyperparameter of :class:`~lintm.model.TrainConfig` is a top-level key,
next to the data source, the split and a few convenience keys:

``variant``
    Shorthand for a named model setting (:data:`VARIANTS`). Applied after the
    user's keys, so the named setting always wins.
``source``
    Where documents come from. Some sources adjust the defaults
    (:data:`SOURCE_DEFAULTS`) before the user's keys are applied.
``total_topics``
    Topic budget across all labels. LI-NTM gets ``total_topics // num_labels``
    topics per label; ETM gets all of them.

Randomness comes from ``split_seed`` (subsampling and splitting) and ``seed``
(initialisation, shuffling, noise). Synthetic corpora are additionally
parameterised by ``trial_seed``, which is part of the data description.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import evalkit
from .checkpoint import save_checkpoint
from .corpus import (AgNewsFields, Corpus, SplitSpec, corpus_from_rows, load_agnews_csv,
                     split_dataset, subsample_rows)
from .etm import EtmModel, train_etm
from .exceptions import ConfigError, DataError
from .model import LintmModel, TrainConfig, as_pool, init_lintm_params, pretrain_classifier, train
from .ndmath import rng_streams
from .synthlab import empirical_perplexity_lower_bound, gen_dataset, make_trial

logger = logging.getLogger(__name__)

MODELS = ("lintm", "etm")
SOURCES = ("synthetic", "corpus", "agnews")
TRAIN_FIELDS = tuple(f.name for f in fields(TrainConfig))

DEFAULTS: Dict[str, object] = {
    "model": "lintm",
    "variant": None,
    "source": "synthetic",
    # corpus JSON source
    "corpus_path": None,
    "test_corpus_path": None,
    # AG News CSV source
    "agnews_train": None,
    "agnews_test": None,
    "train_docs": 20000,
    "test_docs": 2000,
    "max_vocab": 5000,
    "min_count": 10,
    # synthetic source
    "trial_seed": 0,
    "num_docs": 2500,
    "synth_vocab": 20,
    "doc_len_min": 20,
    "doc_len_max": 80,
    "label_mode": "ideal",
    "lower_bound_samples": 100_000,
    # split
    "labeled_frac": 0.8,
    "unlabeled_frac": 0.0,
    "test_frac": 0.2,
    "split_seed": 0,
    # model size
    "total_topics": None,
    # outputs
    "output_dir": None,
    "top_n": 10,
    "report_formats": ["json", "csv"],
}
DEFAULTS.update({k: v for k, v in TrainConfig().to_dict().items()})
DEFAULTS["num_labels"] = None  # taken from the data unless set

VARIANTS: Dict[str, dict] = {
    "etm": {"model": "etm"},
    "ideal": {"model": "lintm", "label_mode": "ideal"},
    "wc_v1": {"model": "lintm", "label_mode": "worst_case"},
    # no cross-entropy anywhere: rho = 0 and no classifier pretraining, and the
    # classifier (not the uninformative label) mixes the topics of labeled documents
    "wc_v2": {"model": "lintm", "label_mode": "worst_case", "rho": 0.0,
              "labeled_pi": "classifier", "pretrain_epochs": 0},
}

# network sizes for the larger AG News vocabulary; user keys still win
SOURCE_DEFAULTS: Dict[str, dict] = {
    "agnews": {"hidden_enc": 100, "hidden_clf": 100, "embed_dim": 128},
}

REPORT_FORMATS = ("json", "csv")


# ---------------------------------------------------------------- configuration

def resolve_config(user: Optional[dict] = None) -> dict:
    """Merge ``user`` over the defaults, apply ``variant`` and validate.

    The result is the complete, self-describing experiment config embedded in
    every report.
    """
    user = dict(user or {})
    unknown = sorted(set(user) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown}", field=unknown[0])
    cfg = dict(DEFAULTS)
    cfg.update(SOURCE_DEFAULTS.get(user.get("source", DEFAULTS["source"]), {}))
    cfg.update(user)
    variant = cfg["variant"]
    if variant is not None:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}",
                              field="variant")
        cfg.update(VARIANTS[variant])
    if cfg["model"] not in MODELS:
        raise ConfigError(f"must be one of {MODELS}", field="model")
    if cfg["source"] not in SOURCES:
        raise ConfigError(f"must be one of {SOURCES}", field="source")
    if cfg["source"] == "synthetic":
        if cfg["label_mode"] not in ("ideal", "worst_case"):
            raise ConfigError("must be 'ideal' or 'worst_case'", field="label_mode")
        if not isinstance(cfg["num_docs"], int) or cfg["num_docs"] < 1:
            raise ConfigError(f"must be a positive integer, got {cfg['num_docs']!r}", field="num_docs")
        _fix_labels(cfg, 2)
    elif cfg["source"] == "agnews":
        _fix_labels(cfg, AgNewsFields().num_labels)
    bad = [f for f in cfg["report_formats"] if f not in REPORT_FORMATS]
    if bad:
        raise ConfigError(f"unsupported format(s) {bad}", field="report_formats")
    split_spec(cfg).validate()
    if cfg["total_topics"] is not None:
        _apply_total_topics(cfg)
    if cfg["num_labels"] is not None:
        train_config(cfg)  # validates every training field
    return cfg


def _fix_labels(cfg: dict, n: int) -> None:
    if cfg["num_labels"] is None:
        cfg["num_labels"] = n
    elif cfg["num_labels"] != n:
        raise ConfigError(f"the {cfg['source']} source has {n} labels, got {cfg['num_labels']}",
                          field="num_labels")


def _apply_total_topics(cfg: dict) -> None:
    total = cfg["total_topics"]
    if not isinstance(total, int) or total < 1:
        raise ConfigError(f"must be a positive integer, got {total!r}", field="total_topics")
    if cfg["model"] == "etm":
        cfg["num_topics"] = total
        return
    if cfg["num_labels"] is None:
        return  # resolved once the data fixes num_labels
    if total % cfg["num_labels"]:
        raise ConfigError(f"{total} topics cannot be split evenly over {cfg['num_labels']} labels",
                          field="total_topics")
    cfg["num_topics"] = total // cfg["num_labels"]


def split_spec(cfg: dict) -> SplitSpec:
    return SplitSpec(cfg["labeled_frac"], cfg["unlabeled_frac"], cfg["test_frac"], cfg["split_seed"])


def train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(**{k: cfg[k] for k in TRAIN_FIELDS})
    return tc.validate()


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", field="config") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}", field="config") from exc
    if not isinstance(data, dict):
        raise ConfigError("the config file must hold a JSON object", field="config")
    return data


# ---------------------------------------------------------------- data

@dataclass
class DataBundle:
    labeled: Corpus
    unlabeled: Corpus
    test: Corpus
    info: dict = field(default_factory=dict)
    # labels to score the classifier against besides the visible test labels
    reference_labels: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def vocab(self):
        return self.test.vocab

    def training_corpus(self) -> Corpus:
        return Corpus(self.vocab, self.labeled.docs + self.unlabeled.docs, self.test.num_labels)


def _require_path(cfg: dict, key: str) -> Path:
    if not cfg[key]:
        raise ConfigError(f"required for source={cfg['source']!r}", field=key)
    path = Path(cfg[key])
    if not path.exists():
        raise ConfigError(f"file not found: {path}", field=key)
    return path


def _split_with_external_test(cfg: dict, corpus: Corpus, test: Optional[Corpus]):
    labeled, unlabeled, inner_test = split_dataset(corpus, split_spec(cfg))
    if test is None:
        if not len(inner_test):
            raise ConfigError("no test documents: raise test_frac or give a separate test set",
                              field="test_frac")
        return labeled, unlabeled, inner_test
    if cfg["test_frac"] > 0:
        raise ConfigError("must be 0 when a separate test set is given", field="test_frac")
    return labeled, unlabeled, test


def load_data(cfg: dict) -> DataBundle:
    source = cfg["source"]
    if source == "synthetic":
        params = make_trial(cfg["trial_seed"], V=cfg["synth_vocab"], num_docs=cfg["num_docs"],
                            doc_length_dist=(cfg["doc_len_min"], cfg["doc_len_max"]))
        corpus = gen_dataset(params, cfg["label_mode"])
        labeled, unlabeled, test = split_dataset(corpus, split_spec(cfg))
        bundle = DataBundle(labeled, unlabeled, test)
        bundle.info["lower_bound"] = empirical_perplexity_lower_bound(
            params, num_samples=cfg["lower_bound_samples"])
        if cfg["label_mode"] == "worst_case":
            # same documents, same split: the ideal corpus supplies the source labels
            _, _, ideal_test = split_dataset(gen_dataset(params, "ideal"), split_spec(cfg))
            bundle.reference_labels["ideal"] = ideal_test.labels()
    elif source == "corpus":
        corpus = Corpus.load(_require_path(cfg, "corpus_path"))
        test = None
        if cfg["test_corpus_path"]:
            test = Corpus.load(_require_path(cfg, "test_corpus_path"))
            if test.vocab != corpus.vocab:
                raise DataError("the test corpus uses a different vocabulary")
        bundle = DataBundle(*_split_with_external_test(cfg, corpus, test))
    else:
        fields_ = AgNewsFields()
        train_rows = load_agnews_csv(_require_path(cfg, "agnews_train"), fields_)
        train_rows = subsample_rows(train_rows, cfg["train_docs"], cfg["split_seed"])
        corpus, dropped = corpus_from_rows(train_rows, fields_.num_labels, min_count=cfg["min_count"],
                                           max_vocab=cfg["max_vocab"], id_prefix="train")
        test = None
        if cfg["agnews_test"]:
            test_rows = load_agnews_csv(_require_path(cfg, "agnews_test"), fields_)
            test_rows = subsample_rows(test_rows, cfg["test_docs"], cfg["split_seed"])
            test, _ = corpus_from_rows(test_rows, fields_.num_labels, vocab=corpus.vocab,
                                       id_prefix="test")
        bundle = DataBundle(*_split_with_external_test(cfg, corpus, test))
        bundle.info["dropped_docs"] = dropped
    if cfg["num_labels"] is None:
        cfg["num_labels"] = bundle.test.num_labels
        if cfg["total_topics"] is not None:
            _apply_total_topics(cfg)
        train_config(cfg)
    elif cfg["num_labels"] != bundle.test.num_labels:
        raise ConfigError(f"the corpus has {bundle.test.num_labels} labels, got {cfg['num_labels']}",
                          field="num_labels")
    bundle.info.update(n_labeled=len(bundle.labeled), n_unlabeled=len(bundle.unlabeled),
                       n_test=len(bundle.test), vocab_size=len(bundle.vocab))
    return bundle


# ---------------------------------------------------------------- runs

@dataclass
class ExperimentResult:
    config: dict
    report: evalkit.MetricsReport
    model: object
    data: DataBundle


def fit_model(cfg: dict, data: DataBundle):
    """Train the configured model; returns ``(model, loss_trace)``."""
    tc = train_config(cfg)
    if cfg["model"] == "etm":
        params, trace = train_etm(data.training_corpus(), tc)
        return EtmModel(params, tc), trace
    params, trace = train(data.labeled, data.unlabeled, tc)
    return LintmModel(params, tc), trace


def evaluate(model, data: DataBundle, cfg: dict, loss_trace: Sequence[float] = (),
             wall_time: float = 0.0) -> evalkit.MetricsReport:
    """Test-set metrics for a trained model, with ``cfg`` embedded."""
    extra = dict(data.info)
    extra["split_seed"] = cfg["split_seed"]
    acc = None
    if model.has_classifier and data.test.is_labeled:
        pred = evalkit.predict_labels(data.test, model)
        L = data.test.num_labels
        acc = float(np.mean(pred == data.test.labels()))
        extra["aligned_accuracy"] = evalkit.aligned_accuracy(data.test.labels(), pred, L)
        for name, labels in data.reference_labels.items():
            extra[f"accuracy_{name}"] = float(np.mean(pred == labels))
            extra[f"aligned_accuracy_{name}"] = evalkit.aligned_accuracy(labels, pred, L)
    return evalkit.MetricsReport(
        perplexity=evalkit.perplexity(data.test, model), accuracy=acc,
        per_label_topics=evalkit.label_topic_tables(model, data.vocab, n=cfg["top_n"]),
        loss_trace=list(loss_trace), config=dict(cfg), seed=cfg["seed"], wall_time=wall_time,
        extra=extra)


def run_experiment(config: Optional[dict] = None) -> ExperimentResult:
    cfg = resolve_config(config)
    start = time.perf_counter()
    data = load_data(cfg)
    model, trace = fit_model(cfg, data)
    report = evaluate(model, data, cfg, trace, time.perf_counter() - start)
    return ExperimentResult(cfg, report, model, data)


def run_baseline(config: Optional[dict] = None) -> evalkit.MetricsReport:
    """Classifier-only baseline: the LI-NTM classifier MLP trained with cross-entropy.

    It starts from the same initialisation as the joint model and trains for the
    joint run's full budget (``pretrain_epochs + epochs``) on the labeled split.
    """
    cfg = resolve_config(config)
    start = time.perf_counter()
    data = load_data(cfg)
    if not len(data.labeled):
        raise ConfigError("the baseline classifier needs labeled documents", field="labeled_frac")
    tc = train_config(cfg)
    streams = rng_streams(tc.seed)
    params = init_lintm_params(data.labeled.vocab_size, tc, streams["init"])
    pool = as_pool(data.labeled.count_matrix(), data.labeled.labels())
    params, trace = pretrain_classifier(pool, params, tc, rng=streams["pretrain"],
                                        epochs=tc.pretrain_epochs + tc.epochs)
    model = LintmModel(params, tc)
    acc = evalkit.accuracy(data.test, model)
    extra = dict(data.info, split_seed=cfg["split_seed"], baseline=True)
    return evalkit.MetricsReport(perplexity=None, accuracy=acc, loss_trace=trace, config=cfg,
                                 seed=cfg["seed"], wall_time=time.perf_counter() - start,
                                 extra=extra)


def write_run_dir(result: ExperimentResult, out_dir) -> Path:
    """config.json, checkpoint.json, report.json/csv, topics.txt and splits/*.json."""
    out = Path(out_dir)
    (out / "splits").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(result.config, indent=2, sort_keys=True))
    save_checkpoint(out / "checkpoint.json", result.model, result.data.vocab.terms)
    write_report(result.report, out, result.config["report_formats"])
    (out / "topics.txt").write_text(evalkit.format_topics_text(result.report.per_label_topics))
    for name in ("labeled", "unlabeled", "test"):
        getattr(result.data, name).save(out / "splits" / f"{name}.json")
    return out


def write_report(report: evalkit.MetricsReport, out_dir, formats=REPORT_FORMATS) -> None:
    out = Path(out_dir)
    if "json" in formats:
        (out / "report.json").write_text(report.to_json())
    if "csv" in formats:
        (out / "report.csv").write_text(report.to_csv())


# ---------------------------------------------------------------- sweeps

METRIC_COLUMNS = ("perplexity", "accuracy", "aligned_accuracy", "accuracy_ideal",
                  "aligned_accuracy_ideal", "lower_bound", "baseline_accuracy", "final_loss",
                  "wall_time")
RUN_COLUMNS = ("trial", "seed", "split_seed", "trial_seed", "model", "num_topics", "status", "error")

PRESETS: Dict[str, dict] = {
    "synthetic-grid": {
        "base": {"source": "synthetic", "labeled_frac": 0.8, "unlabeled_frac": 0.0, "test_frac": 0.2},
        "axes": {"total_topics": [2, 8, 20], "variant": ["etm", "ideal", "wc_v1", "wc_v2"]},
        "baseline": False,
    },
    "news-regimes": {
        "base": {"source": "agnews", "model": "lintm", "labeled_frac": 0.05, "test_frac": 0.0,
                 "total_topics": 40},
        "axes": {"unlabeled_frac": [0.05, 0.15, 0.55, 0.95]},
        "baseline": True,
    },
}


def trial_config(base: dict, cell: dict, trial: int) -> dict:
    """Grid cell ``cell`` over ``base`` with every seed offset by ``trial``."""
    cfg = dict(base)
    cfg.update(cell)
    for key in ("seed", "split_seed", "trial_seed"):
        cfg[key] = int(cfg.get(key, DEFAULTS[key])) + trial
    return cfg


def _run_row(args) -> dict:
    cfg, trial = args
    row = {c: None for c in RUN_COLUMNS + METRIC_COLUMNS}
    row.update(trial=trial, seed=cfg["seed"], split_seed=cfg["split_seed"], trial_seed=cfg["trial_seed"])
    try:
        res = run_experiment(cfg)
        rep = res.report
        row.update(model=res.config["model"], num_topics=res.config["num_topics"], status="ok",
                   perplexity=rep.perplexity, accuracy=rep.accuracy, wall_time=rep.wall_time,
                   final_loss=rep.loss_trace[-1] if rep.loss_trace else None)
        for key in ("aligned_accuracy", "accuracy_ideal", "aligned_accuracy_ideal", "lower_bound"):
            row[key] = rep.extra.get(key)
    except Exception as exc:  # a failed run is a row, not a failed sweep
        logger.warning("run failed (trial %d): %s", trial, exc)
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return row


def _baseline_row(args) -> dict:
    cfg, trial = args
    try:
        return {"trial": trial, "baseline_accuracy": run_baseline(cfg).accuracy, "error": None}
    except Exception as exc:
        logger.warning("baseline failed (trial %d): %s", trial, exc)
        return {"trial": trial, "baseline_accuracy": None, "error": f"{type(exc).__name__}: {exc}"}


def _map(fn, items, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


@dataclass
class SweepResult:
    axes: Dict[str, list]
    runs: List[dict]
    summary: List[dict]

    @property
    def run_columns(self) -> List[str]:
        return list(self.axes) + list(RUN_COLUMNS) + list(METRIC_COLUMNS)

    @property
    def summary_columns(self) -> List[str]:
        cols = list(self.axes) + ["n_ok", "n_failed"]
        for m in METRIC_COLUMNS:
            cols += [f"{m}_mean", f"{m}_std"]
        return cols

    def to_json(self) -> str:
        return json.dumps({"axes": self.axes, "runs": self.runs, "summary": self.summary},
                          indent=2, sort_keys=True)

    def runs_csv(self) -> str:
        return _csv(self.run_columns, self.runs)

    def summary_csv(self) -> str:
        return _csv(self.summary_columns, self.summary)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: "" if row.get(c) is None else row[c] for c in columns})
    return buf.getvalue()


def summarize(axes: Dict[str, list], runs: List[dict]) -> List[dict]:
    """Mean and sample standard deviation per grid cell over successful trials."""
    summary = []
    for cell in itertools.product(*axes.values()):
        key = dict(zip(axes, cell))
        rows = [r for r in runs if all(r[k] == v for k, v in key.items())]
        ok = [r for r in rows if r["status"] == "ok"]
        out = dict(key, n_ok=len(ok), n_failed=len(rows) - len(ok))
        for m in METRIC_COLUMNS:
            vals = np.array([r[m] for r in ok if r[m] is not None], dtype=np.float64)
            out[f"{m}_mean"] = float(vals.mean()) if len(vals) else None
            out[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else None
        summary.append(out)
    return summary


def sweep(base: dict, axes: Dict[str, list], trials: int = 1, baseline: bool = False,
          workers: int = 1) -> SweepResult:
    """Run every grid cell of ``axes`` for ``trials`` seed offsets.

    With ``baseline=True`` the classifier-only baseline is trained once per trial
    (it depends on the labeled split only) and its accuracy is copied into every
    row of that trial.
    """
    if trials < 1:
        raise ConfigError(f"must be >= 1, got {trials}", field="trials")
    for name, values in axes.items():
        if name not in DEFAULTS:
            raise ConfigError(f"unknown sweep axis {name!r}", field=name)
        if not values:
            raise ConfigError("axis needs at least one value", field=name)
    resolve_config(base)  # fail fast on a broken base config
    cells = [dict(zip(axes, c)) for c in itertools.product(*axes.values())]
    jobs = [(trial_config(base, cell, t), t) for cell in cells for t in range(trials)]
    runs = _map(_run_row, jobs, workers)
    for (cfg, _), row in zip(jobs, runs):
        row.update({k: cfg[k] for k in axes})
    if baseline:
        base_rows = _map(_baseline_row, [(trial_config(base, cells[0], t), t) for t in range(trials)],
                         workers)
        by_trial = {b["trial"]: b for b in base_rows}
        for row in runs:
            b = by_trial[row["trial"]]
            row["baseline_accuracy"] = b["baseline_accuracy"]
            if b["error"] and row["error"] is None:
                row["error"] = f"baseline: {b['error']}"
    return SweepResult(dict(axes), runs, summarize(axes, runs))


def run_preset(name: str, overrides: Optional[dict] = None, trials: int = 1,
               workers: int = 1) -> SweepResult:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", field="preset")
    preset = PRESETS[name]
    base = dict(preset["base"])
    base.update(overrides or {})
    return sweep(base, preset["axes"], trials=trials, baseline=preset["baseline"], workers=workers)


def write_sweep(result: SweepResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(result.to_json())
    (out / "runs.csv").write_text(result.runs_csv())
    (out / "summary.csv").write_text(result.summary_csv())
    return out

