"""Lossless JSON checkpoints.

Layout::

    {"format": "lintm-checkpoint/1", "model": "lintm" | "etm" | "ntm",
     "config": {...TrainConfig...}, "vocab": [...terms...] | null,
     "params": {name: {"shape": [...], "values": [...]}}}

ETM parameters are nested one level deeper under ``params["etm"]``. Floats are
written with ``repr`` precision, which round-trips float64 exactly.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Corpus
from .etm import EtmModel, NtmModel
from .exceptions import CompatibilityError, DataError
from .model import LintmModel, TrainConfig

FORMAT = "lintm-checkpoint/1"
MODEL_CLASSES = {"lintm": LintmModel, "etm": EtmModel, "ntm": NtmModel}


def _encode_params(params) -> dict:
    out = {}
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"refusing to serialise non-finite parameter {name}")
        out[name] = {"shape": list(arr.shape), "values": arr.ravel().tolist()}
    return out


def _decode_params(blob: dict) -> dict:
    params = {}
    for name, entry in blob.items():
        arr = np.array(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise DataError(f"parameter {name}: {arr.size} values do not fill shape {shape}")
        params[name] = arr.reshape(shape)
    return params


def checkpoint_dict(model, vocab: Optional[Sequence[str]] = None) -> dict:
    params = _encode_params(model.params)
    if model.kind == "etm":
        params = {"etm": params}
    return {"format": FORMAT, "model": model.kind, "config": model.cfg.to_dict(),
            "vocab": None if vocab is None else list(vocab), "params": params}


def model_from_dict(data: dict):
    try:
        kind = data["model"]
        cls = MODEL_CLASSES[kind]
        blob = data["params"]["etm"] if kind == "etm" else data["params"]
        model = cls(_decode_params(blob), TrainConfig.from_dict(data["config"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed checkpoint: {exc!r}") from exc
    model.vocab_terms = data.get("vocab")
    return model


def save_checkpoint(path, model, vocab: Optional[Sequence[str]] = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model, vocab)))


def load_checkpoint(path):
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return model_from_dict(data)


def check_compatible(model, corpus: Corpus) -> None:
    if model.vocab_size != corpus.vocab_size:
        raise CompatibilityError(f"checkpoint has V={model.vocab_size} but corpus has "
                                 f"V={corpus.vocab_size}", field="vocab")
    terms = getattr(model, "vocab_terms", None)
    if terms is not None and tuple(terms) != corpus.vocab.terms:
        raise CompatibilityError("checkpoint and corpus vocabularies differ", field="vocab")
