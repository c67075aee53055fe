"""Unsupervised baselines sharing the LI-NTM encoder and training loop.

``ETM`` builds its topics from word embeddings ``rho_embed`` [E, V] and topic
embeddings ``alpha_topics`` [E, K]: topic k is softmax(rho_embed^T alpha_k).
``NTM`` is the same model with free topic logits ``beta`` [K, V]; it is what
LI-NTM reduces to when there is a single label and no classifier.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .corpus import Corpus, normalize_rows
from .exceptions import NumericError
from .model import (ENCODER_PARAMS, LossResult, Params, TrainConfig, _draw_eps, as_pool,
                    encode, encoder_backward, encoder_forward, fit_loop, init_encoder,
                    kl_diag_gaussian, recon_grad, token_backward, token_recon_loglik,
                    token_word_probs, tokens, zeros_like_params)
from .ndmath import rng_streams, softmax, softmax_backward

ETM_PARAMS = ENCODER_PARAMS + ("rho_embed", "alpha_topics")
NTM_PARAMS = ENCODER_PARAMS + ("beta",)


def etm_topic_logits(params: Params) -> np.ndarray:
    return params["alpha_topics"].T @ params["rho_embed"]


def etm_topic_matrix(params: Params) -> np.ndarray:
    """[K, V] word distributions, row k = softmax(rho_embed^T alpha_topics[:, k])."""
    return softmax(etm_topic_logits(params), axis=1)


def _etm_topics_backward(T, g_T, params, grads):
    g_logits = softmax_backward(T, g_T, axis=1)
    grads["alpha_topics"] += params["rho_embed"] @ g_logits.T
    grads["rho_embed"] += params["alpha_topics"] @ g_logits


def ntm_topic_matrix(params: Params) -> np.ndarray:
    return softmax(params["beta"], axis=1)


def _ntm_topics_backward(T, g_T, params, grads):
    grads["beta"] += softmax_backward(T, g_T, axis=1)


def unsupervised_loss(X, params: Params, topics: Callable, topics_backward: Callable,
                      cfg: TrainConfig, rng=None, eps=None, tau: Optional[float] = None,
                      need_grad: bool = True) -> LossResult:
    """Mean over documents of -recon + tau * KL for a single global topic matrix."""
    tok = tokens(X)
    B = tok.n_docs
    tau = cfg.tau if tau is None else tau
    eps = _draw_eps(rng, eps, B, cfg.num_topics)
    Xn = tok.normalized()
    enc = encoder_forward(Xn, params)
    mu, lv = enc["mu"], enc["logvar"]
    sd = np.exp(0.5 * lv)
    theta = softmax(mu + sd * eps, axis=1)
    T = topics(params)
    w = token_word_probs(theta, T[None], tok)[0]
    rec = token_recon_loglik(tok, w)
    kl = kl_diag_gaussian(mu, lv)
    loss = float((-rec + tau * kl).mean())
    terms = {"recon": float(-rec.mean()), "kl": float(kl.mean())}
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss (terms={terms})")
    if not need_grad:
        return LossResult(loss, None, terms)
    grads = zeros_like_params(params)
    s = 1.0 / B
    g_w = recon_grad(tok.vals, w, s)
    g_theta, g_T = token_backward(tok, g_w, theta, T)
    topics_backward(T, g_T, params, grads)
    g_delta = softmax_backward(theta, g_theta, axis=1)
    g_mu = g_delta + (s * tau) * mu
    g_lv = g_delta * (0.5 * sd * eps) + (s * tau * 0.5) * (np.exp(lv) - 1.0)
    encoder_backward(Xn, enc, g_mu, g_lv, params, grads)
    return LossResult(loss, grads, terms)


def etm_loss(X, params, cfg, rng=None, eps=None, tau=None, need_grad=True) -> LossResult:
    return unsupervised_loss(X, params, etm_topic_matrix, _etm_topics_backward, cfg,
                             rng=rng, eps=eps, tau=tau, need_grad=need_grad)


def ntm_loss(X, params, cfg, rng=None, eps=None, tau=None, need_grad=True) -> LossResult:
    return unsupervised_loss(X, params, ntm_topic_matrix, _ntm_topics_backward, cfg,
                             rng=rng, eps=eps, tau=tau, need_grad=need_grad)


def init_etm_params(V: int, cfg: TrainConfig, rng: np.random.Generator) -> Params:
    params = init_encoder(V, cfg, rng)
    E = cfg.embed_dim
    params["rho_embed"] = rng.normal(0.0, 1.0, size=(E, V))
    params["alpha_topics"] = rng.normal(0.0, cfg.beta_init_std / np.sqrt(E), size=(E, cfg.num_topics))
    return params


def init_ntm_params(V: int, cfg: TrainConfig, rng: np.random.Generator) -> Params:
    params = init_encoder(V, cfg, rng)
    params["beta"] = rng.normal(0.0, cfg.beta_init_std, size=(cfg.num_topics, V))
    return params


def _train_unsupervised(X, V, cfg, init_fn, loss_fn, names, init_params, freeze):
    cfg.validate()
    streams = rng_streams(cfg.seed)
    if init_params is None:
        params = init_fn(V, cfg, streams["init"])
    else:
        params = {k: np.array(v, dtype=np.float64) for k, v in init_params.items()}
    trainable = [n for n in names if n not in set(freeze)]

    def step(Xl, yl, Xu, eps_l, eps_u, tau):
        return loss_fn(Xu, params, cfg, eps=eps_u, tau=tau)

    trace = fit_loop(step, params, None, as_pool(X), cfg, streams, trainable, cfg.num_topics)
    return params, trace


def train_etm(corpus: Corpus, cfg: TrainConfig, init_params: Optional[Params] = None,
              freeze: Sequence[str] = ()) -> Tuple[Params, list]:
    """Train the ETM baseline on ``corpus`` ignoring any labels. Returns ``(params, trace)``."""
    return _train_unsupervised(corpus.count_matrix(), corpus.vocab_size, cfg, init_etm_params,
                               etm_loss, ETM_PARAMS, init_params, freeze)


def train_ntm(corpus: Corpus, cfg: TrainConfig, init_params: Optional[Params] = None,
              freeze: Sequence[str] = ()) -> Tuple[Params, list]:
    return _train_unsupervised(corpus.count_matrix(), corpus.vocab_size, cfg, init_ntm_params,
                               ntm_loss, NTM_PARAMS, init_params, freeze)


class _UnsupervisedModel:
    kind = ""
    has_classifier = False

    def __init__(self, params: Params, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg

    def topic_matrix(self, label: Optional[int] = None) -> np.ndarray:
        raise NotImplementedError

    @property
    def vocab_size(self) -> int:
        return self.topic_matrix().shape[1]

    def theta_mean(self, X) -> np.ndarray:
        mu, _ = encode(normalize_rows(X), self.params)
        return softmax(mu, axis=1)

    def word_distribution(self, X) -> np.ndarray:
        return self.theta_mean(X) @ self.topic_matrix()


class EtmModel(_UnsupervisedModel):
    kind = "etm"

    def topic_matrix(self, label: Optional[int] = None) -> np.ndarray:
        return etm_topic_matrix(self.params)


class NtmModel(_UnsupervisedModel):
    kind = "ntm"

    def topic_matrix(self, label: Optional[int] = None) -> np.ndarray:
        return ntm_topic_matrix(self.params)
