"""Label-indexed neural topic model: forward pass, losses, analytic gradients, training.

Shapes used throughout (B = batch size)::

    X       [B, V]     raw word counts
    Xn      [B, V]     row-normalised counts, the network input
    mu, lv  [B, K]     variational mean and log-variance of the topic logits
    theta   [B, K]     softmax(mu + exp(lv / 2) * eps)
    pi      [B, L]     classifier output
    beta    [L, K, V]  unconstrained topic logits, one K x V slab per label
    w       [B, V]     per-document word distribution

Parameters live in a plain ``dict`` of float64 arrays so that the optimiser,
the gradient checks and the checkpoint code can all iterate over them by name.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus, normalize_rows
from .exceptions import ConfigError, DataError, DistributionError, NumericError
from .ndmath import (AdamState, adam_update, rng_streams, softmax, softmax_backward,
                     softplus, softplus_grad)

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

LOG_CLAMP = 1e-12
PROB_CLAMP = 1e-12

ENCODER_PARAMS = ("enc_w1", "enc_b1", "enc_w_mu", "enc_b_mu", "enc_w_logvar", "enc_b_logvar")
CLASSIFIER_PARAMS = ("clf_w1", "clf_b1", "clf_w2", "clf_b2")
LINTM_PARAMS = ENCODER_PARAMS + CLASSIFIER_PARAMS + ("beta",)
LABELED_PI_MODES = ("label", "classifier")


@dataclass
class TrainConfig:
    """Hyperparameters shared by LI-NTM and the unsupervised baselines.

    ``num_topics`` is the number of topics *per label*. ``kl_anneal_steps=None``
    ramps the KL weight over the first 20% of all optimisation steps; 0 disables
    annealing. ``labeled_pi`` selects which label distribution reconstructs a
    labeled document: its true one-hot label (``"label"``) or the classifier
    output (``"classifier"``).
    """

    num_topics: int = 10
    num_labels: int = 2
    hidden_enc: int = 25
    hidden_clf: int = 25
    tau: float = 1.0
    rho: float = 1.0
    lam: float = 0.5
    lr: float = 2e-3
    batch_size: int = 64
    epochs: int = 100
    pretrain_epochs: int = 20
    seed: int = 0
    kl_anneal_steps: Optional[int] = None
    labeled_pi: str = "label"
    embed_dim: int = 16
    init_scale: float = 1.0
    beta_init_std: float = 0.02

    def validate(self) -> "TrainConfig":
        positive = ("num_topics", "num_labels", "hidden_enc", "hidden_clf", "batch_size", "embed_dim")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"must be a positive integer, got {value!r}", field=name)
        for name in ("epochs", "pretrain_epochs"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise ConfigError(f"must be a non-negative integer, got {value!r}", field=name)
        for name in ("tau", "rho", "beta_init_std"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", field=name)
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"must lie strictly inside (0, 1), got {self.lam}", field="lam")
        if not self.lr > 0:
            raise ConfigError("must be > 0", field="lr")
        if self.init_scale <= 0:
            raise ConfigError("must be > 0", field="init_scale")
        if self.kl_anneal_steps is not None and self.kl_anneal_steps < 0:
            raise ConfigError("must be >= 0 or null", field="kl_anneal_steps")
        if self.labeled_pi not in LABELED_PI_MODES:
            raise ConfigError(f"must be one of {LABELED_PI_MODES}", field="labeled_pi")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training fields {sorted(unknown)}", field=sorted(unknown)[0])
        return cls(**data)


# ---------------------------------------------------------------- initialisation

def _glorot(rng, shape, scale=1.0):
    fan_out, fan_in = shape
    return rng.normal(0.0, scale * math.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def init_encoder(V: int, cfg: TrainConfig, rng: np.random.Generator) -> Params:
    H, K = cfg.hidden_enc, cfg.num_topics
    return {
        "enc_w1": _glorot(rng, (H, V), cfg.init_scale),
        "enc_b1": np.zeros(H),
        "enc_w_mu": _glorot(rng, (K, H), cfg.init_scale),
        "enc_b_mu": np.zeros(K),
        "enc_w_logvar": _glorot(rng, (K, H), cfg.init_scale),
        "enc_b_logvar": np.zeros(K),
    }


def init_classifier(V: int, cfg: TrainConfig, rng: np.random.Generator) -> Params:
    Hc, L = cfg.hidden_clf, cfg.num_labels
    return {
        "clf_w1": _glorot(rng, (Hc, V), cfg.init_scale),
        "clf_b1": np.zeros(Hc),
        "clf_w2": _glorot(rng, (L, Hc), cfg.init_scale),
        "clf_b2": np.zeros(L),
    }


def init_lintm_params(V: int, cfg: TrainConfig, rng: np.random.Generator) -> Params:
    """Encoder first, then beta, then the classifier (draw order is part of the contract:
    an L=1 model and a classifier-free NTM with the same seed start from the same point)."""
    params = init_encoder(V, cfg, rng)
    params["beta"] = rng.normal(0.0, cfg.beta_init_std, size=(cfg.num_labels, cfg.num_topics, V))
    params.update(init_classifier(V, cfg, rng))
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------- forward pieces

def _as_batch(x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def encoder_forward(Xn: np.ndarray, params: Params) -> dict:
    a1 = Xn @ params["enc_w1"].T + params["enc_b1"]
    h = softplus(a1)
    mu = h @ params["enc_w_mu"].T + params["enc_b_mu"]
    lv = h @ params["enc_w_logvar"].T + params["enc_b_logvar"]
    return {"a1": a1, "h": h, "mu": mu, "logvar": lv}


def encoder_backward(Xn, cache, g_mu, g_lv, params, grads) -> None:
    h = cache["h"]
    grads["enc_w_mu"] += g_mu.T @ h
    grads["enc_b_mu"] += g_mu.sum(axis=0)
    grads["enc_w_logvar"] += g_lv.T @ h
    grads["enc_b_logvar"] += g_lv.sum(axis=0)
    g_h = g_mu @ params["enc_w_mu"] + g_lv @ params["enc_w_logvar"]
    g_a1 = g_h * softplus_grad(cache["a1"])
    grads["enc_w1"] += (Xn.T @ g_a1).T
    grads["enc_b1"] += g_a1.sum(axis=0)


def classifier_forward(Xn: np.ndarray, params: Params) -> dict:
    c1 = Xn @ params["clf_w1"].T + params["clf_b1"]
    hc = softplus(c1)
    logits = hc @ params["clf_w2"].T + params["clf_b2"]
    return {"c1": c1, "hc": hc, "logits": logits, "pi": softmax(logits, axis=1)}


def classifier_backward(Xn, cache, g_logits, params, grads) -> None:
    grads["clf_w2"] += g_logits.T @ cache["hc"]
    grads["clf_b2"] += g_logits.sum(axis=0)
    g_c1 = (g_logits @ params["clf_w2"]) * softplus_grad(cache["c1"])
    grads["clf_w1"] += (Xn.T @ g_c1).T
    grads["clf_b1"] += g_c1.sum(axis=0)


def encode(x_norm, params: Params):
    """Variational mean and log-variance for one document ([V]) or a batch ([B, V])."""
    X, single = _as_batch(x_norm)
    cache = encoder_forward(X, params)
    mu, lv = cache["mu"], cache["logvar"]
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
        raise NumericError("encoder produced non-finite output")
    return (mu[0], lv[0]) if single else (mu, lv)


def reparam_theta(mu, logvar, eps):
    delta = np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(eps)
    return delta, softmax(delta, axis=-1)


def classify(x_norm, params: Params) -> np.ndarray:
    X, single = _as_batch(x_norm)
    pi = classifier_forward(X, params)["pi"]
    return pi[0] if single else pi


def topic_distributions(beta: np.ndarray) -> np.ndarray:
    """Softmax of every (label, topic) row of ``beta`` over the vocabulary."""
    return softmax(beta, axis=-1)


def mix_topics(beta: np.ndarray, pi) -> np.ndarray:
    """Classifier-weighted topics: sum_l pi_l softmax(beta[l]) -> [K, V] (or [B, K, V])."""
    T = topic_distributions(beta)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim == 1:
        return np.tensordot(pi, T, axes=(0, 0))
    return np.einsum("bl,lkv->bkv", pi, T)


def decode(theta, mixed) -> np.ndarray:
    """Word distribution theta^T mixed; broadcasts over a leading batch axis."""
    theta = np.asarray(theta, dtype=np.float64)
    mixed = np.asarray(mixed, dtype=np.float64)
    if mixed.ndim == 2:
        return theta @ mixed
    return np.einsum("bk,bkv->bv", theta, mixed)


def recon_loglik(x_counts, w_dist) -> np.ndarray:
    """sum_v x_v log w_v with w clamped at 1e-12; sums over the last axis."""
    return np.sum(np.asarray(x_counts) * np.log(np.maximum(w_dist, LOG_CLAMP)), axis=-1)


def kl_diag_gaussian(mu, logvar) -> np.ndarray:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu)
    logvar = np.asarray(logvar)
    return 0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=-1)


def cross_entropy(y_onehot, pi) -> np.ndarray:
    return -np.sum(np.asarray(y_onehot) * np.log(np.maximum(pi, PROB_CLAMP)), axis=-1)


def one_hot(y: np.ndarray, L: int) -> np.ndarray:
    out = np.zeros((len(y), L))
    out[np.arange(len(y)), y] = 1.0
    return out


def label_word_dists(theta: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Per-label word distributions theta @ T[l], stacked as [L, B, V]."""
    return np.stack([theta @ T[l] for l in range(T.shape[0])])


def mix_labels(pi: np.ndarray, P: np.ndarray) -> np.ndarray:
    w = pi[:, 0:1] * P[0]
    for l in range(1, P.shape[0]):
        w = w + pi[:, l:l + 1] * P[l]
    return w


def recon_grad(X: np.ndarray, w: np.ndarray, scale: float) -> np.ndarray:
    """d(-scale * sum x log max(w, clamp)) / dw."""
    return np.where(w > LOG_CLAMP, -scale * X / np.maximum(w, LOG_CLAMP), 0.0)


# ---------------------------------------------------------------- sparse token view
#
# Training batches are mostly zeros at realistic vocabulary sizes, and the
# reconstruction term and its gradient vanish wherever a count is zero, so the
# losses only ever evaluate w at the observed (document, word) pairs.

class Tokens(NamedTuple):
    """Non-zero entries of a count batch in CSR order."""
    counts: sp.csr_matrix
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def n_docs(self) -> int:
        return self.counts.shape[0]

    def normalized(self) -> sp.csr_matrix:
        totals = np.bincount(self.rows, weights=self.vals, minlength=self.n_docs)
        if np.any(totals <= 0):
            raise DistributionError("document with zero tokens")
        return self.scatter(self.vals / totals[self.rows])

    def scatter(self, values: np.ndarray) -> sp.csr_matrix:
        """Sparse [B, V] matrix with ``values`` at the token positions."""
        c = self.counts
        return sp.csr_matrix((values, c.indices, c.indptr), shape=c.shape)

    def doc_sum(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.rows, weights=values, minlength=self.n_docs)


def tokens(X) -> Tokens:
    if sp.issparse(X):
        C = sp.csr_matrix(X, dtype=np.float64, copy=True)
        C.sum_duplicates()
        C.eliminate_zeros()
    else:
        C = sp.csr_matrix(np.asarray(X, dtype=np.float64))
    rows = np.repeat(np.arange(C.shape[0]), np.diff(C.indptr))
    return Tokens(C, rows, C.indices, C.data)


def token_word_probs(theta: np.ndarray, T: np.ndarray, tok: Tokens) -> np.ndarray:
    """(theta @ T[l])[b, v] at every token position, as [L, nnz]."""
    return np.einsum("jk,lkj->lj", theta[tok.rows], T[:, :, tok.cols])


def token_mix(pi: np.ndarray, P: np.ndarray, tok: Tokens) -> np.ndarray:
    w = pi[tok.rows, 0] * P[0]
    for l in range(1, P.shape[0]):
        w = w + pi[tok.rows, l] * P[l]
    return w


def token_recon_loglik(tok: Tokens, w: np.ndarray) -> np.ndarray:
    return tok.doc_sum(tok.vals * np.log(np.maximum(w, LOG_CLAMP)))


def token_backward(tok: Tokens, g_w: np.ndarray, theta: np.ndarray, T_l: np.ndarray):
    """Gradients of sum_j g_w[j] (theta @ T_l)[token j] wrt theta and T_l."""
    G = tok.scatter(g_w)
    return G @ T_l.T, (G.T @ theta).T


# ---------------------------------------------------------------- losses

class LossResult(NamedTuple):
    loss: float
    grads: Params
    terms: dict


def _batch(X):
    """Sparse batches pass through untouched; anything else becomes a float array."""
    return X if sp.issparse(X) else np.asarray(X, dtype=np.float64)


def _draw_eps(rng, eps, B, K):
    if eps is not None:
        return np.asarray(eps, dtype=np.float64)
    if rng is None:
        raise ConfigError("either rng or eps must be supplied", field="rng")
    return rng.standard_normal((B, K))


def _branch(X, params: Params, cfg: TrainConfig, eps, tau, y=None, grads=None,
            scale: float = 1.0) -> Tuple[float, dict]:
    """Shared forward/backward of one loss branch; accumulates ``scale`` * dloss into grads.

    ``y is None`` is the unlabeled branch. Otherwise reconstruction uses one-hot(y)
    (or the classifier output when ``cfg.labeled_pi == "classifier"``) and the
    classifier additionally receives the rho-weighted cross-entropy.
    """
    tok = tokens(X)
    B = tok.n_docs
    Xn = tok.normalized()
    enc = encoder_forward(Xn, params)
    mu, lv = enc["mu"], enc["logvar"]
    sd = np.exp(0.5 * lv)
    delta = mu + sd * eps
    theta = softmax(delta, axis=1)
    clf = classifier_forward(Xn, params)
    pi = clf["pi"]
    T = topic_distributions(params["beta"])
    L = T.shape[0]

    use_clf = y is None or cfg.labeled_pi == "classifier"
    y_oh = one_hot(y, L) if y is not None else None
    pi_rec = pi if use_clf else y_oh
    P = token_word_probs(theta, T, tok)
    w = token_mix(pi_rec, P, tok)

    rec = token_recon_loglik(tok, w)
    kl = kl_diag_gaussian(mu, lv)
    per_doc = -rec + tau * kl
    ce = None
    if y is not None:
        ce = cross_entropy(y_oh, pi)
        per_doc = per_doc + cfg.rho * ce
    loss = float(per_doc.mean())
    terms = {"recon": float(-rec.mean()), "kl": float(kl.mean()),
             "ce": None if ce is None else float(ce.mean())}
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss (terms={terms})")
    if grads is None:
        return loss, terms

    s = scale / B
    g_w = recon_grad(tok.vals, w, s)
    g_theta = np.zeros_like(theta)
    g_pi = np.zeros_like(pi)
    for l in range(L):
        g_th, g_T = token_backward(tok, pi_rec[tok.rows, l] * g_w, theta, T[l])
        g_theta += g_th
        grads["beta"][l] += softmax_backward(T[l], g_T)
        if use_clf:
            g_pi[:, l] = tok.doc_sum(g_w * P[l])

    g_delta = softmax_backward(theta, g_theta, axis=1)
    g_mu = g_delta + (s * tau) * mu
    g_lv = g_delta * (0.5 * sd * eps) + (s * tau * 0.5) * (np.exp(lv) - 1.0)
    encoder_backward(Xn, enc, g_mu, g_lv, params, grads)

    g_logits = softmax_backward(pi, g_pi, axis=1) if use_clf else np.zeros_like(pi)
    if y is not None and cfg.rho:
        g_logits = g_logits + (s * cfg.rho) * (pi - y_oh)
    classifier_backward(Xn, clf, g_logits, params, grads)
    return loss, terms


def loss_unlabeled(X, params: Params, cfg: TrainConfig, rng=None, eps=None,
                   tau: Optional[float] = None, need_grad: bool = True) -> LossResult:
    """Mean over documents of -recon + tau * KL, with pi produced by the classifier."""
    X = _batch(X)
    tau = cfg.tau if tau is None else tau
    eps = _draw_eps(rng, eps, X.shape[0], cfg.num_topics)
    grads = zeros_like_params(params) if need_grad else None
    loss, terms = _branch(X, params, cfg, eps, tau, grads=grads)
    return LossResult(loss, grads, terms)


def loss_labeled(X, y, params: Params, cfg: TrainConfig, rng=None, eps=None,
                 tau: Optional[float] = None, need_grad: bool = True) -> LossResult:
    """Mean over documents of -recon + tau * KL + rho * CE(y, classifier(x))."""
    X = _batch(X)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= cfg.num_labels):
        raise DataError("labeled batch contains documents without a valid label")
    tau = cfg.tau if tau is None else tau
    eps = _draw_eps(rng, eps, X.shape[0], cfg.num_topics)
    grads = zeros_like_params(params) if need_grad else None
    loss, terms = _branch(X, params, cfg, eps, tau, y=y, grads=grads)
    return LossResult(loss, grads, terms)


def loss_total(Xl, yl, Xu, params: Params, cfg: TrainConfig, rng=None, eps_l=None, eps_u=None,
               tau: Optional[float] = None, need_grad: bool = True) -> LossResult:
    """lam * labeled + (1 - lam) * unlabeled; an empty side hands its weight to the other.

    Noise for the labeled batch is drawn before noise for the unlabeled batch.
    """
    n_l = 0 if Xl is None else Xl.shape[0]
    n_u = 0 if Xu is None else Xu.shape[0]
    if n_l == 0 and n_u == 0:
        raise ConfigError("both the labeled and the unlabeled batch are empty", field="batch")
    tau = cfg.tau if tau is None else tau
    if n_l and n_u:
        w_l, w_u = cfg.lam, 1.0 - cfg.lam
    else:
        w_l, w_u = float(n_l > 0), float(n_u > 0)
    grads = zeros_like_params(params) if need_grad else None
    total, terms = 0.0, {}
    if n_l:
        e = _draw_eps(rng, eps_l, n_l, cfg.num_topics)
        loss, t = _branch(_batch(Xl), params, cfg, e, tau, y=np.asarray(yl, dtype=np.int64),
                          grads=grads, scale=w_l)
        total += w_l * loss
        terms["labeled"] = dict(t, loss=loss)
    if n_u:
        e = _draw_eps(rng, eps_u, n_u, cfg.num_topics)
        loss, t = _branch(_batch(Xu), params, cfg, e, tau, grads=grads, scale=w_u)
        total += w_u * loss
        terms["unlabeled"] = dict(t, loss=loss)
    return LossResult(total, grads, terms)


def classifier_loss(X, y, params: Params, need_grad: bool = True) -> LossResult:
    """Plain mean cross-entropy of the classifier, used for pretraining and the baseline."""
    Xn = tokens(X).normalized()
    y = np.asarray(y, dtype=np.int64)
    cache = classifier_forward(Xn, params)
    pi = cache["pi"]
    y_oh = one_hot(y, pi.shape[1])
    loss = float(cross_entropy(y_oh, pi).mean())
    if not np.isfinite(loss):
        raise NumericError("non-finite classifier loss")
    grads = None
    if need_grad:
        grads = {k: np.zeros_like(params[k]) for k in CLASSIFIER_PARAMS}
        classifier_backward(Xn, cache, (pi - y_oh) / len(y), params, grads)
    return LossResult(loss, grads, {"ce": loss})


# ---------------------------------------------------------------- training loop

class Pool(NamedTuple):
    X: sp.csr_matrix
    y: Optional[np.ndarray]

    def __len__(self):
        return self.X.shape[0]


def as_pool(X, y=None) -> Pool:
    X = sp.csr_matrix(X, dtype=np.float64)
    if X.shape[0] and np.any(np.asarray(X.sum(axis=1)).ravel() <= 0):
        raise DataError("every document needs at least one token")
    return Pool(X, None if y is None else np.asarray(y, dtype=np.int64))


def _batches(n: int, batch_size: int, perm: np.ndarray):
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def anneal_length(cfg: TrainConfig, total_steps: int) -> int:
    if cfg.kl_anneal_steps is not None:
        return int(cfg.kl_anneal_steps)
    return int(0.2 * total_steps)


def kl_weight(cfg: TrainConfig, step: int, anneal_steps: int) -> float:
    if anneal_steps <= 0:
        return cfg.tau
    return cfg.tau * min(1.0, (step + 1) / anneal_steps)


StepFn = Callable[..., LossResult]


def fit_loop(step_fn: StepFn, params: Params, labeled: Optional[Pool], unlabeled: Optional[Pool],
             cfg: TrainConfig, streams, trainable: Sequence[str], num_noise: int):
    """Paired-minibatch Adam loop shared by every model.

    Each epoch reshuffles both pools and runs as many steps as the larger pool has
    batches; the smaller pool is cycled. ``step_fn(Xl, yl, Xu, eps_l, eps_u, tau)``
    returns a :class:`LossResult`. Returns the per-epoch mean losses.
    """
    n_l = 0 if labeled is None else len(labeled)
    n_u = 0 if unlabeled is None else len(unlabeled)
    if n_l == 0 and n_u == 0:
        raise DataError("nothing to train on")
    B = cfg.batch_size
    steps_per_epoch = max(math.ceil(n_l / B), math.ceil(n_u / B))
    anneal = anneal_length(cfg, steps_per_epoch * cfg.epochs)
    adam = AdamState(lr=cfg.lr)
    shuffle, noise = streams["shuffle"], streams["noise"]
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        lab_batches = _batches(n_l, B, shuffle.permutation(n_l)) if n_l else []
        unl_batches = _batches(n_u, B, shuffle.permutation(n_u)) if n_u else []
        epoch_losses = []
        for i in range(steps_per_epoch):
            Xl = yl = Xu = eps_l = eps_u = None
            if lab_batches:
                idx = lab_batches[i % len(lab_batches)]
                Xl, yl = labeled.X[idx], labeled.y[idx]
                eps_l = noise.standard_normal((len(idx), num_noise))
            if unl_batches:
                idx = unl_batches[i % len(unl_batches)]
                Xu = unlabeled.X[idx]
                eps_u = noise.standard_normal((len(idx), num_noise))
            tau = kl_weight(cfg, step, anneal)
            try:
                res = step_fn(Xl, yl, Xu, eps_l, eps_u, tau)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {i}: {exc}") from exc
            for name in trainable:
                if not np.all(np.isfinite(res.grads[name])):
                    raise NumericError(f"epoch {epoch} batch {i}: non-finite gradient for {name} "
                                       f"(terms={res.terms})")
            adam_update(params, res.grads, adam, trainable)
            epoch_losses.append(res.loss)
            step += 1
        trace.append(float(np.mean(epoch_losses)))
        logger.debug("epoch %d loss %.4f", epoch, trace[-1])
    return trace


def pretrain_classifier(labeled, params: Params, cfg: TrainConfig,
                        rng: Optional[np.random.Generator] = None, epochs: Optional[int] = None):
    """Cross-entropy training of the classifier block only, in place.

    Runs ``cfg.pretrain_epochs`` epochs (or ``epochs``) with a fresh Adam state.
    Every non-classifier parameter is left bit-identical. Returns ``(params, trace)``.
    """
    pool = labeled if isinstance(labeled, Pool) else as_pool(labeled.count_matrix(), labeled.labels())
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    if len(pool) == 0:
        raise DataError("classifier pretraining needs labeled documents")
    if np.any(pool.y < 0):
        raise DataError("classifier pretraining received unlabeled documents")
    if rng is None:
        rng = rng_streams(cfg.seed)["pretrain"]
    adam = AdamState(lr=cfg.lr)
    trace = []
    for _ in range(epochs):
        losses = []
        for idx in _batches(len(pool), cfg.batch_size, rng.permutation(len(pool))):
            res = classifier_loss(pool.X[idx], pool.y[idx], params)
            adam_update(params, res.grads, adam, CLASSIFIER_PARAMS)
            losses.append(res.loss)
        trace.append(float(np.mean(losses)))
    return params, trace


def _pools(labeled, unlabeled):
    lab = None
    if labeled is not None and len(labeled):
        if not labeled.is_labeled:
            raise DataError("the labeled corpus contains unlabeled documents")
        lab = as_pool(labeled.count_matrix(), labeled.labels())
    unl = None
    if unlabeled is not None and len(unlabeled):
        # only the matrix crosses over: hidden labels never reach the trainer
        unl = as_pool(unlabeled.count_matrix())
    return lab, unl


def check_vocab(*corpora) -> int:
    present = [c for c in corpora if c is not None and len(c)]
    if not present:
        raise DataError("no documents to train on")
    vocab = present[0].vocab
    for c in present[1:]:
        if c.vocab != vocab:
            raise DataError("labeled and unlabeled corpora use different vocabularies")
    return len(vocab)


def train_pools(labeled: Optional[Pool], unlabeled: Optional[Pool], V: int, cfg: TrainConfig,
                init_params: Optional[Params] = None):
    """Array-level LI-NTM training; see :func:`train`."""
    cfg.validate()
    if labeled is not None and len(labeled) and labeled.y.max() >= cfg.num_labels:
        raise ConfigError(f"labels exceed num_labels={cfg.num_labels}", field="num_labels")
    streams = rng_streams(cfg.seed)
    if init_params is None:
        params = init_lintm_params(V, cfg, streams["init"])
    else:
        params = {k: np.array(v, dtype=np.float64) for k, v in init_params.items()}
    pretrain_trace = []
    if labeled is not None and len(labeled) and cfg.pretrain_epochs:
        _, pretrain_trace = pretrain_classifier(labeled, params, cfg, rng=streams["pretrain"])

    def step(Xl, yl, Xu, eps_l, eps_u, tau):
        return loss_total(Xl, yl, Xu, params, cfg, eps_l=eps_l, eps_u=eps_u, tau=tau)

    trace = fit_loop(step, params, labeled, unlabeled, cfg, streams, LINTM_PARAMS, cfg.num_topics)
    return params, trace, pretrain_trace


def train(labeled: Optional[Corpus], unlabeled: Optional[Corpus], cfg: TrainConfig,
          init_params: Optional[Params] = None) -> Tuple[Params, list]:
    """Pretrain the classifier on ``labeled``, then optimise the full objective.

    Returns the trained parameters and the per-epoch mean training loss.
    """
    V = check_vocab(labeled, unlabeled)
    lab, unl = _pools(labeled, unlabeled)
    params, trace, _ = train_pools(lab, unl, V, cfg, init_params)
    return params, trace


# ---------------------------------------------------------------- trained model

class LintmModel:
    """A trained parameter set plus the deterministic evaluation-time forward pass."""

    kind = "lintm"

    def __init__(self, params: Params, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg

    @property
    def vocab_size(self) -> int:
        return self.params["beta"].shape[2]

    @property
    def has_classifier(self) -> bool:
        return True

    def topic_matrix(self, label: Optional[int] = None) -> np.ndarray:
        T = topic_distributions(self.params["beta"])
        return T if label is None else T[label]

    def predict_proba(self, X) -> np.ndarray:
        return classify(normalize_rows(X), self.params)

    def theta_mean(self, X) -> np.ndarray:
        mu, _ = encode(normalize_rows(X), self.params)
        return softmax(mu, axis=1)

    def word_distribution(self, X, pi: Optional[np.ndarray] = None) -> np.ndarray:
        """Decoder output at the variational mean, mixing labels by the classifier
        (or by an explicit ``pi``)."""
        Xn = normalize_rows(X)
        mu, _ = encode(Xn, self.params)
        theta = softmax(mu, axis=1)
        if pi is None:
            pi = classify(Xn, self.params)
        return mix_labels(pi, label_word_dists(theta, self.topic_matrix()))
