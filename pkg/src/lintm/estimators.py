"""scikit-learn compatible estimators.

Inputs are document-term count matrices (dense or scipy.sparse), the same thing
``CountVectorizer`` produces. Semi-supervised targets follow the
``sklearn.semi_supervised`` convention: ``-1`` marks an unlabeled document.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_non_negative, column_or_1d

from . import evalkit
from .etm import ETM_PARAMS, EtmModel, _train_unsupervised, etm_loss, init_etm_params
from .exceptions import ConfigError
from .model import LintmModel, TrainConfig, as_pool, train_pools

UNLABELED = -1


def _check_counts(est, X, reset: bool):
    X = check_array(X, accept_sparse="csr", dtype=np.float64)
    check_non_negative(X, f"{type(est).__name__}")
    if reset:
        est.n_features_in_ = X.shape[1]
    elif X.shape[1] != est.n_features_in_:
        raise ValueError(f"X has {X.shape[1]} features, but {type(est).__name__} "
                         f"is expecting {est.n_features_in_} features as input")
    totals = np.asarray(X.sum(axis=1)).ravel()
    if np.any(totals <= 0):
        raise ValueError("every document (row of X) needs at least one token")
    return sp.csr_matrix(X)


class LabelIndexedTopicModel(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Semi-supervised topic model with one set of topics per label.

    A document classifier is trained jointly with the topic model; for
    unlabeled documents its output decides which label's topics reconstruct the
    words, so reconstruction also supervises the classifier.

    Parameters
    ----------
    n_topics : int, default=10
        Topics per label.
    n_labels : int or None, default=None
        Number of classes. Inferred from the labeled part of ``y`` when None.
    hidden_enc, hidden_clf : int, default=25
        Hidden widths of the encoder and classifier MLPs.
    tau : float, default=1.0
        Weight of the KL term.
    rho : float, default=1.0
        Weight of the classifier cross-entropy on labeled documents.
    lam : float, default=0.5
        Interpolation between the labeled (``lam``) and unlabeled (``1 - lam``) losses.
    learning_rate : float, default=2e-3
    batch_size : int, default=64
    max_epochs : int, default=100
    pretrain_epochs : int, default=20
        Classifier-only epochs before joint training.
    kl_anneal_steps : int or None, default=None
        KL warm-up length in steps; None uses 20% of all steps, 0 disables it.
    labeled_pi : {"label", "classifier"}, default="label"
        Label distribution used to reconstruct labeled documents.
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray of shape (n_labels,)
    components_ : ndarray of shape (n_labels, n_topics, n_features)
        Topic-word distributions.
    loss_trace_ : list of float
        Mean training loss per epoch.
    """

    def __init__(self, n_topics=10, n_labels=None, hidden_enc=25, hidden_clf=25, tau=1.0, rho=1.0,
                 lam=0.5, learning_rate=2e-3, batch_size=64, max_epochs=100, pretrain_epochs=20,
                 kl_anneal_steps=None, labeled_pi="label", random_state=0):
        self.n_topics = n_topics
        self.n_labels = n_labels
        self.hidden_enc = hidden_enc
        self.hidden_clf = hidden_clf
        self.tau = tau
        self.rho = rho
        self.lam = lam
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.pretrain_epochs = pretrain_epochs
        self.kl_anneal_steps = kl_anneal_steps
        self.labeled_pi = labeled_pi
        self.random_state = random_state

    def _train_config(self, n_labels: int) -> TrainConfig:
        return TrainConfig(num_topics=self.n_topics, num_labels=n_labels, hidden_enc=self.hidden_enc,
                           hidden_clf=self.hidden_clf, tau=self.tau, rho=self.rho, lam=self.lam,
                           lr=self.learning_rate, batch_size=self.batch_size, epochs=self.max_epochs,
                           pretrain_epochs=self.pretrain_epochs, seed=int(self.random_state),
                           kl_anneal_steps=self.kl_anneal_steps, labeled_pi=self.labeled_pi).validate()

    def _encode_targets(self, y, n_docs):
        if y is None:
            y = np.full(n_docs, UNLABELED)
        y = column_or_1d(y, warn=True)
        if len(y) != n_docs:
            raise ValueError(f"X has {n_docs} documents but y has {len(y)} entries")
        labeled = y != UNLABELED
        if self.n_labels is None:
            classes = np.unique(y[labeled])
            if len(classes) == 0:
                raise ValueError("n_labels must be set when no document is labeled")
        else:
            classes = np.arange(self.n_labels)
            if not np.all(np.isin(y[labeled], classes)):
                raise ValueError(f"labels must lie in [0, {self.n_labels}) or be -1")
        codes = np.full(n_docs, UNLABELED, dtype=np.int64)
        codes[labeled] = np.searchsorted(classes, y[labeled])
        return classes, codes

    def fit(self, X, y=None):
        """Fit on counts ``X``; ``y`` holds labels with -1 for unlabeled documents."""
        X = _check_counts(self, X, reset=True)
        self.classes_, codes = self._encode_targets(y, X.shape[0])
        cfg = self._train_config(len(self.classes_))
        mask = codes != UNLABELED
        labeled = as_pool(X[mask], codes[mask]) if mask.any() else None
        unlabeled = as_pool(X[~mask]) if (~mask).any() else None
        params, trace, pretrain_trace = train_pools(labeled, unlabeled, X.shape[1], cfg)
        self.model_ = LintmModel(params, cfg)
        self.loss_trace_ = trace
        self.pretrain_trace_ = pretrain_trace
        self.components_ = self.model_.topic_matrix()
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        return self.model_.predict_proba(_check_counts(self, X, reset=False))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        """Topic proportions softmax(mu) for each document."""
        check_is_fitted(self)
        return self.model_.theta_mean(_check_counts(self, X, reset=False))

    def perplexity(self, X):
        """Held-out perplexity of counts ``X`` (labels are not used)."""
        check_is_fitted(self)
        return evalkit.perplexity(_check_counts(self, X, reset=False), self.model_)


class EmbeddedTopicModel(TransformerMixin, BaseEstimator):
    """Unsupervised topic model whose topics live in a learned word-embedding space.

    Parameters
    ----------
    n_topics : int, default=20
    embed_dim : int, default=16
    hidden_enc : int, default=25
    tau : float, default=1.0
    learning_rate : float, default=2e-3
    batch_size : int, default=64
    max_epochs : int, default=100
    kl_anneal_steps : int or None, default=None
    random_state : int, default=0
    """

    def __init__(self, n_topics=20, embed_dim=16, hidden_enc=25, tau=1.0, learning_rate=2e-3,
                 batch_size=64, max_epochs=100, kl_anneal_steps=None, random_state=0):
        self.n_topics = n_topics
        self.embed_dim = embed_dim
        self.hidden_enc = hidden_enc
        self.tau = tau
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.kl_anneal_steps = kl_anneal_steps
        self.random_state = random_state

    def fit(self, X, y=None):
        """Fit on counts ``X``; ``y`` is ignored."""
        X = _check_counts(self, X, reset=True)
        cfg = TrainConfig(num_topics=self.n_topics, num_labels=1, hidden_enc=self.hidden_enc,
                          tau=self.tau, lr=self.learning_rate, batch_size=self.batch_size,
                          epochs=self.max_epochs, pretrain_epochs=0, seed=int(self.random_state),
                          kl_anneal_steps=self.kl_anneal_steps, embed_dim=self.embed_dim)
        try:
            params, trace = _train_unsupervised(X, X.shape[1], cfg, init_etm_params, etm_loss,
                                                ETM_PARAMS, None, ())
        except ConfigError as exc:
            raise ValueError(str(exc)) from exc
        self.model_ = EtmModel(params, cfg)
        self.loss_trace_ = trace
        self.components_ = self.model_.topic_matrix()
        return self

    def transform(self, X):
        check_is_fitted(self)
        return self.model_.theta_mean(_check_counts(self, X, reset=False))

    def perplexity(self, X):
        check_is_fitted(self)
        return evalkit.perplexity(_check_counts(self, X, reset=False), self.model_)

    def score(self, X, y=None):
        """Mean per-token log-likelihood (higher is better)."""
        return -float(np.log(self.perplexity(X)))
