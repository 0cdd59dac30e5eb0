"""scikit-learn compatible estimators on top of the functional core."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .federated import TrainConfig, graphfed_em
from .graph import EmpiricalGraph
from .metrics import avg_log_likelihood, hard_assign
from .mixture import (
    DEFAULT_LOADING,
    DEFAULT_SHRINKAGE,
    MixtureModel,
    e_step,
    kmeans_init,
    local_em,
    weighted_log_densities,
)


def _seed(random_state):
    if random_state is None or isinstance(random_state, (int, np.integer)):
        return random_state
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(2**31 - 1))
    raise ValueError(f"random_state must be None or an int, got {random_state!r}")


def _check_node_arrays(Xs, n_features=None):
    if isinstance(Xs, np.ndarray) and Xs.ndim == 2:
        raise ValueError("expected one sample array per node, got a single 2-D array")
    arrays = [check_array(X, ensure_min_samples=1) for X in Xs]
    if not arrays:
        raise ValueError("need at least one node")
    d = arrays[0].shape[1] if n_features is None else n_features
    if any(X.shape[1] != d for X in arrays):
        raise ValueError(f"every node must have {d} features")
    return arrays


class GaussianMixtureEM(ClusterMixin, DensityMixin, BaseEstimator):
    """Full-covariance Gaussian mixture fitted by k-means-initialized EM.

    Parameters
    ----------
    n_components : int
        Number of mixture components K.
    n_iter : int
        Number of EM iterations (no early stopping).
    shrinkage, loading : float
        Covariance regularization. Shrinkage toward a scaled identity is used
        only for components with fewer than ``d + 1`` effective samples;
        ``loading`` is added to every covariance.
    random_state : int or None
        Seed for the k-means++ initialization.

    Attributes
    ----------
    model_ : MixtureModel
    weights_, means_, covariances_ : ndarray
    log_likelihoods_ : list of float
        Training log-likelihood before the first and after every iteration.
    """

    def __init__(self, n_components=3, n_iter=50, shrinkage=DEFAULT_SHRINKAGE,
                 loading=DEFAULT_LOADING, random_state=None):
        self.n_components = n_components
        self.n_iter = n_iter
        self.shrinkage = shrinkage
        self.loading = loading
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=self.n_components)
        init = kmeans_init(X, self.n_components, seed=_seed(self.random_state),
                           shrinkage=self.shrinkage, loading=self.loading)
        res = local_em(init, X, self.n_iter, self.shrinkage, self.loading)
        self._set_model(res.model)
        self.log_likelihoods_ = res.log_likelihoods
        self.n_features_in_ = X.shape[1]
        self.labels_ = self.predict(X)
        return self

    def _set_model(self, model: MixtureModel):
        self.model_ = model
        self.weights_ = model.weights
        self.means_ = model.means
        self.covariances_ = model.covariances

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        X = self._check(X)
        return hard_assign(self.model_, X)

    def predict_proba(self, X):
        X = self._check(X)
        return e_step(self.model_, X).values

    def score_samples(self, X):
        X = self._check(X)
        return logsumexp(weighted_log_densities(self.model_, X), axis=1)

    def score(self, X, y=None):
        """Average per-sample log-likelihood."""
        X = self._check(X)
        return avg_log_likelihood(self.model_, X)


class GraphFedEM(BaseEstimator):
    """Personalized per-node mixtures trained with graph-regularized EM.

    ``fit`` takes a list of per-node sample arrays and the similarity graph
    (an :class:`EmpiricalGraph` or a square adjacency array).
    ``predict`` and ``score`` likewise take one array per node.
    """

    def __init__(self, n_components=3, n_rounds=10, n_local_steps=5, alpha=1.0,
                 shrinkage=DEFAULT_SHRINKAGE, loading=DEFAULT_LOADING,
                 repair_loading=DEFAULT_LOADING, random_state=0):
        self.n_components = n_components
        self.n_rounds = n_rounds
        self.n_local_steps = n_local_steps
        self.alpha = alpha
        self.shrinkage = shrinkage
        self.loading = loading
        self.repair_loading = repair_loading
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        seed = _seed(self.random_state)
        return TrainConfig(
            n_components=self.n_components, n_rounds=self.n_rounds,
            n_local_steps=self.n_local_steps, alpha=self.alpha, shrinkage=self.shrinkage,
            loading=self.loading, repair_loading=self.repair_loading,
            seed=0 if seed is None else seed,
        )

    def fit(self, Xs, graph, init_models=None, trace_path=None):
        arrays = _check_node_arrays(Xs)
        if not isinstance(graph, EmpiricalGraph):
            graph = EmpiricalGraph(np.asarray(graph, dtype=float))
        res = graphfed_em(graph, arrays, self._config(), init_models=init_models,
                          trace_path=trace_path)
        self.models_ = res.models
        self.counts_ = res.counts
        self.history_ = res.history
        self.graph_ = graph
        self.n_features_in_ = arrays[0].shape[1]
        return self

    def _check(self, Xs):
        check_is_fitted(self, "models_")
        arrays = _check_node_arrays(Xs, self.n_features_in_)
        if len(arrays) != len(self.models_):
            raise ValueError(f"expected {len(self.models_)} node arrays, got {len(arrays)}")
        return arrays

    def predict(self, Xs):
        arrays = self._check(Xs)
        return [hard_assign(m, X) for m, X in zip(self.models_, arrays)]

    def predict_proba(self, Xs):
        arrays = self._check(Xs)
        return [e_step(m, X).values for m, X in zip(self.models_, arrays)]

    def score_nodes(self, Xs):
        arrays = self._check(Xs)
        return np.array([avg_log_likelihood(m, X) for m, X in zip(self.models_, arrays)])

    def score(self, Xs, y=None):
        """Mean over nodes of the per-node average log-likelihood."""
        return float(self.score_nodes(Xs).mean())
