import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from graphfed.datasets import make_clustered_federation, sample_dataset
from graphfed.estimators import GaussianMixtureEM, GraphFedEM
from graphfed.federated import TrainConfig, graphfed_em
from graphfed.graph import block_graph
from graphfed.metrics import nmi
from graphfed.mixture import MixtureModel


@pytest.fixture
def blobs():
    truth = MixtureModel([0.5, 0.5], [[-6.0, 0.0], [6.0, 0.0]], np.stack([np.eye(2)] * 2))
    return sample_dataset(truth, 300, seed=0)


def test_params_round_trip_and_clone():
    est = GaussianMixtureEM(n_components=4, n_iter=7, random_state=3)
    assert est.get_params()["n_iter"] == 7
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(shrinkage=0.2)
    assert est.shrinkage == 0.2
    fed = GraphFedEM(alpha=0.3)
    assert clone(fed).get_params()["alpha"] == 0.3


def test_gmm_fit_predict(blobs):
    est = GaussianMixtureEM(n_components=2, n_iter=20, random_state=0).fit(blobs.samples)
    assert nmi(blobs.labels, est.labels_) == pytest.approx(1.0)
    assert est.predict_proba(blobs.samples).shape == (300, 2)
    np.testing.assert_allclose(est.weights_.sum(), 1.0)
    assert est.score(blobs.samples) == pytest.approx(est.score_samples(blobs.samples).mean())
    assert np.all(np.diff(est.log_likelihoods_) >= -1e-8)
    np.testing.assert_array_equal(est.fit_predict(blobs.samples), est.labels_)


def test_gmm_validation(blobs):
    est = GaussianMixtureEM(n_components=2)
    with pytest.raises(NotFittedError):
        est.predict(blobs.samples)
    est.fit(blobs.samples)
    with pytest.raises(ValueError):
        est.predict(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        GaussianMixtureEM(n_components=2).fit([[np.nan, 1.0], [0.0, 1.0]])


def test_graphfed_estimator_matches_function():
    fed = make_clustered_federation(2, 2, 2, 2, n_train=30, n_val=20, seed=1)
    Xs = [t.samples for t in fed.train]
    g = block_graph(fed.cluster_of)
    est = GraphFedEM(n_components=2, n_rounds=3, random_state=4).fit(Xs, g)
    ref = graphfed_em(g, Xs, TrainConfig(n_components=2, n_rounds=3, seed=4))
    for a, b in zip(est.models_, ref.models):
        np.testing.assert_array_equal(a.means, b.means)
    assert len(est.predict(Xs)) == 4
    assert est.score_nodes(Xs).shape == (4,)
    assert est.score(Xs) == pytest.approx(est.score_nodes(Xs).mean())
    # adjacency arrays are accepted as well
    est2 = GraphFedEM(n_components=2, n_rounds=3, random_state=4).fit(Xs, np.asarray(g.weights))
    np.testing.assert_array_equal(est2.models_[0].means, est.models_[0].means)


def test_graphfed_estimator_validation():
    est = GraphFedEM(n_components=2)
    with pytest.raises(ValueError):
        est.fit(np.zeros((10, 2)), np.zeros((1, 1)))
    Xs = [np.random.default_rng(i).standard_normal((10, 2)) for i in range(2)]
    est.fit(Xs, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        est.predict(Xs[:1])
