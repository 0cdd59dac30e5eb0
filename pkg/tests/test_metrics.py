import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp
from sklearn.metrics import normalized_mutual_info_score

from graphfed.datasets import sample_dataset
from graphfed.exceptions import LabelLengthMismatch
from graphfed.graph import EmpiricalGraph
from graphfed.metrics import (
    MetricsRecord,
    avg_log_likelihood,
    centroid_error,
    consensus_error,
    consensus_terms,
    hard_assign,
    nmi,
    replicate_stats,
)
from graphfed.mixture import MixtureModel, e_step, log_gaussian_pdf, weighted_log_densities

from conftest import naive_log_likelihood, random_model


# -- log-likelihood and hard assignment -----------------------------------------------

def test_avg_ll_single_sample(rng):
    m = MixtureModel([1.0], [[0.5, -1.0]], [np.diag([2.0, 0.5])])
    x = np.array([[1.0, 0.0]])
    assert avg_log_likelihood(m, x) == pytest.approx(log_gaussian_pdf(x[0], m.component(0)), abs=1e-12)


def test_avg_ll_duplicate_invariant_and_naive(rng):
    m = random_model(rng, 3, 2)
    X = rng.standard_normal((25, 2)) * 3
    assert avg_log_likelihood(m, np.vstack([X, X])) == pytest.approx(avg_log_likelihood(m, X), abs=1e-12)
    assert avg_log_likelihood(m, X) == pytest.approx(naive_log_likelihood(m, X) / 25, abs=1e-10)


def test_true_model_beats_mean_shuffled_model():
    rng = np.random.default_rng(2)
    truth = random_model(rng, 3, 2, spread=5.0)
    shuffled = MixtureModel(truth.weights, truth.means[[1, 2, 0]], truth.covariances)
    X = sample_dataset(truth, 10_000, seed=3).samples
    diff = (logsumexp(weighted_log_densities(truth, X), axis=1)
            - logsumexp(weighted_log_densities(shuffled, X), axis=1))
    assert diff.mean() == pytest.approx(avg_log_likelihood(truth, X) - avg_log_likelihood(shuffled, X))
    assert diff.mean() > 10 * diff.std(ddof=1) / math.sqrt(diff.size)


def test_hard_assign_cases(rng):
    one = random_model(rng, 1, 2)
    assert not hard_assign(one, rng.standard_normal((10, 2))).any()
    sep = MixtureModel([0.3, 0.3, 0.4], [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]], np.stack([np.eye(2)] * 3))
    np.testing.assert_array_equal(hard_assign(sep, sep.means), [0, 1, 2])
    tie = MixtureModel([0.5, 0.5], [[-1.0], [1.0]], np.stack([np.eye(1)] * 2))
    assert hard_assign(tie, [[0.0]])[0] == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 4))
def test_hard_assign_is_argmax_of_responsibilities(seed, K):
    rng = np.random.default_rng(seed)
    m = random_model(rng, K, 2)
    X = rng.standard_normal((30, 2)) * 4
    np.testing.assert_array_equal(hard_assign(m, X), e_step(m, X).values.argmax(axis=1))


# -- NMI ------------------------------------------------------------------------------

def test_nmi_fixtures():
    a = np.array([0, 0, 1, 1, 2, 2])
    assert nmi(a, a) == pytest.approx(1.0, abs=1e-12)
    assert nmi(a, np.array([5, 5, 3, 3, 9, 9])) == pytest.approx(1.0, abs=1e-12)
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    with pytest.raises(LabelLengthMismatch):
        nmi([0, 1], [0, 1, 1])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 60), ka=st.integers(2, 5), kb=st.integers(2, 5))
def test_nmi_matches_sklearn_geometric(seed, n, ka, kb):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, ka, n), rng.integers(0, kb, n)
    if len(set(a)) == 1 or len(set(b)) == 1:
        return
    expected = normalized_mutual_info_score(a, b, average_method="geometric")
    assert nmi(a, b) == pytest.approx(expected, abs=1e-10)
    assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-12)
    relabel = rng.permutation(ka)
    assert nmi(relabel[a], b) == pytest.approx(nmi(a, b), abs=1e-12)
    assert 0.0 <= nmi(a, b) <= 1.0


# -- centroid error ---------------------------------------------------------------------

def test_centroid_error_cases(rng):
    m = random_model(rng, 3, 2)
    assert centroid_error([m.means, m.means], [m, m.permute([2, 0, 1])]) == pytest.approx(0.0, abs=1e-24)
    one = MixtureModel([1.0], [[1.0, 2.0]], [np.eye(2)])
    shifted = MixtureModel([1.0], [[1.0, 2.0 + 0.3]], [np.eye(2)])
    assert centroid_error([one.means], [shifted]) == pytest.approx(0.09, abs=1e-15)
    assert centroid_error([one], [shifted]) == pytest.approx(0.09, abs=1e-15)


def test_centroid_error_averages_over_nodes_and_components():
    truth = np.array([[0.0], [10.0]])
    est_a = MixtureModel([0.5, 0.5], [[1.0], [10.0]], np.stack([np.eye(1)] * 2))
    est_b = MixtureModel([0.5, 0.5], [[12.0], [0.0]], np.stack([np.eye(1)] * 2))
    # node a: 1 + 0, node b (matched across the swap): 0 + 4
    assert centroid_error([truth, truth], [est_a, est_b]) == pytest.approx(5.0 / 4.0, abs=1e-12)


# -- consensus error ----------------------------------------------------------------------

def line_models(*means):
    return [MixtureModel([1.0], [[m]], [np.eye(1)]) for m in means]


def test_consensus_two_node_example():
    g = EmpiricalGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))
    n1 = 7.0
    value = consensus_error(line_models(0.0, 2.0), [[n1], [n1]], g, 10)
    assert value == pytest.approx(n1 * (4 + 4) / (2 * 10), abs=1e-12)


def test_consensus_zero_for_identical_models(rng):
    m = random_model(rng, 3, 2)
    g = EmpiricalGraph(np.ones((3, 3)) - np.eye(3))
    models = [m, m.permute([1, 2, 0]), m]
    counts = [[3.0, 4.0, 5.0], [4.0, 5.0, 3.0], [1.0, 1.0, 1.0]]
    assert consensus_error(models, counts, g, 12) == pytest.approx(0.0, abs=1e-20)


def test_consensus_edge_scaling_invariance(rng):
    models = [random_model(rng, 2, 2) for _ in range(3)]
    counts = [rng.uniform(1, 5, 2) for _ in range(3)]
    w = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 2.0], [0.5, 2.0, 0.0]])
    a = consensus_error(models, counts, EmpiricalGraph(w), 8)
    b = consensus_error(models, counts, EmpiricalGraph(2 * w), 8)
    assert a == pytest.approx(b, rel=1e-12)


def test_consensus_uses_each_node_size():
    g = EmpiricalGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))
    res = consensus_terms(line_models(0.0, 2.0), [[2.0], [3.0]], g, [4, 6])
    np.testing.assert_allclose(res.per_node, [2.0 * 4 / 4, 3.0 * 4 / 6])
    assert res.value == pytest.approx((2.0 + 2.0) / 2)


def test_consensus_skips_isolated_nodes():
    g = EmpiricalGraph(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    res = consensus_terms(line_models(0.0, 2.0, 100.0), [[1.0], [1.0], [1.0]], g, 1)
    assert res.skipped == [(2, 0)]
    assert math.isnan(res.per_node[2])
    assert res.value == pytest.approx((4.0 + 4.0) / 3)


# -- replicate statistics ---------------------------------------------------------------

def test_replicate_stats_cases():
    recs = [MetricsRecord(nmi=v, mu_err=2 * v) for v in (1.0, 2.0, 3.0)]
    stats = replicate_stats(recs)
    assert stats["nmi"][0] == pytest.approx(2.0)
    assert stats["nmi"][1] == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert stats["mu_err"] == pytest.approx((4.0, 2 / math.sqrt(3)))
    assert replicate_stats([MetricsRecord(nmi=0.4)])["nmi"] == (0.4, 0.0)
    row = {"avg_log_likelihood": 1.0, "nmi": 0.5, "mu_err": 1.0, "consensus_err": 0.0}
    assert replicate_stats([row, dict(row)])["nmi"] == (0.5, 0.0)
    with pytest.raises(ValueError):
        replicate_stats([])
