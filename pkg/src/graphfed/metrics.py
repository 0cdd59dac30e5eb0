"""Evaluation metrics for federated mixtures."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .alignment import assign_components, distance_matrix
from .exceptions import LabelLengthMismatch, ModelShapeMismatch
from .mixture import MixtureModel, e_step, log_likelihood


@dataclass
class MetricsRecord:
    avg_log_likelihood: float = math.nan
    nmi: float = math.nan
    mu_err: float = math.nan
    consensus_err: float = math.nan
    replicate: int = 0
    fingerprint: str = ""

    METRICS = ("avg_log_likelihood", "nmi", "mu_err", "consensus_err")


def avg_log_likelihood(model: MixtureModel, val) -> float:
    n = val.n_samples if hasattr(val, "n_samples") else np.atleast_2d(val).shape[0]
    return log_likelihood(model, val) / n


def hard_assign(model: MixtureModel, data) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest component index
    return np.argmax(e_step(model, data).values, axis=1)


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(labels_a, labels_b) -> float:
    """Normalized mutual information with geometric-mean normalization."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise LabelLengthMismatch(f"label vectors have shapes {a.shape} and {b.shape}")
    n = a.size
    if n == 0:
        raise LabelLengthMismatch("label vectors must be non-empty")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    ra, rb = table.shape
    if ra == 1 and rb == 1:
        return 1.0
    if ra == 1 or rb == 1:
        return 0.0
    h_a = _entropy(table.sum(axis=1), n)
    h_b = _entropy(table.sum(axis=0), n)
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / (n * n)
    mi = float((pij * (np.log(pij) - np.log(outer))).sum())
    mi = max(mi, 0.0)
    return min(mi / math.sqrt(h_a * h_b), 1.0)


def _as_model(means):
    """Wrap bare means as unit-covariance components for Bhattacharyya matching."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    K, d = means.shape
    return MixtureModel(np.full(K, 1.0 / K), means, np.broadcast_to(np.eye(d), (K, d, d)).copy())


def centroid_error(true_means, est_models) -> float:
    """Mean squared distance between true and estimated component means.

    ``true_means[i]`` is either a ``(K, d)`` array or the generating
    :class:`MixtureModel` of node ``i``; components are matched by optimal
    assignment on Bhattacharyya distance.
    """
    if len(true_means) != len(est_models):
        raise ModelShapeMismatch("need one set of true means per estimated model")
    total = 0.0
    count = 0
    for truth, est in zip(true_means, est_models):
        ref = truth if isinstance(truth, MixtureModel) else _as_model(truth)
        perm = assign_components(distance_matrix(ref, est)).mapping
        diff = ref.means - est.means[perm]
        total += float((diff ** 2).sum())
        count += ref.n_components
    return total / count


@dataclass
class ConsensusResult:
    value: float
    per_node: np.ndarray
    skipped: list = field(default_factory=list)  # (node, component) pairs without neighbour mass


def consensus_terms(models, counts, graph, n_samples) -> ConsensusResult:
    """Per-node consensus deviations; see :func:`consensus_error`."""
    N = len(models)
    if graph.n_nodes != N or len(counts) != N:
        raise ModelShapeMismatch("graph, models and counts disagree on the node count")
    n_samples = np.broadcast_to(np.asarray(n_samples, dtype=float), (N,))
    per_node = np.full(N, np.nan)
    skipped = []
    for i in range(N):
        nbrs = graph.neighbors(i)
        K = models[i].n_components
        if not nbrs:
            skipped.extend((i, k) for k in range(K))
            continue
        num = np.zeros_like(models[i].means)
        den = np.zeros(K)
        for j, a in nbrs:
            perm = assign_components(distance_matrix(models[i], models[j])).mapping
            c = np.asarray(counts[j], dtype=float)[perm]
            num += a * c[:, None] * models[j].means[perm]
            den += a * c
        term = 0.0
        ci = np.asarray(counts[i], dtype=float)
        for k in range(K):
            if den[k] <= 0:
                skipped.append((i, k))
                continue
            cons = num[k] / den[k]
            term += ci[k] * float(((models[i].means[k] - cons) ** 2).sum())
        per_node[i] = term / n_samples[i]
    valid = per_node[~np.isnan(per_node)]
    value = float(valid.sum() / N) if valid.size else math.nan
    return ConsensusResult(value, per_node, skipped)


def consensus_error(models, counts, graph, n_samples) -> float:
    """Count-weighted squared deviation of node means from their neighbours' consensus.

    ``n_samples`` is either one training-set size shared by every node or a
    per-node sequence; each node's sum is divided by its own size, and the
    total by the number of nodes. Isolated nodes contribute nothing.
    """
    return consensus_terms(models, counts, graph, n_samples).value


def replicate_stats(records) -> dict:
    """Mean and standard error (sample std / sqrt(R)) of every metric.

    ``records`` may be :class:`MetricsRecord` instances or mappings; a
    metric missing from a mapping counts as NaN and is ignored.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    out = {}
    for name in MetricsRecord.METRICS:
        vals = np.array([
            (r.get(name, math.nan) if isinstance(r, dict) else getattr(r, name)) for r in records
        ], dtype=float)
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            out[name] = (math.nan, math.nan)
            continue
        mean = float(vals.mean())
        stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[name] = (mean, stderr)
    return out
