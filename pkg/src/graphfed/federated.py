"""Graph-regularized federated EM and its baselines.

One training round is two phases. First every node runs ``n_local_steps``
EM iterations and publishes a frozen :class:`RoundSnapshot`. Then every
node aligns each neighbour's published mixture to its own component order,
takes the count-weighted average over itself and its neighbours, and moves
toward that average by ``alpha``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alignment import assign_components, distance_matrix
from .exceptions import CovarianceNotPD, GraphFedError, MissingClusterIds, StepTooLarge
from .graph import EmpiricalGraph, block_graph
from .metrics import consensus_terms
from .mixture import (
    DEFAULT_LOADING,
    DEFAULT_SHRINKAGE,
    EMResult,
    LocalDataset,
    MixtureModel,
    _e_step,
    cholesky,
    kmeans_init,
    local_em,
)
from .seeding import mix_seed


@dataclass(frozen=True)
class TrainConfig:
    n_components: int = 3
    n_rounds: int = 10
    n_local_steps: int = 5
    alpha: float = 1.0
    shrinkage: float = DEFAULT_SHRINKAGE
    loading: float = DEFAULT_LOADING
    repair_loading: float = DEFAULT_LOADING
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha={self.alpha} is not in [0, 1]")
        if self.n_rounds < 0 or self.n_local_steps < 0:
            raise ValueError("n_rounds and n_local_steps must be non-negative")
        if self.n_components < 1:
            raise ValueError("n_components must be positive")

    @property
    def total_steps(self) -> int:
        return self.n_rounds * self.n_local_steps


@dataclass(frozen=True, eq=False)
class RoundSnapshot:
    """Parameters and counts every node publishes at the end of its local phase."""

    round: int
    models: tuple
    counts: tuple

    def __post_init__(self):
        frozen = []
        for c in self.counts:
            c = np.array(c, dtype=float)
            c.setflags(write=False)
            frozen.append(c)
        object.__setattr__(self, "counts", tuple(frozen))
        for m in self.models:
            for arr in (m.weights, m.means, m.covariances):
                arr.setflags(write=False)


@dataclass
class RoundRecord:
    round: int
    train_ll: np.ndarray
    val_ll: Optional[np.ndarray]
    consensus_err: np.ndarray
    respawns: list = field(default_factory=list)   # (node, local step)
    degenerate: list = field(default_factory=list)  # (node, component)


@dataclass
class FedResult:
    models: list
    counts: list
    history: list = field(default_factory=list)


# -- parameter-level aggregation ----------------------------------------------

def _bcast(counts, param):
    return np.asarray(counts, dtype=float).reshape((-1,) + (1,) * (np.ndim(param) - 1))


def aggregate_array(self_param, self_counts, neighbor_params, neighbor_counts, edge_weights):
    """Count-weighted average of a per-component parameter over a node and its neighbours.

    Parameters have a leading component axis ``K``; counts have shape
    ``(K,)``. Components that receive no neighbour mass (or no mass at
    all) keep ``self_param`` exactly.
    """
    self_param = np.asarray(self_param, dtype=float)
    num = _bcast(self_counts, self_param) * self_param
    den = np.asarray(self_counts, dtype=float).copy()
    nbr_mass = np.zeros_like(den)
    for p, c, a in zip(neighbor_params, neighbor_counts, edge_weights):
        num = num + a * _bcast(c, self_param) * np.asarray(p, dtype=float)
        mass = a * np.asarray(c, dtype=float)
        den = den + mass
        nbr_mass = nbr_mass + mass
    out = self_param.copy()
    ok = (den > 0) & (nbr_mass > 0)
    out[ok] = num[ok] / _bcast(den[ok], self_param)
    return out


def aggregate_denominators(self_counts, neighbor_counts, edge_weights) -> np.ndarray:
    den = np.asarray(self_counts, dtype=float).copy()
    for c, a in zip(neighbor_counts, edge_weights):
        den = den + a * np.asarray(c, dtype=float)
    return den


def blend_array(local, aggregated, alpha):
    return (1.0 - alpha) * np.asarray(local, dtype=float) + alpha * np.asarray(aggregated, dtype=float)


def aggregate_parameters(self_model: MixtureModel, self_counts, neighbor_models: Sequence[MixtureModel],
                         neighbor_counts, edge_weights) -> MixtureModel:
    """Responsibility-weighted aggregate of already-aligned neighbour mixtures.

    Means and covariances are averaged per component with weights
    ``N_k`` (own) and ``A_ij N_k^j`` (neighbours); mixing weights are the
    per-component total weight normalized over components.
    """
    means = aggregate_array(self_model.means, self_counts, [m.means for m in neighbor_models],
                            neighbor_counts, edge_weights)
    covs = aggregate_array(self_model.covariances, self_counts,
                           [m.covariances for m in neighbor_models], neighbor_counts, edge_weights)
    den = aggregate_denominators(self_counts, neighbor_counts, edge_weights)
    weights = den / den.sum() if den.sum() > 0 else self_model.weights.copy()
    return MixtureModel(weights, means, covs)


def repair_covariance(cov, loading: float = DEFAULT_LOADING) -> np.ndarray:
    """Symmetrize and add ``loading`` to the diagonal; floor eigenvalues if still not PD."""
    cov = np.asarray(cov, dtype=float)
    out = 0.5 * (cov + cov.T)
    out[np.diag_indices(out.shape[0])] += loading
    try:
        cholesky(out)
        return out
    except CovarianceNotPD:
        vals, vecs = np.linalg.eigh(out)
        floored = (vecs * np.maximum(vals, loading)) @ vecs.T
        floored = 0.5 * (floored + floored.T)
        try:
            cholesky(floored)
        except CovarianceNotPD:
            # rounding can leave the floor a hair short of PD for tiny loadings
            floored[np.diag_indices(out.shape[0])] += loading
        return floored


def blend(local: MixtureModel, aggregated: MixtureModel, alpha: float,
          repair_loading: float = DEFAULT_LOADING) -> MixtureModel:
    """Move ``local`` toward ``aggregated`` by ``alpha``, then repair."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} is not in [0, 1]")
    weights = blend_array(local.weights, aggregated.weights, alpha)
    means = blend_array(local.means, aggregated.means, alpha)
    covs = blend_array(local.covariances, aggregated.covariances, alpha)
    covs = np.stack([repair_covariance(c, repair_loading) for c in covs])
    return MixtureModel(weights / weights.sum(), means, covs)


def proximal_alpha(self_count, neighbor_counts, edge_weights, eta, lam) -> float:
    total = float(self_count) + sum(a * float(c) for c, a in zip(neighbor_counts, edge_weights))
    return eta * lam * total


def proximal_step_reference(theta_em, neighbor_params, neighbor_counts, self_count, edge_weights,
                            eta: float, lam: float):
    """One gradient step on the graph smoothness penalty, taken at the EM optimum.

    Returns ``theta_em - eta*lam*sum_j A_ij N_j (theta_em - theta_j)``. The
    result coincides with blending toward the count-weighted aggregate with
    ``alpha = eta*lam*(N_i + sum_j A_ij N_j)``.
    """
    alpha = proximal_alpha(self_count, neighbor_counts, edge_weights, eta, lam)
    if not 0.0 <= alpha <= 1.0:
        raise StepTooLarge(f"eta*lam*(total count) = {alpha} is outside [0, 1]")
    theta_em = np.asarray(theta_em, dtype=float)
    grad = np.zeros_like(theta_em)
    for p, c, a in zip(neighbor_params, neighbor_counts, edge_weights):
        grad = grad + a * float(c) * (theta_em - np.asarray(p, dtype=float))
    return theta_em - eta * lam * grad


# -- training loops -------------------------------------------------------------

def _node_sets(datasets):
    """Split a FederatedDataset (or a plain sequence of datasets) into train/val lists."""
    train = getattr(datasets, "train", None)
    if train is not None:
        return list(train), list(datasets.val) if datasets.val else None
    sets = [d if isinstance(d, LocalDataset) else LocalDataset(d) for d in datasets]
    return sets, None


def _with_context(exc: GraphFedError, node, rnd=None):
    where = f"node {node}" if rnd is None else f"node {node}, round {rnd}"
    exc.node, exc.round = node, rnd
    exc.args = (f"{where}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
    return exc


def initial_models(train, cfg: TrainConfig) -> list[MixtureModel]:
    models = []
    for i, ds in enumerate(train):
        try:
            models.append(kmeans_init(ds, cfg.n_components, seed=mix_seed(cfg.seed, i),
                                      shrinkage=cfg.shrinkage, loading=cfg.loading))
        except GraphFedError as exc:
            raise _with_context(exc, i) from None
    return models


def _aligned_neighbors(snapshot: RoundSnapshot, i: int, nbrs):
    ref = snapshot.models[i]
    models, counts, weights = [], [], []
    for j, a in nbrs:
        perm = assign_components(distance_matrix(ref, snapshot.models[j])).mapping
        models.append(snapshot.models[j].permute(perm))
        counts.append(snapshot.counts[j][perm])
        weights.append(a)
    return models, counts, weights


def aggregation_step(snapshot: RoundSnapshot, graph: EmpiricalGraph, cfg: TrainConfig):
    """Phase two of a round: returns new per-node models and degenerate (node, k) flags.

    Nodes with no positive-weight neighbour, or ``alpha == 0``, keep their
    published model untouched.
    """
    new_models, degenerate = [], []
    for i in range(graph.n_nodes):
        nbrs = graph.neighbors(i)
        local = snapshot.models[i]
        if cfg.alpha == 0.0 or not nbrs:
            new_models.append(local)
            continue
        try:
            models, counts, weights = _aligned_neighbors(snapshot, i, nbrs)
            den = aggregate_denominators(snapshot.counts[i], counts, weights)
            own = snapshot.counts[i]
            degenerate.extend((i, int(k)) for k in np.flatnonzero((den <= 0) | (own <= 0)))
            agg = aggregate_parameters(local, own, models, counts, weights)
            new_models.append(blend(local, agg, cfg.alpha, cfg.repair_loading))
        except GraphFedError as exc:
            raise _with_context(exc, i, snapshot.round) from None
    return new_models, degenerate


def graphfed_em(graph: EmpiricalGraph, datasets, cfg: TrainConfig,
                init_models: Optional[Sequence[MixtureModel]] = None,
                trace_path=None, record_history: bool = True) -> FedResult:
    """Train one personalized mixture per node with graph-based aggregation.

    ``datasets`` is a :class:`~graphfed.datasets.FederatedDataset` or a
    sequence of per-node datasets / sample arrays. The returned
    ``history`` has one :class:`RoundRecord` per round; ``counts`` are the
    responsibility counts of the final models on each node's training set.
    ``record_history=False`` skips the per-round diagnostics (the history is
    then empty) unless ``trace_path`` asks for them.
    """
    train, val = _node_sets(datasets)
    if graph.n_nodes != len(train):
        raise ValueError(f"graph has {graph.n_nodes} nodes but there are {len(train)} datasets")
    models = list(init_models) if init_models is not None else initial_models(train, cfg)
    history = []
    for t in range(1, cfg.n_rounds + 1):
        published, counts, respawns = [], [], []
        for i, ds in enumerate(train):
            try:
                res = local_em(models[i], ds, cfg.n_local_steps, cfg.shrinkage, cfg.loading)
            except GraphFedError as exc:
                raise _with_context(exc, i, t) from None
            published.append(res.model.copy())
            counts.append(res.counts)
            respawns.extend((i, s) for s in res.respawn_steps)
        snapshot = RoundSnapshot(t, tuple(published), tuple(counts))
        models, degenerate = aggregation_step(snapshot, graph, cfg)
        models = [m.copy() for m in models]
        if record_history or trace_path is not None:
            history.append(_round_record(t, models, train, val, graph, respawns, degenerate))
    final_counts = [_e_step(m, ds)[0].counts for m, ds in zip(models, train)]
    result = FedResult(models, final_counts, history)
    if trace_path is not None:
        write_trace(result.history, trace_path)
    return result


def _round_record(t, models, train, val, graph, respawns, degenerate):
    train_ll, counts = [], []
    for m, ds in zip(models, train):
        resp, ll = _e_step(m, ds)
        train_ll.append(ll / ds.n_samples)
        counts.append(resp.counts)
    val_ll = None
    if val is not None:
        val_ll = np.array([_e_step(m, ds)[1] / ds.n_samples for m, ds in zip(models, val)])
    cons = consensus_terms(models, counts, graph, [ds.n_samples for ds in train])
    return RoundRecord(t, np.array(train_ll), val_ll, cons.per_node, respawns, degenerate)


def write_trace(history, path) -> None:
    """Per-round diagnostics as ``round,node,train_ll,val_ll,consensus_err`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "node", "train_ll", "val_ll", "consensus_err"])
        for rec in history:
            for i in range(rec.train_ll.size):
                val = rec.val_ll[i] if rec.val_ll is not None else math.nan
                w.writerow([rec.round, i, repr(float(rec.train_ll[i])), repr(float(val)),
                            repr(float(rec.consensus_err[i]))])


def train_local(datasets, cfg: TrainConfig, on_error: str = "raise") -> list:
    """Independent per-node EM for ``n_rounds * n_local_steps`` steps.

    With ``on_error="skip"`` a failing node's entry is the exception instead
    of an :class:`EMResult`.
    """
    train, _ = _node_sets(datasets)
    out = []
    for i, ds in enumerate(train):
        try:
            init = kmeans_init(ds, cfg.n_components, seed=mix_seed(cfg.seed, i),
                               shrinkage=cfg.shrinkage, loading=cfg.loading)
            out.append(local_em(init, ds, cfg.total_steps, cfg.shrinkage, cfg.loading))
        except GraphFedError as exc:
            exc = _with_context(exc, i)
            if on_error != "skip":
                raise exc from None
            out.append(exc)
    return out


def _fit_pooled(samples: np.ndarray, cfg: TrainConfig, seed, init_model=None) -> EMResult:
    if init_model is None:
        init_model = kmeans_init(samples, cfg.n_components, seed=seed,
                                 shrinkage=cfg.shrinkage, loading=cfg.loading)
    return local_em(init_model, samples, cfg.total_steps, cfg.shrinkage, cfg.loading)


def train_centralized(datasets, cfg: TrainConfig, init_model: Optional[MixtureModel] = None) -> EMResult:
    """One mixture fitted on the concatenation of every node's training data."""
    train, _ = _node_sets(datasets)
    X = np.concatenate([ds.samples for ds in train])
    return _fit_pooled(X, cfg, mix_seed(cfg.seed, 0), init_model)


def _cluster_ids(datasets, train):
    cluster_of = getattr(datasets, "cluster_of", None)
    if cluster_of is None:
        ids = [ds.cluster_id for ds in train]
        if any(c is None for c in ids):
            raise MissingClusterIds("oracle training needs the true cluster of every node")
        cluster_of = ids
    return np.asarray(cluster_of, dtype=int)


def train_oracle(datasets, cfg: TrainConfig, mode: str = "pooled"):
    """Baselines that know the true cluster of every node.

    ``mode="pooled"`` returns ``{cluster: EMResult}`` fitted on each
    cluster's pooled data; ``mode="aggregated"`` runs :func:`graphfed_em`
    on the block graph of the true clusters and returns its
    :class:`FedResult`.
    """
    train, _ = _node_sets(datasets)
    cluster_of = _cluster_ids(datasets, train)
    if mode == "pooled":
        out = {}
        for rank, c in enumerate(np.unique(cluster_of)):
            X = np.concatenate([train[i].samples for i in np.flatnonzero(cluster_of == c)])
            out[int(c)] = _fit_pooled(X, cfg, mix_seed(cfg.seed, rank))
        return out
    if mode == "aggregated":
        return graphfed_em(block_graph(cluster_of), datasets, cfg)
    raise ValueError(f"unknown oracle mode {mode!r}")
