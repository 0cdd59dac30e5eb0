"""Empirical similarity graphs over federated nodes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import InvalidPrior, InvalidProbability, ParseError


@dataclass(frozen=True, eq=False)
class EmpiricalGraph:
    """Dense weighted adjacency over ``n_nodes`` nodes.

    ``kind`` is ``"sbm"`` / ``"custom"`` for symmetric graphs and
    ``"prior_overlap"`` for row-normalized graphs, which are not symmetric
    in general. Aggregation always reads row ``i`` for node ``i``.
    """

    weights: np.ndarray
    cluster_of: Optional[np.ndarray] = None
    kind: str = "custom"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"adjacency must be square, got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("adjacency weights must be finite and non-negative")
        if np.any(np.diag(w) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if self.kind != "prior_overlap" and not np.array_equal(w, w.T):
            raise ValueError(f"{self.kind!r} graphs must be symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.cluster_of is not None:
            c = np.array(self.cluster_of, dtype=int)
            if c.shape != (w.shape[0],):
                raise ValueError("cluster_of must have one entry per node")
            c.setflags(write=False)
            object.__setattr__(self, "cluster_of", c)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        return neighbors(self, i)


def neighbors(g: EmpiricalGraph, i: int) -> list[tuple[int, float]]:
    """All ``(j, A_ij)`` with positive weight in row ``i``."""
    if not 0 <= i < g.n_nodes:
        raise IndexError(f"node {i} out of range for a graph with {g.n_nodes} nodes")
    row = g.weights[i]
    return [(int(j), float(row[j])) for j in np.flatnonzero(row > 0)]


def _check_probability(name, p):
    if not 0.0 <= p <= 1.0:
        raise InvalidProbability(f"{name}={p} is not in [0, 1]")


def sbm_graph(C: int, nodes_per_cluster: int, p_in: float, p_out: float, seed=None) -> EmpiricalGraph:
    """Unweighted stochastic block model graph.

    Nodes are ordered cluster by cluster (node ``i`` is in cluster
    ``i // nodes_per_cluster``). Each unordered pair is drawn once.
    """
    _check_probability("p_in", p_in)
    _check_probability("p_out", p_out)
    if C < 1 or nodes_per_cluster < 1:
        raise ValueError("need at least one cluster and one node per cluster")
    rng = np.random.default_rng(seed)
    n = C * nodes_per_cluster
    cluster_of = np.repeat(np.arange(C), nodes_per_cluster)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(cluster_of[iu] == cluster_of[ju], p_in, p_out)
    edges = rng.random(iu.size) < prob
    w = np.zeros((n, n))
    w[iu[edges], ju[edges]] = 1.0
    w = w + w.T
    return EmpiricalGraph(w, cluster_of=cluster_of, kind="sbm")


def block_graph(cluster_of) -> EmpiricalGraph:
    """Complete graph inside each cluster, no edges across clusters."""
    c = np.asarray(cluster_of, dtype=int)
    w = (c[:, None] == c[None, :]).astype(float)
    np.fill_diagonal(w, 0.0)
    return EmpiricalGraph(w, cluster_of=c, kind="sbm")


def prior_overlap_graph(priors, atol: float = 1e-6) -> EmpiricalGraph:
    """Row-normalized overlap ``sum_k min(pi_k^i, pi_k^j)`` between node priors.

    Row ``i`` is normalized over every other node with positive overlap.
    """
    P = np.asarray(priors, dtype=float)
    if P.ndim != 2:
        raise InvalidPrior("priors must be an (N, K) array")
    sums = P.sum(axis=1)
    if np.any(P < 0) or np.any(np.abs(sums - 1.0) > atol):
        raise InvalidPrior("every prior must be non-negative and sum to 1")
    overlap = np.minimum(P[:, None, :], P[None, :, :]).sum(axis=-1)
    np.fill_diagonal(overlap, 0.0)
    row = overlap.sum(axis=1, keepdims=True)
    w = np.divide(overlap, row, out=np.zeros_like(overlap), where=row > 0)
    return EmpiricalGraph(w, kind="prior_overlap")


def write_edge_list(g: EmpiricalGraph, path) -> None:
    """Write ``i j weight`` lines; symmetric graphs list each pair once."""
    symmetric = g.kind != "prior_overlap"
    with open(path, "w") as fh:
        fh.write(f"# n_nodes={g.n_nodes} kind={g.kind}\n")
        if g.cluster_of is not None:
            fh.write("# cluster_of=" + ",".join(str(c) for c in g.cluster_of) + "\n")
        for i in range(g.n_nodes):
            for j in np.flatnonzero(g.weights[i] > 0):
                if symmetric and j < i:
                    continue
                fh.write(f"{i} {j} {float(g.weights[i, j])!r}\n")


def read_edge_list(path) -> EmpiricalGraph:
    n = None
    kind = "custom"
    cluster_of = None
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, value = token.partition("=")
                    if key == "n_nodes":
                        n = int(value)
                    elif key == "kind":
                        kind = value
                    elif key == "cluster_of":
                        cluster_of = [int(c) for c in value.split(",")]
                continue
            parts = line.split()
            try:
                i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            except (IndexError, ValueError) as exc:
                raise ParseError(f"expected 'i j weight', got {line!r}", lineno) from exc
            if len(parts) != 3:
                raise ParseError(f"expected 'i j weight', got {line!r}", lineno)
            edges.append((i, j, w, lineno))
    if n is None:
        n = 1 + max((max(i, j) for i, j, _, _ in edges), default=-1)
    weights = np.zeros((n, n))
    for i, j, w, lineno in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"node index out of range for n_nodes={n}", lineno)
        weights[i, j] = w
        if kind != "prior_overlap":
            weights[j, i] = w
    return EmpiricalGraph(weights, cluster_of=cluster_of, kind=kind)
