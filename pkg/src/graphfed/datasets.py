"""Synthetic federated datasets and ingestion of pre-embedded feature files."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import InsufficientData, ParseError
from .mixture import LocalDataset, MixtureModel, cholesky
from .seeding import mix_seed

DEFAULT_VAL_SIZE = 500


@dataclass(frozen=True, eq=False)
class ClusterParams:
    cluster: int
    model: MixtureModel
    transform: np.ndarray


@dataclass(eq=False)
class FederatedDataset:
    """Per-node training and validation data plus what generated them."""

    train: list[LocalDataset]
    val: list[LocalDataset]
    cluster_params: Optional[list[ClusterParams]] = None
    cluster_of: Optional[np.ndarray] = None
    shared_model: Optional[MixtureModel] = None
    priors: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.train)

    def generating_model(self, i: int) -> Optional[MixtureModel]:
        if self.cluster_params is not None:
            return self.cluster_params[self.cluster_of[i]].model
        if self.shared_model is not None:
            if self.priors is not None:
                m = self.shared_model
                return MixtureModel(self.priors[i], m.means, m.covariances)
            return self.shared_model
        return None

    def true_means(self):
        """Per-node generating means, or ``None`` when they are unknown."""
        models = [self.generating_model(i) for i in range(self.n_nodes)]
        if any(m is None for m in models):
            return None
        return [m.means for m in models]


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random proper rotation (orthonormal, determinant +1)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_shear(d: int, rng: np.random.Generator, shear_range: float = 0.5) -> np.ndarray:
    s = np.eye(d)
    iu = np.triu_indices(d, k=1)
    s[iu] = rng.uniform(-shear_range, shear_range, size=iu[0].size)
    return s


def random_base_gmm(K: int, d: int, rng: np.random.Generator, separation: float = 5.0,
                    cov_scale: float = 1.0) -> MixtureModel:
    means = rng.uniform(-separation, separation, size=(K, d))
    covs = np.empty((K, d, d))
    for k in range(K):
        M = rng.standard_normal((d, d)) * np.sqrt(cov_scale / d)
        covs[k] = M @ M.T + 0.05 * cov_scale * np.eye(d)
    return MixtureModel(np.full(K, 1.0 / K), means, covs)


def generate_cluster_gmms(C: int, K: int, d: int, separation: float = 5.0, seed=None, *,
                          rotate: bool = True, shear: bool = True, shear_range: float = 0.5,
                          cov_scale: float = 1.0) -> list[ClusterParams]:
    """One base mixture, mapped per cluster by ``L_c = R_c S_c``.

    Means become ``L_c mu`` and covariances ``L_c Sigma L_c^T``.
    """
    if C < 1 or K < 1 or d < 1:
        raise ValueError("C, K and d must all be positive")
    rng = np.random.default_rng(seed)
    base = random_base_gmm(K, d, rng, separation, cov_scale)
    out = []
    for c in range(C):
        R = random_rotation(d, rng) if rotate else np.eye(d)
        S = random_shear(d, rng, shear_range) if shear else np.eye(d)
        L = R @ S
        means = base.means @ L.T
        covs = np.einsum("ij,kjl,ml->kim", L, base.covariances, L)
        covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
        out.append(ClusterParams(c, MixtureModel(base.weights.copy(), means, covs), L))
    return out


def sample_dataset(model: MixtureModel, n: int, seed=None) -> LocalDataset:
    """Draw ``n`` labelled samples from a mixture."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    p = np.clip(model.weights, 0.0, None)
    labels = rng.choice(model.n_components, size=n, p=p / p.sum())
    noise = rng.standard_normal((n, model.dim))
    X = np.empty((n, model.dim))
    for k in range(model.n_components):
        idx = labels == k
        L = cholesky(model.covariances[k])
        X[idx] = model.means[k] + noise[idx] @ L.T
    return LocalDataset(X, labels)


def make_clustered_federation(C: int, nodes_per_cluster: int, K: int, d: int, n_train: int,
                              n_val: int = DEFAULT_VAL_SIZE, seed: int = 0,
                              **gmm_kwargs) -> FederatedDataset:
    """Nodes grouped in ``C`` clusters; nodes of a cluster share one mixture."""
    params = generate_cluster_gmms(C, K, d, seed=mix_seed(seed, 0), **gmm_kwargs)
    cluster_of = np.repeat(np.arange(C), nodes_per_cluster)
    train, val = [], []
    for i, c in enumerate(cluster_of):
        model = params[c].model
        tr = sample_dataset(model, n_train, seed=mix_seed(seed, 1, i))
        va = sample_dataset(model, n_val, seed=mix_seed(seed, 2, i))
        tr.cluster_id = va.cluster_id = int(c)
        train.append(tr)
        val.append(va)
    return FederatedDataset(train, val, cluster_params=params, cluster_of=cluster_of)


def make_prior_skew_federation(N: int, K: int, d: int, concentration: float, n_train: int,
                               n_val: int = DEFAULT_VAL_SIZE, seed: int = 0,
                               separation: float = 5.0, cov_scale: float = 1.0) -> FederatedDataset:
    """Shared components, node-specific mixing weights from a symmetric Dirichlet."""
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    rng = np.random.default_rng(mix_seed(seed, 0))
    shared = random_base_gmm(K, d, rng, separation, cov_scale)
    priors = rng.dirichlet(np.full(K, float(concentration)), size=N)
    train, val = [], []
    for i in range(N):
        model = MixtureModel(priors[i], shared.means, shared.covariances)
        train.append(sample_dataset(model, n_train, seed=mix_seed(seed, 1, i)))
        val.append(sample_dataset(model, n_val, seed=mix_seed(seed, 2, i)))
    return FederatedDataset(train, val, shared_model=shared, priors=priors)


def read_feature_file(path, d: Optional[int] = None):
    """Parse ``f0,...,f{d-1},label`` CSV text. Returns ``(X, labels)``.

    When ``d`` is given only the first ``d`` feature columns are kept.
    """
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty feature file", 1) from None
        n_feat = len(header) - 1
        expected = [f"f{j}" for j in range(n_feat)] + ["label"]
        if n_feat < 1 or [h.strip() for h in header] != expected:
            raise ParseError(f"header must be f0,...,f{{d-1}},label; got {','.join(header)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_feat + 1:
                raise ParseError(f"expected {n_feat + 1} columns, got {len(row)}", lineno)
            try:
                rows.append([float(c) for c in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from exc
    if not rows:
        raise InsufficientData("feature file has no data rows")
    X = np.array(rows)
    if d is not None:
        if d > X.shape[1]:
            raise ValueError(f"requested d={d} but file has {X.shape[1]} features")
        X = X[:, :d]
    return X, np.array(labels, dtype=int)


def dirichlet_label_partition(labels, n_nodes: int, concentration: float, min_size: int,
                              rng: np.random.Generator, max_tries: int = 100) -> list[np.ndarray]:
    """Split row indices over nodes with per-label Dirichlet proportions.

    The draw is repeated until every node receives at least ``min_size``
    rows.
    """
    classes = np.unique(labels)
    for _ in range(max_tries):
        parts = [[] for _ in range(n_nodes)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            p = rng.dirichlet(np.full(n_nodes, float(concentration)))
            cuts = np.floor(np.cumsum(p)[:-1] * idx.size).astype(int)
            for node, chunk in enumerate(np.split(idx, cuts)):
                parts[node].append(chunk)
        parts = [np.sort(np.concatenate(p)) for p in parts]
        if min(p.size for p in parts) >= min_size:
            return parts
    raise InsufficientData(
        f"could not give every one of {n_nodes} nodes {min_size} rows in {max_tries} draws"
    )


def load_embedded_features(path, n_nodes: int, concentration: float, n_train: int, seed: int = 0,
                           n_val_max: int = DEFAULT_VAL_SIZE, d: Optional[int] = None) -> FederatedDataset:
    """Label-skewed federation from a pre-embedded feature file.

    Each node gets ``n_train`` training rows; the rest of its share (up to
    ``n_val_max`` rows) is its validation set. ``priors`` holds each node's
    label proportions over its whole share.
    """
    X, labels = read_feature_file(path, d)
    if X.shape[0] < n_nodes * (n_train + 1):
        raise InsufficientData(
            f"{X.shape[0]} rows cannot supply {n_nodes} nodes with {n_train} training rows each"
        )
    rng = np.random.default_rng(seed)
    parts = dirichlet_label_partition(labels, n_nodes, concentration, n_train + 1, rng)
    classes = np.unique(labels)
    train, val, priors = [], [], []
    for idx in parts:
        idx = rng.permutation(idx)
        tr, va = idx[:n_train], idx[n_train:n_train + n_val_max]
        train.append(LocalDataset(X[tr], labels[tr]))
        val.append(LocalDataset(X[va], labels[va]))
        priors.append(np.array([(labels[idx] == c).mean() for c in classes]))
    return FederatedDataset(train, val, priors=np.array(priors), meta={"classes": classes})


def write_feature_file(path, X, labels, nodes=None) -> None:
    """Write the feature-file schema, optionally with a trailing ``node`` column."""
    X = np.atleast_2d(X)
    header = [f"f{j}" for j in range(X.shape[1])] + ["label"]
    if nodes is not None:
        header.append("node")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(X.shape[0]):
            row = [repr(float(v)) for v in X[r]] + [int(labels[r])]
            if nodes is not None:
                row.append(int(nodes[r]))
            w.writerow(row)


def dump_federation(fed: FederatedDataset, path, split: str = "train") -> None:
    """Write every node's ``train`` or ``val`` samples to one CSV with a node column."""
    sets = fed.train if split == "train" else fed.val
    X = np.concatenate([s.samples for s in sets])
    labels = np.concatenate([
        s.labels if s.labels is not None else np.full(s.n_samples, -1) for s in sets
    ])
    nodes = np.concatenate([np.full(s.n_samples, i) for i, s in enumerate(sets)])
    write_feature_file(path, X, labels, nodes)
