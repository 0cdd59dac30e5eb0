"""Component matching between mixtures via Bhattacharyya costs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .exceptions import CovarianceNotPD, InvalidCostMatrix, ModelShapeMismatch
from .mixture import GaussianComponent, MixtureModel


@dataclass(frozen=True, eq=False)
class ComponentPermutation:
    """``mapping[k]`` is the column (other-model component) assigned to row ``k``."""

    mapping: np.ndarray
    total_cost: float


def _batched_cholesky(covs):
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise CovarianceNotPD(str(exc)) from exc


def _logdet(L):
    return 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)


def _bhattacharyya(means_a, covs_a, means_b, covs_b):
    """Pairwise distances between stacked components, shape (Ka, Kb)."""
    logdet_a = _logdet(_batched_cholesky(covs_a))
    logdet_b = _logdet(_batched_cholesky(covs_b))
    avg = 0.5 * (covs_a[:, None] + covs_b[None, :])
    L = _batched_cholesky(avg)
    diff = (means_a[:, None] - means_b[None, :])[..., None]
    z = np.linalg.solve(L, diff)[..., 0]
    term_mean = 0.125 * (z * z).sum(axis=-1)
    term_cov = 0.5 * (_logdet(L) - 0.5 * (logdet_a[:, None] + logdet_b[None, :]))
    # the covariance term is >= 0 analytically; clip rounding noise
    return term_mean + np.maximum(term_cov, 0.0)


def bhattacharyya_distance(a: GaussianComponent, b: GaussianComponent) -> float:
    """Bhattacharyya distance between two Gaussians (weights are ignored)."""
    mean_a = np.atleast_1d(np.asarray(a.mean, dtype=float))
    mean_b = np.atleast_1d(np.asarray(b.mean, dtype=float))
    cov_a = np.atleast_2d(np.asarray(a.covariance, dtype=float))
    cov_b = np.atleast_2d(np.asarray(b.covariance, dtype=float))
    if cov_a.shape != cov_b.shape or mean_a.shape != mean_b.shape:
        raise ModelShapeMismatch("components have different dimensions")
    return float(_bhattacharyya(mean_a[None], cov_a[None], mean_b[None], cov_b[None])[0, 0])


def distance_matrix(ref: MixtureModel, other: MixtureModel) -> np.ndarray:
    """Entry (k, l) is the Bhattacharyya distance between ref_k and other_l."""
    if ref.n_components != other.n_components or ref.dim != other.dim:
        raise ModelShapeMismatch(
            f"cannot compare K={ref.n_components}, d={ref.dim} with "
            f"K={other.n_components}, d={other.dim}"
        )
    return _bhattacharyya(ref.means, ref.covariances, other.means, other.covariances)


def assign_components(cost) -> ComponentPermutation:
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest augmenting path method with row/column potentials, O(K^3).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise InvalidCostMatrix(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InvalidCostMatrix("cost matrix has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return ComponentPermutation(np.zeros(0, dtype=int), 0.0)

    # 1-based bookkeeping; index 0 is a virtual column holding the row being inserted
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=int)  # row_of[j]: row matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[row_of[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1

    mapping = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        mapping[row_of[j] - 1] = j - 1
    total = float(cost[np.arange(n), mapping].sum())
    return ComponentPermutation(mapping, total)


def align_model(ref: MixtureModel, other: MixtureModel) -> MixtureModel:
    """Reorder ``other`` so its component k best matches ``ref`` component k."""
    perm = assign_components(distance_matrix(ref, other))
    return other.permute(perm.mapping)
