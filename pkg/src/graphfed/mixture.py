"""Single-node Gaussian mixture models fitted by EM.

Parameters of a mixture are held as stacked arrays (``weights`` of shape
``(K,)``, ``means`` of shape ``(K, d)``, ``covariances`` of shape
``(K, d, d)``). All density evaluations go through Cholesky factors and
log-domain arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .exceptions import CovarianceNotPD, EmptyComponent, ModelShapeMismatch, TooFewSamples

LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_SHRINKAGE = 0.01
DEFAULT_LOADING = 1e-6
# fraction of N_i below which a component counts as empty
EMPTY_COUNT_FRACTION = 1e-8


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """K full-covariance Gaussian components sharing one dimension."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        K, d = means.shape
        if weights.shape != (K,) or covs.shape != (K, d, d):
            raise ModelShapeMismatch(
                f"inconsistent shapes: weights {weights.shape}, means {means.shape}, "
                f"covariances {covs.shape}"
            )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @classmethod
    def from_components(cls, components):
        components = list(components)
        return cls(
            weights=np.array([c.weight for c in components], dtype=float),
            means=np.stack([np.atleast_1d(np.asarray(c.mean, dtype=float)) for c in components]),
            covariances=np.stack([np.atleast_2d(np.asarray(c.covariance, dtype=float)) for c in components]),
        )

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[GaussianComponent]:
        return [self.component(k) for k in range(self.n_components)]

    def component(self, k: int) -> GaussianComponent:
        return GaussianComponent(self.means[k], self.covariances[k], float(self.weights[k]))

    def permute(self, order) -> "MixtureModel":
        """Return a copy whose component ``k`` is this model's component ``order[k]``."""
        order = np.asarray(order, dtype=int)
        return MixtureModel(self.weights[order], self.means[order], self.covariances[order])

    def copy(self) -> "MixtureModel":
        return MixtureModel(self.weights.copy(), self.means.copy(), self.covariances.copy())

    def allclose(self, other: "MixtureModel", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return (
            self.weights.shape == other.weights.shape
            and self.means.shape == other.means.shape
            and np.allclose(self.weights, other.weights, atol=atol, rtol=rtol)
            and np.allclose(self.means, other.means, atol=atol, rtol=rtol)
            and np.allclose(self.covariances, other.covariances, atol=atol, rtol=rtol)
        )


@dataclass(frozen=True, eq=False)
class Responsibilities:
    values: np.ndarray  # (N_i, K)
    counts: np.ndarray  # (K,) column sums


@dataclass(eq=False)
class LocalDataset:
    """Samples held by one node, with optional ground truth."""

    samples: np.ndarray
    labels: Optional[np.ndarray] = None
    cluster_id: Optional[int] = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] < 1:
            raise TooFewSamples("a local dataset needs at least one sample")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.samples.shape[0],):
                raise ValueError("labels must have one entry per sample")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass
class EMResult:
    """Outcome of a run of local EM steps.

    ``counts`` are the component counts from the E-step of the last
    iteration (or of the input model when no step was taken).
    ``log_likelihoods`` has one more entry than the number of steps: the
    training log-likelihood before the first step and after every step.
    """

    model: MixtureModel
    counts: np.ndarray
    log_likelihoods: list[float] = field(default_factory=list)
    respawn_steps: list[int] = field(default_factory=list)


def _as_samples(data) -> np.ndarray:
    if isinstance(data, LocalDataset):
        return data.samples
    return np.atleast_2d(np.asarray(data, dtype=float))


def cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`CovarianceNotPD` on failure."""
    try:
        return linalg.cholesky(cov, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise CovarianceNotPD(str(exc)) from exc


def log_gaussian_pdf(x, comp: GaussianComponent) -> float:
    """ln N(x | mean, covariance)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(_log_gaussian(x[None, :], comp.mean, comp.covariance)[0])


def _log_gaussian(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    L = cholesky(cov)
    z = linalg.solve_triangular(L, (X - mean).T, lower=True, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (X.shape[1] * LOG_2PI + log_det + np.sum(z * z, axis=0))


def weighted_log_densities(model: MixtureModel, data) -> np.ndarray:
    """Matrix of ln(pi_k) + ln N(x_n | mu_k, Sigma_k), shape (N, K)."""
    X = _as_samples(data)
    if X.shape[1] != model.dim:
        raise ModelShapeMismatch(f"data has dimension {X.shape[1]}, model {model.dim}")
    out = np.empty((X.shape[0], model.n_components))
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    for k in range(model.n_components):
        out[:, k] = log_w[k] + _log_gaussian(X, model.means[k], model.covariances[k])
    return out


def _e_step(model, data):
    wld = weighted_log_densities(model, data)
    log_norm = logsumexp(wld, axis=1)
    values = np.exp(wld - log_norm[:, None])
    return Responsibilities(values, values.sum(axis=0)), float(log_norm.sum())


def e_step(model: MixtureModel, data) -> Responsibilities:
    return _e_step(model, data)[0]


def log_likelihood(model: MixtureModel, data) -> float:
    """Total (not averaged) log-likelihood of the data under the mixture."""
    return float(logsumexp(weighted_log_densities(model, data), axis=1).sum())


def regularize_covariance(cov, shrinkage=DEFAULT_SHRINKAGE, loading=DEFAULT_LOADING) -> np.ndarray:
    """Shrink toward a scaled identity and add diagonal loading.

    Returns ``(1 - shrinkage) * cov + shrinkage * tr(cov)/d * I + loading * I``.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    target = np.trace(cov) / d
    out = (1.0 - shrinkage) * cov
    out[np.diag_indices(d)] += shrinkage * target + loading
    return out


def _weighted_covariance(X, w, mean):
    diff = X - mean
    return (w[:, None] * diff).T @ diff / w.sum()


def m_step(data, resp: Responsibilities, shrinkage=DEFAULT_SHRINKAGE,
           loading=DEFAULT_LOADING) -> MixtureModel:
    """Closed-form M-step followed by covariance regularization.

    Shrinkage is applied only to components whose effective count is below
    ``d + 1``, where the weighted sample covariance is close to singular;
    better-supported components get diagonal loading alone, so the step
    stays an (almost exact) likelihood maximizer on well-sampled data.
    Raises :class:`EmptyComponent` if any component count is at or below
    ``1e-8 * N_i``.
    """
    X = _as_samples(data)
    gamma = resp.values
    counts = gamma.sum(axis=0)
    n = X.shape[0]
    empty = np.flatnonzero(counts <= EMPTY_COUNT_FRACTION * n)
    if empty.size:
        raise EmptyComponent(empty)
    return _m_step_nonempty(X, gamma, counts, shrinkage, loading)


def _m_step_nonempty(X, gamma, counts, shrinkage, loading, skip=()):
    n, d = X.shape
    K = gamma.shape[1]
    means = np.zeros((K, d))
    covs = np.zeros((K, d, d))
    for k in range(K):
        if k in skip:
            continue
        means[k] = gamma[:, k] @ X / counts[k]
        rho = shrinkage if counts[k] < d + 1 else 0.0
        covs[k] = regularize_covariance(_weighted_covariance(X, gamma[:, k], means[k]), rho, loading)
    return MixtureModel(counts / n, means, covs)


def respawn_components(model: MixtureModel, data, resp: Responsibilities, empty,
                       shrinkage=DEFAULT_SHRINKAGE, loading=DEFAULT_LOADING) -> MixtureModel:
    """M-step that re-seeds empty components instead of failing.

    Each empty component is placed on a distinct sample with the lowest
    mixture density under ``model``; its covariance is the identity scaled
    by the mean per-feature sample variance, plus ``loading``.
    """
    X = _as_samples(data)
    n, d = X.shape
    empty = [int(k) for k in empty]
    counts = resp.values.sum(axis=0)
    new = _m_step_nonempty(X, resp.values, counts, shrinkage, loading, skip=set(empty))
    density = logsumexp(weighted_log_densities(model, X), axis=1)
    order = np.argsort(density, kind="stable")
    scale = float(np.var(X, axis=0).mean())
    if not scale > 0:
        scale = 1.0
    weights = new.weights.copy()
    for slot, k in enumerate(empty):
        new.means[k] = X[order[slot % n]]
        new.covariances[k] = (scale + loading) * np.eye(d)
        weights[k] = 1.0 / n
    return MixtureModel(weights / weights.sum(), new.means, new.covariances)


def local_em(model: MixtureModel, data, steps: int, shrinkage=DEFAULT_SHRINKAGE,
             loading=DEFAULT_LOADING) -> EMResult:
    """Run ``steps`` EM iterations starting from ``model``."""
    X = _as_samples(data)
    resp, ll = _e_step(model, X)
    result = EMResult(model=model, counts=resp.counts, log_likelihoods=[ll])
    for t in range(steps):
        try:
            model = m_step(X, resp, shrinkage, loading)
        except EmptyComponent as exc:
            model = respawn_components(model, X, resp, exc.components, shrinkage, loading)
            result.respawn_steps.append(t)
        result.counts = resp.counts
        resp, ll = _e_step(model, X)
        result.log_likelihoods.append(ll)
    result.model = model
    return result


# -- k-means initialization ---------------------------------------------------

def _sq_dists(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def kmeans_plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted probabilistic seeding."""
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 100):
    """Lloyd iterations until assignments stop changing.

    An emptied cluster is re-seeded at the sample farthest from its
    assigned centroid. Returns ``(centers, labels)``.
    """
    centers = centers.copy()
    K = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d2 = _sq_dists(X, centers)
        new_labels = np.argmin(d2, axis=1)
        for k in range(K):
            if not np.any(new_labels == k):
                own = d2[np.arange(X.shape[0]), new_labels]
                # only steal from clusters that keep at least one other point
                sizes = np.bincount(new_labels, minlength=K)
                own = np.where(sizes[new_labels] > 1, own, -np.inf)
                far = int(np.argmax(own))
                new_labels[far] = k
                centers[k] = X[far]
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(K):
            centers[k] = X[labels == k].mean(axis=0)
    return centers, labels


def kmeans_init(data, K: int, seed=None, shrinkage=DEFAULT_SHRINKAGE,
                loading=DEFAULT_LOADING, max_iter: int = 100) -> MixtureModel:
    """Initial mixture from k-means: centroids as means, hard split for the rest."""
    X = _as_samples(data)
    n, d = X.shape
    if n < K:
        raise TooFewSamples(f"need at least K={K} samples, got {n}")
    rng = np.random.default_rng(seed)
    centers, labels = lloyd(X, kmeans_plusplus(X, K, rng), max_iter=max_iter)
    weights = np.bincount(labels, minlength=K) / n
    covs = np.empty((K, d, d))
    for k in range(K):
        diff = X[labels == k] - centers[k]
        covs[k] = regularize_covariance(diff.T @ diff / len(diff), shrinkage, loading)
    return MixtureModel(weights, centers, covs)
