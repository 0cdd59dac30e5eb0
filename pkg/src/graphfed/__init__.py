"""Graph-regularized federated EM for Gaussian mixture models."""

__version__ = "0.1.0"

from .alignment import align_model, assign_components, bhattacharyya_distance, distance_matrix
from .datasets import (
    FederatedDataset,
    generate_cluster_gmms,
    load_embedded_features,
    make_clustered_federation,
    make_prior_skew_federation,
    sample_dataset,
)
from .estimators import GaussianMixtureEM, GraphFedEM
from .federated import (
    TrainConfig,
    aggregate_parameters,
    blend,
    graphfed_em,
    proximal_step_reference,
    repair_covariance,
    train_centralized,
    train_local,
    train_oracle,
)
from .graph import EmpiricalGraph, neighbors, prior_overlap_graph, sbm_graph
from .metrics import avg_log_likelihood, centroid_error, consensus_error, hard_assign, nmi
from .mixture import (
    GaussianComponent,
    LocalDataset,
    MixtureModel,
    e_step,
    kmeans_init,
    local_em,
    log_gaussian_pdf,
    log_likelihood,
    m_step,
    regularize_covariance,
)

__all__ = [
    "EmpiricalGraph", "FederatedDataset", "GaussianComponent", "GaussianMixtureEM", "GraphFedEM",
    "LocalDataset", "MixtureModel", "TrainConfig", "aggregate_parameters", "align_model",
    "assign_components", "avg_log_likelihood", "bhattacharyya_distance", "blend", "centroid_error",
    "consensus_error", "distance_matrix", "e_step", "generate_cluster_gmms", "graphfed_em",
    "hard_assign", "kmeans_init", "load_embedded_features", "local_em", "log_gaussian_pdf",
    "log_likelihood", "m_step", "make_clustered_federation", "make_prior_skew_federation",
    "neighbors", "nmi", "prior_overlap_graph", "proximal_step_reference", "regularize_covariance",
    "repair_covariance", "sample_dataset", "sbm_graph", "train_centralized", "train_local",
    "train_oracle",
]
