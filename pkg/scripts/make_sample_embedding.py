"""Regenerate src/graphfed/data/sample_embedded.csv.

The file stands in for a low-dimensional embedding of a 10-class image
dataset: 10 labelled Gaussian blobs in 10 dimensions, 500 rows per label.
"""
import numpy as np

from graphfed.datasets import random_base_gmm

N_LABELS, D, PER_LABEL = 10, 10, 500


def main(path="src/graphfed/data/sample_embedded.csv"):
    rng = np.random.default_rng(20240607)
    model = random_base_gmm(N_LABELS, D, rng, separation=4.0)
    labels = np.repeat(np.arange(N_LABELS), PER_LABEL)
    rows = []
    for k in range(N_LABELS):
        L = np.linalg.cholesky(model.covariances[k])
        rows.append(model.means[k] + rng.standard_normal((PER_LABEL, D)) @ L.T)
    X = np.concatenate(rows)
    order = rng.permutation(len(X))
    with open(path, "w") as fh:
        fh.write(",".join(f"f{j}" for j in range(D)) + ",label\n")
        for i in order:
            fh.write(",".join(f"{v:.4f}" for v in X[i]) + f",{labels[i]}\n")


if __name__ == "__main__":
    main()
