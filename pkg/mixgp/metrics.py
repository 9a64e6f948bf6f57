"""Embedding benchmarks: 1NN classification error, 1NN regression RMSE and
the PCA reference projection."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateInput, ShapeMismatch

logger = logging.getLogger(__name__)

# query rows per distance block
_CHUNK = 1024


@dataclass
class MetricsReport:
    """one metric value with the protocol that produced it"""
    metric: str
    value: float
    protocol: str = ''
    seed: int = 0
    extra: dict = field(default_factory=dict)


def _points(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        raise DegenerateInput(f"nearest_neighbours() - need at least 2 points, got {points.shape[0]}")
    if np.all(points == points[0]):
        raise DegenerateInput("nearest_neighbours() - all points are identical")
    return points


def nearest_neighbours(points):
    """index of every point's nearest other point (Euclidean, ties to the lowest index)"""
    points = _points(points)
    N = points.shape[0]
    nearest = np.empty(N, dtype=int)
    for start in range(0, N, _CHUNK):
        stop = min(start + _CHUNK, N)
        dist = cdist(points[start:stop], points, 'sqeuclidean')
        dist[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # argmin returns the first minimum
        nearest[start:stop] = np.argmin(dist, axis=1)
    return nearest


def one_nn_error(points, labels):
    """one_nn_error(points, labels) - how many points disagree with their nearest neighbour's label

    Example:
        one_nn_error([[0], [1], [2]], ['a', 'a', 'b']) ==> 1
    """
    labels = np.asarray(labels)
    if labels.shape[0] != np.shape(points)[0]:
        raise ShapeMismatch(f"one_nn_error() - {np.shape(points)[0]} points but {labels.shape[0]} labels")
    nearest = nearest_neighbours(points)
    return int(np.sum(labels[nearest] != labels))


def one_nn_rmse(points, targets):
    """one_nn_rmse(points, targets) - RMSE of predicting each target by its nearest neighbour's"""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] != np.shape(points)[0]:
        raise ShapeMismatch(f"one_nn_rmse() - {np.shape(points)[0]} points but {targets.shape[0]} targets")
    nearest = nearest_neighbours(points)
    return float(np.sqrt(np.mean((targets[nearest] - targets) ** 2)))


def one_hot_encode(schema, obs):
    """one_hot_encode(schema, obs) - real-valued design matrix for PCA

    Categorical columns become K indicator columns, the others are copied.
    Unobserved entries are NaN.
    """
    blocks = []
    for j, column in enumerate(schema.columns):
        seen = obs.mask[:, j]
        if column.kind == 'categorical':
            K = column.likelihood.n_classes
            block = np.zeros((obs.N, K))
            block[np.arange(obs.N), obs.values[:, j].astype(int)] = 1.0
            block[~seen] = np.nan
        else:
            block = np.where(seen, obs.values[:, j], np.nan)[:, None]
        blocks.append(block)
    return np.hstack(blocks)


def pca_baseline(data, k=2):
    """pca_baseline(data, k) - project centred data onto its top k principal directions

    Eigenvectors of the sample covariance, largest eigenvalue first; each
    direction's sign is fixed so its largest-magnitude entry is positive.

    Returns:
        (ndarray, ndarray, ndarray): N x k projection, D x k directions and
        all eigenvalues in descending order
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or not 1 <= k <= data.shape[1]:
        raise ShapeMismatch(f"pca_baseline() - cannot take {k} components of data shaped {data.shape}")
    if np.any(~np.isfinite(data)):
        raise ShapeMismatch("pca_baseline() - data must be complete")
    centred = data - data.mean(axis=0)
    cov = centred.T @ centred / data.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    directions = eigvecs[:, order[:k]]
    pivots = np.argmax(np.abs(directions), axis=0)
    signs = np.sign(directions[pivots, np.arange(k)])
    directions = directions * np.where(signs == 0, 1.0, signs)
    return centred @ directions, directions, eigvals


def binarize_labels(labels, threshold):
    """labels >= threshold as 1, the rest as 0 (ordinal scores to presence/absence)"""
    return (np.asarray(labels, dtype=np.float64) >= threshold).astype(int)
