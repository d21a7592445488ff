"""Sparse subspace clustering of feature maps.

Pipeline: reshape feature maps into a column-per-channel data matrix, solve the
self-expressiveness program (LASSO relaxation of min ||C||_1 s.t. X = XC,
diag(C) = 0), build the affinity |C| + |C^T|, embed with the symmetric
normalized Laplacian, and cluster the embedding rows with seeded k-means++.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DegenerateDataError, InputError, ParameterError


@dataclass(frozen=True)
class SelfExpressiveness:
    coeffs: np.ndarray  # c x c, zero diagonal
    lam: float
    iterations_run: int
    final_objective: float
    objective_trace: tuple[float, ...] = ()


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # int label per channel
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.size == 0:
            raise ParameterError("assignment must label at least one channel")
        if labels.min() < 0 or labels.max() >= self.k:
            raise ParameterError("labels out of range [0, k)")
        if len(np.unique(labels)) != self.k:
            raise ParameterError("every cluster must be non-empty")

    def members(self) -> list[np.ndarray]:
        labels = np.asarray(self.labels)
        return [np.flatnonzero(labels == j) for j in range(self.k)]

    def sizes(self) -> list[int]:
        return [int(m.size) for m in self.members()]


def build_data_matrix(feature_maps, max_rows: int = 4096, seed: int = 0) -> np.ndarray:
    """Stack [c, H, W] maps into a column-normalized [N*H*W, c] matrix.

    Rows above `max_rows` are uniformly subsampled with the given seed before
    normalization. Zero columns are left as zero.
    """
    if not feature_maps:
        raise InputError("no feature maps supplied")
    shape = feature_maps[0].shape
    for fm in feature_maps:
        if fm.shape != shape:
            raise InputError(f"feature map shape {fm.shape} != {shape}")
    blocks = [np.asarray(fm, dtype=np.float64).reshape(shape[0], -1).T for fm in feature_maps]
    x = np.concatenate(blocks, axis=0)
    if x.shape[0] > max_rows:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(x.shape[0], size=max_rows, replace=False))
        x = x[idx]
    norms = np.linalg.norm(x, axis=0)
    nonzero = norms > 0
    x[:, nonzero] /= norms[nonzero]
    return x


def _objective(x, gram, c, lam):
    fit = x - x @ c
    return np.abs(c).sum() + 0.5 * lam * np.sum(fit * fit)


def solve_self_expressive(
    x: np.ndarray, alpha: float = 20.0, max_iter: int = 500, tol: float = 1e-6
) -> SelfExpressiveness:
    """Solve min_C ||C||_1 + (lam/2) ||X - XC||_F^2 with diag(C) = 0.

    lam = alpha / mu where mu is the smallest (over columns) maximal absolute
    off-diagonal correlation; accelerated proximal gradient with a monotone
    fallback step, diagonal zeroed after every proximal step. The column
    subproblems are independent, so the whole matrix iterates at once.
    """
    x = linalg.as_matrix(x)
    n = x.shape[1]
    if n < 2:
        raise ParameterError("need at least 2 columns to self-express")
    if alpha <= 1:
        raise ParameterError(f"alpha must exceed 1, got {alpha}")
    gram = x.T @ x
    off = np.abs(gram - np.diag(np.diag(gram)))
    mu = off.max(axis=0).min()
    if mu <= 0:
        raise DegenerateDataError("columns are mutually uncorrelated; nothing to cluster")
    lam = alpha / mu
    lip = lam * max(linalg.sym_eigen(gram).eigenvalues[-1], 1e-12)
    step = 1.0 / lip

    c = np.zeros((n, n))
    y = c
    t_k = 1.0
    prev_obj = _objective(x, gram, c, lam)
    trace = [float(prev_obj)]
    iterations = 0
    obj = prev_obj
    for iterations in range(1, max_iter + 1):
        grad = lam * (gram @ y - gram)
        c_next = linalg.soft_threshold(y - step * grad, step)
        np.fill_diagonal(c_next, 0.0)
        obj = _objective(x, gram, c_next, lam)
        if obj > prev_obj:
            # plain proximal step from the previous iterate is guaranteed descent
            grad = lam * (gram @ c - gram)
            c_next = linalg.soft_threshold(c - step * grad, step)
            np.fill_diagonal(c_next, 0.0)
            obj = _objective(x, gram, c_next, lam)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        y = c_next + ((t_k - 1.0) / t_next) * (c_next - c)
        t_k = t_next
        c = c_next
        rel = abs(prev_obj - obj) / max(1.0, abs(prev_obj))
        prev_obj = obj
        trace.append(float(obj))
        if rel < tol:
            break
    return SelfExpressiveness(c, float(lam), iterations, float(obj), tuple(trace))


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    dist2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _kmeans_run(points, k, rng, iters):
    centers = _kmeans_pp_init(points, k, rng)
    labels = np.full(points.shape[0], -1)
    for _ in range(iters):
        dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist2.argmin(axis=1)
        for j in range(k):
            if not np.any(new_labels == j):
                # hand the point farthest from its own centroid to the empty cluster
                worst = int(np.argmax(dist2[np.arange(len(new_labels)), new_labels]))
                new_labels[worst] = j
                dist2[worst, :] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
    dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    inertia = float(dist2[np.arange(len(labels)), labels].sum())
    return labels, inertia


def kmeans(points, k, seed, restarts: int = 10, iters: int = 100) -> np.ndarray:
    """Seeded k-means++; best inertia over restarts, ties to the lowest restart index."""
    best_labels = None
    best_inertia = np.inf
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        labels, inertia = _kmeans_run(points, k, rng, iters)
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels
    return best_labels


def _relabel(labels, k):
    """Canonical labels: clusters numbered by ascending smallest member index."""
    order = sorted(range(k), key=lambda j: int(np.flatnonzero(labels == j)[0]))
    mapping = {old: new for new, old in enumerate(order)}
    return np.array([mapping[int(l)] for l in labels])


def affinity(coeffs: np.ndarray) -> np.ndarray:
    return np.abs(coeffs) + np.abs(coeffs.T)


def normalized_laplacian(w: np.ndarray) -> np.ndarray:
    degree = w.sum(axis=1)
    degree = np.where(degree == 0, 1.0, degree)
    inv_sqrt = 1.0 / np.sqrt(degree)
    return np.eye(w.shape[0]) - (inv_sqrt[:, None] * w) * inv_sqrt[None, :]


def spectral_cluster(
    c: SelfExpressiveness, k: int, seed: int, restarts: int = 10
) -> ClusterAssignment:
    n = c.coeffs.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} out of range [1, {n}]")
    lap = normalized_laplacian(affinity(c.coeffs))
    eig = linalg.sym_eigen(lap)
    emb = eig.eigenvectors[:, :k].copy()
    row_norms = np.linalg.norm(emb, axis=1)
    row_norms = np.where(row_norms == 0, 1.0, row_norms)
    emb /= row_norms[:, None]
    labels = kmeans(emb, k, seed, restarts=restarts)
    return ClusterAssignment(_relabel(labels, k), k)
