"""Cluster assignment from loadings, k-means baseline, ARI and consensus."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2

UNASSIGNED = -1
ASSIGNMENT_EPSILON = 1e-4


@dataclass(frozen=True)
class ClusterAssignment:
    """Asset -> cluster label map; ``UNASSIGNED`` (-1) marks dropped assets."""

    labels: np.ndarray
    p: int
    source: str = "nmf"

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-d")
        if ((labels < UNASSIGNED) | (labels >= self.p)).any():
            raise ValueError(f"labels must lie in {{-1, 0..{self.p - 1}}}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def d(self) -> int:
        return self.labels.size

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def clusters(self) -> list[np.ndarray]:
        """Member index arrays of the non-empty clusters, by factor index."""
        return [m for m in (self.members(k) for k in range(self.p)) if m.size]


def assign_clusters(W, epsilon: float = ASSIGNMENT_EPSILON, source: str = "nmf") -> ClusterAssignment:
    """Argmax-row assignment; rows whose max loading is <= epsilon are unassigned.

    ``np.argmax`` returns the first maximum, so ties go to the lowest factor.
    """
    W = np.asarray(W, dtype=float)
    labels = np.argmax(W, axis=1)
    labels[W.max(axis=1) <= epsilon] = UNASSIGNED
    return ClusterAssignment(labels, W.shape[1], source)


def _singletonize(labels) -> np.ndarray:
    # unassigned assets each become their own label
    labels = np.asarray(labels, dtype=int).copy()
    free = np.flatnonzero(labels == UNASSIGNED)
    base = labels.max(initial=0) + 1
    labels[free] = base + np.arange(free.size)
    return labels


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, ClusterAssignment) else np.asarray(x)


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index of two labelings."""
    a, b = _singletonize(_labels(a)), _singletonize(_labels(b))
    if a.size == 0:
        raise ValueError("empty labelings")
    if a.size != b.size:
        raise ValueError("labelings must have equal length")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)

    def pairs(n):
        return (n * (n - 1) / 2.0).sum()

    index = pairs(table)
    sum_a, sum_b = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = a.size * (a.size - 1) / 2.0
    expected = sum_a * sum_b / total if total else 0.0
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        # both partitions trivial (all singletons or a single block)
        return 1.0
    return float((index - expected) / (maximum - expected))


def kmeans_labels(points, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding; best of ``n_init`` restarts."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points {n}")
    if k == 1:
        return np.zeros(n, dtype=int)
    rng = np.random.default_rng(seed)
    best, best_inertia = None, np.inf
    for _ in range(n_init):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                centroids, labels = kmeans2(points, k, iter=max_iter, minit="++", seed=rng, missing="raise")
            except ClusterError:
                continue
        inertia = ((points - centroids[labels]) ** 2).sum()
        if inertia < best_inertia - 1e-12:
            best, best_inertia = labels, inertia
    if best is None:
        raise RuntimeError("k-means produced an empty cluster on every restart")
    return _relabel(best)


def _relabel(labels) -> np.ndarray:
    # label clusters by order of first appearance
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=int)
    remap[np.unique(labels)[order]] = np.arange(order.size)
    return remap[labels]


def kmeans(X, p: int, seed: int = 0) -> ClusterAssignment:
    """Cluster the d asset series (columns of the T x d matrix ``X``)."""
    X = np.asarray(X, dtype=float)
    return ClusterAssignment(kmeans_labels(X.T, p, seed), p, "kmeans")


def consensus_matrix(assignments) -> np.ndarray:
    """Fraction of assignments in which each asset pair shares a cluster."""
    assignments = list(assignments)
    if not assignments:
        raise ValueError("need at least one assignment")
    d = assignments[0].d
    acc = np.zeros((d, d))
    for a in assignments:
        if a.d != d:
            raise ValueError("assignments disagree on the number of assets")
        lab = a.labels
        same = (lab[:, None] == lab[None, :]) & (lab[:, None] != UNASSIGNED)
        acc += same
    return acc / len(assignments)
