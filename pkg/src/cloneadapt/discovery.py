"""Clustering-based discovery of similar / dissimilar program contrasts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingMatrix, normalize_rows


class DiscoveryError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    cluster_of: np.ndarray  # N ints in [0, C)
    centroids: np.ndarray  # C x d, unit norm rows
    objective: list  # sum of cosines per iteration (diagnostic)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


@dataclass
class ContrastAssignment:
    """Discovered positives per anchor; negatives derive from cluster ids."""

    positives: list  # per-anchor list of program indices, descending similarity
    cluster_of: np.ndarray


def _kmeanspp_init(X: np.ndarray, C: int, rng) -> np.ndarray:
    """k-means++ seeding with cosine distance (1 - dot on unit vectors)."""
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    d2 = None
    for _ in range(1, C):
        dist = 1.0 - X @ X[centers[-1]]
        dist = np.clip(dist, 0.0, None)
        d2 = dist**2 if d2 is None else np.minimum(d2, dist**2)
        total = d2.sum()
        if total <= 0:
            # all points coincide with chosen centers; pick any unused index
            remaining = [i for i in range(n) if i not in centers]
            centers.append(int(rng.choice(remaining)))
            continue
        centers.append(int(rng.choice(n, p=d2 / total)))
    return X[centers].copy()


def spherical_kmeans(
    X: EmbeddingMatrix | np.ndarray,
    C: int,
    seed: int = 0,
    max_iter: int = 100,
) -> ClusterAssignment:
    """K-means with cosine similarity on unit vectors.

    Centroids are renormalized every iteration; empty clusters steal the
    point farthest (lowest cosine) from its assigned centroid.
    """
    V = X.vectors if isinstance(X, EmbeddingMatrix) else np.asarray(X, float)
    n = V.shape[0]
    if C < 2:
        raise DiscoveryError(f"need C >= 2, got {C}")
    if C > n:
        raise DiscoveryError(f"C={C} exceeds corpus size {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(V, C, rng)
    assign = np.full(n, -1, dtype=np.int64)
    objective = []

    for _ in range(max_iter):
        sims = V @ centroids.T  # n x C
        new_assign = sims.argmax(axis=1)
        # repair empty clusters by stealing the globally worst-fitting point
        counts = np.bincount(new_assign, minlength=C)
        for c in np.flatnonzero(counts == 0):
            fit = sims[np.arange(n), new_assign]
            donors = np.flatnonzero(counts[new_assign] > 1)
            if donors.size == 0:
                break
            worst = donors[np.argmin(fit[donors])]
            counts[new_assign[worst]] -= 1
            new_assign[worst] = c
            counts[c] += 1
            centroids[c] = V[worst]
            sims[:, c] = V @ centroids[c]
        objective.append(float(sims[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(C):
            members = V[assign == c]
            centroids[c] = normalize_rows(members.mean(axis=0, keepdims=True))[0]

    return ClusterAssignment(assign, centroids, objective)


def discover_positives(
    X: EmbeddingMatrix, clusters: ClusterAssignment, k: int = 16
) -> ContrastAssignment:
    """Top-k same-cluster nearest neighbors per anchor, ties to lower index."""
    if k < 1:
        raise DiscoveryError(f"need k >= 1, got {k}")
    V = X.vectors
    n = V.shape[0]
    cluster_of = clusters.cluster_of
    positives = []
    for i in range(n):
        cand = np.flatnonzero(cluster_of == cluster_of[i])
        cand = cand[cand != i]
        if cand.size == 0:
            positives.append([])
            continue
        sims = V[cand] @ V[i]
        # descending similarity, ties broken by lower program index
        order = sorted(range(cand.size), key=lambda a: (-sims[a], cand[a]))
        positives.append([int(cand[a]) for a in order[:k]])
    return ContrastAssignment(positives, cluster_of)


def negatives_of(clusters: ClusterAssignment, i: int) -> np.ndarray:
    """Indices of all programs not sharing anchor i's cluster."""
    return np.flatnonzero(clusters.cluster_of != clusters.cluster_of[i])


def clustering_nmi(pred, truth) -> float:
    """Normalized mutual information 2 I(A;B) / (H(A)+H(B)), natural log.

    Both partitions being single-cluster gives 1.0 by convention.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DiscoveryError("cluster/label length mismatch")
    n = pred.size
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    cont = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(cont, (pi, ti), 1.0)
    pa = cont.sum(axis=1) / n
    pb = cont.sum(axis=0) / n
    ha = -np.sum(pa[pa > 0] * np.log(pa[pa > 0]))
    hb = -np.sum(pb[pb > 0] * np.log(pb[pb > 0]))
    if ha + hb == 0.0:
        return 1.0
    pab = cont / n
    mask = pab > 0
    mi = np.sum(pab[mask] * np.log(pab[mask] / np.outer(pa, pb)[mask]))
    return float(2.0 * mi / (ha + hb))
