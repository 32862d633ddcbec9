"""Average-linkage agglomerative clustering of embeddings on squared L2 distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..embed import pairwise_sq_l2


@dataclass(frozen=True)
class Clustering:
    labels: np.ndarray  # (n,) cluster index per embedding, clusters numbered by lowest member
    clusters: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.clusters)


def cluster_identities(vectors: np.ndarray, threshold: float) -> Clustering:
    """Merge the closest pair of clusters while their average distance is <= threshold.

    Cluster distance is the mean squared L2 over all cross-cluster member
    pairs. Ties merge the pair whose lowest members come first.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = len(x)
    if n == 0:
        return Clustering(np.zeros(0, dtype=np.intp), ())
    x = x.reshape(n, -1)
    # clusters live at the row of their lowest member; sums[i, j] = total cross distance
    sums = pairwise_sq_l2(x)
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)
    members = {i: [i] for i in range(n)}
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    while alive.sum() > 1:
        avg = sums / np.outer(sizes, sizes)
        valid = upper & alive[:, None] & alive[None, :]
        avg = np.where(valid, avg, np.inf)
        flat = int(np.argmin(avg))
        i, j = divmod(flat, n)
        if not avg[i, j] <= threshold:
            break
        sums[i, :] += sums[j, :]
        sums[:, i] += sums[:, j]
        sizes[i] += sizes[j]
        alive[j] = False
        members[i].extend(members.pop(j))
    reps = sorted(members)
    labels = np.empty(n, dtype=np.intp)
    clusters = []
    for k, rep in enumerate(reps):
        group = tuple(sorted(members[rep]))
        labels[list(group)] = k
        clusters.append(group)
    return Clustering(labels, tuple(clusters))


def purity(labels: np.ndarray, identities: np.ndarray) -> float:
    """Fraction of embeddings that carry their cluster's majority identity."""
    labels, identities = np.asarray(labels), np.asarray(identities)
    if len(labels) == 0:
        return float("nan")
    hits = 0
    for c in np.unique(labels):
        _, counts = np.unique(identities[labels == c], return_counts=True)
        hits += counts.max()
    return hits / len(labels)


def clusters_per_identity(labels: np.ndarray, identities: np.ndarray) -> float:
    """Mean number of distinct clusters an identity is spread over (1.0 is ideal)."""
    labels, identities = np.asarray(labels), np.asarray(identities)
    ids = np.unique(identities)
    if len(ids) == 0:
        return float("nan")
    return float(np.mean([len(np.unique(labels[identities == i])) for i in ids]))


def mixed_clusters(labels: np.ndarray, identities: np.ndarray) -> int:
    """Number of clusters holding more than one identity."""
    labels, identities = np.asarray(labels), np.asarray(identities)
    return int(sum(len(np.unique(identities[labels == c])) > 1 for c in np.unique(labels)))
