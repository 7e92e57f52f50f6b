"""User archetypes: K-Means on raw rating vectors, then encoded and polarised centroids."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .nn import EncoderParams, encode

log = logging.getLogger(__name__)


class PatternCollisionError(ValueError):
    pass


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, M)
    labels: np.ndarray  # (users,)
    inertia: float
    inertia_trace: list
    n_iter: int


def _sq_dists(X, C):
    # ||x||^2 - 2 x.c + ||c||^2, clipped for round-off
    d = (X**2).sum(1)[:, None] - 2.0 * X @ C.T + (C**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    closest = _sq_dists(X, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(len(X))
        else:
            idx = rng.choice(len(X), p=closest / total)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers)


def kmeans(matrix, k: int = 4, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding and Euclidean distance.

    ``matrix`` is a RatingsMatrix or a plain ``(users, M)`` array.  A cluster
    that loses all its members is re-seeded at the point farthest from its
    current centroid.
    """
    X = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    if not 1 <= k <= len(X):
        raise ValueError(f"k={k} must be between 1 and the number of users ({len(X)})")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    trace = []
    labels = None
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, C)
        labels = d.argmin(1)
        trace.append(float(d[np.arange(len(X)), labels].sum()))
        new = np.empty_like(C)
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(0)
            else:
                far = int(d[np.arange(len(X)), labels].argmax())
                log.warning("k-means: cluster %d emptied at iteration %d, reseeding at row %d", c, it, far)
                new[c] = X[far]
                labels[far] = c
        shift = np.sqrt(((new - C) ** 2).sum(1)).max()
        C = new
        if shift < tol:
            break
    d = _sq_dists(X, C)
    labels = d.argmin(1)
    inertia = float(d[np.arange(len(X)), labels].sum())
    return ClusterModel(k=k, centroids=C, labels=labels, inertia=inertia, inertia_trace=trace, n_iter=it)


def polarize(latent) -> np.ndarray:
    """+1 where the latent is non-negative, -1 elsewhere."""
    latent = np.asarray(latent, dtype=float)
    return np.where(latent >= 0, 1.0, -1.0)


@dataclass
class PolarPattern:
    bits: np.ndarray
    source_cluster: int


@dataclass
class PatternSet:
    patterns: list

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("a pattern set needs at least one pattern")
        n = len(self.patterns[0].bits)
        for p in self.patterns:
            if len(p.bits) != n or not np.all(np.abs(p.bits) == 1):
                raise ValueError("patterns must be polar and share one length")
        seen = {tuple(p.bits) for p in self.patterns}
        if len(seen) != len(self.patterns):
            raise PatternCollisionError("stored patterns must be pairwise distinct")

    @property
    def n(self) -> int:
        return len(self.patterns[0].bits)

    @property
    def m(self) -> int:
        return len(self.patterns)

    @property
    def array(self) -> np.ndarray:
        return np.array([p.bits for p in self.patterns], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "PatternSet":
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return cls([PolarPattern(row.copy(), i) for i, row in enumerate(arr)])


def centroid_checksum(centroid) -> str:
    return hashlib.sha256(np.ascontiguousarray(centroid, dtype=np.float64).tobytes()).hexdigest()


@dataclass
class Archetypes:
    patterns: PatternSet
    labels: np.ndarray
    centroids: np.ndarray
    clusters: ClusterModel


def extract_archetypes(matrix, encoder: EncoderParams, k: int = 4, seed: int = 0, **kmeans_kw) -> Archetypes:
    """Cluster raw rating vectors, encode and polarise each centroid.

    Clusters are renumbered so that their patterns are in lexicographic
    order; ``labels`` follow the same numbering.
    """
    clusters = kmeans(matrix, k=k, seed=seed, **kmeans_kw)
    bits = polarize(encode(encoder, clusters.centroids))
    keys = [tuple(b) for b in bits]
    if len(set(keys)) != len(keys):
        raise PatternCollisionError(
            f"{k} centroids polarise to only {len(set(keys))} distinct patterns; "
            "try a larger latent dimension or another seed"
        )
    order = sorted(range(k), key=lambda c: keys[c])
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    patterns = PatternSet([PolarPattern(bits[c], i) for i, c in enumerate(order)])
    return Archetypes(
        patterns=patterns,
        labels=relabel[clusters.labels],
        centroids=clusters.centroids[order],
        clusters=clusters,
    )
