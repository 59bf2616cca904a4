"""Seeded generator of well-separated clustered toy datasets.

Each cluster gets a random unit-norm feature center; members are the center
plus Gaussian noise.  The score matrix elevates one concept column per
cluster (1.0 for members, 0.0 elsewhere, plus the same noise level), and
labels are the cluster ids.  Everything is deterministic in the seed.
"""

from __future__ import annotations

import numpy as np

from .datastore import FeatureMatrix, LabelTable, ScoreMatrix


def make_clustered_dataset(
    clusters: int,
    per_cluster: int,
    concepts: int,
    dim: int,
    noise: float,
    seed: int,
) -> tuple[ScoreMatrix, FeatureMatrix, LabelTable]:
    if clusters < 2:
        raise ValueError("need at least 2 clusters")
    if concepts < clusters:
        raise ValueError("need at least one concept per cluster")
    if per_cluster < 1:
        raise ValueError("need at least one point per cluster")
    if dim < 1:
        raise ValueError("feature dimension must be >= 1")
    if noise < 0:
        raise ValueError("noise must be non-negative")

    rng = np.random.default_rng(seed)
    n = clusters * per_cluster

    centers = rng.standard_normal((clusters, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    member_cluster = np.repeat(np.arange(clusters), per_cluster)
    features = centers[member_cluster] + noise * rng.standard_normal((n, dim))

    scores = np.zeros((n, concepts))
    scores[np.arange(n), member_cluster] = 1.0
    scores += noise * rng.standard_normal((n, concepts))

    width = len(str(concepts - 1))
    names = tuple(f"concept_{i:0{width}d}" for i in range(concepts))
    labels = LabelTable(tuple(frozenset([int(c)]) for c in member_cluster))
    return ScoreMatrix(names, scores), FeatureMatrix(features), labels
