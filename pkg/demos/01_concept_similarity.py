"""From concept scores to a denoised semantic similarity source.

Walks the first half of the pipeline on a synthetic dataset: temperature
softmax over concept scores, concept frequencies, the discard rule, and the
pairwise similarity blocks that training later consumes.

Run:  python3 demos/01_concept_similarity.py
"""

import numpy as np

from concepthash import (
    SimilaritySource,
    concept_distributions,
    concept_frequencies,
    denoise,
    discard_mask,
    format_denoise_report,
    make_clustered_dataset,
    similarity_block,
)

# Six clusters of images, but a concept list padded with six concepts that
# describe nothing in the data: exactly the situation denoising exists for.
scores, features, labels = make_clustered_dataset(
    clusters=6, per_cluster=25, concepts=12, dim=32, noise=0.05, seed=42
)
print(f"dataset: {scores.n} images, {scores.m} candidate concepts")

# Temperature-softmax each image's score row into a concept distribution.
# The customary temperature is 3x the concept count.
temperature = 3.0 * scores.m
dist = concept_distributions(scores, temperature)
print(f"temperature {temperature:g}; distribution rows sum to "
      f"{dist.dist.sum(axis=1).min():.12f}..{dist.dist.sum(axis=1).max():.12f}")

# A concept's frequency is the number of images whose distribution peaks on
# it.  The populated concepts should sit near the cluster size (25); the
# padding concepts near zero.
freqs = concept_frequencies(dist)
print("frequencies:", freqs.tolist())

keep = discard_mask(freqs, scores.n, scores.m)
print(f"keep-mask thresholds: [{0.5 * scores.n / scores.m:g}, {0.5 * scores.n:g}]")
print("kept concepts:", [scores.concept_names[i] for i in np.flatnonzero(keep)])

# denoise() bundles the steps above, drops the failing columns, and
# re-softmaxes over the survivors at a proportionally rescaled temperature.
report, cleaned = denoise(scores, temperature)
print()
print(format_denoise_report(report, scores.concept_names, temperature))

# The similarity source serves cosine blocks between distribution rows on
# demand; nothing n x n is ever materialized.
source = SimilaritySource.from_distributions([cleaned])
inside = similarity_block(source, [0, 1, 2], [0, 1, 2])        # same cluster
across = similarity_block(source, [0, 1, 2], [50, 51, 52])     # another cluster
print("within-cluster similarity block:")
print(np.round(inside, 4))
print("cross-cluster similarity block:")
print(np.round(across, 4))

# The same engine can also serve raw feature cosines (the ablation source).
feature_source = SimilaritySource.from_features(features)
print("feature-cosine within vs across:",
      float(similarity_block(feature_source, [0], [1])[0, 0]).__round__(4),
      float(similarity_block(feature_source, [0], [50])[0, 0]).__round__(4))
