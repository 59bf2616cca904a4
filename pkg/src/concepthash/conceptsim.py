"""Concept-distribution based pairwise similarity.

The pipeline: temperature-softmax each image's concept scores into a
probability row, count how often each concept wins the argmax, drop concepts
that win too rarely or too often, re-softmax over the surviving concepts, and
serve pairwise cosine similarities between the resulting rows in blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datastore import DistributionMatrix, FeatureMatrix, ScoreMatrix


class DenoiseError(ValueError):
    """Denoising left too few concepts to describe the images."""


@dataclass(frozen=True)
class DenoiseReport:
    """Outcome of the frequency-based concept discard rule.

    kept holds indices into the original concept list; frequencies counts,
    per original concept, the images whose distribution peaks on it.  The
    thresholds are inclusive on both ends.
    """

    kept: tuple[int, ...]
    frequencies: np.ndarray
    lower_threshold: float
    upper_threshold: float

    def __post_init__(self):
        object.__setattr__(
            self, "frequencies", np.ascontiguousarray(self.frequencies, dtype=np.int64)
        )
        object.__setattr__(self, "kept", tuple(int(i) for i in self.kept))
        expected = tuple(
            int(i)
            for i in np.flatnonzero(
                (self.frequencies >= self.lower_threshold)
                & (self.frequencies <= self.upper_threshold)
            )
        )
        if self.kept != expected:
            raise ValueError("kept indices do not match the threshold rule")

    @property
    def n_kept(self) -> int:
        return len(self.kept)


def concept_distributions(scores: ScoreMatrix, temperature: float) -> DistributionMatrix:
    """Row-wise softmax of temperature * scores.

    Computed in float64 with per-row max subtraction, so any finite input is
    safe.  Ties inherit numpy argmax order (smallest index wins).
    """
    temperature = float(temperature)
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    logits = temperature * scores.scores.astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    dist = np.exp(logits)
    dist /= dist.sum(axis=1, keepdims=True)
    # Extreme temperatures can underflow losing entries to 0 and round the
    # winner to 1; pin everything strictly inside (0, 1).  No-op otherwise.
    np.clip(dist, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0), out=dist)
    return DistributionMatrix(scores.concept_names, dist)


def concept_frequencies(dist: DistributionMatrix) -> np.ndarray:
    """Per-concept count of rows whose distribution peaks on that concept.

    Argmax ties break toward the smallest index; the counts sum to n.
    """
    peaks = np.argmax(dist.dist, axis=1)
    return np.bincount(peaks, minlength=dist.m).astype(np.int64)


def discard_mask(frequencies: np.ndarray, n_images: int, n_concepts: int) -> np.ndarray:
    """Boolean keep-mask: True where 0.5*n/m <= frequency <= 0.5*n (inclusive)."""
    frequencies = np.asarray(frequencies)
    if len(frequencies) != n_concepts:
        raise ValueError("frequency vector length does not match concept count")
    if int(frequencies.sum()) != n_images:
        raise ValueError("frequencies must sum to the image count")
    lower = 0.5 * n_images / n_concepts
    upper = 0.5 * n_images
    return (frequencies >= lower) & (frequencies <= upper)


def denoise(
    scores: ScoreMatrix,
    temperature: float,
    rescale_temperature: bool = True,
) -> tuple[DenoiseReport, DistributionMatrix]:
    """Apply the discard rule once and re-softmax over the kept concepts.

    Per-concept scores do not depend on which other concepts are present, so
    the kept columns of the score matrix are reused as-is.  With
    rescale_temperature the second softmax uses temperature * m'/m, keeping
    the per-concept scale of a count-proportional temperature; otherwise the
    original temperature is reused.
    """
    full = concept_distributions(scores, temperature)
    frequencies = concept_frequencies(full)
    keep = discard_mask(frequencies, scores.n, scores.m)
    kept = np.flatnonzero(keep)
    report = DenoiseReport(
        kept=tuple(int(i) for i in kept),
        frequencies=frequencies,
        lower_threshold=0.5 * scores.n / scores.m,
        upper_threshold=0.5 * scores.n,
    )
    if kept.size < 2:
        raise DenoiseError(
            f"only {kept.size} concept(s) survive denoising; "
            "enlarge or change the concept set"
        )
    denoised = _restricted_distributions(scores, kept, temperature, rescale_temperature)
    return report, denoised


def denoise_shared(
    score_matrices: Sequence[ScoreMatrix],
    temperature: float,
    rescale_temperature: bool = True,
) -> tuple[list[DenoiseReport], list[DistributionMatrix]]:
    """Denoise several score matrices onto one shared concept subset.

    Used for template-averaged similarity: each matrix is scored under its
    own frequency rule, and the returned distributions are restricted to the
    concepts every matrix keeps, so they stay width-compatible.
    """
    if not score_matrices:
        raise ValueError("need at least one score matrix")
    names = score_matrices[0].concept_names
    n = score_matrices[0].n
    for s in score_matrices[1:]:
        if s.concept_names != names:
            raise ValueError("score matrices must share one concept list")
        if s.n != n:
            raise ValueError("score matrices must cover the same images")

    reports = []
    shared = np.ones(len(names), dtype=bool)
    for s in score_matrices:
        full = concept_distributions(s, temperature)
        frequencies = concept_frequencies(full)
        keep = discard_mask(frequencies, s.n, s.m)
        reports.append(
            DenoiseReport(
                kept=tuple(int(i) for i in np.flatnonzero(keep)),
                frequencies=frequencies,
                lower_threshold=0.5 * s.n / s.m,
                upper_threshold=0.5 * s.n,
            )
        )
        shared &= keep
    kept = np.flatnonzero(shared)
    if kept.size < 2:
        raise DenoiseError(
            f"only {kept.size} concept(s) survive denoising across all inputs; "
            "enlarge or change the concept set"
        )
    dists = [
        _restricted_distributions(s, kept, temperature, rescale_temperature)
        for s in score_matrices
    ]
    return reports, dists


def _restricted_distributions(scores, kept, temperature, rescale_temperature):
    sub = ScoreMatrix(
        tuple(scores.concept_names[i] for i in kept), scores.scores[:, kept]
    )
    if rescale_temperature:
        temperature = temperature * (kept.size / scores.m)
    return concept_distributions(sub, temperature)


def format_denoise_report(
    report: DenoiseReport, concept_names: Sequence[str], temperature: float
) -> str:
    """Human-readable denoising summary: header, then one line per concept."""
    kept = set(report.kept)
    lines = [
        f"images: {int(report.frequencies.sum())}",
        f"concepts: {len(concept_names)}",
        f"kept: {len(kept)}",
        f"temperature: {temperature:g}",
        f"lower_threshold: {report.lower_threshold:g}",
        f"upper_threshold: {report.upper_threshold:g}",
        "",
        "concept\tfrequency\tstatus",
    ]
    for i, name in enumerate(concept_names):
        status = "kept" if i in kept else "discarded"
        lines.append(f"{name}\t{int(report.frequencies[i])}\t{status}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# pairwise similarity


CONCEPT = "concept"
CONCEPT_NO_DENOISE = "concept-no-denoise"
FEATURE_COSINE = "feature-cosine"

_MODES = (CONCEPT, CONCEPT_NO_DENOISE, FEATURE_COSINE)


class SimilaritySource:
    """Serves pairwise cosine-similarity blocks without materializing n x n.

    Concept modes hold one or more distribution matrices (several means the
    block is the mean of the per-matrix similarities); feature mode holds one
    feature matrix.  Rows are unit-normalized once, so a block is just a
    matmul per payload.
    """

    def __init__(self, mode: str, unit_rows: list[np.ndarray]):
        self.mode = mode
        self._unit_rows = unit_rows
        self.n = unit_rows[0].shape[0]

    @classmethod
    def from_distributions(
        cls, dists: Sequence[DistributionMatrix], denoised: bool = True
    ) -> "SimilaritySource":
        if not dists:
            raise ValueError("need at least one distribution matrix")
        n, m = dists[0].n, dists[0].m
        for d in dists[1:]:
            if d.n != n:
                raise ValueError("payload matrices must share the same row count")
            if d.m != m:
                raise ValueError("concept payloads must share the same concept count")
        unit = [_unit_rows(d.dist) for d in dists]
        return cls(CONCEPT if denoised else CONCEPT_NO_DENOISE, unit)

    @classmethod
    def from_features(cls, features: FeatureMatrix) -> "SimilaritySource":
        rows = features.features.astype(np.float64)
        norms = np.linalg.norm(rows, axis=1)
        if (norms == 0.0).any():
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise ValueError(f"feature row {bad} has zero norm, cosine undefined")
        return cls(FEATURE_COSINE, [rows / norms[:, None]])


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    rows = rows.astype(np.float64)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def similarity_block(
    source: SimilaritySource, rows: Sequence[int], cols: Sequence[int]
) -> np.ndarray:
    """Dense block of pairwise similarities between the given index lists.

    Values lie in [-1, 1] (feature mode) or [0, 1] (concept modes); the block
    is symmetric with unit diagonal whenever rows == cols.
    """
    rows = _checked_indices(rows, source.n, "row")
    cols = _checked_indices(cols, source.n, "column")
    block = np.zeros((rows.size, cols.size))
    for unit in source._unit_rows:
        block += unit[rows] @ unit[cols].T
    block /= len(source._unit_rows)
    lo = 0.0 if source.mode in (CONCEPT, CONCEPT_NO_DENOISE) else -1.0
    return np.clip(block, lo, 1.0)


def _checked_indices(indices, n: int, what: str) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.intp)
    if indices.ndim != 1:
        raise ValueError(f"{what} indices must be 1-d")
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"{what} index out of range for {n} items")
    return indices
