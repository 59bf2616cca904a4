"""Bit-packed Hamming-space retrieval primitives.

Distances run as XOR + popcount over 64-bit words.  The final word is masked
to the live bit range even though packed codes guarantee zero padding, so a
corrupted input cannot silently inflate distances.
"""

from __future__ import annotations

import numpy as np

from .datastore import PackedCodeSet, pack_bits


def binarize(z: np.ndarray) -> PackedCodeSet:
    """Sign-binarize relaxed codes; entries > 0 set the bit, 0 counts as -1."""
    z = np.asarray(z)
    if z.ndim != 2:
        raise ValueError("relaxed codes must be a 2-d array")
    if not np.isfinite(z).all():
        raise ValueError("relaxed codes must be finite")
    return pack_bits(z > 0)


def _masked_xor(words: np.ndarray, query_words: np.ndarray, code_bits: int) -> np.ndarray:
    x = words ^ query_words
    live = code_bits % 64
    if live:
        x[..., -1] &= np.uint64((1 << live) - 1)
    return x


def _distances_to_all(query_words: np.ndarray, db: PackedCodeSet) -> np.ndarray:
    x = _masked_xor(db.words, query_words[None, :], db.code_bits)
    return np.bitwise_count(x).sum(axis=1, dtype=np.int64)


def _check_query(query_words: np.ndarray, db: PackedCodeSet) -> np.ndarray:
    query_words = np.ascontiguousarray(query_words, dtype=np.uint64)
    if query_words.shape != (db.words.shape[1],):
        raise ValueError(
            f"query must be {db.words.shape[1]} packed words, got {query_words.shape}"
        )
    return query_words


def hamming_distance(codes: PackedCodeSet, i: int, j: int) -> int:
    """Number of differing bits between codes i and j, in [0, code_bits]."""
    n = codes.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"code index out of range for {n} codes")
    x = _masked_xor(codes.words[i], codes.words[j], codes.code_bits)
    return int(np.bitwise_count(x).sum())


def rank_topn(query_words: np.ndarray, db: PackedCodeSet, count: int) -> np.ndarray:
    """Indices of the count nearest database codes.

    Sorted by ascending distance, ties by ascending database index.  Uses a
    bounded partition when count << n, but the result always equals the
    prefix of the full (distance, index) sort.
    """
    query_words = _check_query(query_words, db)
    if not 0 <= count <= db.n:
        raise ValueError(f"count {count} out of range for a database of {db.n}")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    distances = _distances_to_all(query_words, db)
    # Distance-major, index-minor composite key; unique per item, so any
    # partition/sort on it reproduces the deterministic tie-break exactly.
    keys = distances * np.int64(db.n) + np.arange(db.n, dtype=np.int64)
    if count < db.n:
        candidates = np.argpartition(keys, count - 1)[:count]
        return candidates[np.argsort(keys[candidates])]
    return np.argsort(keys)


def radius_histogram(
    query_words: np.ndarray, db: PackedCodeSet, relevance: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-distance counts (retrieved, relevant) for distances 0..code_bits.

    Cumulative sums over buckets 0..r give the retrieved/relevant counts
    within Hamming radius r.
    """
    query_words = _check_query(query_words, db)
    relevance = np.asarray(relevance, dtype=bool)
    if relevance.shape != (db.n,):
        raise ValueError(f"relevance must have one flag per database code ({db.n})")
    distances = _distances_to_all(query_words, db)
    retrieved = np.bincount(distances, minlength=db.code_bits + 1).astype(np.int64)
    relevant = np.bincount(
        distances[relevance], minlength=db.code_bits + 1
    ).astype(np.int64)
    return retrieved, relevant
