"""Matrix containers and the binary file formats shared by every module.

Four little-endian binary formats plus a TSV label list:

==========  =============  ====================================================
magic       contents       layout after the 4-byte magic
==========  =============  ====================================================
``UHSM``    scores         u32 version, u64 n, u64 m, m x (u32 length + UTF-8
                           name), n*m float32 row-major
``UHSD``    distributions  same layout as ``UHSM``
``UHSF``    features       u32 version, u64 n, u64 d, n*d float32 row-major
``UHSB``    binary codes   u32 version, u64 k, u64 n, n*ceil(k/64) u64 words
==========  =============  ====================================================

Every multi-byte field is little-endian and payload floats are 32-bit
IEEE-754.  Bit j of code i lives in word ``j // 64`` at bit position
``j % 64``; bit positions at or above the code length are padding and are
always zero.  Readers reject anything that does not conform; all containers
validate their invariants on construction, so a value that exists is a value
that is well-formed.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1

_MAGIC_SCORES = b"UHSM"
_MAGIC_DISTRIBUTIONS = b"UHSD"
_MAGIC_FEATURES = b"UHSF"
_MAGIC_CODES = b"UHSB"

_ROW_SUM_TOL = 1e-9


class FormatError(ValueError):
    """An on-disk file does not conform to its binary format."""


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class ScoreMatrix:
    """Dense image-by-concept similarity scores, float32, one row per image."""

    concept_names: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "concept_names", tuple(self.concept_names))
        object.__setattr__(
            self, "scores", np.ascontiguousarray(self.scores, dtype=np.float32)
        )
        self.validate()

    def validate(self) -> None:
        if self.scores.ndim != 2:
            raise ValueError("scores must be a 2-d array")
        n, m = self.scores.shape
        if n < 1 or m < 2:
            raise ValueError(f"score matrix needs n >= 1 and m >= 2, got {n}x{m}")
        if len(self.concept_names) != m:
            raise ValueError(
                f"{len(self.concept_names)} concept names for {m} columns"
            )
        if any(not name for name in self.concept_names):
            raise ValueError("concept names must be non-empty")
        if len(set(self.concept_names)) != m:
            raise ValueError("concept names must be pairwise distinct")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def m(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense image feature vectors, float32, one row per image."""

    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.ascontiguousarray(self.features, dtype=np.float32)
        )
        self.validate()

    def validate(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValueError(f"feature matrix needs n >= 1 and d >= 1, got {n}x{d}")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DistributionMatrix:
    """Row-stochastic concept distributions, float64, one row per image.

    Entries are strictly inside (0, 1) and every row sums to 1 within 1e-9.
    """

    concept_names: tuple[str, ...]
    dist: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "concept_names", tuple(self.concept_names))
        object.__setattr__(
            self, "dist", np.ascontiguousarray(self.dist, dtype=np.float64)
        )
        self.validate()

    def validate(self) -> None:
        if self.dist.ndim != 2:
            raise ValueError("dist must be a 2-d array")
        n, m = self.dist.shape
        if n < 1 or m < 2:
            raise ValueError(f"distribution matrix needs n >= 1 and m >= 2, got {n}x{m}")
        if len(self.concept_names) != m:
            raise ValueError(
                f"{len(self.concept_names)} concept names for {m} columns"
            )
        if any(not name for name in self.concept_names):
            raise ValueError("concept names must be non-empty")
        if len(set(self.concept_names)) != m:
            raise ValueError("concept names must be pairwise distinct")
        if not ((self.dist > 0.0) & (self.dist < 1.0)).all():
            raise ValueError("distribution entries must lie strictly in (0, 1)")
        sums = self.dist.sum(axis=1)
        if not (np.abs(sums - 1.0) <= _ROW_SUM_TOL).all():
            raise ValueError("distribution rows must sum to 1 within 1e-9")

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    @property
    def m(self) -> int:
        return self.dist.shape[1]


@dataclass(frozen=True)
class LabelTable:
    """Per-item sets of non-negative integer label ids."""

    labels: tuple[frozenset[int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "labels", tuple(frozenset(item) for item in self.labels)
        )
        self.validate()

    def validate(self) -> None:
        if len(self.labels) < 1:
            raise ValueError("label table must hold at least one item")
        for i, item in enumerate(self.labels):
            if not item:
                raise ValueError(f"item {i} has an empty label set")
            if any(label < 0 for label in item):
                raise ValueError(f"item {i} has a negative label id")

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PackedCodeSet:
    """n binary codes of code_bits bits each, packed into 64-bit words."""

    code_bits: int
    words: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "words", np.ascontiguousarray(self.words, dtype=np.uint64)
        )
        self.validate()

    def validate(self) -> None:
        if self.code_bits < 1:
            raise ValueError("code_bits must be >= 1")
        if self.words.ndim != 2:
            raise ValueError("words must be a 2-d array")
        expected = words_per_code(self.code_bits)
        if self.words.shape[1] != expected:
            raise ValueError(
                f"codes of {self.code_bits} bits need {expected} words per row, "
                f"got {self.words.shape[1]}"
            )
        live = self.code_bits % 64
        if live and self.words.shape[0]:
            if (self.words[:, -1] >> np.uint64(live)).any():
                raise ValueError("padding bits beyond the code length must be zero")

    @property
    def n(self) -> int:
        return self.words.shape[0]


def words_per_code(code_bits: int) -> int:
    return (code_bits + 63) // 64


def pack_bits(bits: np.ndarray) -> PackedCodeSet:
    """Pack an n x k boolean array into a PackedCodeSet (bit j -> word j//64)."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError("bits must be a 2-d array")
    n, k = bits.shape
    packed = np.packbits(bits.astype(bool), axis=1, bitorder="little")
    row_bytes = 8 * words_per_code(k)
    if packed.shape[1] != row_bytes:
        padded = np.zeros((n, row_bytes), dtype=np.uint8)
        padded[:, : packed.shape[1]] = packed
        packed = padded
    words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)
    return PackedCodeSet(k, words)


def unpack_bits(codes: PackedCodeSet) -> np.ndarray:
    """Inverse of pack_bits: n x code_bits boolean array."""
    as_bytes = codes.words.astype("<u8", copy=False).view(np.uint8)
    if codes.n == 0:
        return np.zeros((0, codes.code_bits), dtype=bool)
    bits = np.unpackbits(as_bytes, axis=1, count=codes.code_bits, bitorder="little")
    return bits.astype(bool)


# ---------------------------------------------------------------------------
# binary readers/writers


def _read_exact(f, size: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise FormatError(f"truncated file: wanted {size} bytes for {what}, got {len(data)}")
    return data


def _read_header(f, expected_magic: bytes) -> None:
    magic = _read_exact(f, 4, "magic")
    if magic != expected_magic:
        raise FormatError(f"bad magic {magic!r}, expected {expected_magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")


def _read_payload(f, path, nbytes: int, what: str) -> bytes:
    remaining = os.fstat(f.fileno()).st_size - f.tell()
    if remaining < nbytes:
        raise FormatError(
            f"truncated file: {what} needs {nbytes} bytes, {remaining} remain"
        )
    if remaining > nbytes:
        raise FormatError(f"{remaining - nbytes} trailing bytes after {what}")
    return _read_exact(f, nbytes, what)


def _write_named_float_matrix(path, magic: bytes, names, payload: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<QQ", payload.shape[0], payload.shape[1]))
        for name in names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        f.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def _read_named_float_matrix(path, magic: bytes):
    with open(path, "rb") as f:
        _read_header(f, magic)
        n, m = struct.unpack("<QQ", _read_exact(f, 16, "matrix dimensions"))
        names = []
        for i in range(m):
            (length,) = struct.unpack("<I", _read_exact(f, 4, f"length of name {i}"))
            try:
                names.append(_read_exact(f, length, f"name {i}").decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise FormatError(f"name {i} is not valid UTF-8") from exc
        raw = _read_payload(f, path, 4 * n * m, "float payload")
    values = np.frombuffer(raw, dtype="<f4").reshape(n, m)
    return tuple(names), values


def write_score_matrix(path, matrix: ScoreMatrix) -> None:
    matrix.validate()
    _write_named_float_matrix(path, _MAGIC_SCORES, matrix.concept_names, matrix.scores)


def read_score_matrix(path) -> ScoreMatrix:
    names, values = _read_named_float_matrix(path, _MAGIC_SCORES)
    try:
        return ScoreMatrix(names, values)
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_feature_matrix(path, matrix: FeatureMatrix) -> None:
    matrix.validate()
    with open(path, "wb") as f:
        f.write(_MAGIC_FEATURES)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<QQ", matrix.n, matrix.d))
        f.write(np.ascontiguousarray(matrix.features, dtype="<f4").tobytes())


def read_feature_matrix(path) -> FeatureMatrix:
    with open(path, "rb") as f:
        _read_header(f, _MAGIC_FEATURES)
        n, d = struct.unpack("<QQ", _read_exact(f, 16, "matrix dimensions"))
        raw = _read_payload(f, path, 4 * n * d, "float payload")
    values = np.frombuffer(raw, dtype="<f4").reshape(n, d)
    try:
        return FeatureMatrix(values)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_distribution_matrix(path, matrix: DistributionMatrix) -> None:
    matrix.validate()
    _write_named_float_matrix(
        path, _MAGIC_DISTRIBUTIONS, matrix.concept_names, matrix.dist
    )


def read_distribution_matrix(path) -> DistributionMatrix:
    names, values = _read_named_float_matrix(path, _MAGIC_DISTRIBUTIONS)
    # float32 quantization perturbs row sums past the 1e-9 invariant, and can
    # flush tiny probabilities to exactly 0; restore both in float64.
    dist = values.astype(np.float64)
    if not np.isfinite(dist).all() or (dist < 0.0).any():
        raise FormatError("distribution payload must be finite and non-negative")
    dist = np.maximum(dist, np.finfo(np.float64).tiny)
    dist /= dist.sum(axis=1, keepdims=True)
    np.clip(dist, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0), out=dist)
    try:
        return DistributionMatrix(names, dist)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_codes(path, codes: PackedCodeSet) -> None:
    codes.validate()
    with open(path, "wb") as f:
        f.write(_MAGIC_CODES)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<QQ", codes.code_bits, codes.n))
        f.write(np.ascontiguousarray(codes.words, dtype="<u8").tobytes())


def read_codes(path) -> PackedCodeSet:
    with open(path, "rb") as f:
        _read_header(f, _MAGIC_CODES)
        k, n = struct.unpack("<QQ", _read_exact(f, 16, "code dimensions"))
        if k < 1:
            raise FormatError("code length must be >= 1")
        raw = _read_payload(f, path, 8 * n * words_per_code(k), "code words")
    words = np.frombuffer(raw, dtype="<u8").reshape(n, words_per_code(k))
    try:
        return PackedCodeSet(k, words)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


# ---------------------------------------------------------------------------
# label TSV


def read_labels(path) -> LabelTable:
    """Parse a label TSV: one line per item, "<index>\\t<id>,<id>,...".

    Indices must cover 0..n-1 exactly once; lines may appear in any order.
    """
    entries: dict[int, frozenset[int]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            index_part, sep, label_part = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected '<index>\\t<labels>'")
            try:
                index = int(index_part)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad item index {index_part!r}") from exc
            if index < 0:
                raise ValueError(f"{path}:{lineno}: negative item index {index}")
            if index in entries:
                raise ValueError(f"{path}:{lineno}: duplicate item index {index}")
            if not label_part:
                raise ValueError(f"{path}:{lineno}: empty label set")
            try:
                labels = frozenset(int(tok) for tok in label_part.split(","))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad label id in {label_part!r}") from exc
            if any(label < 0 for label in labels):
                raise ValueError(f"{path}:{lineno}: negative label id")
            entries[index] = labels
    if not entries:
        raise ValueError(f"{path}: empty label file")
    n = len(entries)
    missing = [i for i in range(n) if i not in entries]
    if missing:
        raise ValueError(f"{path}: missing item index {missing[0]}")
    return LabelTable(tuple(entries[i] for i in range(n)))


def write_labels(path, table: LabelTable) -> None:
    table.validate()
    with open(path, "w", encoding="utf-8") as f:
        for i, item in enumerate(table.labels):
            f.write(f"{i}\t{','.join(str(label) for label in sorted(item))}\n")
