"""Embedding storage: synthetic generation, binary I/O, normalization.

Vectors are float32 row-major; reductions (norms, distances) run in float64.
The on-disk format is:

    magic "SECATEMB" | u8 version=1 | u32 n_rows | u32 dim (little endian)
    n_rows*dim float32 values, row-major
    u8 label_flag (0 or 1) | [n_rows u32 labels if flag == 1]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, FormatError, LengthError, ValidationError
from .wordbank import BASE_NOUNS

MAGIC = b"SECATEMB"
VERSION = 1


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N rows of D-dimensional float32 vectors with stable integer row ids."""

    data: np.ndarray
    row_ids: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValidationError(f"embedding data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValidationError("need at least one row")
        if data.shape[1] < 2:
            raise ValidationError(f"dim must be >= 2, got {data.shape[1]}")
        if not np.isfinite(data).all():
            raise ValidationError("embedding values must be finite")
        ids = self.row_ids
        if ids is None:
            ids = np.arange(data.shape[0], dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.shape != (data.shape[0],):
                raise ValidationError("row_ids length must match n_rows")
            if len(np.unique(ids)) != len(ids):
                raise ValidationError("row_ids must be unique")
        data.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "row_ids", ids)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def index_of(self) -> dict[int, int]:
        return {int(r): i for i, r in enumerate(self.row_ids)}


@dataclass(frozen=True)
class SyntheticSpec:
    """Well-separated isotropic Gaussian blobs standing in for encoder outputs."""

    n_classes: int
    per_class: int
    dim: int
    separation: float  # centroid spacing in units of the within-class std
    seed: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError("n_classes must be >= 2")
        if self.per_class < 2:
            raise ValidationError("per_class must be >= 2")
        if self.dim < 2:
            raise ValidationError("dim must be >= 2")
        if not self.separation > 0:
            raise ValidationError("separation must be > 0")


@dataclass(frozen=True)
class GroundTruth:
    """Per-row class index plus a base-lexicon name per class."""

    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if labels.size and int(labels.max()) >= len(self.class_names):
            raise ValidationError("label index out of range of class_names")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def _sample_centroids(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    """Uniform directions on the sphere of radius separation, resampled until
    every pair is at least `separation` apart."""
    radius = float(spec.separation)
    cents = np.zeros((spec.n_classes, spec.dim), dtype=np.float64)
    for i in range(spec.n_classes):
        for _ in range(10_000):
            v = rng.standard_normal(spec.dim)
            v *= radius / np.linalg.norm(v)
            if i == 0 or np.linalg.norm(cents[:i] - v, axis=1).min() >= radius:
                cents[i] = v
                break
        else:
            raise ValidationError(
                f"could not place {spec.n_classes} centroids at spacing "
                f"{radius} in dim {spec.dim}"
            )
    return cents


def generate_synthetic(spec: SyntheticSpec) -> tuple[EmbeddingMatrix, GroundTruth]:
    """Draw per_class samples from each of n_classes unit-variance Gaussians."""
    if spec.n_classes > len(BASE_NOUNS):
        raise ValidationError(
            f"n_classes {spec.n_classes} exceeds base lexicon size {len(BASE_NOUNS)}"
        )
    rng = np.random.default_rng(spec.seed)
    cents = _sample_centroids(rng, spec)
    n = spec.n_classes * spec.per_class
    labels = np.repeat(np.arange(spec.n_classes), spec.per_class)
    noise = rng.standard_normal((n, spec.dim))
    data = (cents[labels] + noise).astype(np.float32)
    names = tuple(BASE_NOUNS[: spec.n_classes])
    return EmbeddingMatrix(data), GroundTruth(labels, names)


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm (norms accumulated in float64)."""
    norms = np.linalg.norm(matrix.data.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(
            f"cannot normalize all-zero row id {int(matrix.row_ids[zero[0]])}"
        )
    out = (matrix.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingMatrix(out, matrix.row_ids)


def write_embeddings(path, matrix: EmbeddingMatrix, labels: np.ndarray | None = None) -> None:
    payload = matrix.data.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<II", matrix.n_rows, matrix.dim))
        f.write(payload)
        if labels is None:
            f.write(struct.pack("<B", 0))
        else:
            labels = np.asarray(labels)
            if labels.shape != (matrix.n_rows,):
                raise ValidationError("labels length must equal n_rows")
            f.write(struct.pack("<B", 1))
            f.write(labels.astype("<u4").tobytes())


def read_embeddings(path) -> tuple[EmbeddingMatrix, np.ndarray | None]:
    with open(path, "rb") as f:
        blob = f.read()
    head = len(MAGIC) + 1 + 8
    if len(blob) < head:
        raise LengthError(f"file too short for header: {len(blob)} bytes")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {blob[:len(MAGIC)]!r}")
    version = blob[len(MAGIC)]
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    n_rows, dim = struct.unpack_from("<II", blob, len(MAGIC) + 1)
    need = n_rows * dim * 4
    body = blob[head:]
    if len(body) < need + 1:
        raise LengthError(f"payload truncated: have {len(body)}, need {need + 1}")
    data = np.frombuffer(body[:need], dtype="<f4").reshape(n_rows, dim)
    rest = body[need:]
    flag = rest[0]
    labels = None
    if flag == 1:
        if len(rest) != 1 + n_rows * 4:
            raise LengthError("label block truncated")
        labels = np.frombuffer(rest[1:], dtype="<u4").astype(np.int64)
    elif flag == 0:
        if len(rest) != 1:
            raise LengthError(f"{len(rest) - 1} trailing bytes after payload")
    else:
        raise FormatError(f"bad label flag {flag}")
    return EmbeddingMatrix(np.array(data, dtype=np.float32)), labels


class RowLookup:
    """Row-id to vector lookup over one or more embedding matrices."""

    def __init__(self, *matrices: EmbeddingMatrix):
        if not matrices:
            raise ValidationError("RowLookup needs at least one matrix")
        dims = {m.dim for m in matrices}
        if len(dims) != 1:
            raise ValidationError(f"mixed dims in RowLookup: {sorted(dims)}")
        self.dim = dims.pop()
        self.data = np.concatenate([m.data for m in matrices], axis=0)
        ids = np.concatenate([m.row_ids for m in matrices])
        if len(np.unique(ids)) != len(ids):
            raise ValidationError("duplicate row ids across matrices")
        self._index = {int(r): i for i, r in enumerate(ids)}

    def vectors(self, row_ids) -> np.ndarray:
        try:
            idx = [self._index[int(r)] for r in row_ids]
        except KeyError as e:
            from .errors import DataError

            raise DataError(f"unknown embedding row id {e.args[0]}") from None
        return self.data[idx]
