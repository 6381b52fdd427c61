"""Embedding data model, binary store format, and cosine similarity.

Store layout (little-endian): magic "PEMB", u32 format_version=1,
u32 dimension, u64 record_count, then per record: u32 label_id,
u16 patch_index (0xFFFF marks a text record), u16 item_id length,
item_id bytes (UTF-8), dimension * f32 values. A sidecar text file maps
label_id to the label string.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    InvalidConfigError,
    TruncatedStoreError,
    VersionMismatchError,
)

MAGIC = b"PEMB"
STORE_FORMAT_VERSION = 1
TEXT_PATCH_INDEX = 0xFFFF
_HEADER = struct.Struct("<4sIIQ")
_REC_FIXED = struct.Struct("<IHH")


@dataclass(frozen=True)
class EmbeddingKey:
    item_id: str
    patch_index: int  # TEXT_PATCH_INDEX for text records
    label_id: int

    @property
    def is_text(self) -> bool:
        return self.patch_index == TEXT_PATCH_INDEX


@dataclass(frozen=True)
class EmbeddingRecord:
    key: EmbeddingKey
    vector: np.ndarray  # float32, shape (d,)


def pseudo_sentence(label: str) -> str:
    """Text prompt used to embed a class label."""
    if not label:
        raise InvalidConfigError("label must be non-empty")
    return f"Image of a {label}"


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidConfigError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def save_store(records: list[EmbeddingRecord], path: str | Path,
               dimension: int | None = None) -> None:
    if records:
        dims = {r.vector.shape[0] for r in records}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed dimensions in store: {sorted(dims)}")
        dim = dims.pop()
        if dimension is not None and dimension != dim:
            raise DimensionMismatchError(f"declared dimension {dimension} != records {dim}")
    else:
        dim = dimension or 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, STORE_FORMAT_VERSION, dim, len(records)))
        for rec in records:
            item_bytes = rec.key.item_id.encode("utf-8")
            if len(item_bytes) > 0xFFFF:
                raise InvalidConfigError("item_id too long for store format")
            fh.write(_REC_FIXED.pack(rec.key.label_id, rec.key.patch_index, len(item_bytes)))
            fh.write(item_bytes)
            fh.write(np.ascontiguousarray(rec.vector, dtype="<f4").tobytes())


def load_store(path: str | Path) -> list[EmbeddingRecord]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedStoreError("file shorter than header")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != STORE_FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported store version {version}")
    off = _HEADER.size
    records = []
    vec_bytes = 4 * dim
    for _ in range(count):
        if off + _REC_FIXED.size > len(data):
            raise TruncatedStoreError("record header past end of file")
        label_id, patch_index, id_len = _REC_FIXED.unpack_from(data, off)
        off += _REC_FIXED.size
        if off + id_len + vec_bytes > len(data):
            raise TruncatedStoreError("record payload past end of file")
        item_id = data[off:off + id_len].decode("utf-8")
        off += id_len
        vector = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += vec_bytes
        if not np.all(np.isfinite(vector)):
            raise DimensionMismatchError(f"non-finite values in record {item_id!r}")
        records.append(EmbeddingRecord(
            key=EmbeddingKey(item_id=item_id, patch_index=patch_index, label_id=label_id),
            vector=vector,
        ))
    if off != len(data):
        raise TruncatedStoreError("trailing bytes after declared record count")
    return records


def save_label_table(labels: dict[int, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label_id in sorted(labels):
            fh.write(f"{label_id}\t{labels[label_id]}\n")


def load_label_table(path: str | Path) -> dict[int, str]:
    labels = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        label_id, label = line.split("\t", 1)
        labels[int(label_id)] = label
    return labels
