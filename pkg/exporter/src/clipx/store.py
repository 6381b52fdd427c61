"""Writer for the binary embedding store.

Layout (little-endian): magic "PEMB", u32 format_version=1, u32 dimension,
u64 record_count, then per record: u32 label_id, u16 patch_index (0xFFFF
marks a text record), u16 item_id length, item_id bytes (UTF-8),
dimension * f32 values. Sidecars: a tab-separated label table at
<store>.labels and a JSON metadata file at <store>.meta recording the
encoder variant.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PEMB"
STORE_FORMAT_VERSION = 1
TEXT_PATCH_INDEX = 0xFFFF
_HEADER = struct.Struct("<4sIIQ")
_REC_FIXED = struct.Struct("<IHH")


@dataclass(frozen=True)
class Record:
    item_id: str
    patch_index: int  # TEXT_PATCH_INDEX for text records
    label_id: int
    vector: np.ndarray  # float32, shape (d,)


def write_store(records: list[Record], path: str | Path) -> None:
    if not records:
        raise ValueError("refusing to write an empty store")
    dims = {r.vector.shape[0] for r in records}
    if len(dims) != 1:
        raise ValueError(f"mixed vector dimensions: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, STORE_FORMAT_VERSION, dim, len(records)))
        for rec in records:
            item_bytes = rec.item_id.encode("utf-8")
            if len(item_bytes) > 0xFFFF:
                raise ValueError(f"item_id too long: {rec.item_id!r}")
            fh.write(_REC_FIXED.pack(rec.label_id, rec.patch_index, len(item_bytes)))
            fh.write(item_bytes)
            fh.write(np.ascontiguousarray(rec.vector, dtype="<f4").tobytes())


def write_label_table(labels: dict[int, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label_id in sorted(labels):
            fh.write(f"{label_id}\t{labels[label_id]}\n")


def write_meta(meta: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
