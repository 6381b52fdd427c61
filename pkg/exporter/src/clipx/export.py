"""Offline export: manifest -> binary embedding store plus sidecars."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import prompt_for
from .store import (
    Record,
    TEXT_PATCH_INDEX,
    write_label_table,
    write_meta,
    write_store,
)


@dataclass(frozen=True)
class ExportJob:
    manifest: str
    output: str
    grid: int = 4
    resolution: int = 224
    labels: tuple[str, ...] = ()
    device: str = "cpu"
    batch_size: int = 48

    def __post_init__(self):
        if self.grid < 1 or self.resolution % self.grid != 0:
            raise ValueError(
                f"grid {self.grid} must divide resolution {self.resolution}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class ExportOutcome:
    records: list[Record]
    skipped: list[str] = field(default_factory=list)


def read_manifest(path: str | Path) -> list[tuple[str, str]]:
    """(path, label) pairs from a JSONL manifest; '#' lines are comments."""
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        data = json.loads(line)
        items.append((data["path"], data["label"]))
    return items


def label_table_for(job: ExportJob) -> dict[int, str]:
    labels = list(dict.fromkeys(job.labels))  # dedupe, keep order
    if not labels:
        labels = sorted({label for _, label in read_manifest(job.manifest)})
    return dict(enumerate(labels))


def export_text_embeddings(job: ExportJob, encoder) -> list[Record]:
    table = label_table_for(job)
    prompts = [prompt_for(table[i]) for i in sorted(table)]
    vectors = encoder.encode_text(prompts)
    return [
        Record(item_id=table[i], patch_index=TEXT_PATCH_INDEX, label_id=i,
               vector=vectors[i])
        for i in sorted(table)
    ]


def _load_patches(path: str, job: ExportJob) -> list[np.ndarray]:
    with Image.open(path) as img:
        pixels = np.asarray(
            img.convert("RGB").resize((job.resolution, job.resolution),
                                      Image.BILINEAR))
    return split_patches(pixels, job.grid)


def split_patches(pixels: np.ndarray, grid: int) -> list[np.ndarray]:
    """Row-major non-overlapping tiles of a square HxWx3 array."""
    side = pixels.shape[0] // grid
    return [pixels[r * side:(r + 1) * side, c * side:(c + 1) * side]
            for r in range(grid) for c in range(grid)]


def export_patch_embeddings(job: ExportJob, encoder) -> ExportOutcome:
    table = label_table_for(job)
    label_ids = {v: k for k, v in table.items()}
    items = read_manifest(job.manifest)
    missing = set(label for _, label in items) - set(label_ids)
    if missing:
        raise ValueError(f"manifest labels absent from label set: {sorted(missing)}")

    outcome = ExportOutcome(records=[])
    pending: list[tuple[str, int, np.ndarray]] = []  # (item, patch_index, pixels)

    def flush():
        if not pending:
            return
        vectors = encoder.encode_images([p for _, _, p in pending])
        for (item, patch_index, _), vec in zip(pending, vectors):
            outcome.records.append(Record(
                item_id=item, patch_index=patch_index,
                label_id=label_ids[item_labels[item]], vector=vec))
        pending.clear()

    item_labels = dict(items)
    for path, _ in items:
        try:
            patches = _load_patches(path, job)
        except OSError as exc:
            warnings.warn(f"skipping unreadable image {path!r}: {exc}")
            outcome.skipped.append(path)
            continue
        for index, patch in enumerate(patches):
            pending.append((path, index, patch))
            if len(pending) >= job.batch_size:
                flush()
    flush()
    expected = (len(items) - len(outcome.skipped)) * job.grid * job.grid
    if len(outcome.records) != expected:
        raise RuntimeError(
            f"record count mismatch: wrote {len(outcome.records)}, "
            f"expected {expected} ({len(outcome.skipped)} items skipped)")
    return outcome


def run_export(job: ExportJob, encoder) -> ExportOutcome:
    """Full export: text + patch records, store, label table, metadata."""
    text_records = export_text_embeddings(job, encoder)
    outcome = export_patch_embeddings(job, encoder)
    all_records = text_records + outcome.records
    out = Path(job.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_store(all_records, out)
    write_label_table(label_table_for(job), f"{out}.labels")
    write_meta({
        "encoder_variant": encoder.variant,
        "dimension": encoder.dimension,
        "grid": job.grid,
        "resolution": job.resolution,
        "items": len(read_manifest(job.manifest)),
        "skipped": outcome.skipped,
    }, f"{out}.meta")
    outcome.records = all_records
    return outcome
