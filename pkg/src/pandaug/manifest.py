"""Dataset manifest ingestion.

A manifest is UTF-8, line-delimited JSON: one flat object per line with
string fields "path" and "label". Lines starting with '#' are ignored.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidConfigError


@dataclass(frozen=True)
class ManifestItem:
    path: str
    label: str

    @property
    def item_id(self) -> str:
        return self.path


def read_manifest(path: str | Path) -> list[ManifestItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidConfigError(f"{path}:{lineno}: malformed manifest line") from exc
            if not isinstance(rec.get("path"), str) or not isinstance(rec.get("label"), str):
                raise InvalidConfigError(
                    f"{path}:{lineno}: manifest record needs string 'path' and 'label'"
                )
            items.append(ManifestItem(path=rec["path"], label=rec["label"]))
    return items


def write_manifest(items: list[ManifestItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in items:
            fh.write(json.dumps({"path": it.path, "label": it.label}) + "\n")


def manifest_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def group_by_label(items: list[ManifestItem]) -> dict[str, list[ManifestItem]]:
    groups: dict[str, list[ManifestItem]] = {}
    for it in items:
        groups.setdefault(it.label, []).append(it)
    return groups


def synthetic_manifest(num_classes: int, items_per_class: int,
                       prefix: str = "item") -> list[ManifestItem]:
    """Placeholder manifest for desk-scale runs with the synthetic provider.

    Paths are synthetic identifiers; no files need to exist on disk.
    """
    items = []
    for c in range(num_classes):
        label = f"class{c:03d}"
        for i in range(items_per_class):
            items.append(ManifestItem(path=f"{prefix}/{label}/{i:04d}", label=label))
    return items
