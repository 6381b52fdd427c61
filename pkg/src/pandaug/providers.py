"""Interchangeable embedding providers: file-backed, synthetic, remote.

All providers expose the same two lookups:

    text_embedding(label) -> (d,) float32
    patch_embeddings(item_id, label, n_patches, image=None) -> (n_patches, d)

File and synthetic providers are read-only after init and safe to share
across threads; the remote provider serializes its cache writes internally.
"""

from __future__ import annotations

import base64
import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .embedstore import (
    TEXT_PATCH_INDEX,
    load_label_table,
    load_store,
)
from .errors import InvalidConfigError, MissingRecordError, TransportError
from .seeding import rng_for

DEFAULT_DIMENSION = 512
DEFAULT_SIGMA = 0.3
DEFAULT_FG_FRACTION = 0.5
DEFAULT_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class ProviderConfig:
    kind: str  # "file" | "synthetic" | "remote"
    dimension: int = DEFAULT_DIMENSION
    path: str | None = None       # file store (sidecar at path + ".labels")
    endpoint: str | None = None   # remote base URL
    seed: int = 1993
    sigma: float = DEFAULT_SIGMA
    fg_fraction: float = DEFAULT_FG_FRACTION

    def validate(self) -> None:
        if self.kind not in ("file", "synthetic", "remote"):
            raise InvalidConfigError(f"unknown provider kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise InvalidConfigError("file provider needs a store path")
        if self.kind == "remote" and not self.endpoint:
            raise InvalidConfigError("remote provider needs an endpoint")


def make_provider(cfg: ProviderConfig):
    cfg.validate()
    if cfg.kind == "synthetic":
        return SyntheticProvider(dimension=cfg.dimension, seed=cfg.seed,
                                 sigma=cfg.sigma, fg_fraction=cfg.fg_fraction)
    if cfg.kind == "file":
        return FileProvider(cfg.path)
    return RemoteProvider(cfg.endpoint, dimension=cfg.dimension)


def synthetic_image(seed: int, item_id: str, resolution: int = 224) -> np.ndarray:
    """Deterministic stand-in image for an item id (uint8 HxWx3)."""
    rng = rng_for(seed, "image", item_id)
    return rng.integers(0, 256, size=(resolution, resolution, 3), dtype=np.uint8)


class SyntheticProvider:
    """Deterministic embeddings with a known foreground/background structure.

    Each label owns a fixed random unit direction; a seeded subset of an
    item's patches ("foreground") mixes that direction with noise, the rest
    are pure noise. Patch selection against the label's text vector therefore
    has a verifiable ground truth.
    """

    kind = "synthetic"

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 1993,
                 sigma: float = DEFAULT_SIGMA, fg_fraction: float = DEFAULT_FG_FRACTION):
        if not (0.0 <= sigma <= 1.0):
            raise InvalidConfigError("sigma must lie in [0, 1]")
        if not (0.0 <= fg_fraction <= 1.0):
            raise InvalidConfigError("fg_fraction must lie in [0, 1]")
        self.dimension = dimension
        self.seed = seed
        self.sigma = sigma
        self.fg_fraction = fg_fraction

    def _unit(self, rng) -> np.ndarray:
        v = rng.standard_normal(self.dimension)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def text_embedding(self, label: str) -> np.ndarray:
        if not label:
            raise InvalidConfigError("label must be non-empty")
        return self._unit(rng_for(self.seed, "synthetic", "text", label))

    def foreground_patches(self, item_id: str, n_patches: int) -> np.ndarray:
        n_fg = int(round(self.fg_fraction * n_patches))
        rng = rng_for(self.seed, "synthetic", "fg", item_id)
        return np.sort(rng.choice(n_patches, size=n_fg, replace=False))

    def patch_embeddings(self, item_id: str, label: str, n_patches: int,
                         image: np.ndarray | None = None) -> np.ndarray:
        direction = self.text_embedding(label)
        fg = set(self.foreground_patches(item_id, n_patches).tolist())
        out = np.empty((n_patches, self.dimension), dtype=np.float32)
        for i in range(n_patches):
            noise = self._unit(rng_for(self.seed, "synthetic", "patch", item_id, str(i)))
            if i in fg:
                out[i] = (1.0 - self.sigma) * direction + self.sigma * noise
            else:
                out[i] = noise
        return out


class FileProvider:
    """Lookups against a binary embedding store plus its label sidecar."""

    kind = "file"

    def __init__(self, store_path: str | Path):
        store_path = Path(store_path)
        records = load_store(store_path)
        self.labels = load_label_table(store_path.with_suffix(store_path.suffix + ".labels"))
        self.label_ids = {v: k for k, v in self.labels.items()}
        self.dimension = records[0].vector.shape[0] if records else 0
        self._text: dict[int, np.ndarray] = {}
        self._patches: dict[tuple[str, int], np.ndarray] = {}
        for rec in records:
            if rec.key.is_text:
                self._text[rec.key.label_id] = rec.vector
            else:
                self._patches[(rec.key.item_id, rec.key.patch_index)] = rec.vector

    def text_embedding(self, label: str) -> np.ndarray:
        label_id = self.label_ids.get(label)
        if label_id is None or label_id not in self._text:
            raise MissingRecordError(f"no text record for label {label!r}")
        return self._text[label_id]

    def patch_embeddings(self, item_id: str, label: str, n_patches: int,
                         image: np.ndarray | None = None) -> np.ndarray:
        out = np.empty((n_patches, self.dimension), dtype=np.float32)
        for i in range(n_patches):
            vec = self._patches.get((item_id, i))
            if vec is None:
                raise MissingRecordError(f"no patch record for ({item_id!r}, {i})")
            out[i] = vec
        return out


class RemoteProvider:
    """Client for the POST /embed protocol with an in-memory cache.

    Requests are idempotent; transient failures are retried before raising
    a transport error. PANDA_REMOTE_TIMEOUT_MS overrides the timeout.
    """

    kind = "remote"

    def __init__(self, endpoint: str, dimension: int = DEFAULT_DIMENSION,
                 timeout: float | None = None, retries: int = 2):
        self.endpoint = endpoint.rstrip("/")
        self.dimension = dimension
        env_ms = os.environ.get("PANDA_REMOTE_TIMEOUT_MS")
        if timeout is None:
            timeout = float(env_ms) / 1000.0 if env_ms else DEFAULT_TIMEOUT_S
        self.timeout = timeout
        self.retries = retries
        self._cache: dict = {}
        self._lock = threading.Lock()
        self._session = requests.Session()

    def _post(self, body: dict) -> list[list[float]]:
        last_exc = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(self.endpoint + "/embed", json=body,
                                          timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code == 404:
                raise MissingRecordError(f"/embed has no record for {body.get('label') or body.get('item_id')!r}")
            if resp.status_code != 200:
                last_exc = TransportError(f"/embed returned {resp.status_code}")
                continue
            try:
                payload = resp.json()
                vectors = payload["vectors"]
            except (ValueError, KeyError) as exc:
                raise TransportError("malformed /embed response body") from exc
            return vectors
        raise TransportError(f"/embed failed after {self.retries + 1} attempts") from last_exc

    def text_embedding(self, label: str) -> np.ndarray:
        if not label:
            raise InvalidConfigError("label must be non-empty")
        key = ("text", label)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        vectors = self._post({"kind": "text", "label": label})
        vec = np.asarray(vectors[0], dtype=np.float32)
        with self._lock:
            self._cache[key] = vec
        return vec

    def patch_embeddings(self, item_id: str, label: str, n_patches: int,
                         image: np.ndarray | None = None) -> np.ndarray:
        key = ("patches", item_id, n_patches)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        if image is None:
            raise InvalidConfigError("remote provider needs image pixels for patch embeddings")
        grid = int(round(math.sqrt(n_patches)))
        if grid * grid != n_patches:
            raise InvalidConfigError(f"n_patches {n_patches} is not a square grid")
        body = {
            "kind": "patches",
            "item_id": item_id,
            "label": label,
            "image": base64.b64encode(np.ascontiguousarray(image, dtype=np.uint8).tobytes()).decode("ascii"),
            "grid": grid,
        }
        vectors = self._post(body)
        arr = np.asarray(vectors, dtype=np.float32)
        if arr.shape[0] != n_patches:
            raise TransportError(f"expected {n_patches} vectors, got {arr.shape[0]}")
        with self._lock:
            self._cache[key] = arr
        return arr
