"""Patch grids, semantic patch selection, mask composition, and the
head-to-tail balancing loop.

Images are row-major uint8 RGB arrays of shape (H, W, 3). A grid of side g
partitions the image into N = g*g non-overlapping square patches indexed
row-major; masks are unions of whole patch rectangles.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .embedstore import cosine_similarity
from .errors import InvalidConfigError, PartialBalanceWarning
from .seeding import rng_for

DEFAULT_GRID = 4
DEFAULT_THRESHOLD = 0.45
DEFAULT_RESOLUTION = 224


@dataclass(frozen=True)
class PatchGrid:
    g: int
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        if self.g < 1:
            raise InvalidConfigError("grid side must be >= 1")
        if self.resolution % self.g != 0:
            raise InvalidConfigError(
                f"resolution {self.resolution} not divisible by grid {self.g}")

    @property
    def n_patches(self) -> int:
        return self.g * self.g

    @property
    def patch_px(self) -> int:
        return self.resolution // self.g

    def rect(self, index: int) -> tuple[int, int, int, int]:
        """(top, left, bottom, right) pixel bounds of a patch, half-open."""
        row, col = divmod(index, self.g)
        p = self.patch_px
        return row * p, col * p, (row + 1) * p, (col + 1) * p


@dataclass(frozen=True)
class BalanceConfig:
    q: int = 1
    k: int | None = None            # patches to transfer; None -> N // 2
    threshold: float = DEFAULT_THRESHOLD
    max_iterations: int = 10_000
    reuse_head: bool = False        # keep consumed head images in the pool

    def validate(self, n_patches: int) -> None:
        k = self.k if self.k is not None else n_patches // 2
        if not (0 < k <= n_patches):
            raise InvalidConfigError(f"k={k} out of range for {n_patches} patches")
        if not (0.0 <= self.threshold <= 1.0):
            raise InvalidConfigError("threshold must lie in [0, 1]")
        if self.q < 0:
            raise InvalidConfigError("q must be non-negative")
        if self.max_iterations < 1:
            raise InvalidConfigError("max_iterations must be positive")


@dataclass
class AugmentedSample:
    image: np.ndarray
    label_id: int
    item_id: str
    head_source: str
    tail_source: str
    head_indices: tuple[int, ...]
    tail_indices: tuple[int, ...]
    post_augment_ops: dict = field(default_factory=dict)


def partition_patches(image: np.ndarray, grid: PatchGrid) -> list[np.ndarray]:
    h, w = image.shape[:2]
    if h != grid.resolution or w != grid.resolution:
        raise InvalidConfigError(f"image {h}x{w} does not match grid resolution {grid.resolution}")
    patches = []
    for i in range(grid.n_patches):
        t, l, b, r = grid.rect(i)
        patches.append(image[t:b, l:r])
    return patches


def reassemble(patches: list[np.ndarray], grid: PatchGrid) -> np.ndarray:
    out = np.empty((grid.resolution, grid.resolution, 3), dtype=np.uint8)
    for i, patch in enumerate(patches):
        t, l, b, r = grid.rect(i)
        out[t:b, l:r] = patch
    return out


def score_patches(provider, item_id: str, label: str, image: np.ndarray | None,
                  grid: PatchGrid) -> np.ndarray:
    """Cosine similarity of each patch embedding against the label's text
    embedding, in patch-index order."""
    text_vec = provider.text_embedding(label)
    patch_vecs = provider.patch_embeddings(item_id, label, grid.n_patches, image=image)
    return np.array([cosine_similarity(patch_vecs[i], text_vec)
                     for i in range(grid.n_patches)])


def select_patches(scores: np.ndarray, k: int, threshold: float) -> tuple[int, ...]:
    """Up to k highest-scoring indices with score strictly above threshold.

    Ties break toward the lower patch index; an empty result signals the
    caller to skip the pair.
    """
    n = len(scores)
    if k > n:
        raise InvalidConfigError(f"k={k} exceeds {n} patches")
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    picked = [i for i in order if scores[i] > threshold][:k]
    return tuple(sorted(picked))


def build_mask(indices, grid: PatchGrid) -> np.ndarray:
    """(H, W) uint8 mask: 1 exactly on the union of selected patch rectangles."""
    mask = np.zeros((grid.resolution, grid.resolution), dtype=np.uint8)
    for i in indices:
        if not (0 <= i < grid.n_patches):
            raise InvalidConfigError(f"patch index {i} out of range")
        t, l, b, r = grid.rect(i)
        mask[t:b, l:r] = 1
    return mask


def compose_sample(x_h: np.ndarray, x_t: np.ndarray, i_h, i_t, grid: PatchGrid,
                   tail_label_id: int, head_source: str = "", tail_source: str = "",
                   mode: str = "aligned") -> AugmentedSample:
    """Graft the tail image's selected patches into the head image.

    aligned (default): tail patches replace head content at the tail's
    positions. literal: head regions are blanked at the head's selected
    positions and tail patches are added with saturating 8-bit arithmetic.
    The result always carries the tail label.
    """
    if x_h.shape != x_t.shape:
        raise InvalidConfigError(f"shape mismatch {x_h.shape} vs {x_t.shape}")
    if not i_h or not i_t:
        raise InvalidConfigError("both index selections must be non-empty")
    m_t = build_mask(i_t, grid)[:, :, None]
    if mode == "aligned":
        out = np.where(m_t == 1, x_t, x_h)
    elif mode == "literal":
        m_h = build_mask(i_h, grid)[:, :, None]
        head_part = x_h.astype(np.uint16) * (1 - m_h)
        tail_part = x_t.astype(np.uint16) * m_t
        out = np.minimum(head_part + tail_part, 255).astype(np.uint8)
    else:
        raise InvalidConfigError(f"unknown compose mode {mode!r}")
    return AugmentedSample(
        image=out.astype(np.uint8),
        label_id=tail_label_id,
        item_id="",
        head_source=head_source,
        tail_source=tail_source,
        head_indices=tuple(i_h),
        tail_indices=tuple(i_t),
    )


# ---------------------------------------------------------------------------
# standard augmentations

def draw_standard_ops(rng: np.random.Generator, resolution: int) -> dict:
    flip = bool(rng.random() < 0.5)
    scale = float(rng.uniform(0.8, 1.0))
    side = max(1, int(round(resolution * math.sqrt(scale))))
    top = int(rng.integers(0, resolution - side + 1))
    left = int(rng.integers(0, resolution - side + 1))
    return {
        "flip": flip,
        "crop": [top, left, side],
        "brightness": float(rng.uniform(0.8, 1.2)),
        "contrast": float(rng.uniform(0.8, 1.2)),
        "saturation": float(rng.uniform(0.8, 1.2)),
        "blur_sigma": float(rng.uniform(0.1, 1.0)),
    }


def apply_standard_ops(image: np.ndarray, ops: dict) -> np.ndarray:
    h, w = image.shape[:2]
    out = image
    if ops.get("flip"):
        out = out[:, ::-1]
    crop = ops.get("crop")
    if crop:
        top, left, side = crop
        region = out[top:top + side, left:left + side]
        if side != h:
            pil = Image.fromarray(np.ascontiguousarray(region))
            out = np.asarray(pil.resize((w, h), Image.BILINEAR))
        else:
            out = region
    img = out.astype(np.float64)
    b = ops.get("brightness", 1.0)
    img = img * b
    c = ops.get("contrast", 1.0)
    if c != 1.0:
        mean = img.mean()
        img = mean + (img - mean) * c
    s = ops.get("saturation", 1.0)
    if s != 1.0:
        gray = img @ np.array([0.299, 0.587, 0.114])
        img = gray[:, :, None] + (img - gray[:, :, None]) * s
    sigma = ops.get("blur_sigma", 0.0)
    if sigma >= 0.1:
        img = gaussian_filter(img, sigma=(sigma, sigma, 0.0))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def standard_augment(sample: AugmentedSample, seed: int) -> AugmentedSample:
    """Seeded flip / resized crop / color jitter / Gaussian blur; label and
    dimensions unchanged; applied parameters recorded on the sample."""
    rng = rng_for(seed, "augment", sample.item_id or sample.tail_source)
    ops = draw_standard_ops(rng, sample.image.shape[0])
    image = apply_standard_ops(sample.image, ops)
    return AugmentedSample(
        image=image,
        label_id=sample.label_id,
        item_id=sample.item_id,
        head_source=sample.head_source,
        tail_source=sample.tail_source,
        head_indices=sample.head_indices,
        tail_indices=sample.tail_indices,
        post_augment_ops=ops,
    )


# ---------------------------------------------------------------------------
# head/tail partition and the balancing loop

@dataclass(frozen=True)
class HeadTailSplit:
    head: tuple[int, ...]
    tail: tuple[int, ...]
    already_balanced: bool


def partition_head_tail(counts: dict[int, int]) -> HeadTailSplit:
    """Classes strictly above the task mean count are head, the rest tail.

    Uniform counts yield the already-balanced no-op signal.
    """
    if len(counts) < 2:
        raise InvalidConfigError("head/tail partition needs at least 2 classes")
    values = list(counts.values())
    if min(values) == max(values):
        return HeadTailSplit(head=(), tail=(), already_balanced=True)
    mean = sum(values) / len(values)
    head = tuple(sorted(c for c, n in counts.items() if n > mean))
    tail = tuple(sorted(c for c, n in counts.items() if n <= mean))
    return HeadTailSplit(head=head, tail=tail, already_balanced=False)


@dataclass
class BalanceResult:
    samples: list[AugmentedSample]
    log: list[dict]
    consumed_head: list[str]
    residual_gap: float
    final_counts: dict[int, int]


def _gap(counts: dict[int, int], head, tail, target_max: float | None) -> float:
    head_counts = [counts[c] for c in head]
    if target_max is not None:
        head_counts = [min(n, target_max) for n in head_counts]
    return float(np.mean(head_counts) - np.mean([counts[c] for c in tail]))


def balance_task(train: list[tuple[str, int]], labels: dict[int, str], provider,
                 cfg: BalanceConfig, grid: PatchGrid, seed: int,
                 image_loader, task_index: int = 0, mode: str = "aligned",
                 targets: tuple[float, float] | None = None) -> BalanceResult:
    """Iteratively graft tail patches into head images until the average
    head and tail class counts differ by at most q.

    Each accepted synthesis appends a tail-labeled sample and removes the
    consumed head image from the pool, so the gap decreases strictly. Pairs
    whose patch selection is empty are skipped without consuming anything.
    With targets=(target_min, target_max), head counts are capped at
    target_max for gap accounting.
    """
    cfg.validate(grid.n_patches)
    k = cfg.k if cfg.k is not None else grid.n_patches // 2
    counts: dict[int, int] = {}
    for _, cid in train:
        counts[cid] = counts.get(cid, 0) + 1
    split = partition_head_tail(counts)
    if split.already_balanced:
        return BalanceResult([], [], [], 0.0, counts)

    target_max = targets[1] if targets is not None else None
    rng = rng_for(seed, "balance", str(task_index))
    head_pool = [(iid, cid) for iid, cid in train if cid in split.head]
    tail_pools = {c: [iid for iid, cid in train if cid == c] for c in split.tail}
    # round-robin order over tail classes, rarest first
    tail_order = sorted(split.tail, key=lambda c: (counts[c], c))

    text_cache: dict[int, np.ndarray] = {}
    score_cache: dict[str, np.ndarray] = {}

    def scores_for(item_id: str, cid: int) -> np.ndarray:
        if item_id not in score_cache:
            score_cache[item_id] = score_patches(
                provider, item_id, labels[cid], image_loader(item_id), grid)
        return score_cache[item_id]

    samples: list[AugmentedSample] = []
    log: list[dict] = []
    consumed: list[str] = []
    gap = _gap(counts, split.head, split.tail, target_max)
    accepted = 0
    iteration = 0
    while abs(gap) > cfg.q and head_pool and iteration < cfg.max_iterations:
        iteration += 1
        tail_class = tail_order[accepted % len(tail_order)]
        head_idx = int(rng.integers(0, len(head_pool)))
        head_item, head_class = head_pool[head_idx]
        tail_item = tail_pools[tail_class][int(rng.integers(0, len(tail_pools[tail_class])))]

        head_scores = scores_for(head_item, head_class)
        tail_scores = scores_for(tail_item, tail_class)
        i_h = select_patches(head_scores, k, cfg.threshold)
        i_t = select_patches(tail_scores, k, cfg.threshold)
        if not i_h or not i_t:
            continue

        new_id = f"aug/t{task_index}/c{tail_class}/i{iteration:05d}"
        sample = compose_sample(image_loader(head_item), image_loader(tail_item),
                                i_h, i_t, grid, tail_class,
                                head_source=head_item, tail_source=tail_item, mode=mode)
        sample.item_id = new_id
        sample = standard_augment(sample, seed)

        if not cfg.reuse_head:
            head_pool.pop(head_idx)
            consumed.append(head_item)
            counts[head_class] -= 1
        counts[tail_class] += 1
        gap = _gap(counts, split.head, split.tail, target_max)
        accepted += 1
        samples.append(sample)
        log.append({
            "iteration": iteration,
            "head_item": head_item,
            "tail_item": tail_item,
            "head_indices": list(i_h),
            "tail_indices": list(i_t),
            "head_scores": [round(float(s), 6) for s in head_scores],
            "tail_scores": [round(float(s), 6) for s in tail_scores],
            "new_item": new_id,
            "label_id": tail_class,
            "post_gap": round(gap, 6),
        })

    if abs(gap) > cfg.q and iteration >= cfg.max_iterations:
        warnings.warn(PartialBalanceWarning(gap))
    return BalanceResult(samples=samples, log=log, consumed_head=consumed,
                         residual_gap=gap, final_counts=counts)


def write_balance_log(result: BalanceResult, path: str | Path) -> None:
    """Line-delimited JSON: one record per synthesis plus a footer record."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        footer = {
            "footer": True,
            "syntheses": len(result.log),
            "consumed_head": result.consumed_head,
            "residual_gap": round(result.residual_gap, 6),
            "final_counts": {str(k): v for k, v in sorted(result.final_counts.items())},
        }
        fh.write(json.dumps(footer, sort_keys=True) + "\n")


def read_balance_log(path: str | Path) -> tuple[list[dict], dict]:
    records, footer = [], {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("footer"):
            footer = rec
        else:
            records.append(rec)
    return records, footer
