"""Construction of long-tailed class-incremental stream plans.

Builds exponential-decay per-class counts, shuffles class order, splits
classes into disjoint tasks, and optionally injects a task-level imbalance
override on a designated task (dual-level imbalance). Plans materialize
against a dataset manifest into seeded train/test item lists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import InvalidConfigError, ShortageError
from .manifest import ManifestItem, group_by_label
from .seeding import rng_for

PLAN_FORMAT_VERSION = 1
DEFAULT_TEST_PER_CLASS = 20


@dataclass(frozen=True)
class LongTailConfig:
    num_classes: int
    n_max: int
    rho: float
    min_count: int = 3
    seed: int = 1993

    def validate(self) -> None:
        if self.num_classes < 1:
            raise InvalidConfigError("num_classes must be positive")
        if self.n_max < 1:
            raise InvalidConfigError("n_max must be positive")
        if not (0.0 < self.rho <= 1.0):
            raise InvalidConfigError("rho must lie in (0, 1]")
        if self.min_count < 1:
            raise InvalidConfigError("min_count must be >= 1")
        if self.min_count > self.n_max:
            raise InvalidConfigError("min_count cannot exceed n_max")
        if self.num_classes < 2 and self.rho < 1.0:
            raise InvalidConfigError("decay exponent undefined for a single class with rho < 1")


@dataclass(frozen=True)
class TaskPlan:
    task_index: int  # 1-based
    class_ids: tuple[int, ...]
    per_class_counts: tuple[int, ...]
    rho_star: float | None = None


@dataclass(frozen=True)
class StreamPlan:
    config: LongTailConfig
    tasks: tuple[TaskPlan, ...]
    labels: tuple[str, ...]
    manifest_digest: str = ""

    def count_of(self, class_id: int) -> int:
        for t in self.tasks:
            if class_id in t.class_ids:
                return t.per_class_counts[t.class_ids.index(class_id)]
        raise KeyError(class_id)


@dataclass(frozen=True)
class DistributionSummary:
    counts: tuple[int, ...]
    min: int
    max: int
    mean: float
    ratio: float


@dataclass(frozen=True)
class MaterializedTask:
    task_index: int
    train: tuple[tuple[str, int], ...]  # (item_id, class_id)
    test: tuple[tuple[str, int], ...]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_long_tail_counts(cfg: LongTailConfig) -> list[int]:
    """Per-class counts under exponential decay, largest first.

    counts[j] = max(min_count, round(n_max * rho^(j / (C-1)))); counts[0] is
    always n_max and the raw tail value equals n_max * rho before clamping.
    """
    cfg.validate()
    c = cfg.num_classes
    if c == 1:
        return [cfg.n_max]
    counts = []
    for j in range(c):
        raw = cfg.n_max * cfg.rho ** (j / (c - 1))
        counts.append(max(cfg.min_count, _round_half_up(raw)))
    return counts


def shuffle_class_order(counts: list[int], seed: int) -> list[tuple[int, int]]:
    """Shuffle classes (class j owns counts[j]) into a seeded stream order.

    Returns (class_id, count) pairs in stream order; the multiset of counts
    is preserved, so head and tail classes land in arbitrary tasks.
    """
    c = len(counts)
    order = rng_for(seed, "streamgen", "shuffle").permutation(c)
    return [(int(cid), counts[int(cid)]) for cid in order]


def split_tasks(shuffled: list[tuple[int, int]], num_tasks: int) -> list[TaskPlan]:
    c = len(shuffled)
    if num_tasks < 1 or c % num_tasks != 0:
        raise InvalidConfigError(f"{c} classes not divisible into {num_tasks} tasks")
    per = c // num_tasks
    tasks = []
    for k in range(num_tasks):
        chunk = shuffled[k * per:(k + 1) * per]
        tasks.append(TaskPlan(
            task_index=k + 1,
            class_ids=tuple(cid for cid, _ in chunk),
            per_class_counts=tuple(n for _, n in chunk),
        ))
    return tasks


def build_plan(cfg: LongTailConfig, num_tasks: int, labels: list[str] | None = None,
               manifest_digest: str = "") -> StreamPlan:
    counts = build_long_tail_counts(cfg)
    shuffled = shuffle_class_order(counts, cfg.seed)
    tasks = split_tasks(shuffled, num_tasks)
    if labels is None:
        labels = [f"class{c:03d}" for c in range(cfg.num_classes)]
    if len(labels) != cfg.num_classes:
        raise InvalidConfigError("label list length must equal num_classes")
    return StreamPlan(config=cfg, tasks=tuple(tasks), labels=tuple(labels),
                      manifest_digest=manifest_digest)


def apply_task_imbalance(plan: StreamPlan, star: int, rho_star: float) -> StreamPlan:
    """Re-decay one task's counts with ratio rho_star, other tasks untouched.

    The decay is anchored at the task's original maximum count; positions are
    assigned by descending original count (ties by class id) so the task's
    head/tail identity is preserved.
    """
    if not (0.0 < rho_star <= 1.0):
        raise InvalidConfigError("rho_star must lie in (0, 1]")
    if not (1 <= star <= len(plan.tasks)):
        raise InvalidConfigError(f"task index {star} out of range 1..{len(plan.tasks)}")
    task = plan.tasks[star - 1]
    ck = len(task.class_ids)
    anchor = max(task.per_class_counts)
    rank = sorted(range(ck), key=lambda i: (-task.per_class_counts[i], task.class_ids[i]))
    new_counts = list(task.per_class_counts)
    for pos, i in enumerate(rank):
        if ck == 1:
            raw = float(anchor)
        else:
            raw = anchor * rho_star ** (pos / (ck - 1))
        new_counts[i] = max(plan.config.min_count, _round_half_up(raw))
    new_task = replace(task, per_class_counts=tuple(new_counts), rho_star=rho_star)
    tasks = tuple(new_task if t.task_index == star else t for t in plan.tasks)
    return replace(plan, tasks=tasks)


def summarize_distribution(task: TaskPlan) -> DistributionSummary:
    counts = task.per_class_counts
    if not counts:
        raise InvalidConfigError("cannot summarize an empty task")
    lo, hi = min(counts), max(counts)
    return DistributionSummary(
        counts=tuple(counts),
        min=lo,
        max=hi,
        mean=sum(counts) / len(counts),
        ratio=lo / hi,
    )


def materialize(plan: StreamPlan, items: list[ManifestItem],
                test_per_class: int = DEFAULT_TEST_PER_CLASS) -> list[MaterializedTask]:
    """Seeded subsampling of manifest items into per-task train/test lists.

    Train sizes follow the plan counts; the test split takes up to
    test_per_class held-out items per class. Item sets are disjoint across
    tasks and between train and test.
    """
    groups = group_by_label(items)
    label_of = {cid: plan.labels[cid] for t in plan.tasks for cid in t.class_ids}
    out = []
    for task in plan.tasks:
        train: list[tuple[str, int]] = []
        test: list[tuple[str, int]] = []
        for cid, need in zip(task.class_ids, task.per_class_counts):
            label = label_of[cid]
            pool = sorted(groups.get(label, []), key=lambda it: it.item_id)
            if len(pool) < need:
                raise ShortageError(label, need, len(pool))
            rng = rng_for(plan.config.seed, "streamgen", "materialize", label)
            order = rng.permutation(len(pool))
            chosen = [pool[i] for i in order]
            train.extend((it.item_id, cid) for it in chosen[:need])
            test.extend((it.item_id, cid) for it in chosen[need:need + test_per_class])
        out.append(MaterializedTask(task_index=task.task_index,
                                    train=tuple(train), test=tuple(test)))
    return out


# ---------------------------------------------------------------------------
# plan serialization (versioned, diffable JSON)

def plan_to_dict(plan: StreamPlan) -> dict:
    return {
        "format_version": PLAN_FORMAT_VERSION,
        "config": {
            "num_classes": plan.config.num_classes,
            "n_max": plan.config.n_max,
            "rho": plan.config.rho,
            "min_count": plan.config.min_count,
            "seed": plan.config.seed,
        },
        "labels": list(plan.labels),
        "manifest_digest": plan.manifest_digest,
        "tasks": [
            {
                "task_index": t.task_index,
                "class_ids": list(t.class_ids),
                "per_class_counts": list(t.per_class_counts),
                "rho_star": t.rho_star,
            }
            for t in plan.tasks
        ],
    }


def save_plan(plan: StreamPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_plan(path: str | Path) -> StreamPlan:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format_version") != PLAN_FORMAT_VERSION:
        raise InvalidConfigError(
            f"unsupported plan format_version {data.get('format_version')}")
    cfg = LongTailConfig(**data["config"])
    tasks = tuple(
        TaskPlan(task_index=t["task_index"], class_ids=tuple(t["class_ids"]),
                 per_class_counts=tuple(t["per_class_counts"]), rho_star=t["rho_star"])
        for t in data["tasks"]
    )
    return StreamPlan(config=cfg, tasks=tasks, labels=tuple(data["labels"]),
                      manifest_digest=data["manifest_digest"])
