"""End-to-end run: materialized stream -> (optional) balancing -> prototype
learner -> evaluation report.

Item embeddings are the mean of the item's patch embeddings. Synthesized
samples are embedded through their provenance: tail patches at the grafted
positions, head patches elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .evaluator import (
    AccuracyMatrix,
    EvalReport,
    PrototypeBank,
    accuracy_of,
    average_accuracy,
    average_forgetting,
    tail_head_breakdown,
)
from .patcher import (
    AugmentedSample,
    BalanceConfig,
    BalanceResult,
    PatchGrid,
    balance_task,
    partition_head_tail,
)
from .providers import synthetic_image
from .smoother import (
    BetaState,
    ExtremaState,
    distribution_change_metric,
    smoothed_targets,
)
from .streamgen import DistributionSummary, MaterializedTask, StreamPlan


def make_image_loader(provider_kind: str, seed: int, resolution: int):
    """Synthetic runs generate images from item ids; file/remote runs read
    the manifest path from disk and resize."""
    if provider_kind == "synthetic":
        return lambda item_id: synthetic_image(seed, item_id, resolution)

    def load(item_id: str) -> np.ndarray:
        img = Image.open(item_id).convert("RGB").resize((resolution, resolution),
                                                        Image.BILINEAR)
        return np.asarray(img)

    return load


def item_embedding(provider, item_id: str, label: str, grid: PatchGrid,
                   image: np.ndarray | None = None) -> np.ndarray:
    patches = provider.patch_embeddings(item_id, label, grid.n_patches, image=image)
    return patches.mean(axis=0)


def composed_embedding(provider, sample: AugmentedSample, head_label: str,
                       tail_label: str, grid: PatchGrid, mode: str = "aligned",
                       head_image: np.ndarray | None = None,
                       tail_image: np.ndarray | None = None) -> np.ndarray:
    """Provenance-composed embedding of a grafted sample.

    aligned: tail patches at the grafted positions, head patches elsewhere.
    literal: additionally blanks the head's selected positions that were not
    refilled, mirroring the pixel-level composition.
    """
    head = provider.patch_embeddings(sample.head_source, head_label, grid.n_patches,
                                     image=head_image)
    tail = provider.patch_embeddings(sample.tail_source, tail_label, grid.n_patches,
                                     image=tail_image)
    tail_set = set(sample.tail_indices)
    blanked = set(sample.head_indices) - tail_set if mode == "literal" else set()
    zero = np.zeros(head.shape[1], dtype=head.dtype)
    rows = [tail[i] if i in tail_set else (zero if i in blanked else head[i])
            for i in range(grid.n_patches)]
    return np.stack(rows).mean(axis=0)


def _summary_from_counts(counts: dict[int, int]) -> DistributionSummary:
    values = tuple(counts[c] for c in sorted(counts))
    return DistributionSummary(counts=values, min=min(values), max=max(values),
                               mean=sum(values) / len(values),
                               ratio=min(values) / max(values))


@dataclass
class RunResult:
    report: EvalReport
    balance_results: list[BalanceResult] = field(default_factory=list)


def run_stream(plan: StreamPlan, materialized: list[MaterializedTask], provider,
               grid: PatchGrid, *, augment: bool = False,
               balance_cfg: BalanceConfig | None = None, mode: str = "aligned",
               strategy: str = "performance", base_beta: float = 0.7,
               metric: str = "cosine", seed: int | None = None,
               image_loader=None, plan_digest: str = "",
               config_echo: dict | None = None) -> RunResult:
    """Sequentially fit each task and evaluate all seen test splits.

    With augment=True, each task is first balanced (tail patch grafting)
    using smoother-adjusted targets; consumed head images leave the train
    set and synthesized tail samples join it.
    """
    seed = plan.config.seed if seed is None else seed
    balance_cfg = balance_cfg or BalanceConfig()
    if image_loader is None:
        image_loader = make_image_loader(getattr(provider, "kind", "synthetic"),
                                         seed, grid.resolution)
    labels_of = {cid: plan.labels[cid] for t in plan.tasks for cid in t.class_ids}

    emb_cache: dict[str, np.ndarray] = {}

    def embed_item(item_id: str, cid: int) -> np.ndarray:
        if item_id not in emb_cache:
            emb_cache[item_id] = item_embedding(provider, item_id, labels_of[cid], grid,
                                                image=image_loader(item_id))
        return emb_cache[item_id]

    bank = PrototypeBank(metric=metric)
    matrix = AccuracyMatrix()
    extrema = ExtremaState()
    beta_state = BetaState(base_beta=base_beta, strategy=strategy)
    balance_results: list[BalanceResult] = []
    head_by_class: set[int] = set()
    tail_by_class: set[int] = set()
    prev_summary: DistributionSummary | None = None
    num_synth = 0

    for task, mat in zip(plan.tasks, materialized):
        train = list(mat.train)
        counts: dict[int, int] = {}
        for _, cid in train:
            counts[cid] = counts.get(cid, 0) + 1
        split = partition_head_tail(counts) if len(counts) >= 2 else None
        if split is not None and not split.already_balanced:
            head_by_class.update(split.head)
            tail_by_class.update(split.tail)
        else:
            tail_by_class.update(counts)

        train_vecs: list[np.ndarray] = []
        train_labels: list[int] = []
        if augment and split is not None and not split.already_balanced:
            extrema.current_min = float(min(counts.values()))
            extrema.current_max = float(max(counts.values()))
            beta_state.task_num = task.task_index
            beta = beta_state.current_beta()
            targets = smoothed_targets(extrema, beta)
            result = balance_task(train, labels_of, provider, balance_cfg, grid, seed,
                                  image_loader, task_index=task.task_index, mode=mode,
                                  targets=targets)
            balance_results.append(result)
            num_synth += len(result.samples)
            consumed = set(result.consumed_head)
            train = [(iid, cid) for iid, cid in train if iid not in consumed]
            class_of = dict(mat.train)
            for sample in result.samples:
                head_cid = class_of[sample.head_source]
                vec = composed_embedding(provider, sample, labels_of[head_cid],
                                         labels_of[sample.label_id], grid, mode=mode,
                                         head_image=image_loader(sample.head_source),
                                         tail_image=image_loader(sample.tail_source))
                train_vecs.append(vec)
                train_labels.append(sample.label_id)
            counts = dict(result.final_counts)
        else:
            balance_results.append(BalanceResult([], [], [], 0.0, dict(counts)))

        for iid, cid in train:
            train_vecs.append(embed_item(iid, cid))
            train_labels.append(cid)
        bank.fit_task(np.stack(train_vecs), np.array(train_labels))

        # one matrix row: all test splits seen so far
        row = []
        for seen in materialized[:task.task_index]:
            vecs = np.stack([embed_item(iid, cid) for iid, cid in seen.test])
            lbls = np.array([cid for _, cid in seen.test])
            row.append(accuracy_of(bank, vecs, lbls))
        matrix.add_row(row)

        summary = _summary_from_counts(counts)
        beta_state.performance_history.append(row[task.task_index - 1])
        if prev_summary is not None:
            beta_state.distribution_changes.append(
                distribution_change_metric(prev_summary, summary))
        prev_summary = summary
        extrema.record_task(float(summary.min), float(summary.max))

    all_test_vecs = np.stack([embed_item(iid, cid)
                              for m in materialized for iid, cid in m.test])
    all_test_lbls = np.array([cid for m in materialized for _, cid in m.test])
    breakdown = tail_head_breakdown(bank, all_test_vecs, all_test_lbls,
                                    head_by_class - tail_by_class, tail_by_class)

    k = matrix.num_tasks
    report = EvalReport(
        matrix=matrix,
        average_accuracies=[average_accuracy(matrix, i) for i in range(1, k + 1)],
        final_forgetting=average_forgetting(matrix, k) if k >= 2 else None,
        breakdown=breakdown,
        plan_digest=plan_digest,
        seed=seed,
        num_synthesized=num_synth,
        config_echo=config_echo or {},
        smoother_state=beta_state.to_dict(),
    )
    return RunResult(report=report, balance_results=balance_results)
