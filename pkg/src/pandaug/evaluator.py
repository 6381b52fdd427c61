"""Nearest-class-mean continual learner and stream evaluation metrics.

The accuracy matrix a[m][n] holds accuracy on task n's test split after
training through task m (1-indexed, lower triangle only); average accuracy
and average forgetting are computed from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError

REPORT_FORMAT_VERSION = 1


class PrototypeBank:
    """Per-class mean embeddings; classes are never re-fit (exemplar-free)."""

    def __init__(self, metric: str = "cosine"):
        if metric not in ("cosine", "euclidean"):
            raise InvalidConfigError(f"unknown prototype metric {metric!r}")
        self.metric = metric
        self.prototypes: dict[int, np.ndarray] = {}
        self.counts: dict[int, int] = {}

    def fit_task(self, embeddings: np.ndarray, labels: np.ndarray) -> None:
        embeddings = np.asarray(embeddings, dtype=np.float64)
        labels = np.asarray(labels)
        for cid in np.unique(labels):
            cid = int(cid)
            if cid in self.prototypes:
                raise InvalidConfigError(f"class {cid} already fitted; tasks must be disjoint")
            mask = labels == cid
            self.prototypes[cid] = embeddings[mask].mean(axis=0)
            self.counts[cid] = int(mask.sum())

    def _stacked(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.prototypes:
            raise InvalidConfigError("prototype bank is empty")
        class_ids = np.array(sorted(self.prototypes))
        protos = np.stack([self.prototypes[int(c)] for c in class_ids])
        return class_ids, protos

    def predict(self, embedding: np.ndarray) -> int:
        return int(self.predict_batch(np.asarray(embedding)[None, :])[0])

    def predict_batch(self, embeddings: np.ndarray) -> np.ndarray:
        """Nearest-prototype labels; ties resolve to the lowest class id."""
        class_ids, protos = self._stacked()
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if self.metric == "cosine":
            pn = protos / np.linalg.norm(protos, axis=1, keepdims=True)
            en = embeddings / np.linalg.norm(embeddings, axis=1, keepdims=True)
            scores = en @ pn.T
            best = np.argmax(scores, axis=1)  # argmax keeps the first (lowest id) on ties
        else:
            d2 = ((embeddings[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
            best = np.argmin(d2, axis=1)
        return class_ids[best]


@dataclass
class AccuracyMatrix:
    rows: list[list[float]] = field(default_factory=list)

    @property
    def num_tasks(self) -> int:
        return len(self.rows)

    def add_row(self, accuracies: list[float]) -> None:
        if len(accuracies) != len(self.rows) + 1:
            raise InvalidConfigError("row m must contain exactly m entries")
        for a in accuracies:
            if not (0.0 <= a <= 1.0):
                raise InvalidConfigError(f"accuracy {a} outside [0, 1]")
        self.rows.append(list(accuracies))

    def entry(self, m: int, n: int) -> float:
        if not (1 <= n <= m <= self.num_tasks):
            raise InvalidConfigError(f"a[{m}][{n}] outside the lower triangle")
        return self.rows[m - 1][n - 1]


def average_accuracy(matrix: AccuracyMatrix, k: int) -> float:
    """Mean accuracy over tasks 1..k after training through task k."""
    if not (1 <= k <= matrix.num_tasks):
        raise InvalidConfigError(f"k={k} out of range")
    return sum(matrix.rows[k - 1]) / k


def average_forgetting(matrix: AccuracyMatrix, k: int) -> float:
    """Mean over prior tasks of (best past accuracy - current accuracy)."""
    if k < 2:
        raise InvalidConfigError("forgetting needs k >= 2")
    if k > matrix.num_tasks:
        raise InvalidConfigError(f"k={k} out of range")
    drops = []
    for m in range(1, k):
        best_past = max(matrix.entry(i, m) for i in range(m, k))
        # improvements past the old best count as zero forgetting, not negative
        drops.append(max(0.0, best_past - matrix.entry(k, m)))
    return sum(drops) / len(drops)


def accuracy_of(bank: PrototypeBank, embeddings: np.ndarray, labels: np.ndarray) -> float:
    pred = bank.predict_batch(embeddings)
    return float(np.mean(pred == np.asarray(labels)))


def tail_head_breakdown(bank: PrototypeBank, embeddings: np.ndarray, labels: np.ndarray,
                        head_classes: set[int], tail_classes: set[int]) -> dict:
    """Final-step accuracy aggregated separately over head- and tail-class
    test items; groups partition the test set."""
    labels = np.asarray(labels)
    pred = bank.predict_batch(embeddings)
    correct = pred == labels
    out = {}
    for name, group in (("head", head_classes), ("tail", tail_classes)):
        mask = np.isin(labels, sorted(group))
        out[name] = {
            "items": int(mask.sum()),
            "accuracy": float(correct[mask].mean()) if mask.any() else None,
        }
    return out


@dataclass
class EvalReport:
    matrix: AccuracyMatrix
    average_accuracies: list[float]
    final_forgetting: float | None
    breakdown: dict
    plan_digest: str
    seed: int
    num_synthesized: int
    config_echo: dict = field(default_factory=dict)
    smoother_state: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "plan_digest": self.plan_digest,
            "seed": self.seed,
            "num_synthesized": self.num_synthesized,
            "accuracy_matrix": [[round(a, 10) for a in row] for row in self.matrix.rows],
            "average_accuracies": [round(a, 10) for a in self.average_accuracies],
            "final_forgetting": (round(self.final_forgetting, 10)
                                 if self.final_forgetting is not None else None),
            "breakdown": self.breakdown,
            "config_echo": self.config_echo,
            "smoother_state": self.smoother_state,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def save_flat_table(self, path: str | Path) -> None:
        """One row per (m, n, accuracy) for external plotting tools."""
        lines = ["m\tn\taccuracy"]
        for m, row in enumerate(self.matrix.rows, start=1):
            for n, a in enumerate(row, start=1):
                lines.append(f"{m}\t{n}\t{a:.10f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_report(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format_version") != REPORT_FORMAT_VERSION:
        raise InvalidConfigError(f"unsupported report format_version {data.get('format_version')}")
    return data
