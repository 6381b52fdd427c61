"""Inter-task distribution smoothing.

Blends prior-task count extrema with the current task through a coefficient
beta and adapts beta with three rule-based strategies: recent performance
trend, task progress, and distribution change magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidConfigError
from .streamgen import DistributionSummary

DEFAULT_BASE_BETA = 0.7
STRATEGIES = ("performance", "task_progress", "distribution_change")


def adjust_extrema(prior_m: float, current_m: float, beta: float) -> float:
    """Convex blend of a prior-task extremum with the current one."""
    if not (0.0 <= beta <= 1.0):
        raise InvalidConfigError("beta must lie in [0, 1]")
    return beta * prior_m + (1.0 - beta) * current_m


def beta_performance(history: list[float], base_beta: float) -> float:
    """Lower beta after an accuracy drop (> 0.05), raise it after a rise
    (> 0.02), keep the base otherwise."""
    if len(history) < 2:
        return base_beta
    prev, curr = history[-2], history[-1]
    if curr < prev - 0.05:
        return max(base_beta - 0.15, 0.5)
    if curr > prev + 0.02:
        return min(base_beta + 0.1, 0.9)
    return base_beta


def beta_task_progress(task_num: int | None, base_beta: float) -> float:
    """Ramp beta up with task index, saturating at ten tasks and 0.95."""
    if task_num is None or task_num < 0:
        return base_beta
    progress = min(task_num / 10.0, 1.0)
    return min(base_beta + 0.3 * progress, 0.95)


def beta_distribution_change(changes: list[float], base_beta: float) -> float:
    """React to the last inter-task distribution shift: large shifts cut
    beta sharply, moderate ones mildly, small ones raise it."""
    if not changes:
        return base_beta
    recent = changes[-1]
    if recent > 0.5:
        return max(base_beta - 0.2, 0.5)
    if recent > 0.2:
        return max(base_beta - 0.1, 0.6)
    return min(base_beta + 0.1, 0.9)


def distribution_change_metric(prev: DistributionSummary, curr: DistributionSummary) -> float:
    """Dimensionless shift score in [0, 2]: ratio delta plus relative mean delta."""
    mean_term = abs(prev.mean - curr.mean) / max(prev.mean, curr.mean)
    return abs(prev.ratio - curr.ratio) + mean_term


@dataclass
class ExtremaState:
    prior_min: list[float] = field(default_factory=list)
    prior_max: list[float] = field(default_factory=list)
    current_min: float = 0.0
    current_max: float = 0.0

    def record_task(self, min_count: float, max_count: float) -> None:
        if min_count > max_count:
            raise InvalidConfigError("min cannot exceed max")
        self.prior_min.append(min_count)
        self.prior_max.append(max_count)

    def to_dict(self) -> dict:
        return {"prior_min": self.prior_min, "prior_max": self.prior_max,
                "current_min": self.current_min, "current_max": self.current_max}


@dataclass
class BetaState:
    base_beta: float = DEFAULT_BASE_BETA
    strategy: str = "performance"
    performance_history: list[float] = field(default_factory=list)
    distribution_changes: list[float] = field(default_factory=list)
    task_num: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidConfigError(f"unknown beta strategy {self.strategy!r}")
        if not (0.0 <= self.base_beta <= 1.0):
            raise InvalidConfigError("base_beta must lie in [0, 1]")

    def current_beta(self) -> float:
        if self.strategy == "performance":
            return beta_performance(self.performance_history, self.base_beta)
        if self.strategy == "task_progress":
            return beta_task_progress(self.task_num, self.base_beta)
        return beta_distribution_change(self.distribution_changes, self.base_beta)

    def to_dict(self) -> dict:
        return {
            "base_beta": self.base_beta,
            "strategy": self.strategy,
            "performance_history": [round(p, 6) for p in self.performance_history],
            "distribution_changes": [round(c, 6) for c in self.distribution_changes],
            "task_num": self.task_num,
        }


def smoothed_targets(state: ExtremaState, beta: float) -> tuple[float, float]:
    """Blend the last prior extrema with the current task's; with no prior
    task the current extrema pass through unchanged."""
    if not state.prior_min:
        return state.current_min, state.current_max
    target_min = adjust_extrema(state.prior_min[-1], state.current_min, beta)
    target_max = adjust_extrema(state.prior_max[-1], state.current_max, beta)
    return target_min, target_max
