"""Run configuration: one YAML file governs a full reproducible run."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InvalidConfigError
from .patcher import BalanceConfig, PatchGrid
from .providers import ProviderConfig
from .smoother import STRATEGIES
from .streamgen import LongTailConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output_dir: str
    manifest: str
    stream: LongTailConfig
    num_tasks: int
    dli: tuple[tuple[int, float], ...]  # (star, rho_star) overrides
    provider: ProviderConfig
    grid: PatchGrid
    balance: BalanceConfig
    mode: str
    strategy: str
    base_beta: float
    metric: str
    test_per_class: int
    raw: dict = field(default_factory=dict, compare=False)


def _section(data: dict, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise InvalidConfigError(f"config section {name!r} must be a mapping")
    return sec


def parse_config(data: dict) -> RunConfig:
    seed = int(os.environ.get("PANDA_SEED", data.get("seed", 1993)))
    stream = _section(data, "stream")
    provider = _section(data, "provider")
    patcher = _section(data, "patcher")
    smoother = _section(data, "smoother")
    evalsec = _section(data, "eval")

    for f in ("num_classes", "n_max", "rho"):
        if f not in stream:
            raise InvalidConfigError(f"stream.{f} is required")
    lt = LongTailConfig(
        num_classes=int(stream["num_classes"]),
        n_max=int(stream["n_max"]),
        rho=float(stream["rho"]),
        min_count=int(stream.get("min_count", 3)),
        seed=seed,
    )
    lt.validate()
    num_tasks = int(stream.get("num_tasks", 1))
    dli = tuple((int(d["star"]), float(d["rho_star"])) for d in stream.get("dli", []))

    pc = ProviderConfig(
        kind=provider.get("kind", "synthetic"),
        dimension=int(provider.get("dimension", 512)),
        path=provider.get("path"),
        endpoint=provider.get("endpoint"),
        seed=seed,
        sigma=float(provider.get("sigma", 0.3)),
        fg_fraction=float(provider.get("fg_fraction", 0.5)),
    )
    pc.validate()

    grid = PatchGrid(g=int(patcher.get("grid", 4)),
                     resolution=int(patcher.get("resolution", 224)))
    balance = BalanceConfig(
        q=int(patcher.get("q", 1)),
        k=patcher.get("k"),
        threshold=float(patcher.get("threshold", 0.45)),
        max_iterations=int(patcher.get("max_iterations", 10_000)),
        reuse_head=bool(patcher.get("reuse_head", False)),
    )
    balance.validate(grid.n_patches)
    mode = patcher.get("mode", "aligned")
    if mode not in ("aligned", "literal"):
        raise InvalidConfigError(f"patcher.mode must be aligned or literal, got {mode!r}")

    strategy = smoother.get("strategy", "performance")
    if strategy not in STRATEGIES:
        raise InvalidConfigError(f"smoother.strategy must be one of {STRATEGIES}")
    metric = evalsec.get("metric", "cosine")
    if metric not in ("cosine", "euclidean"):
        raise InvalidConfigError("eval.metric must be cosine or euclidean")

    return RunConfig(
        seed=seed,
        output_dir=str(data.get("output_dir", "runs/out")),
        manifest=str(stream.get("manifest", "")),
        stream=lt,
        num_tasks=num_tasks,
        dli=dli,
        provider=pc,
        grid=grid,
        balance=balance,
        mode=mode,
        strategy=strategy,
        base_beta=float(smoother.get("base_beta", 0.7)),
        metric=metric,
        test_per_class=int(evalsec.get("test_per_class", 20)),
        raw=data,
    )


def load_config(path: str | Path) -> RunConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path}: config must be a mapping")
    cfg = parse_config(data)
    if cfg.manifest and not Path(cfg.manifest).exists():
        raise InvalidConfigError(f"stream.manifest path does not exist: {cfg.manifest}")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=True)
