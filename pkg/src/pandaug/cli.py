"""Command-line orchestration.

Subcommands: `stream build`, `augment`, `eval`, `report`, and the
`manifest synth` convenience for desk-scale synthetic runs. Every command
is deterministic under a fixed config and seed; outputs are written to a
temp file and renamed atomically, and one lock file guards each output
directory.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .config import RunConfig, load_config
from .errors import PandaError
from .evaluator import load_report
from .manifest import read_manifest, manifest_digest, synthetic_manifest, write_manifest
from .patcher import write_balance_log
from .pipeline import run_stream
from .streamgen import (
    apply_task_imbalance,
    build_plan,
    load_plan,
    materialize,
    save_plan,
    summarize_distribution,
)


@contextlib.contextmanager
def output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PandaError(f"output directory {out_dir} is locked by another run")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _build_plan_from_config(cfg: RunConfig):
    items = read_manifest(cfg.manifest)
    labels = sorted({it.label for it in items})
    if len(labels) != cfg.stream.num_classes:
        raise PandaError(
            f"manifest has {len(labels)} labels but config expects {cfg.stream.num_classes}")
    plan = build_plan(cfg.stream, cfg.num_tasks, labels=labels,
                      manifest_digest=manifest_digest(cfg.manifest))
    for star, rho_star in cfg.dli:
        plan = apply_task_imbalance(plan, star, rho_star)
    return plan, items


def cmd_stream_build(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    with output_lock(out):
        plan, _ = _build_plan_from_config(cfg)
        plan_path = out / "plan.json"
        fd, tmp = tempfile.mkstemp(dir=out, prefix="plan.tmp")
        os.close(fd)
        save_plan(plan, tmp)
        os.replace(tmp, plan_path)
        lines = ["task\tclasses\tmin\tmax\tmean\tratio"]
        for task in plan.tasks:
            s = summarize_distribution(task)
            lines.append(f"{task.task_index}\t{len(task.class_ids)}\t{s.min}\t{s.max}"
                         f"\t{s.mean:.2f}\t{s.ratio:.4f}")
        table = "\n".join(lines)
        atomic_write_text(out / "summary.tsv", table + "\n")
        print(table)
        print(f"plan written to {plan_path}")
    return 0


def cmd_augment(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    mode = args.mode or cfg.mode
    with output_lock(out):
        plan = load_plan(args.plan)
        items = read_manifest(cfg.manifest)
        materialized = materialize(plan, items, test_per_class=cfg.test_per_class)
        from .providers import make_provider
        provider = make_provider(cfg.provider)
        result = run_stream(plan, materialized, provider, cfg.grid, augment=True,
                            balance_cfg=cfg.balance, mode=mode, strategy=cfg.strategy,
                            base_beta=cfg.base_beta, metric=cfg.metric, seed=cfg.seed,
                            plan_digest=manifest_digest(args.plan),
                            config_echo=cfg.raw)
        total = 0
        for task, bres in zip(plan.tasks, result.balance_results):
            log_path = out / f"balance_task_{task.task_index}.jsonl"
            fd, tmp = tempfile.mkstemp(dir=out, prefix=log_path.name + ".tmp")
            os.close(fd)
            write_balance_log(bres, tmp)
            os.replace(tmp, log_path)
            for sample in bres.samples:
                img_dir = out / f"task_{task.task_index}" / str(sample.label_id)
                img_dir.mkdir(parents=True, exist_ok=True)
                name = sample.item_id.replace("/", "_") + ".png"
                Image.fromarray(sample.image).save(img_dir / name)
                total += 1
        print(f"synthesized {total} samples across {len(plan.tasks)} tasks -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    strategy = args.strategy or cfg.strategy
    variants = []
    if args.baseline:
        variants.append(("baseline", False))
    if args.panda:
        variants.append(("panda", True))
    if not variants:
        variants = [("baseline", False), ("panda", True)]
    with output_lock(out):
        plan = load_plan(args.plan)
        items = read_manifest(cfg.manifest)
        materialized = materialize(plan, items, test_per_class=cfg.test_per_class)
        from .providers import make_provider
        digest = manifest_digest(args.plan)
        for name, augment in variants:
            provider = make_provider(cfg.provider)
            result = run_stream(plan, materialized, provider, cfg.grid, augment=augment,
                                balance_cfg=cfg.balance, mode=cfg.mode, strategy=strategy,
                                base_beta=cfg.base_beta, metric=cfg.metric, seed=cfg.seed,
                                plan_digest=digest, config_echo=cfg.raw)
            report_path = out / f"report_{name}.json"
            atomic_write_text(report_path, json.dumps(result.report.to_dict(),
                                                      indent=2, sort_keys=True) + "\n")
            flat = out / f"report_{name}.tsv"
            result.report.save_flat_table(flat)
            acc = result.report.average_accuracies[-1]
            forg = result.report.final_forgetting
            print(f"{name}: avg_acc={acc:.4f}"
                  f" avg_forgetting={'n/a' if forg is None else f'{forg:.4f}'}"
                  f" synthesized={result.report.num_synthesized}")
    return 0


def cmd_report(args) -> int:
    reports = [(Path(p).name, load_report(p)) for p in args.reports]
    digests = {r["plan_digest"] for _, r in reports}
    if len(digests) > 1:
        raise PandaError(f"refusing to compare reports with mixed plan digests: {digests}")
    header = ["report", "avg_acc", "avg_for"]
    if len(reports) > 1:
        header += ["d_acc", "d_for"]
    rows = []
    base = reports[0][1]
    for name, rep in reports:
        acc = rep["average_accuracies"][-1]
        forg = rep["final_forgetting"]
        row = [name, f"{acc:.4f}", "n/a" if forg is None else f"{forg:.4f}"]
        if len(reports) > 1:
            row.append(f"{acc - base['average_accuracies'][-1]:+.4f}")
            if forg is None or base["final_forgetting"] is None:
                row.append("n/a")
            else:
                row.append(f"{forg - base['final_forgetting']:+.4f}")
        rows.append(row)
    table = "\n".join("\t".join(r) for r in [header] + rows)
    print(table)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out, table + "\n")
    return 0


def cmd_manifest_synth(args) -> int:
    items = synthetic_manifest(args.classes, args.items)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_manifest(items, args.out)
    print(f"wrote {len(items)} records to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pandaug",
                                description="Imbalanced stream construction, patch "
                                            "grafting augmentation, and evaluation")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    stream = sub.add_parser("stream", help="stream plan commands")
    stream_sub = stream.add_subparsers(dest="stream_command", required=True)
    sb = stream_sub.add_parser("build", help="build a stream plan from a manifest")
    sb.add_argument("--config", required=True)
    sb.add_argument("--out", default=None)
    sb.set_defaults(func=cmd_stream_build)

    aug = sub.add_parser("augment", help="run balancing augmentation over a plan")
    aug.add_argument("--config", required=True)
    aug.add_argument("--plan", required=True)
    aug.add_argument("--mode", choices=["aligned", "literal"], default=None)
    aug.add_argument("--out", default=None)
    aug.set_defaults(func=cmd_augment)

    ev = sub.add_parser("eval", help="evaluate baseline and/or augmented runs")
    ev.add_argument("--config", required=True)
    ev.add_argument("--plan", required=True)
    ev.add_argument("--baseline", action="store_true")
    ev.add_argument("--panda", action="store_true")
    ev.add_argument("--strategy",
                    choices=["performance", "task_progress", "distribution_change"],
                    default=None)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="compare evaluation reports")
    rep.add_argument("reports", nargs="+")
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_report)

    man = sub.add_parser("manifest", help="manifest utilities")
    man_sub = man.add_subparsers(dest="manifest_command", required=True)
    ms = man_sub.add_parser("synth", help="generate a synthetic manifest")
    ms.add_argument("--out", required=True)
    ms.add_argument("--classes", type=int, required=True)
    ms.add_argument("--items", type=int, required=True)
    ms.set_defaults(func=cmd_manifest_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PandaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
