"""Command-line front end: ``plan``, ``train``, ``histogram`` and ``sweep``.

Every command writes plot-ready CSV into ``--out`` next to a JSON manifest
holding the full configuration and seeds.

Exit codes: 0 success, 2 configuration error, 3 planner infeasible,
4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiments import (
    ConfigError,
    ExperimentConfig,
    best_coded,
    paper_preset,
    run_seeds,
    sample_epoch_times,
    summarize,
)
from .netsim import build_profiles, write_trace_csv
from .planner import PlanningError, plan, plan_with_fixed_delta
from .trainer import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGENCE = 4

log = logging.getLogger("codedfl")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _atomic_write(path, buf.getvalue())


def _write_manifest(path: Path, cfg: ExperimentConfig, command: str, **extra) -> None:
    doc = {"command": command, "config": cfg.to_dict(), "seeds": list(cfg.seeds)}
    doc.update(extra)
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of ExperimentConfig keys")
    common.add_argument("--paper", action="store_true", help="start from the paper preset")
    common.add_argument("--delta", type=float, action="append",
                        help="coding redundancy c/m (repeatable)")
    common.add_argument("--nu-comp", type=float)
    common.add_argument("--nu-link", type=float)
    common.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    common.add_argument("--nmse-target", type=float, action="append")
    common.add_argument("--out", type=Path)
    common.add_argument("--max-epochs", type=int)
    common.add_argument("--c-up", type=int, help="parity budget for the plan command")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="codedfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="compute loads, parity count and deadline")
    sub.add_parser("train", parents=[common], help="NMSE-versus-time traces")
    sub.add_parser("histogram", parents=[common], help="epoch waiting-time histograms")
    sub.add_parser("sweep", parents=[common], help="coding gain over heterogeneity and delta")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = paper_preset() if args.paper else ExperimentConfig()
    if args.config is not None:
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from exc
        merged = cfg.to_dict()
        unknown = set(data) - set(merged)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(data)
        cfg = ExperimentConfig.from_dict(merged)
    overrides = {}
    if args.delta:
        overrides["delta_grid"] = list(args.delta)
    if args.nu_comp is not None:
        overrides["nu_comp"] = args.nu_comp
    if args.nu_link is not None:
        overrides["nu_link"] = args.nu_link
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be positive")
        overrides["seeds"] = list(range(args.seeds))
    if args.nmse_target:
        overrides["nmse_targets"] = list(args.nmse_target)
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    if args.max_epochs is not None:
        overrides["max_epochs"] = args.max_epochs
    if args.c_up is not None:
        overrides["c_up"] = args.c_up
    return replace(cfg, **overrides) if overrides else cfg


def cmd_plan(cfg: ExperimentConfig, args) -> dict:
    profiles, server = build_profiles(cfg.heterogeneity())
    if args.delta:
        result = plan_with_fixed_delta(profiles, server, cfg.delta_grid[0], cfg.eps)
    else:
        result = plan(profiles, server, cfg.c_up, cfg.eps)
    report = result.to_dict()
    out = Path(cfg.output_dir)
    _atomic_write(out / "plan.json", json.dumps(report, indent=2) + "\n")
    _write_manifest(out / "plan.manifest.json", cfg, "plan")
    print(json.dumps(report, indent=2))
    return report


def cmd_train(cfg: ExperimentConfig, args) -> list:
    cells = [(cfg.nu_comp, cfg.nu_link)]
    results = run_seeds(cfg, cells)
    out = Path(cfg.output_dir)
    buf = io.StringIO()
    runs = []
    for res in results:
        if res.uncoded is not None:
            runs.append((f"s{res.seed}-uncoded", res.uncoded))
        for dlt, run in sorted(res.coded.items()):
            runs.append((f"s{res.seed}-d{dlt:g}", run))
    write_trace_csv(runs, cfg.heterogeneity(), buf)
    _atomic_write(out / "train.csv", buf.getvalue())
    rows = summarize(results, cfg.nmse_targets)
    _write_csv(out / "train_summary.csv",
               ["nu_comp", "nu_link", "delta", "nmse_target", "median_time_s",
                "median_uncoded_time_s", "gain", "comm_load"],
               [[r.nu_comp, r.nu_link, r.delta, r.nmse_target, f"{r.median_time_s:.9g}",
                 f"{r.median_uncoded_time_s:.9g}", f"{r.gain:.6g}", f"{r.comm_load:.6g}"]
                for r in rows])
    plans = {f"s{r.seed}-d{d:g}": p.to_dict() for r in results for d, p in r.plans.items()}
    _write_manifest(out / "train.manifest.json", cfg, "train", plans=plans)
    for r in rows:
        print(f"delta={r.delta:<5g} target={r.nmse_target:<8g} time={r.median_time_s:12.1f}s "
              f"gain={r.gain:.3f}")
    return rows


def cmd_histogram(cfg: ExperimentConfig, args) -> dict:
    hc = cfg.heterogeneity()
    deltas = [d for d in cfg.delta_grid if d > 0] or [0.13]
    out = Path(cfg.output_dir)
    rows = []
    summary = {}
    for dlt in deltas:
        s = sample_epoch_times(hc, dlt, cfg.histogram_epochs, cfg.seeds[0], cfg.eps)
        hi = max(s.uncoded_durations.max(), s.coded_receive_times.max())
        edges = np.linspace(0.0, hi, cfg.histogram_bins + 1)
        for mode, values in (("uncoded", s.uncoded_durations), ("coded", s.coded_receive_times)):
            counts, _ = np.histogram(values, edges)
            rows += [[mode, dlt, f"{lo:.9g}", f"{up:.9g}", int(k)]
                     for lo, up, k in zip(edges[:-1], edges[1:], counts)]
        summary[f"{dlt:g}"] = {
            "t_star": s.t_star,
            "c": s.c,
            "uncoded_p95": float(np.percentile(s.uncoded_durations, 95)),
            "uncoded_median": float(np.median(s.uncoded_durations)),
            "coded_p95": float(np.percentile(s.coded_receive_times, 95)),
        }
    _write_csv(out / "histogram.csv", ["mode", "delta", "bin_left_s", "bin_right_s", "count"], rows)
    _write_manifest(out / "histogram.manifest.json", cfg, "histogram", summary=summary)
    print(json.dumps(summary, indent=2))
    return summary


def cmd_sweep(cfg: ExperimentConfig, args) -> list:
    if args.nu_comp is not None or args.nu_link is not None:
        cells = [(cfg.nu_comp, cfg.nu_link)]
    else:
        cells = [(a, b) for a in cfg.nu_grid for b in cfg.nu_grid]
    results = run_seeds(cfg, cells)
    rows = summarize(results, cfg.nmse_targets)
    out = Path(cfg.output_dir)
    _write_csv(out / "sweep_gain_vs_load.csv",
               ["nu_comp", "nu_link", "delta", "nmse_target", "median_time_s", "gain", "comm_load"],
               [[r.nu_comp, r.nu_link, r.delta, r.nmse_target, f"{r.median_time_s:.9g}",
                 f"{r.gain:.6g}", f"{r.comm_load:.6g}"] for r in rows])
    surface = []
    for nc, nl in cells:
        for target in cfg.nmse_targets:
            if any(d > 0 for d in cfg.delta_grid):
                b = best_coded(rows, nc, nl, target)
                surface.append([nc, nl, target, b.delta, f"{b.gain:.6g}", f"{b.comm_load:.6g}"])
    _write_csv(out / "sweep_surface.csv",
               ["nu_comp", "nu_link", "nmse_target", "best_delta", "gain", "comm_load"], surface)
    _write_manifest(out / "sweep.manifest.json", cfg, "sweep", cells=cells)
    for row in surface:
        print("nu=({}, {}) target={} best_delta={} gain={} load={}".format(*row))
    return surface


COMMANDS = {"plan": cmd_plan, "train": cmd_train, "histogram": cmd_histogram, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args)
    except PlanningError as exc:
        binding = getattr(exc, "binding", None)
        extra = f" (binding constraint: {binding})" if binding else ""
        print(f"planner failed: {exc}{extra}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
