"""Batch runner command line: executes scenario manifests across engines,
writes per-run traces and metrics, and produces comparison reports.

Exit codes: 0 success, 1 usage error, 2 red-light violation in a
compliant-advisory run (CI gate), 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .scenarios import CANONICAL, load_manifest, variant
from .sim import (
    ENGINE_ADVISORY,
    ENGINE_BASELINE,
    ENGINE_NONE,
    POLICY_COMPLIANT,
    RunMetrics,
    ScenarioConfig,
    run_scenario,
    write_metrics,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2
EXIT_IO = 3

ENGINES = (ENGINE_ADVISORY, ENGINE_BASELINE, ENGINE_NONE)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2
        raise _UsageError(message)


@dataclass(frozen=True)
class RunManifest:
    """One batch: every scenario x engine x seed combination is a run."""

    scenarios: tuple[ScenarioConfig, ...]
    engines: tuple[str, ...]
    seeds: tuple[int, ...]
    out_dir: Path

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("manifest contains no scenarios")
        for engine in self.engines:
            if engine not in ENGINES:
                raise ValueError(f"unknown engine {engine!r}")

    def entries(self):
        for cfg in self.scenarios:
            for seed in self.seeds:
                for engine in self.engines:
                    yield variant(cfg, seed), engine


def _run_entry(cfg: ScenarioConfig, engine: str, out_dir: str,
               write_trace: bool = True) -> dict:
    metrics, trace = run_scenario(cfg, engine=engine)
    stem = f"{cfg.scenario_id}__{engine}__seed{cfg.rng_seed}"
    out = Path(out_dir)
    write_metrics(metrics, out / f"{stem}.metrics.json")
    if write_trace:
        trace.write_csv(out / f"{stem}.trace.csv")
    return metrics.to_json()


def run_batch(manifest: RunManifest, jobs: int = 1,
              write_traces: bool = True) -> list[dict]:
    """Execute every manifest entry; failures are recorded per entry and do
    not abort the batch.  Returns one metrics dict (or error record) per
    entry."""
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    entries = list(manifest.entries())
    rows: list[dict] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_entry, cfg, engine,
                                   str(manifest.out_dir), write_traces)
                       for cfg, engine in entries]
            for (cfg, engine), fut in zip(entries, futures):
                rows.append(_collect(cfg, engine, fut.result, ()))
    else:
        for cfg, engine in entries:
            rows.append(_collect(cfg, engine, _run_entry,
                                 (cfg, engine, str(manifest.out_dir),
                                  write_traces)))
    return rows


def _collect(cfg: ScenarioConfig, engine: str, fn, args) -> dict:
    try:
        return fn(*args)
    except Exception as exc:  # per-entry failure, batch continues
        log.error("run %s/%s seed %d failed: %s",
                  cfg.scenario_id, engine, cfg.rng_seed, exc)
        return {"scenario_id": cfg.scenario_id, "engine": engine,
                "seed": cfg.rng_seed, "error": str(exc)}


def reduction_pct(peak_advisory: float, peak_unguided: float) -> float:
    """Peak-deceleration reduction of the advisory run against the unguided
    run, in percent of the unguided peak."""
    if peak_unguided <= 0:
        raise ValueError("unguided peak must be positive")
    return 100.0 * (peak_unguided - peak_advisory) / peak_unguided


def compare_report(rows: list[dict]) -> dict:
    """Pair advisory and unguided runs by (scenario, seed) and report the
    per-pair and aggregate peak-deceleration reduction."""
    by_key: dict[tuple, dict] = {}
    for row in rows:
        if "error" in row:
            continue
        by_key[(row["scenario_id"], row["seed"], row["engine"])] = row
    pairs = []
    for (sid, seed, engine), row in sorted(by_key.items()):
        if engine != ENGINE_ADVISORY:
            continue
        unguided = by_key.get((sid, seed, ENGINE_NONE))
        if unguided is None:
            raise ValueError(f"no unguided counterpart for {sid} seed {seed}")
        pairs.append({
            "scenario_id": sid, "seed": seed,
            "peak_advisory": row["peak_decel"],
            "peak_unguided": unguided["peak_decel"],
            "reduction_pct": reduction_pct(row["peak_decel"],
                                           unguided["peak_decel"]),
        })
    if not pairs:
        return {"pairs": [], "mean_reduction_pct": math.nan,
                "best_reduction_pct": math.nan}
    vals = [p["reduction_pct"] for p in pairs]
    return {
        "pairs": pairs,
        "mean_reduction_pct": sum(vals) / len(vals),
        "best_reduction_pct": max(vals),
    }


def summarize(rows: list[dict]) -> list[dict]:
    """Aggregate per (scenario, engine): run count, mean/max peak decel,
    violation count, worst min spacing."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        if "error" in row:
            continue
        groups.setdefault((row["scenario_id"], row["engine"]), []).append(row)
    table = []
    for (sid, engine), members in sorted(groups.items()):
        peaks = [m["peak_decel"] for m in members]
        spacings = [m["min_spacing"] for m in members
                    if m["min_spacing"] is not None]
        table.append({
            "scenario_id": sid, "engine": engine, "runs": len(members),
            "mean_peak_decel": sum(peaks) / len(peaks),
            "max_peak_decel": max(peaks),
            "violations": sum(1 for m in members if m["red_violation"]),
            "worst_min_spacing": min(spacings) if spacings else math.inf,
        })
    return table


def _format_table(table: list[dict]) -> str:
    header = (f"{'scenario':20s} {'engine':10s} {'runs':>4s} "
              f"{'peak(mean)':>10s} {'peak(max)':>10s} {'viol':>4s} "
              f"{'minsp':>8s}")
    lines = [header, "-" * len(header)]
    for row in table:
        minsp = row["worst_min_spacing"]
        minsp_s = "-" if math.isinf(minsp) else f"{minsp:8.2f}"
        lines.append(
            f"{row['scenario_id']:20s} {row['engine']:10s} {row['runs']:4d} "
            f"{row['mean_peak_decel']:10.2f} {row['max_peak_decel']:10.2f} "
            f"{row['violations']:4d} {minsp_s:>8s}")
    return "\n".join(lines)


def _write_summary(rows: list[dict], out_dir: Path) -> None:
    table = summarize(rows)
    with open(out_dir / "summary.csv", "w") as fh:
        fh.write("scenario_id,engine,runs,mean_peak_decel,max_peak_decel,"
                 "violations,worst_min_spacing\n")
        for row in table:
            minsp = row["worst_min_spacing"]
            fh.write(f"{row['scenario_id']},{row['engine']},{row['runs']},"
                     f"{row['mean_peak_decel']:.4f},"
                     f"{row['max_peak_decel']:.4f},{row['violations']},"
                     f"{'' if math.isinf(minsp) else f'{minsp:.4f}'}\n")
    print(_format_table(table))


def _load_rows(directory: Path) -> list[dict]:
    rows = []
    for path in sorted(directory.glob("*.metrics.json")):
        with open(path) as fh:
            rows.append(json.load(fh))
    return rows


def _violation_gate(rows: list[dict]) -> bool:
    """True when any compliant-policy advisory run recorded a violation."""
    for row in rows:
        if "error" in row or row["engine"] != ENGINE_ADVISORY:
            continue
        if row["red_violation"]:
            cfg = CANONICAL.get(row["scenario_id"])
            if cfg is None or cfg.driver_policy == POLICY_COMPLIANT:
                return True
    return False


def _parse_seeds(text: str) -> tuple[int, ...]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise ValueError("seed range is empty")
        return tuple(range(lo_i, hi_i + 1))
    return (int(text),)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="redlight",
                     description="Signalized-intersection warning batch runner")
    sub = parser.add_subparsers(dest="command")

    run_p = sub.add_parser("run", help="execute a scenario manifest")
    run_p.add_argument("--manifest", required=True)
    run_p.add_argument("--out", default="runs")
    run_p.add_argument("--seeds", default=None,
                       help="seed or inclusive range a..b (overrides manifest)")
    run_p.add_argument("--engine", default="all",
                       choices=[*ENGINES, "all"])
    run_p.add_argument("--jobs", type=int, default=1)
    run_p.add_argument("--no-traces", action="store_true",
                       help="write metrics only")

    rep_p = sub.add_parser("report", help="summarize a results directory")
    rep_p.add_argument("--dir", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("REDLIGHT_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a command is required (run, report)")
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "run":
        try:
            scenarios, seed_range = load_manifest(args.manifest)
            seeds = (_parse_seeds(args.seeds) if args.seeds
                     else tuple(seed_range))
            engines = ENGINES if args.engine == "all" else (args.engine,)
            manifest = RunManifest(scenarios=tuple(scenarios),
                                   engines=engines, seeds=seeds,
                                   out_dir=Path(args.out))
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        try:
            rows = run_batch(manifest, jobs=args.jobs,
                             write_traces=not args.no_traces)
            _write_summary(rows, manifest.out_dir)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        if any("error" in row for row in rows):
            print("warning: some entries failed; see log", file=sys.stderr)
        return EXIT_VIOLATION if _violation_gate(rows) else EXIT_OK

    if args.command == "report":
        directory = Path(args.dir)
        if not directory.is_dir():
            print(f"error: not a directory: {directory}", file=sys.stderr)
            return EXIT_IO
        rows = _load_rows(directory)
        if not rows:
            print("error: no metrics files found", file=sys.stderr)
            return EXIT_IO
        print(_format_table(summarize(rows)))
        try:
            comparison = compare_report(rows)
        except ValueError:
            comparison = None
        if comparison and comparison["pairs"]:
            print(f"\npeak-deceleration reduction vs unguided: "
                  f"mean {comparison['mean_reduction_pct']:.1f}%  "
                  f"best {comparison['best_reduction_pct']:.1f}%")
        return EXIT_OK

    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
