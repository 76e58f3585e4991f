"""CSV/JSON artifacts: round streams, sweep tables, summaries, and the
re-parsing needed by the report command."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

from .engine import RoundRecord, RunResult
from .experiments import CompareRow, SweepOutcome, TrainOutcome, TuneOutcome
from .perf import RoundTimings

ROUNDS_COLUMNS = ["round", "t_worker", "t_master", "t_overhead", "t_tot_cum",
                  "objective", "suboptimality"]
SWEEP_COLUMNS = ["H", "N_eps", "T_eps_seconds", "t1_ms", "t2_us", "a", "b", "r2",
                 "h_opt_predicted"]
COMPARE_COLUMNS = ["algorithm", "H", "gamma", "status", "rounds_to_target",
                   "time_to_target_seconds", "t_worker_total", "t_master_total",
                   "t_overhead_total"]


def write_rounds_csv(path, records: list[RoundRecord]) -> None:
    cum = 0.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_COLUMNS)
        for rec in records:
            cum += rec.timings.t_tot
            writer.writerow([
                rec.round,
                repr(rec.timings.t_worker),
                repr(rec.timings.t_master),
                repr(rec.timings.t_overhead),
                repr(cum),
                repr(rec.objective),
                repr(rec.suboptimality),
            ])


def read_rounds_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ROUNDS_COLUMNS:
            raise ValueError(f"{path}: not a rounds.csv (columns {reader.fieldnames})")
        rows = []
        for row in reader:
            rows.append({
                "round": int(row["round"]),
                **{c: float(row[c]) for c in ROUNDS_COLUMNS[1:]},
            })
        return rows


def records_from_rows(rows: list[dict]) -> list[RoundRecord]:
    out = []
    for row in rows:
        out.append(
            RoundRecord(
                round=row["round"],
                timings=RoundTimings(row["t_worker"], row["t_master"], row["t_overhead"]),
                objective=row["objective"],
                suboptimality=row["suboptimality"],
            )
        )
    return out


def train_summary(outcome: TrainOutcome) -> dict:
    result = outcome.result
    return {
        "dataset": outcome.spec.dataset,
        "algorithm": outcome.spec.algorithm,
        "k": outcome.spec.k,
        "h": outcome.h_resolved,
        "gamma": outcome.spec.gamma,
        "lambda": outcome.spec.lam,
        "backend": outcome.spec.backend,
        "injected_latency_ms": outcome.spec.injected_latency_ms,
        "seed": outcome.spec.seed,
        "target_suboptimality": outcome.spec.target,
        "status": result.status,
        "reached_target": result.reached_target,
        "rounds": len(result.records),
        "rounds_to_target": outcome.rounds_to_target,
        "time_to_target_seconds": outcome.time_to_target,
        "final_suboptimality": result.final_suboptimality,
        "final_objective": result.records[-1].objective if result.records else None,
        "f_star": result.f_star,
        "f_initial": result.f_initial,
        "total_time_seconds": sum(r.timings.t_tot for r in result.records),
        "t_worker_total": sum(r.timings.t_worker for r in result.records),
        "t_master_total": sum(r.timings.t_master for r in result.records),
        "t_overhead_total": sum(r.timings.t_overhead for r in result.records),
    }


def write_summary_json(path, outcome: TrainOutcome) -> None:
    with open(path, "w") as fh:
        json.dump(train_summary(outcome), fh, indent=2)
        fh.write("\n")


def _fit_fields(outcome: SweepOutcome) -> tuple:
    fit = outcome.fit
    a = fit.a if fit else math.nan
    b = fit.b if fit else math.nan
    r2 = fit.r_squared if fit else math.nan
    h_opt = outcome.h_opt_predicted if outcome.h_opt_predicted is not None else ""
    return a, b, r2, h_opt


def write_sweep_csv(path, outcome: SweepOutcome) -> None:
    a, b, r2, h_opt = _fit_fields(outcome)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for p in outcome.points:
            writer.writerow([
                p.h,
                p.rounds_to_target if p.reached else "",
                repr(p.time_to_target) if p.reached else "",
                repr(outcome.t1 * 1e3),
                repr(outcome.t2 * 1e6),
                repr(a),
                repr(b),
                repr(r2),
                h_opt,
            ])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SWEEP_COLUMNS:
            raise ValueError(f"{path}: not a sweep.csv (columns {reader.fieldnames})")
        rows = []
        for row in reader:
            rows.append({
                "H": int(row["H"]),
                "N_eps": int(row["N_eps"]) if row["N_eps"] else None,
                "T_eps_seconds": float(row["T_eps_seconds"]) if row["T_eps_seconds"] else None,
                "t1_ms": float(row["t1_ms"]),
                "t2_us": float(row["t2_us"]),
                "a": float(row["a"]),
                "b": float(row["b"]),
                "r2": float(row["r2"]),
                "h_opt_predicted": int(row["h_opt_predicted"]) if row["h_opt_predicted"] else None,
            })
        return rows


def tune_report(outcome: TuneOutcome) -> dict:
    sweep = outcome.sweep
    fit = sweep.fit
    return {
        "dataset": sweep.spec.dataset,
        "algorithm": sweep.spec.algorithm,
        "k": sweep.spec.k,
        "backend": sweep.spec.backend,
        "injected_latency_ms": sweep.spec.injected_latency_ms,
        "points": [
            {
                "H": p.h,
                "rounds_to_target": p.rounds_to_target,
                "time_to_target_seconds": p.time_to_target,
                "reached": p.reached,
                "status": p.status,
            }
            for p in sweep.points
        ],
        "fit": None if fit is None else {
            "a": fit.a, "b": fit.b, "r_squared": fit.r_squared,
            "degenerate": fit.degenerate, "b_clamped": fit.b_clamped,
        },
        "t1_seconds": sweep.t1,
        "t2_seconds": sweep.t2,
        "h_measured_argmin": outcome.h_measured_argmin,
        "h_model_predicted": sweep.h_opt_predicted,
        "prediction_ratio": outcome.prediction_ratio,
        "t_predicted_seconds": outcome.t_predicted,
        "warning": sweep.fit_warning,
        "recommended_h": outcome.h_recommended,
    }


def write_compare_csv(path, rows: list[CompareRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        for r in rows:
            writer.writerow([
                r.algorithm, r.h, repr(r.gamma), r.status,
                r.rounds_to_target if r.rounds_to_target is not None else "",
                repr(r.time_to_target) if r.time_to_target is not None else "",
                repr(r.t_worker_total), repr(r.t_master_total), repr(r.t_overhead_total),
            ])


def compare_table(rows: list[CompareRow]) -> str:
    header = f"{'algorithm':<10} {'H':>7} {'gamma':>9} {'status':<10} " \
             f"{'rounds':>7} {'time[s]':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        rounds = str(r.rounds_to_target) if r.rounds_to_target is not None else "-"
        seconds = f"{r.time_to_target:.3f}" if r.time_to_target is not None else "-"
        lines.append(
            f"{r.algorithm:<10} {r.h:>7} {r.gamma:>9.4g} {r.status:<10} "
            f"{rounds:>7} {seconds:>10}"
        )
    return "\n".join(lines)


def render_report(directory) -> str:
    """Human summary of the artifacts in an output directory (round-trip
    check for every CSV the tool writes)."""
    directory = Path(directory)
    lines = [f"report for {directory}"]
    rounds_path = directory / "rounds.csv"
    summary_path = directory / "summary.json"
    sweep_path = directory / "sweep.csv"
    compare_path = directory / "compare.csv"
    tune_path = directory / "tune.json"
    found = False
    if summary_path.exists():
        found = True
        summary = json.loads(summary_path.read_text())
        lines.append(
            f"  train: {summary['algorithm']} on {summary['dataset']} "
            f"K={summary['k']} H={summary['h']} -> {summary['status']}, "
            f"final suboptimality {summary['final_suboptimality']:.3e} "
            f"in {summary['rounds']} rounds / {summary['total_time_seconds']:.3f}s"
        )
        lines.append(
            f"  buckets: worker {summary['t_worker_total']:.3f}s, "
            f"master {summary['t_master_total']:.3f}s, "
            f"overhead {summary['t_overhead_total']:.3f}s"
        )
    if rounds_path.exists():
        found = True
        rows = read_rounds_csv(rounds_path)
        lines.append(f"  rounds.csv: {len(rows)} rounds, "
                     f"last suboptimality {rows[-1]['suboptimality']:.3e}"
                     if rows else "  rounds.csv: empty")
    if sweep_path.exists():
        found = True
        rows = read_sweep_csv(sweep_path)
        reached = [r for r in rows if r["T_eps_seconds"] is not None]
        lines.append(f"  sweep.csv: {len(rows)} H points ({len(reached)} reached target)")
        if reached:
            best = min(reached, key=lambda r: r["T_eps_seconds"])
            lines.append(f"  best measured H={best['H']} at {best['T_eps_seconds']:.3f}s; "
                         f"model fit a={best['a']:.1f} b={best['b']:.2f} r2={best['r2']:.3f}")
    if tune_path.exists():
        found = True
        tune = json.loads(tune_path.read_text())
        lines.append(f"  tune.json: recommended H={tune['recommended_h']} "
                     f"(model predicted {tune['h_model_predicted']})")
    if compare_path.exists():
        found = True
        with open(compare_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != COMPARE_COLUMNS:
                raise ValueError(f"{compare_path}: not a compare.csv")
            for row in reader:
                t = row["time_to_target_seconds"]
                lines.append(
                    f"  compare: {row['algorithm']} -> {row['status']}"
                    + (f", {float(t):.3f}s to target" if t else "")
                )
    if not found:
        lines.append("  (no synclin artifacts found)")
    return "\n".join(lines)
