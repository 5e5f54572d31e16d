"""Command-line driver: ``hamparareal run | reference | report | configs``.

Exit codes: 0 success, 2 invalid input (config, arguments, missing
artifacts), 3 failure during integration or projection. Failures print a
one-line JSON record on stderr and, when possible, write it to
``error.json`` in the output directory.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, bundled_configs, resolve
from .errors import ConfigurationError, PararealError
from .executor import measured_vs_predicted, predict_cost
from .metrics import (SERIES_COLUMNS, ErrorSink, convergence_iteration, fine_floor,
                      reference_trajectory)
from .schemes import PROJECTED_VARIANTS, SYMMETRIC_VARIANTS, run

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
CSV_HEADER = ("t", "k") + SERIES_COLUMNS


class MissingArtifact(Exception):
    pass


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.17g}"


def _error_record(exc, code, out=None):
    record = {"status": "error", "exit_code": code, "error": type(exc).__name__,
              "message": str(exc), "location": None}
    loc = getattr(exc, "location", None)
    if loc is not None:
        record["location"] = {"n": int(loc[0]), "k": int(loc[1])}
    print(json.dumps(record), file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(json.dumps(record, indent=1) + "\n")
        except OSError:
            pass
    return code


class _StateWriter:
    """Streams every completed row into .npy files on disk."""

    def __init__(self, out, cfg, d2):
        shape = (cfg.K + 1, cfg.N + 1, d2)
        self.states = np.lib.format.open_memmap(out / "states.npy", "w+", float, shape)
        self.half = None
        if cfg.variant in SYMMETRIC_VARIANTS:
            self.half = np.lib.format.open_memmap(out / "half_states.npy", "w+", float,
                                                  (cfg.K + 1, cfg.N, d2))

    def __call__(self, k, row, half=None):
        self.states[k] = row
        if self.half is not None and half is not None:
            self.half[k] = half

    def close(self):
        self.states.flush()
        if self.half is not None:
            self.half.flush()


def write_series(path, sink, stride=1):
    """CSV of every error column, one line per (k, t), k-major."""
    n_points = sink.times.shape[0]
    idx = list(range(0, n_points, stride))
    if idx[-1] != n_points - 1:
        idx.append(n_points - 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in range(sink.done + 1):
            cols = [sink.columns[c][k] for c in SERIES_COLUMNS]
            for n in idx:
                w.writerow([_fmt(sink.times[n]), k] + [_fmt(float(c[n])) for c in cols])


def _prepare(args):
    exp = resolve(args.config)
    changes = {}
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        changes["output"] = str(args.out)
    if getattr(args, "stride", None) is not None:
        changes["csv_stride"] = args.stride
    if changes:
        exp = exp.replace(**changes)
    return exp


def cmd_run(args):
    out = None
    try:
        exp = _prepare(args)
        out = Path(exp.output)
        cfg, u0 = exp.build(args.seed)
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigurationError(f"output directory {out} is not writable: {exc}") from exc
    except (ConfigurationError, ValueError) as exc:
        return _error_record(exc, EXIT_INVALID, out)

    started = time.perf_counter()
    try:
        system = cfg.system
        reference = reference_trajectory(system, u0, exp.fine_step, exp.T, exp.window,
                                         divisor=exp.reference_divisor)
        floor = fine_floor(system, u0, exp.fine_step, exp.window, cfg.N, reference)
        sink = ErrorSink(system, u0, exp.window, cfg.N, cfg.K, reference)
        writer = _StateWriter(out, cfg, u0.shape[0])
        result = run(cfg, u0, workers=exp.workers, keep_history=False, sinks=[sink, writer])
        writer.close()
    except PararealError as exc:
        return _error_record(exc, EXIT_RUNTIME, out)

    write_series(out / "series.csv", sink, exp.csv_stride)
    summary = build_summary(exp, cfg, result, sink, floor, args.seed)
    summary["elapsed_seconds"] = time.perf_counter() - started
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    (out / "config.cfg").write_text(exp.dumps())
    print(f"wrote {out}/series.csv, summary.json, states.npy")
    return EXIT_OK


def build_summary(exp, cfg, result, sink, floor, seed=None):
    projected = cfg.variant in PROJECTED_VARIANTS
    m_proj = result.mean_projection_iterations() if projected else 0.0
    report = predict_cost(cfg, cfg.K, m_proj if projected else 0.0)
    traj = sink.series("err_traj")
    k_conv = convergence_iteration(traj, floor)
    max_errors = {c: [_none(np.nanmax(sink.columns[c][k])) if sink.has(c) else None
                      for k in range(cfg.K + 1)] for c in SERIES_COLUMNS}
    summary = {
        "config": dataclasses.asdict(exp),
        "seed": seed,
        "system": cfg.system.label,
        "variant": cfg.variant,
        "N": cfg.N,
        "K": cfg.K,
        "tol": exp.tol if projected else None,
        "newton": {
            "stop_frequencies": result.stop_frequencies(),
            "mean_iterations": _none(m_proj) if projected else None,
            "projections": int((result.newton_stop > 0).sum()) if projected else 0,
        },
        "ledger": result.ledger.as_dict(),
        "speedup": report.as_dict(),
        "measured_vs_predicted": measured_vs_predicted(result, report),
        "max_errors": max_errors,
        "fine_floor": float(np.max(floor)),
        "k_converged": k_conv,
        "peak_rows": result.peak_rows,
    }
    return summary


def _none(x):
    x = float(x)
    return None if math.isnan(x) else x


def cmd_reference(args):
    try:
        exp = _prepare(args)
        cfg, u0 = exp.build(args.seed)
    except (ConfigurationError, ValueError) as exc:
        return _error_record(exc, EXIT_INVALID)
    try:
        ref = reference_trajectory(cfg.system, u0, exp.fine_step, exp.T, exp.window,
                                   divisor=exp.reference_divisor)
        floor = fine_floor(cfg.system, u0, exp.fine_step, exp.window, cfg.N, ref)
    except PararealError as exc:
        return _error_record(exc, EXIT_RUNTIME)
    print(json.dumps({"samples": int(ref.shape[0]), "fine_floor": float(floor.max())}))
    return EXIT_OK


REPORT_COLUMNS = ("run", "system", "variant", "tol", "K", "K_conv", "max_err_H", "max_err_traj",
                  "fine_floor", "speedup")


def report_rows(dirs):
    rows = []
    for d in dirs:
        path = Path(d) / "summary.json"
        if not path.is_file():
            raise MissingArtifact(f"missing run artifact {path}")
        try:
            s = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise MissingArtifact(f"unreadable run artifact {path}: {exc}") from exc
        K = s["K"]
        rows.append({
            "run": Path(d).name,
            "system": s["system"],
            "variant": s["variant"],
            "tol": s["tol"],
            "K": K,
            "K_conv": s["k_converged"] if s["k_converged"] is not None else f">{K}",
            "max_err_H": s["max_errors"]["err_H"][K],
            "max_err_traj": s["max_errors"]["err_traj"][K],
            "fine_floor": s["fine_floor"],
            "speedup": s["speedup"]["speedup"],
        })
    return rows


def _cell(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


def cmd_report(args):
    try:
        rows = report_rows(args.runs)
    except MissingArtifact as exc:
        return _error_record(exc, EXIT_INVALID)
    columns = list(REPORT_COLUMNS)
    if len(rows) > 1:
        columns.append("speedup_vs_first")
        base = rows[0]["speedup"]
        for r in rows:
            r["speedup_vs_first"] = r["speedup"] / base if base else None
    table = [columns] + [[_cell(r[c]) for c in columns] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(columns))]
    for line in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([r[c] for c in columns])
    return EXIT_OK


def cmd_configs(args):
    for name in bundled_configs():
        print(name)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="hamparareal",
                                     description="Parareal integration of Hamiltonian systems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config", help="config file, or the name of a bundled config")
    p.add_argument("--workers", type=int, help="threads for the window tasks")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="seed for random initial states")
    p.add_argument("--stride", type=int, help="write every n-th time point to the CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reference", help="build and cache the reference trajectory")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("report", help="compare finished runs")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("configs", help="list bundled configs")
    p.set_defaults(func=cmd_configs)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        return _error_record(ConfigurationError("--workers must be at least 1"), EXIT_INVALID)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
