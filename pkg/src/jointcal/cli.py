"""Command-line front end: ``calibrate``, ``estimate`` and ``simulate``.

Exit codes: 0 success, 1 input error, 2 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import build_system, relative_residuals, residuals
from .core import CalibrationError, SampleFrame, TargetSpec, validate_frame
from .distances import DistanceSpec
from .estimators import EstimateRequest, estimate
from .simulation import SimConfig, monte_carlo
from .solvers import SolverOptions, solve_dual

log = logging.getLogger("jointcal")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2


class InputError(Exception):
    pass


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _file_digest(path) -> str:
    return _digest(Path(path).read_bytes())


def _num(x: float) -> str:
    return f"{x:.10g}"


def read_csv_columns(path, id_col: str | None, numeric: list) -> tuple:
    """Read ids and the requested numeric columns from a CSV file.

    Returns ``(ids, {name: array})``. ``id_col`` may be absent from the
    header, in which case ids are 1-based row numbers.
    """
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames
        if not header:
            raise InputError(f"{path}: missing header row")
        missing = [c for c in numeric if c not in header]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
        use_ids = id_col is not None and id_col in header
        ids, cols = [], {c: [] for c in numeric}
        for row in reader:
            line = reader.line_num
            if None in row or any(v is None for v in row.values()):
                raise InputError(f"{path}, line {line}: wrong number of fields")
            ids.append(row[id_col] if use_ids else str(len(ids) + 1))
            for c in numeric:
                text = row[c].strip()
                try:
                    cols[c].append(float(text))
                except ValueError:
                    raise InputError(f"{path}, line {line}: column {c!r} value {text!r} is not a number") from None
    if not ids:
        raise InputError(f"{path}: no data rows")
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate ids in column {id_col!r}")
    return ids, {c: np.asarray(v) for c, v in cols.items()}


def parse_targets(data: dict) -> tuple:
    """Targets JSON to ``(TargetSpec, DistanceSpec)``."""
    if not isinstance(data, dict):
        raise InputError("targets file must hold a JSON object")
    allowed = {"N", "totals", "quantiles", "distance", "include_size_constraint"}
    extra = set(data) - allowed
    if extra:
        raise InputError(f"unknown keys in targets: {', '.join(sorted(extra))}")
    if "N" not in data:
        raise InputError("targets: 'N' is required")
    try:
        N = float(data["N"])
        totals = {str(k): float(v) for k, v in data.get("totals", {}).items()}
        quantiles = []
        for var, orders in data.get("quantiles", {}).items():
            for alpha, q in orders.items():
                quantiles.append((str(var), float(alpha), float(q)))
    except (TypeError, ValueError, AttributeError) as exc:
        raise InputError(f"targets: malformed value ({exc})") from None
    dist = dict(data.get("distance", {"kind": "raking"}))
    kind = dist.pop("kind", "raking")
    bounds = None
    if "L" in dist or "U" in dist:
        try:
            bounds = (float(dist.pop("L")), float(dist.pop("U")))
        except KeyError as exc:
            raise InputError(f"targets: distance bound {exc} missing") from None
    if dist:
        raise InputError(f"targets: unknown distance keys {', '.join(sorted(dist))}")
    try:
        distance = DistanceSpec(kind, bounds)
    except ValueError as exc:
        raise InputError(f"targets: {exc}") from None
    spec = TargetSpec(N, totals, tuple(quantiles),
                      bool(data.get("include_size_constraint", True)))
    return spec, distance


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _write_manifest(out_dir: Path, command: str, inputs: dict, config: dict, seed, started: float,
                    outputs: list, diagnostics: dict | None = None) -> None:
    config_blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "command": command,
        "tool_version": __version__,
        "inputs": {name: {"path": str(p), "sha256": _file_digest(p)} for name, p in inputs.items()},
        "config": config,
        "config_digest": _digest(config_blob),
        "seed": seed,
        "timings": {"started_unix": started, "elapsed_seconds": time.time() - started},
        "outputs": {p.name: _file_digest(p) for p in outputs},
    }
    if diagnostics is not None:
        manifest["diagnostics"] = diagnostics
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_calibrate(args) -> int:
    started = time.time()
    data = _load_json(args.targets)
    targets, distance = parse_targets(data)
    ids, cols = read_csv_columns(args.sample, args.id_col, [args.weight_col] + targets.variables())
    names = targets.variables()
    X = np.column_stack([cols[c] for c in names]) if names else np.empty((len(ids), 0))
    frame = SampleFrame(tuple(ids), cols[args.weight_col], X, tuple(names))
    report = validate_frame(frame, targets)
    if not report.ok:
        raise InputError("invalid inputs: " + report.summary())
    system = build_system(frame, targets)
    opts = SolverOptions(max_iterations=args.max_iterations, tolerance=args.tolerance,
                         rescale=not args.no_rescale)
    try:
        ws = solve_dual(system, frame.d, distance, opts)
    except CalibrationError as exc:
        log.error("calibration failed: %s", exc)
        return EXIT_SOLVER

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = np.asarray(ws.w)
    with open(out / "weights.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "d", "w", "ratio"])
        for k, uid in enumerate(frame.ids):
            writer.writerow([uid, _num(frame.d[k]), _num(w[k]), _num(w[k] / frame.d[k])])
    res = residuals(system, w)
    rel = relative_residuals(system, w)
    with open(out / "residuals.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["constraint", "target", "achieved", "residual", "relative_residual"])
        for j, label in enumerate(system.labels):
            writer.writerow([label, _num(system.h[j]), _num(system.h[j] + res[j]),
                             _num(res[j]), _num(rel[j])])
    diag = ws.diagnostics
    summary = {
        "converged": diag.converged, "iterations": diag.iterations,
        "max_rel_residual": diag.max_rel_residual, "ratio_min": diag.ratio_min,
        "ratio_max": diag.ratio_max, "distance_value": diag.distance_value,
        "message": diag.message,
    }
    config = {"targets": data, "weight_col": args.weight_col, "id_col": args.id_col,
              "max_iterations": args.max_iterations, "tolerance": args.tolerance,
              "rescale": not args.no_rescale}
    _write_manifest(out, "calibrate", {"sample": args.sample, "targets": args.targets}, config,
                    args.seed, started, [out / "weights.csv", out / "residuals.csv"], summary)
    if not diag.converged:
        worst = system.labels[int(np.argmax(rel))] if system.m else "-"
        log.error("no convergence (%s); worst constraint: %s", diag.message, worst)
        return EXIT_SOLVER
    log.info("calibrated %d units to %d constraints in %d iterations", system.n, system.m,
             diag.iterations)
    return EXIT_OK


def cmd_estimate(args) -> int:
    try:
        requests = [EstimateRequest.parse(r, args.source) for r in args.request]
    except ValueError as exc:
        raise InputError(str(exc)) from None
    variables = list(dict.fromkeys(r.variable for r in requests))
    numeric = variables + ([args.weight_col] if args.source == "design" else [])
    ids, cols = read_csv_columns(args.sample, args.id_col, numeric)
    n = len(ids)
    if args.source == "uniform":
        w = np.ones(n)
    elif args.source == "design":
        w = cols[args.weight_col]
    else:
        if args.weights is None:
            raise InputError(f"weights file required for source {args.source!r}")
        wids, wcols = read_csv_columns(args.weights, "id", ["w"])
        lookup = dict(zip(wids, wcols["w"]))
        unmatched = sorted(set(ids) ^ set(wids))
        if unmatched:
            raise InputError("ids do not match between sample and weights: " + ", ".join(unmatched[:20]))
        w = np.array([lookup[i] for i in ids])
    N = args.population_size
    rows = []
    for req in requests:
        try:
            value = estimate(req, w, cols[req.variable], N)
        except ValueError as exc:
            raise InputError(f"{req.label}: {exc}") from None
        rows.append([req.label, req.parameter, req.variable,
                     "" if req.alpha is None else _num(req.alpha), req.weights_source, _num(value)])
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["request", "parameter", "variable", "alpha", "weights_source", "estimate"])
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.time()
    data = _load_json(args.config)
    if not isinstance(data, dict):
        raise InputError("config must hold a JSON object")
    if args.seed is not None:
        data = {**data, "master_seed": args.seed}
    try:
        cfg = SimConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{args.config}: {exc}") from None
    threads = args.threads or os.cpu_count() or 1
    log.info("simulating R=%d replications (N=%d, n=%d) on %d worker(s)", cfg.R, cfg.N, cfg.n, threads)
    table = monte_carlo(cfg, threads=threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(table.to_csv(), encoding="utf-8")
    config_digest = _digest(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    md = table.to_markdown() + f"\nProduced by manifest.json (config sha256 {config_digest}).\n"
    (out / "table.md").write_text(md, encoding="utf-8")
    failures = {est: len(v) for est, v in table.failures.items()}
    _write_manifest(out, "simulate", {"config": args.config}, cfg.to_dict(), cfg.master_seed,
                    started, [out / "metrics.csv", out / "table.md"],
                    {**table.metadata, "threads": threads, "missing_by_estimator": failures})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker processes for simulate (default: all CPUs)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="jointcal", parents=[common],
                                     description="Joint calibration for totals and quantiles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="compute calibration weights")
    p.add_argument("sample", help="sample CSV with a header row")
    p.add_argument("targets", help="targets JSON")
    p.add_argument("--weight-col", default="d")
    p.add_argument("--id-col", default="id")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--no-rescale", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate", parents=[common], help="estimate totals, means, quantiles")
    p.add_argument("sample")
    p.add_argument("weights", nargs="?", help="weights CSV from calibrate (id, w)")
    p.add_argument("--request", action="append", required=True,
                   help="mean:VAR, total:VAR or quantile:VAR:ALPHA (repeatable)")
    p.add_argument("--source", default="calibrated",
                   choices=["design", "calibrated", "el", "ipw", "uniform"])
    p.add_argument("--id-col", default="id")
    p.add_argument("--weight-col", default="d")
    p.add_argument("--population-size", "-N", type=float, default=None,
                   help="N for means (default: sum of weights)")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", parents=[common], help="run the Monte Carlo study")
    p.add_argument("config", help="simulation config JSON")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("seed", None), ("threads", None), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
