"""Command-line front end: run, grid, sweep-a, spectrum, plotdata.

Every command takes ``--config <file> --out <dir>`` plus optional ``--seed``
and ``--threads`` overrides (environment fallbacks SCALEDOPT_OUT and
SCALEDOPT_THREADS). Exit codes: 0 success, 1 configuration error,
2 divergence (run command only).
"""

from __future__ import annotations

import argparse
import csv
import glob as globlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .config import ConfigError, RunConfig, build_problem, load_config, run_id_for
from .data import derive_seed
from .diagnostics import spectrum_rows
from .objective import DENSE_HESSIAN_CAP, LogisticProblem
from .optim import BetaSchedule, EtaSchedule, TraceRecord, run

__all__ = ["main"]

GRID_COLUMNS = (
    "eta_idx", "beta_idx", "eta", "beta", "n_runs", "n_diverged",
    "mean_final_f", "std_final_f", "mean_final_grad_norm2", "std_final_grad_norm2",
    "best",
)
SWEEP_COLUMNS = ("A", "beta_star", "eta_star", "final_f_mean")
SPECTRUM_COLUMNS = ("t", "eigenvalue_index", "value", "which")
PLOTDATA_COLUMNS = ("run_id", "t", "metric", "value")
PLOTDATA_AGG_COLUMNS = ("t", "metric", "mean", "std", "n")


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration problems for our exit-code contract
    def error(self, message):
        raise ConfigError(message)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def write_trace(path, records):
    write_csv(path, TraceRecord.COLUMNS, (r.as_row() for r in records))


# ---------------------------------------------------------------------------
# run

def _single_run(prob: LogisticProblem, cfg: RunConfig, seed: int):
    rid = run_id_for(cfg, seed)
    result = run(prob, cfg.algo_config(seed=seed), run_id=rid)
    return rid, result


def cmd_run(cfg: RunConfig, out: Path, threads: int) -> int:
    prob = build_problem(cfg)
    summaries = []
    any_diverged = False
    for r in range(cfg.repeats):
        seed = cfg.seed if r == 0 else derive_seed(cfg.seed, "rep", r)
        rid, result = _single_run(prob, cfg, seed)
        write_trace(out / f"trace_{rid}.csv", result.trace)
        summaries.append(result.summary())
        any_diverged = any_diverged or result.diverged
    if cfg.repeats == 1:
        payload = dict(summaries[0])
        payload["config_echo"] = cfg.resolved()
    else:
        finals = [s["final_f"] for s in summaries if not s["diverged"]]
        payload = {
            "runs": summaries,
            "aggregate": {
                "mean_final_f": float(np.mean(finals)) if finals else math.nan,
                "std_final_f": float(np.std(finals)) if finals else math.nan,
                "n_diverged": sum(s["diverged"] for s in summaries),
            },
            "config_echo": cfg.resolved(),
        }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 2 if any_diverged else 0


# ---------------------------------------------------------------------------
# grid

_PROBLEM_CACHE: dict[str, LogisticProblem] = {}


def _cached_problem(cfg: RunConfig) -> LogisticProblem:
    key = cfg.dataset_key()
    if key not in _PROBLEM_CACHE:
        _PROBLEM_CACHE[key] = build_problem(cfg)
    return _PROBLEM_CACHE[key]


def _grid_cell(doc: dict, i: int, j: int, eta: float, beta: float, r: int):
    cfg = load_config(doc)
    prob = _cached_problem(cfg)
    seed = derive_seed(cfg.seed, i, j, r)
    acfg = cfg.algo_config(
        seed=seed,
        eta=EtaSchedule(kind="constant", value=float(eta)),
        beta=BetaSchedule(kind="constant", value=float(beta)),
        diagnostics="off",
    )
    result = run(prob, acfg, run_id=f"cell_{i}_{j}_{r}")
    return i, j, r, result.f_final, result.grad_norm2_final, result.diverged


def _run_grid(cfg: RunConfig, threads: int):
    """All cells of cfg.grid; returns (rows, best) with rows sorted by cell."""
    if cfg.grid is None:
        raise ConfigError("this command needs a grid section in the config")
    etas = [float(v) for v in cfg.grid["eta"]]
    betas = [float(v) for v in cfg.grid["beta"]]
    seeds = int(cfg.grid.get("seeds", 1))
    tasks = [
        (i, j, eta, beta, r)
        for i, eta in enumerate(etas)
        for j, beta in enumerate(betas)
        for r in range(seeds)
    ]
    doc = cfg.raw
    if threads > 1:
        outputs = Parallel(n_jobs=threads, backend="loky")(
            delayed(_grid_cell)(doc, i, j, eta, beta, r) for i, j, eta, beta, r in tasks
        )
    else:
        outputs = [_grid_cell(doc, i, j, eta, beta, r) for i, j, eta, beta, r in tasks]

    cells: dict[tuple[int, int], list] = {}
    for i, j, r, final_f, final_gn2, diverged in outputs:
        cells.setdefault((i, j), []).append((final_f, final_gn2, diverged))
    rows = []
    for i, eta in enumerate(etas):
        for j, beta in enumerate(betas):
            runs = cells[(i, j)]
            ok = [(f, g) for f, g, div in runs if not div]
            n_div = sum(div for _, _, div in runs)
            fs = [f for f, _ in ok]
            gs = [g for _, g in ok]
            rows.append({
                "eta_idx": i, "beta_idx": j, "eta": eta, "beta": beta,
                "n_runs": len(ok), "n_diverged": n_div,
                "mean_final_f": float(np.mean(fs)) if fs else math.nan,
                "std_final_f": float(np.std(fs)) if fs else math.nan,
                "mean_final_grad_norm2": float(np.mean(gs)) if gs else math.nan,
                "std_final_grad_norm2": float(np.std(gs)) if gs else math.nan,
                "best": 0,
            })
    candidates = [row for row in rows if row["n_diverged"] == 0 and row["n_runs"] > 0]
    if not candidates:
        candidates = [row for row in rows if row["n_runs"] > 0]
    best = None
    if candidates:
        best = min(candidates, key=lambda row: row["mean_final_f"])
        best["best"] = 1
    else:
        print("warning: every grid cell diverged; no best cell", file=sys.stderr)
    return rows, best


def cmd_grid(cfg: RunConfig, out: Path, threads: int) -> int:
    rows, best = _run_grid(cfg, threads)
    write_csv(out / "grid.csv", GRID_COLUMNS, ([row[c] for c in GRID_COLUMNS] for row in rows))
    if best is not None:
        with open(out / "best.json", "w", encoding="utf-8") as fh:
            json.dump(best, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# sweep over scaling amplitudes

def cmd_sweep_a(cfg: RunConfig, out: Path, threads: int) -> int:
    if cfg.sweep_A is None:
        raise ConfigError("sweep-a needs a sweep_A list in the config")
    if cfg.grid is None:
        raise ConfigError("sweep-a needs a grid section in the config")
    rows = []
    for A in cfg.sweep_A:
        doc = dict(cfg.raw)
        doc["A"] = float(A)
        sub = load_config(doc)
        _, best = _run_grid(sub, threads)
        if best is None:
            print(f"warning: A={A}: every cell diverged, skipping row", file=sys.stderr)
            continue
        rows.append((float(A), best["beta"], best["eta"], best["mean_final_f"]))
    for prev, cur in zip(rows, rows[1:]):
        if cur[1] < prev[1]:
            print(
                f"warning: best beta decreased from {prev[1]} (A={prev[0]}) "
                f"to {cur[1]} (A={cur[0]}); expected a nondecreasing trend",
                file=sys.stderr,
            )
    write_csv(out / "sweep_a.csv", SWEEP_COLUMNS, rows)
    return 0


# ---------------------------------------------------------------------------
# spectrum dumps

def cmd_spectrum(cfg: RunConfig, out: Path, threads: int) -> int:
    prob = build_problem(cfg)
    if prob.n > DENSE_HESSIAN_CAP:
        raise ConfigError(
            f"spectrum dumps need dense Hessians: n <= {DENSE_HESSIAN_CAP}, dataset has n = {prob.n}"
        )
    base_kind = cfg.algo_config().resolved_precond_kind
    halves = []
    if cfg.algo in ("sgd", "lsvrg"):
        halves.append(("identity-frozen", "spectrum_diagonal.csv"))
        print("note: unscaled algorithm; dense spectrum half skipped", file=sys.stderr)
    else:
        diag_kind = base_kind if base_kind != "dense-absolute" else "diagonal-hutchinson"
        halves.append((diag_kind, "spectrum_diagonal.csv"))
        halves.append(("dense-absolute", "spectrum_dense.csv"))
    for kind, fname in halves:
        acfg = cfg.algo_config(
            precond_kind=kind if cfg.algo.startswith("scaled-") else None,
            diagnostics="full",
        )
        result = run(prob, acfg, run_id=run_id_for(cfg, cfg.seed))
        rows = []
        for t, hess_eigs, scaled_eigs in result.spectra or []:
            rows.extend(spectrum_rows(t, hess_eigs, scaled_eigs))
        write_csv(out / fname, SPECTRUM_COLUMNS, rows)
    return 0


# ---------------------------------------------------------------------------
# plotdata

_NON_METRIC = {"run_id", "t"}


def cmd_plotdata(cfg: RunConfig, out: Path, threads: int) -> int:
    spec = cfg.plotdata or {}
    inputs = spec.get("inputs") or [str(out / "trace_*.csv")]
    if isinstance(inputs, str):
        inputs = [inputs]
    metrics = spec.get("metrics")
    if metrics is not None:
        bad = set(metrics) - (set(TraceRecord.COLUMNS) - _NON_METRIC)
        if bad:
            raise ConfigError(f"unknown plotdata metrics: {sorted(bad)}")
    paths = sorted({p for pattern in inputs for p in globlib.glob(pattern)})
    if not paths:
        raise ConfigError(f"plotdata found no trace files under {inputs}")
    long_rows = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != list(TraceRecord.COLUMNS):
                raise ConfigError(f"{path} is not a trace file (bad header)")
            for row in reader:
                wanted = metrics or [c for c in TraceRecord.COLUMNS if c not in _NON_METRIC]
                for metric in wanted:
                    raw = row[metric]
                    if raw == "":
                        continue
                    long_rows.append((row["run_id"], int(row["t"]), metric, float(raw)))
    write_csv(out / "plotdata.csv", PLOTDATA_COLUMNS, long_rows)
    if spec.get("aggregate", False):
        groups: dict[tuple[int, str], list[float]] = {}
        for _, t, metric, value in long_rows:
            groups.setdefault((t, metric), []).append(value)
        agg_rows = [
            (t, metric, float(np.mean(vs)), float(np.std(vs)), len(vs))
            for (t, metric), vs in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        ]
        write_csv(out / "plotdata_agg.csv", PLOTDATA_AGG_COLUMNS, agg_rows)
    return 0


# ---------------------------------------------------------------------------

_COMMANDS = {
    "run": cmd_run,
    "grid": cmd_grid,
    "sweep-a": cmd_sweep_a,
    "spectrum": cmd_spectrum,
    "plotdata": cmd_plotdata,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="scaledopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (env SCALEDOPT_OUT)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="parallel workers (env SCALEDOPT_THREADS)")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            doc = dict(cfg.raw)
            doc["seed"] = args.seed
            cfg = load_config(doc)
        out = Path(args.out or os.environ.get("SCALEDOPT_OUT") or "out")
        out.mkdir(parents=True, exist_ok=True)
        threads = args.threads
        if threads is None:
            threads = int(os.environ.get("SCALEDOPT_THREADS", "1"))
        if threads < 1:
            raise ConfigError("threads must be at least 1")
        return _COMMANDS[args.command](cfg, out, threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
