"""Command-line runner: ``rpsde {solve,verify,stationary,bounds,sweep} --config FILE``.

Exit codes: 0 when every configured tolerance passed, 2 when the run
completed with a FAIL verdict, 1 on error.  Outputs are byte-identical for a
given (config, seed) regardless of the worker count.
"""
import argparse
import copy
import io
import json
import logging
import math
import os
import sys

import numpy as np

from .config import _build, _Collector, _line_map, load_config
from .drift import check_condition_m, choose_cutoff_N, condition_m_ledger
from .errors import ConditionMViolation, MissingGradBound, RPSDEError
from .solver import contraction_constant, solve_ensemble
from .verifier import (
    check_random_periodicity, check_stationary, compare_moments, merge_reports,
    stationary_oracle,
)
from .convolution import GridFunction
from .wiener import sample

__all__ = ["main", "run", "COMMANDS"]

COMMANDS = ("solve", "verify", "stationary", "bounds", "sweep")
EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

log = logging.getLogger("rpsde")


def _num(x):
    return format(float(x), ".17g")


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(row) + "\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _provenance(cfg, command):
    s = cfg.solver
    return {
        "command": command,
        "config_hash": cfg.config_hash,
        "seed": s.master_seed,
        "dt": s.dt,
        "T_h": s.T_h,
        "tau": s.tau,
        "n_paths": s.n_paths,
    }


def _paths(cfg, command, out_dir):
    csv_path = cfg.output["csv_path"] or f"{command}.csv"
    json_path = cfg.output["json_path"] or f"{command}.json"
    return os.path.join(out_dir, csv_path), os.path.join(out_dir, json_path)


# -- commands ---------------------------------------------------------------

def _solution_rows(res, series):
    d = res.y.shape[-1]
    header = ["path_id", "t"]
    blocks = []
    for name, arr in (("Y", res.y), ("Z", res.z), ("Y1", res.y1)):
        if name in series:
            header += [f"{name}_{i + 1}" for i in range(d)]
            blocks.append(arr)
    data = np.concatenate(blocks, axis=-1) if blocks else np.zeros(res.y.shape[:2] + (0,))
    times = res.grid.times
    rows = []
    for p, pid in enumerate(res.path_ids):
        for j, t in enumerate(times):
            rows.append([str(pid), _num(t)] + [_num(v) for v in data[p, j]])
    return header, rows


def cmd_solve(cfg, workers, write=True, out_dir="."):
    res = solve_ensemble(cfg.solver, cfg.split, cfg.drift, cfg.diffusion, workers)
    rep = res.report
    summary = _provenance(cfg, "solve")
    summary.update(
        report=rep.as_dict(),
        kappa=rep.kappa,
        tail_bound=rep.tail_bound,
        mean_Y_at_0=res.moments["mean"][res.grid.node(0.0)],
        verdict="PASS" if rep.converged else "FAIL",
    )
    if write:
        csv_path, json_path = _paths(cfg, "solve", out_dir)
        _write_csv(csv_path, *_solution_rows(res, cfg.output["which_series"]))
        _write_json(json_path, summary)
    return (EXIT_OK if rep.converged else EXIT_FAIL), summary, res


def cmd_verify(cfg, workers, write=True, out_dir="."):
    code, solve_summary, res = cmd_solve(cfg, workers, write=False)
    s = cfg.solver
    num = cfg.numerics
    noise_dim = cfg.diffusion.shape[1]
    reports = []
    for p, pid in enumerate(res.path_ids):
        path = sample(s.path_grid, noise_dim, s.master_seed, pid)
        y = GridFunction(res.grid, res.y[p], (pid,))
        reports.append(check_random_periodicity(
            y, cfg.split, cfg.drift, cfg.diffusion, path, s,
            stride=num["check_stride"], semiflow_tol=num["semiflow_tol"],
            periodicity_tol=num["periodicity_tol"], resolve=num["resolve_periodicity"],
        ))
    rep = merge_reports(reports)
    passed = bool(rep.passed) and res.report.converged
    summary = _provenance(cfg, "verify")
    summary.update(
        report=res.report.as_dict(),
        identity=rep.as_dict(),
        semiflow_max=max(rep.semiflow_defect),
        periodicity_max=max(rep.periodicity_defect) if rep.periodicity_defect else None,
        solve_converged=res.report.converged,
        tail_bound=res.report.tail_bound,
        kappa=res.report.kappa,
        verdict="PASS" if passed else "FAIL",
    )
    if write:
        csv_path, json_path = _paths(cfg, "verify", out_dir)
        header = ["path_id", "t", "semiflow_defect", "periodicity_defect"]
        rows = []
        for p, pid in enumerate(res.path_ids):
            for j, t in enumerate(rep.times):
                per = rep.periodicity_by_t[p, j] if rep.periodicity_by_t is not None else float("nan")
                rows.append([str(pid), _num(t), _num(rep.semiflow_by_t[p, j]), _num(per)])
        _write_csv(csv_path, header, rows)
        _write_json(json_path, summary)
    return (EXIT_OK if passed else EXIT_FAIL), summary, rep


def cmd_stationary(cfg, workers, write=True, out_dir="."):
    code, _, res = cmd_solve(cfg, workers, write=False)
    s = cfg.solver
    num = cfg.numerics
    noise_dim = cfg.diffusion.shape[1]
    reports = []
    for p, pid in enumerate(res.path_ids):
        path = sample(s.path_grid, noise_dim, s.master_seed, pid)
        y = GridFunction(res.grid, res.y[p], (pid,))
        reports.append(check_stationary(
            y, cfg.split, cfg.drift, cfg.diffusion, path, num["probe_times"], num["stationary_tol"],
        ))
    ident = merge_reports(reports)
    y0 = res.y[:, res.grid.node(0.0)]
    oracle = stationary_oracle(cfg.split, cfg.drift, cfg.diffusion)
    moments = None
    passed = bool(ident.passed) and res.report.converged
    if oracle is not None and res.y.shape[0] >= 2:
        moments = compare_moments(y0, *oracle, n_se=num["moment_n_se"], bias=num["moment_bias"])
        passed = passed and moments["passed"]
    summary = _provenance(cfg, "stationary")
    summary.update(
        report=res.report.as_dict(),
        identity=ident.as_dict(),
        moments=moments,
        oracle_available=oracle is not None,
        tail_bound=res.report.tail_bound,
        kappa=res.report.kappa,
        verdict="PASS" if passed else "FAIL",
    )
    if write:
        csv_path, json_path = _paths(cfg, "stationary", out_dir)
        d = y0.shape[-1]
        header = ["path_id"] + [f"Y_{i + 1}" for i in range(d)]
        rows = [[str(pid)] + [_num(v) for v in y0[p]] for p, pid in enumerate(res.path_ids)]
        _write_csv(csv_path, header, rows)
        _write_json(json_path, summary)
    return (EXIT_OK if passed else EXIT_FAIL), summary, moments


def cmd_bounds(cfg, workers=None, write=True, out_dir="."):
    summary = _provenance(cfg, "bounds")
    code = EXIT_OK
    try:
        ledger = condition_m_ledger(cfg.drift, cfg.split)
        summary["ledger"] = ledger.as_dict()
        summary["cutoff_N"] = choose_cutoff_N(ledger, cfg.drift)
        summary["violation"] = None
    except ConditionMViolation as exc:
        summary["ledger"] = None
        summary["violation"] = exc.inequality
        summary["detail"] = str(exc)
        code = EXIT_FAIL
    try:
        summary["kappa"] = contraction_constant(cfg.split, cfg.drift)
    except MissingGradBound:
        summary["kappa"] = None
    if cfg.drift.condition_m is not None:
        try:
            check_condition_m(cfg.drift, cfg.split)
            summary["condition_m_spot_check"] = "PASS"
        except ConditionMViolation as exc:
            summary["condition_m_spot_check"] = str(exc)
            code = EXIT_FAIL
    summary["verdict"] = "PASS" if code == EXIT_OK else "FAIL"
    if write:
        _, json_path = _paths(cfg, "bounds", out_dir)
        _write_json(json_path, summary)
    return code, summary, None


def _set_dotted(raw, path, value):
    node = raw
    *head, last = path.split(".")
    for k in head:
        node = node.setdefault(k, {})
    node[last] = value


def cmd_sweep(cfg, workers, write=True, out_dir="."):
    sweep = cfg.sweep
    if sweep is None:
        raise RPSDEError("the sweep command needs a [sweep] table")
    sub = sweep.get("command", "solve")
    param = sweep["parameter"]
    rows, runs = [], []
    worst = EXIT_OK
    for value in sweep["values"]:
        raw = copy.deepcopy(cfg.raw)
        raw.pop("sweep")
        _set_dotted(raw, param, value)
        child = _build(raw, _Collector(_line_map(cfg.text)), cfg.text)
        code, summary, _ = COMMAND_FUNCS[sub](child, workers, write=False)
        worst = max(worst, code)
        rows.append({
            "parameter": param,
            "value": value,
            "verdict": summary["verdict"],
            "config_hash": child.config_hash,
            "dt": child.solver.dt,
            "T_h": child.solver.T_h,
            "iterations": summary.get("report", {}).get("iterations"),
            "kappa": summary.get("kappa"),
            "tail_total": summary["tail_bound"]["total"],
            "semiflow_max": summary.get("semiflow_max"),
            "periodicity_max": summary.get("periodicity_max"),
        })
        runs.append(summary)
    summary = _provenance(cfg, "sweep")
    summary.update(sub_command=sub, parameter=param, rows=rows,
                   verdict="PASS" if worst == EXIT_OK else "FAIL")
    if write:
        csv_path, json_path = _paths(cfg, "sweep", out_dir)
        header = list(rows[0])
        _write_csv(csv_path, header, [[_cell(r[k]) for k in header] for r in rows])
        _write_json(json_path, summary)
    return worst, summary, rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return json.dumps(_clean(v)) if isinstance(v, (list, dict)) else str(v)


COMMAND_FUNCS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "stationary": cmd_stationary,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
}


def run(command, cfg, out_dir=".", workers=None, figures=False):
    """Run one command; returns ``(exit_code, summary)``."""
    os.makedirs(out_dir, exist_ok=True)
    code, summary, payload = COMMAND_FUNCS[command](cfg, workers, write=True, out_dir=out_dir)
    if figures or cfg.output["figures"]:
        from . import plotting
        plotting.render(command, out_dir, *_paths(cfg, command, out_dir))
    return code, summary


def build_parser():
    p = argparse.ArgumentParser(prog="rpsde", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--seed", type=int, help="override monte_carlo.master_seed")
    p.add_argument("--paths", type=int, help="override monte_carlo.n_paths")
    p.add_argument("--out-dir", default=".", help="directory for CSV/JSON outputs")
    p.add_argument("--workers", type=int, help="worker processes (default: $RPSDE_WORKERS or 1)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures next to the outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["monte_carlo.master_seed"] = args.seed
    if args.paths is not None:
        overrides["monte_carlo.n_paths"] = args.paths
    try:
        cfg = load_config(args.config, overrides)
        code, summary = run(args.command, cfg, args.out_dir, args.workers, args.figures)
    except RPSDEError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{args.command}: {summary['verdict']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
