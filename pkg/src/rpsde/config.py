"""Experiment configuration: TOML text in, validated problem objects out.

Grammar (all tables optional except ``[problem]``, ``[problem.drift]``,
``[problem.diffusion]`` and ``[numerics]``)::

    [problem]             A (row-major nested list), tau, noise_dim
    [problem.drift]       family + family parameters, sup_norm, grad_sup
    [problem.drift.condition_m]   L1 L2 L3 L4 A1 B1
    [problem.diffusion]   family + family parameters
    [numerics]            dt T_h T_check tol max_iters cutoff_mode cutoff_N eps_hyp
                          batch_size semiflow_tol periodicity_tol stationary_tol
                          check_stride probe_times moment_n_se moment_bias
    [monte_carlo]         n_paths master_seed
    [output]              csv_path json_path which_series figures
    [sweep]               parameter values command

Every violation found is reported at once, each with the line of the
offending key.
"""
from dataclasses import dataclass, field
import copy
import difflib
import hashlib
import json
import math
import re

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .convolution import DiffusionSpec, default_horizon
from .drift import ConditionM, DriftSpec
from .errors import ParseError, RPSDEError, ValidationError
from .solver import SolverConfig
from .spectral import decompose
from .wiener import lattice_index

__all__ = ["ExperimentConfig", "parse_config", "load_config", "SCHEMA"]

DRIFT_PARAMS = {
    "zero": set(),
    "constant": {"c"},
    "sinusoidal_forcing": {"amplitude", "period"},
    "affine": {"K", "c"},
    "dissipative_poly": {"linear", "cubic", "offset"},
    "table": {"times", "values", "periodic"},
}
DIFFUSION_PARAMS = {
    "constant": {"B"},
    "fourier": {"mean", "cos", "sin"},
    "table": {"times", "values", "periodic"},
}

SCHEMA = {
    "problem": {"A", "tau", "noise_dim", "drift", "diffusion"},
    "problem.drift": {"family", "sup_norm", "grad_sup", "condition_m"}
    | set().union(*DRIFT_PARAMS.values()),
    "problem.drift.condition_m": {"L1", "L2", "L3", "L4", "A1", "B1"},
    "problem.diffusion": {"family"} | set().union(*DIFFUSION_PARAMS.values()),
    "numerics": {
        "dt", "T_h", "T_check", "tol", "max_iters", "cutoff_mode", "cutoff_N", "eps_hyp",
        "batch_size", "semiflow_tol", "periodicity_tol", "stationary_tol", "check_stride",
        "probe_times", "moment_n_se", "moment_bias", "resolve_periodicity",
    },
    "monte_carlo": {"n_paths", "master_seed"},
    "output": {"csv_path", "json_path", "which_series", "figures"},
    "sweep": {"parameter", "values", "command"},
}
TABLES = {"problem", "problem.drift", "problem.drift.condition_m", "problem.diffusion"}
ROOT = {"problem", "numerics", "monte_carlo", "output", "sweep"}
SERIES = ("Y", "Z", "Y1")

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-\s]+?)\s*\]")
_KEY = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*=")


def _line_map(text):
    """Map dotted key paths to their 1-based line numbers."""
    lines = {}
    table = ""
    for no, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            table = m.group(1).replace(" ", "")
            lines.setdefault(table, no)
            continue
        m = _KEY.match(line)
        if m:
            key = f"{table}.{m.group(1)}" if table else m.group(1)
            lines.setdefault(key, no)
    return lines


@dataclass
class ExperimentConfig:
    raw: dict
    split: object
    drift: DriftSpec
    diffusion: DiffusionSpec
    solver: SolverConfig
    numerics: dict
    output: dict
    sweep: dict = None
    text: str = field(default="", repr=False)

    @property
    def config_hash(self):
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class _Collector:
    def __init__(self, lines):
        self.lines = lines
        self.errors = []

    def add(self, key, msg):
        line = self.lines.get(key)
        if line is None and "." in key:
            line = self.lines.get(key.rsplit(".", 1)[0])
        self.errors.append((line, f"{key}: {msg}" if key else msg))


def _check_keys(raw, col):
    def walk(node, prefix):
        for key, val in node.items():
            path = f"{prefix}.{key}" if prefix else key
            allowed = SCHEMA.get(prefix, ROOT) if prefix else ROOT
            if key not in allowed:
                hint = difflib.get_close_matches(key, sorted(allowed), n=1)
                msg = f"unknown key {key!r}" + (f" (did you mean {hint[0]!r}?)" if hint else "")
                where = f"[{prefix}]" if prefix else "top level"
                col.errors.append((col.lines.get(path), f"{msg} in {where}"))
                continue
            if isinstance(val, dict):
                if path not in SCHEMA:
                    col.add(path, "expected a value, got a table")
                    continue
                walk(val, path)

    walk(raw, "")


def _matrix(val, key, col, shape=None):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        col.add(key, "expected a numeric (nested) array")
        return None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if shape is not None and arr.shape != shape:
        col.add(key, f"expected shape {shape}, got {arr.shape}")
        return None
    if not np.all(np.isfinite(arr)):
        col.add(key, "entries must be finite")
        return None
    return arr


def _positive(val, key, col, integer=False):
    ok = isinstance(val, int) if integer else isinstance(val, (int, float))
    if isinstance(val, bool) or not ok or not val > 0:
        col.add(key, f"must be a positive {'integer' if integer else 'number'}")
        return None
    return val


def _build_drift(spec, d, tau, col):
    fam = spec.get("family")
    if fam not in DRIFT_PARAMS:
        hint = difflib.get_close_matches(str(fam), list(DRIFT_PARAMS), n=1)
        col.add("problem.drift.family", f"unknown family {fam!r}" + (f" (did you mean {hint[0]!r}?)" if hint else ""))
        return None
    extra = set(spec) - DRIFT_PARAMS[fam] - {"family", "sup_norm", "grad_sup", "condition_m"}
    for k in sorted(extra):
        col.add(f"problem.drift.{k}", f"not a parameter of family {fam!r}")
    cm = spec.get("condition_m")
    cond = None
    if cm is not None:
        missing = {"L1", "L2", "L3", "L4"} - set(cm)
        if missing:
            col.add("problem.drift.condition_m", f"missing {sorted(missing)}")
        else:
            cond = ConditionM(**{k: float(v) for k, v in cm.items()})
    key = "problem.drift."
    try:
        if fam == "zero":
            drift = DriftSpec.zero(d, cond)
        elif fam == "constant":
            drift = DriftSpec.constant(_matrix(spec["c"], key + "c", col).ravel(), cond)
        elif fam == "sinusoidal_forcing":
            amp = np.asarray(spec["amplitude"], dtype=float)
            period = float(spec.get("period", tau))
            drift = DriftSpec.sinusoidal_forcing(amp, period, dim=d, condition_m=cond)
        elif fam == "affine":
            K = _matrix(spec["K"], key + "K", col, (d, d))
            c = spec.get("c")
            drift = DriftSpec.affine(K, None if c is None else np.asarray(c, dtype=float), cond)
        elif fam == "dissipative_poly":
            K = _matrix(spec.get("linear", np.zeros((d, d)).tolist()), key + "linear", col, (d, d))
            drift = DriftSpec.dissipative_poly(K, spec["cubic"], spec.get("offset"), cond)
        else:
            period = tau if spec.get("periodic", True) else None
            drift = DriftSpec.table(spec["times"], spec["values"], period, cond)
    except KeyError as exc:
        col.add(key + exc.args[0], f"required by family {fam!r}")
        return None
    except (TypeError, ValueError, AttributeError) as exc:
        col.add(key + "family", str(exc))
        return None
    if drift.dim != d:
        col.add(key + "family", f"drift dimension {drift.dim} does not match A ({d})")
        return None
    if math.isfinite(drift.period):
        try:
            lattice_index(tau, drift.period)
        except RPSDEError:
            col.add(key + "period", f"drift period {drift.period} must divide tau={tau}")
    overrides = {}
    for k in ("sup_norm", "grad_sup"):
        if k in spec:
            overrides[k] = float(spec[k])
    if overrides:
        drift = DriftSpec(drift.family, drift.dim, drift.params, drift.period,
                          overrides.get("sup_norm", drift.sup_norm),
                          overrides.get("grad_sup", drift.grad_sup), drift.condition_m)
    return drift


def _build_diffusion(spec, d, tau, col):
    fam = spec.get("family")
    if fam not in DIFFUSION_PARAMS:
        col.add("problem.diffusion.family", f"unknown family {fam!r}")
        return None
    extra = set(spec) - DIFFUSION_PARAMS[fam] - {"family"}
    for k in sorted(extra):
        col.add(f"problem.diffusion.{k}", f"not a parameter of family {fam!r}")
    key = "problem.diffusion."
    try:
        if fam == "constant":
            b = _matrix(spec["B"], key + "B", col)
            b0 = DiffusionSpec.constant(b) if b is not None else None
        elif fam == "fourier":
            b0 = DiffusionSpec.fourier(spec["mean"], spec.get("cos", []), spec.get("sin", []), tau)
        else:
            period = tau if spec.get("periodic", True) else None
            b0 = DiffusionSpec.table(spec["times"], spec["values"], period)
    except KeyError as exc:
        col.add(key + exc.args[0], f"required by family {fam!r}")
        return None
    except (TypeError, ValueError) as exc:
        col.add(key + "family", str(exc))
        return None
    if b0 is not None and b0.shape[0] != d:
        col.add(key + "family", f"B0 has {b0.shape[0]} rows, A is {d}x{d}")
        return None
    return b0


def _commensurate(a, b):
    try:
        lattice_index(a, b)
        return True
    except RPSDEError:
        return False


def parse_config(text, overrides=None):
    """Parse and validate; raises :class:`ParseError` or :class:`ValidationError`."""
    lines = _line_map(text)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError([(int(m.group(1)) if m else None, f"TOML syntax: {exc}")]) from None
    raw = copy.deepcopy(raw)
    for path, value in (overrides or {}).items():
        node = raw
        *head, last = path.split(".")
        for k in head:
            node = node.setdefault(k, {})
        node[last] = value

    col = _Collector(lines)
    _check_keys(raw, col)
    if col.errors:
        raise ParseError(col.errors)
    return _build(raw, col, text)


def _build(raw, col, text=""):
    for table in ("problem", "numerics"):
        if table not in raw:
            col.errors.append((None, f"missing required table [{table}]"))
    prob = raw.get("problem", {})
    for sub in ("drift", "diffusion"):
        if sub not in prob:
            col.errors.append((col.lines.get("problem"), f"missing required table [problem.{sub}]"))
    if col.errors:
        raise ValidationError(col.errors)

    num = raw["numerics"]
    mc = raw.get("monte_carlo", {})
    out = raw.get("output", {})

    A = _matrix(prob.get("A"), "problem.A", col) if "A" in prob else None
    if A is None and "A" not in prob:
        col.add("problem", "A is required")
    tau = _positive(prob.get("tau"), "problem.tau", col)
    dt = _positive(num.get("dt"), "numerics.dt", col)
    split = None
    if A is not None:
        try:
            split = decompose(A, float(num.get("eps_hyp", 1e-8)))
        except RPSDEError as exc:
            col.add("problem.A", str(exc))
    d = A.shape[0] if A is not None else None

    if tau and dt and not _commensurate(tau, dt):
        col.add("numerics.dt", "dt must divide tau")
    T_check = num.get("T_check", 2 * tau if tau else None)
    if tau and dt and T_check is not None:
        if _positive(T_check, "numerics.T_check", col) and not _commensurate(T_check, dt):
            col.add("numerics.T_check", "dt must divide T_check")
    T_h = num.get("T_h")
    if T_h is not None and tau and dt:
        if _positive(T_h, "numerics.T_h", col):
            if not _commensurate(T_h, tau):
                col.add("numerics.T_h", "tau must divide T_h")
            if not _commensurate(T_h, dt):
                col.add("numerics.T_h", "dt must divide T_h")

    drift = b0 = None
    if d is not None and tau:
        drift = _build_drift(prob["drift"], d, tau, col)
        b0 = _build_diffusion(prob["diffusion"], d, tau, col)
    if b0 is not None and "noise_dim" in prob and prob["noise_dim"] != b0.shape[1]:
        col.add("problem.noise_dim", f"noise_dim={prob['noise_dim']} but B0 has {b0.shape[1]} columns")

    mode = num.get("cutoff_mode", "off")
    if mode not in ("off", "fixed", "adaptive"):
        col.add("numerics.cutoff_mode", "must be 'off', 'fixed' or 'adaptive'")
    if mode == "fixed" and "cutoff_N" not in num:
        col.add("numerics.cutoff_mode", "cutoff_mode='fixed' needs cutoff_N")
    if mode == "adaptive" and drift is not None and drift.condition_m is None and "cutoff_N" not in num:
        col.add("numerics.cutoff_mode", "adaptive cutoff needs [problem.drift.condition_m] or cutoff_N")
    tol = num.get("tol", 1e-8)
    _positive(tol, "numerics.tol", col)
    n_paths = mc.get("n_paths", 1)
    _positive(n_paths, "monte_carlo.n_paths", col, integer=True)
    seed = mc.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        col.add("monte_carlo.master_seed", "must be an unsigned 64-bit integer")
    series = out.get("which_series", list(SERIES))
    if not isinstance(series, list) or not set(series) <= set(SERIES):
        col.add("output.which_series", f"must be a list drawn from {list(SERIES)}")
    sweep = raw.get("sweep")
    if sweep is not None:
        if sweep.get("command", "solve") not in ("solve", "verify", "stationary"):
            col.add("sweep.command", "must be 'solve', 'verify' or 'stationary'")
        if not isinstance(sweep.get("values"), list) or not sweep.get("values"):
            col.add("sweep.values", "must be a nonempty list")
        if "parameter" not in sweep:
            col.add("sweep", "parameter is required")
    if col.errors:
        raise ValidationError(col.errors)

    if T_h is None:
        T_h = default_horizon(split, multiple_of=tau)
    try:
        solver = SolverConfig(
            dt=float(dt), tau=float(tau), T_h=float(T_h), T_check=float(T_check),
            n_paths=int(n_paths), master_seed=int(seed), tol=float(tol),
            max_iters=int(num.get("max_iters", 200)), cutoff_mode=mode,
            cutoff_N=num.get("cutoff_N"), batch_size=int(num.get("batch_size", 64)),
        )
    except (ValueError, RPSDEError) as exc:
        raise ValidationError([(col.lines.get("numerics"), str(exc))]) from None

    numerics = {
        "eps_hyp": float(num.get("eps_hyp", 1e-8)),
        "semiflow_tol": float(num.get("semiflow_tol", 1e-4)),
        "periodicity_tol": float(num.get("periodicity_tol", 1e-6)),
        "stationary_tol": float(num.get("stationary_tol", 1e-4)),
        "check_stride": int(num.get("check_stride", 1)),
        "probe_times": [float(t) for t in num.get("probe_times", [tau, 2 * tau])],
        "moment_n_se": float(num.get("moment_n_se", 3.0)),
        "moment_bias": float(num.get("moment_bias", 0.0)),
        "resolve_periodicity": bool(num.get("resolve_periodicity", True)),
    }
    output = {
        "csv_path": out.get("csv_path"),
        "json_path": out.get("json_path"),
        "which_series": list(series),
        "figures": bool(out.get("figures", False)),
    }
    return ExperimentConfig(raw, split, drift, b0, solver, numerics, output, sweep, text)


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)
