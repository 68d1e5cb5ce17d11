"""Picard iteration for the drift part Z of the random periodic solution.

Y = Z + Y1, where Z is a fixed point of

    M(z)(t) = int_{-inf}^t T_{t-s} P+ F(s, z(s) + Y1(s)) ds
              - int_t^{inf} T_{t-s} P- F(s, z(s) + Y1(s)) ds.

The drift is frozen at the left node of each step and the exponential kernel
is integrated exactly over the step, so the quadrature is exact for
piecewise-constant integrands.  Integrals are truncated at the horizon ``T_h``
and clipped at the edges of the solve grid, which extends ``T_h`` beyond the
evaluation window on both sides.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import logging
import math
import os

import numpy as np

from .convolution import (
    GridFunction, backward_window, forward_window, y1_tail_bound, y1_values,
)
from .drift import CutoffDrift, choose_cutoff_N, condition_m_ledger, radial_clamp
from .errors import MissingGradBound, WindowTooSmall
from .stats import aggregate_moments
from .wiener import TimeGrid, lattice_index, sample

__all__ = [
    "SolverConfig",
    "SolveReport",
    "EnsembleResult",
    "apply_M",
    "contraction_constant",
    "drift_tail_bound",
    "solve",
    "solve_paths",
    "solve_ensemble",
    "worker_count",
]

log = logging.getLogger(__name__)

CUTOFF_MODES = ("off", "fixed", "adaptive")
CUTOFF_SLACK = 0.9
WORKERS_ENV = "RPSDE_WORKERS"


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    tau: float
    T_h: float
    T_check: float = None
    n_paths: int = 1
    master_seed: int = 0
    tol: float = 1e-8
    max_iters: int = 200
    cutoff_mode: str = "off"
    cutoff_N: float = None
    growth: float = 2.0
    max_doublings: int = 10
    batch_size: int = 64

    def __post_init__(self):
        if self.T_check is None:
            object.__setattr__(self, "T_check", 2 * self.tau)
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.cutoff_mode not in CUTOFF_MODES:
            raise ValueError(f"cutoff_mode must be one of {CUTOFF_MODES}")
        if self.cutoff_mode == "fixed" and not self.cutoff_N:
            raise ValueError("cutoff_mode='fixed' needs cutoff_N")
        lattice_index(self.tau, self.dt, "tau")
        lattice_index(self.T_check, self.dt, "T_check")
        if self.T_h <= 0:
            raise ValueError("T_h must be positive")
        lattice_index(self.T_h, self.tau, "T_h (in units of tau)")

    @property
    def h(self):
        """Horizon in steps."""
        return lattice_index(self.T_h, self.dt)

    @property
    def eval_grid(self):
        return TimeGrid.span(0.0, self.T_check + self.tau, self.dt)

    @property
    def solve_grid(self):
        e = self.eval_grid
        return TimeGrid(e.k0 - self.h, e.n + 2 * self.h, self.dt)

    @property
    def path_grid(self):
        """Window every path must cover: solve grid plus one horizon each side, plus a
        period on the right so the shifted re-solve stays on the path."""
        s = self.solve_grid
        tau_steps = lattice_index(self.tau, self.dt)
        return TimeGrid(s.k0 - self.h, s.n + 2 * self.h + tau_steps, self.dt)


@dataclass
class SolveReport:
    iterations: int
    residual_trace: list
    kappa: float
    contraction_satisfied: bool
    tail_bound: dict
    cutoff_trace: list
    converged: bool
    n_paths: int = 1
    path_iterations: list = field(default_factory=list)
    dt: float = None
    T_h: float = None

    def as_dict(self):
        return asdict(self)


@dataclass
class EnsembleResult:
    grid: TimeGrid
    path_ids: list
    y: np.ndarray
    z: np.ndarray
    y1: np.ndarray
    moments: dict
    report: SolveReport


def contraction_constant(split, drift):
    """``8 C^2 |grad F|^2 (1/mu_{m+1}^2 + 1/mu_m^2)``, omitting absent subspaces."""
    if drift.grad_sup is None:
        raise MissingGradBound(f"drift family {drift.family!r} declares no gradient bound")
    s = 0.0
    if split.mu_m1 is not None:
        s += 1.0 / split.mu_m1**2
    if split.mu_m is not None:
        s += 1.0 / split.mu_m**2
    return 8.0 * split.decay_C**2 * drift.grad_sup**2 * s


def drift_tail_bound(split, f_sup, horizon):
    """Bound on the drift integrals beyond the horizon, summed over subspaces."""
    b = 0.0
    if split.mu_m1 is not None:
        b += math.exp(-0.5 * split.mu_m1 * horizon) / split.mu_m1
    if split.mu_m is not None:
        b += math.exp(0.5 * split.mu_m * horizon) / -split.mu_m
    return 2.0 * split.decay_C * f_sup * b


def _drift_args(z, y1, split, N):
    if N is None:
        return z + y1
    x = radial_clamp(z @ split.p_plus.T, N)
    y = radial_clamp(z @ split.p_minus.T, N)
    return x + y + y1


def _apply_M_values(z, y1, times, split, drift, dt, h, N=None):
    """M(z) at every node; ``z`` and ``y1`` have shape ``(..., n + 1, d)``."""
    f = drift(times, _drift_args(z, y1, split, N))
    ft = split.to_eigen(f)[..., :-1, :]
    out = np.empty(z.shape)
    for i, mu in enumerate(split.eigenvalues):
        x = ft[..., i]
        if mu > 0:
            a = math.exp(-mu * dt)
            weight = -math.expm1(-mu * dt) / mu
            out[..., i] = weight * forward_window(x, a, h)
        else:
            c = math.exp(mu * dt)
            weight = math.expm1(mu * dt) / mu
            out[..., i] = -weight * backward_window(x, c, h)
    return split.from_eigen(out)


def apply_M(z, y1, split, drift, T_h, N=None):
    """One application of the fixed-point map on ``z``'s grid.

    Nodes closer than ``T_h`` to either end of the grid see integration
    windows clipped at the grid edge.
    """
    if z.grid != y1.grid:
        raise WindowTooSmall("z and Y1 must live on the same grid")
    g = z.grid
    h = lattice_index(T_h, g.dt, "T_h")
    if g.n < 2 * h:
        raise WindowTooSmall(f"grid of {g.n} steps has no node with a full 2*{h}-step window")
    vals = _apply_M_values(z.values, y1.values, g.times, split, drift, g.dt, h, N)
    return GridFunction(g, vals, z.path_ids)


def _picard(z0, y1, times, split, drift, dt, h, tol, max_iters, N):
    """Successive substitution per path.  A path stops at the first iterate
    whose sup-norm increment is <= tol; its result never depends on the
    other paths in the batch."""
    z = z0.copy()
    p = z.shape[0]
    iters = np.full(p, max_iters)
    converged = np.zeros(p, dtype=bool)
    sumsq = []
    path_res = [[] for _ in range(p)]
    active = np.arange(p)
    for it in range(1, max_iters + 1):
        n_act = None if N is None else N[active]
        znew = _apply_M_values(z[active], y1[active], times, split, drift, dt, h, n_act)
        d2 = np.sum((znew - z[active]) ** 2, axis=-1)
        sumsq.append(d2.sum(axis=0))
        res = np.sqrt(d2.max(axis=-1))
        for j, pid in enumerate(active):
            path_res[pid].append(float(res[j]))
        z[active] = znew
        done = res <= tol
        iters[active[done]] = it
        converged[active[done]] = True
        active = active[~done]
        if active.size == 0:
            break
    return z, iters, converged, sumsq, path_res


def _cutoff_seed(config, split, drift):
    if config.cutoff_mode == "off":
        return None
    if config.cutoff_N:
        return float(config.cutoff_N)
    return choose_cutoff_N(condition_m_ledger(drift, split), drift)


def solve_paths(config, split, drift, b0, paths):
    """Solve on a batch of paths sharing one grid.  Returns arrays and raw diagnostics."""
    dt, h = config.dt, config.h
    sg = config.solve_grid
    k_lo, k_hi = sg.k0 - h, sg.k0 + sg.n + h
    for pth in paths:
        g = pth.grid
        if k_lo < g.k0 or k_hi > g.k0 + g.n:
            raise WindowTooSmall(
                f"path {pth.path_id} covers [{g.t_start}, {g.t_end}], solve needs "
                f"[{k_lo * dt}, {k_hi * dt}]"
            )
    inc = np.stack([pth.window(k_lo, k_hi) for pth in paths])
    y1 = y1_values(split, b0, k_lo, inc, h, sg.n + 1, dt)
    times = sg.times
    p = len(paths)

    n0 = _cutoff_seed(config, split, drift)
    N = None if n0 is None else np.full(p, n0)
    z, iters, conv, sumsq, path_res = _picard(
        np.zeros_like(y1), y1, times, split, drift, dt, h, config.tol, config.max_iters, N
    )
    cutoff_trace = []
    if config.cutoff_mode == "adaptive":
        for rnd in range(config.max_doublings + 1):
            sp = np.linalg.norm(z @ split.p_plus.T, axis=-1).max(axis=-1)
            sm = np.linalg.norm(z @ split.p_minus.T, axis=-1).max(axis=-1)
            bad = (sp >= CUTOFF_SLACK * N) | (sm >= CUTOFF_SLACK * N)
            cutoff_trace.append({
                "round": rnd, "N": N.tolist(), "sup_zplus": sp.tolist(),
                "sup_zminus": sm.tolist(), "resolved": np.nonzero(bad)[0].tolist(),
            })
            if not bad.any() or rnd == config.max_doublings:
                if bad.any():
                    conv[bad] = False
                break
            idx = np.nonzero(bad)[0]
            N[idx] *= config.growth
            zb, ib, cb, sb, rb = _picard(
                np.zeros_like(y1[idx]), y1[idx], times, split, drift, dt, h,
                config.tol, config.max_iters, N[idx],
            )
            z[idx], iters[idx], conv[idx] = zb, ib, cb
            for j, pid in enumerate(idx):
                path_res[pid] = path_res[pid] + rb[j]
            sumsq = _merge_sumsq(sumsq, sb)

    f_final = drift(times, _drift_args(z, y1, split, N))
    f_obs = float(np.linalg.norm(f_final, axis=-1).max())
    return {
        "z": z, "y1": y1, "iters": iters, "converged": conv, "sumsq": sumsq,
        "path_res": path_res, "cutoff_trace": cutoff_trace, "f_obs": f_obs,
        "N": None if N is None else N.tolist(),
    }


def _merge_sumsq(a, b):
    n = max(len(a), len(b))
    out = []
    for i in range(n):
        x = a[i] if i < len(a) else 0.0
        y = b[i] if i < len(b) else 0.0
        out.append(x + y)
    return out


def _report(config, split, drift, b0, raw_list, n_paths, warn=True):
    sumsq = []
    for raw in raw_list:
        sumsq = _merge_sumsq(sumsq, raw["sumsq"])
    trace = [float(np.sqrt(s / n_paths).max()) for s in sumsq]
    iters = np.concatenate([r["iters"] for r in raw_list])
    conv = np.concatenate([r["converged"] for r in raw_list])
    try:
        kappa = contraction_constant(split, drift)
    except MissingGradBound:
        kappa = None
    if warn and kappa is None:
        log.warning("no gradient bound declared: Picard convergence is not guaranteed")
    elif warn and kappa >= 1:
        log.warning("contraction constant %.4g >= 1: convergence is not guaranteed", kappa)

    if drift.sup_norm is not None:
        f_sup, source = drift.sup_norm, "declared"
    else:
        f_sup, source = max(r["f_obs"] for r in raw_list), "observed"
    noise_tail = y1_tail_bound(split, b0, config.T_h)
    drift_tail = drift_tail_bound(split, f_sup, config.T_h)
    cutoff_trace = []
    for raw in raw_list:
        cutoff_trace.extend(raw["cutoff_trace"])
    return SolveReport(
        iterations=int(iters.max()),
        residual_trace=trace,
        kappa=kappa,
        contraction_satisfied=bool(kappa is not None and kappa < 1),
        tail_bound={
            "noise": noise_tail, "drift": drift_tail, "total": noise_tail + drift_tail,
            "drift_sup": f_sup, "drift_sup_source": source,
        },
        cutoff_trace=cutoff_trace,
        converged=bool(conv.all()),
        n_paths=n_paths,
        path_iterations=iters.tolist(),
        dt=config.dt,
        T_h=config.T_h,
    )


def solve(config, split, drift, b0, path):
    """Solve on one path (or shifted view).  Returns ``(Z, Y, report)`` on the eval grid."""
    raw = solve_paths(config, split, drift, b0, [path])
    report = _report(config, split, drift, b0, [raw], 1, warn=False)
    if not report.converged:
        log.warning("path %s did not converge in %d iterations", path.path_id, config.max_iters)
    lo, n = config.h, config.eval_grid.n + 1
    eg = config.eval_grid
    z = raw["z"][0, lo : lo + n]
    y = z + raw["y1"][0, lo : lo + n]
    return GridFunction(eg, z, (path.path_id,)), GridFunction(eg, y, (path.path_id,)), report


def worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return 1


def _run_batch(args):
    config, split, drift, b0, noise_dim, ids = args
    pg = config.path_grid
    paths = [sample(pg, noise_dim, config.master_seed, pid) for pid in ids]
    raw = solve_paths(config, split, drift, b0, paths)
    lo, n = config.h, config.eval_grid.n + 1
    raw["z"] = raw["z"][:, lo : lo + n]
    raw["y1"] = raw["y1"][:, lo : lo + n]
    raw["ids"] = list(ids)
    return raw


def solve_ensemble(config, split, drift, b0, workers=None):
    """Solve for paths ``0 .. n_paths-1`` in fixed batches and aggregate in path order.

    Batches are defined by path id alone, so the output is the same for any
    worker count.
    """
    noise_dim = b0.shape[1]
    ids = list(range(config.n_paths))
    bs = max(1, config.batch_size)
    jobs = [(config, split, drift, b0, noise_dim, ids[i : i + bs]) for i in range(0, len(ids), bs)]
    nw = min(worker_count(workers), len(jobs))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            raws = list(ex.map(_run_batch, jobs))
    else:
        raws = [_run_batch(j) for j in jobs]
    z = np.concatenate([r["z"] for r in raws])
    y1 = np.concatenate([r["y1"] for r in raws])
    y = z + y1
    report = _report(config, split, drift, b0, raws, config.n_paths)
    return EnsembleResult(config.eval_grid, ids, y, z, y1, aggregate_moments(y), report)
