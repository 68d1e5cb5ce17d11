"""Forward SDE integration and the identity checks for solved trajectories.

The integrator here is deliberately built from ``A`` itself (scipy's matrix
exponential and the block-matrix trick for the step kernel), never from the
eigen-decomposition the solver uses, so agreement between the two is a real
cross-check.
"""
from dataclasses import dataclass, field, asdict
import math

import numpy as np
from scipy.linalg import expm

from .convolution import stationary_covariance_oracle
from .errors import NotAutonomous, OffGrid, WindowTooSmall
from .spectral import decompose
from .solver import solve
from .stats import aggregate_moments
from .wiener import lattice_index, shift

__all__ = [
    "IdentityReport",
    "step_operators",
    "integrate_forward",
    "forward_flow",
    "check_random_periodicity",
    "check_stationary",
    "stationary_oracle",
    "compare_moments",
    "aggregate_moments",
]


@dataclass
class IdentityReport:
    semiflow_defect: list
    periodicity_defect: list
    semiflow_rms: float
    periodicity_rms: float
    dt: float
    semiflow_tol: float = None
    periodicity_tol: float = None
    passed: bool = None
    times: np.ndarray = field(default=None, repr=False)
    semiflow_by_t: np.ndarray = field(default=None, repr=False)
    periodicity_by_t: np.ndarray = field(default=None, repr=False)

    def verdict(self):
        checks = []
        if self.semiflow_tol is not None:
            checks.append(max(self.semiflow_defect) <= self.semiflow_tol)
        if self.periodicity_tol is not None and self.periodicity_defect:
            checks.append(max(self.periodicity_defect) <= self.periodicity_tol)
        self.passed = all(checks) if checks else None
        return self.passed

    def as_dict(self):
        d = asdict(self)
        for k in ("times", "semiflow_by_t", "periodicity_by_t"):
            d.pop(k)
        return d


def step_operators(a, dt):
    """``(e^{-A dt}, int_0^dt e^{-A r} dr)`` from one exponential of a block matrix."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a.shape[0]
    blk = np.zeros((2 * d, 2 * d))
    blk[:d, :d] = -a
    blk[:d, d:] = np.eye(d)
    e = expm(blk * dt)
    return e[:d, :d], e[:d, d:]


def forward_flow(a, drift, b0, k0, increments, x0, dt):
    """Exponential-Euler runs started at lattice nodes ``k0 + j``.

    ``increments`` has shape ``(S, n_steps, M)``: run ``j`` consumes
    ``increments[j]`` in order.  ``x0`` is ``(S, d)``.  Returns the states
    after each step, shape ``(S, n_steps + 1, d)``.
    """
    e, k = step_operators(a, dt)
    n_steps = increments.shape[1]
    starts = np.asarray(k0)
    out = np.empty((x0.shape[0], n_steps + 1, x0.shape[1]))
    u = np.array(x0, dtype=float)
    out[:, 0] = u
    for m in range(n_steps):
        t = (starts + m) * dt
        noise = np.einsum("sij,sj->si", b0(t), increments[:, m]) if not b0.is_constant \
            else increments[:, m] @ b0.data["B"].T
        u = u @ e.T + drift(t, u) @ k.T + noise @ e.T
        out[:, m + 1] = u
    return out


def integrate_forward(split, drift, b0, path, s, x, t):
    """The discrete semiflow ``u(t, s, x, W)``, driven by the path's own increments."""
    dt = path.grid.dt
    ks = lattice_index(s, dt)
    kt = lattice_index(t, dt)
    if kt < ks:
        raise OffGrid(f"forward integration needs s <= t, got s={s}, t={t}")
    g = path.grid
    if ks < g.k0 or kt > g.k0 + g.n:
        raise WindowTooSmall(f"[{s}, {t}] outside the path window [{g.t_start}, {g.t_end}]")
    inc = path.window(ks, kt)[None]
    x0 = np.atleast_2d(np.asarray(x, dtype=float))
    return forward_flow(split.matrix, drift, b0, np.array([ks]), inc, x0, dt)[0, -1]


def _semiflow_defects(split, drift, b0, path, y, tau, t_check, stride=1):
    """``|u(t + tau, t, Y(t)) - Y(t + tau)|`` for every checked node ``t``."""
    g = y.grid
    dt = g.dt
    n_tau = lattice_index(tau, dt)
    n_chk = lattice_index(t_check, dt)
    j0 = g.node(0.0)
    starts = np.arange(j0, j0 + n_chk + 1, stride)
    if starts[-1] + n_tau > g.n:
        raise WindowTooSmall("solution does not extend a full period past T_check")
    kabs = g.k0 + starts
    inc = np.stack([path.window(k, k + n_tau) for k in kabs])
    ends = forward_flow(split.matrix, drift, b0, kabs, inc, y.values[starts], dt)[:, -1]
    defect = np.linalg.norm(ends - y.values[starts + n_tau], axis=-1)
    return g.times[starts], defect


def check_random_periodicity(y, split, drift, b0, path, config, stride=1,
                             semiflow_tol=None, periodicity_tol=None, resolve=True):
    """Check both halves of ``u(t+tau, t, Y(t)) = Y(t+tau) = Y(t, theta_tau W)``.

    ``y`` is the solved trajectory on ``config.eval_grid`` for ``path``.  The
    right-hand identity re-solves on the shifted path rather than reindexing
    ``y``.
    """
    tau, t_check, dt = config.tau, config.T_check, config.dt
    times, semi = _semiflow_defects(split, drift, b0, path, y, tau, t_check, stride)
    period = np.array([])
    if resolve:
        _, y_shift, _ = solve(config, split, drift, b0, shift(path, tau))
        n_tau = lattice_index(tau, dt)
        j0 = y.grid.node(0.0)
        idx = np.arange(j0, j0 + lattice_index(t_check, dt) + 1, stride)
        period = np.linalg.norm(y.values[idx + n_tau] - y_shift.values[idx], axis=-1)
    rep = IdentityReport(
        semiflow_defect=[float(semi.max())],
        periodicity_defect=[float(period.max())] if period.size else [],
        semiflow_rms=float(semi.max()),
        periodicity_rms=float(period.max()) if period.size else float("nan"),
        dt=dt,
        semiflow_tol=semiflow_tol,
        periodicity_tol=periodicity_tol,
        times=times,
        semiflow_by_t=semi[None],
        periodicity_by_t=period[None] if period.size else None,
    )
    rep.verdict()
    return rep


def merge_reports(reports):
    """Combine per-path reports: per-path sups kept, rms taken over paths."""
    semi = [r.semiflow_defect[0] for r in reports]
    per = [r.periodicity_defect[0] for r in reports if r.periodicity_defect]
    first = reports[0]
    out = IdentityReport(
        semiflow_defect=semi,
        periodicity_defect=per,
        semiflow_rms=float(np.sqrt(np.mean(np.square(semi)))),
        periodicity_rms=float(np.sqrt(np.mean(np.square(per)))) if per else float("nan"),
        dt=first.dt,
        semiflow_tol=first.semiflow_tol,
        periodicity_tol=first.periodicity_tol,
        times=first.times,
        semiflow_by_t=np.concatenate([r.semiflow_by_t for r in reports]),
        periodicity_by_t=np.concatenate([r.periodicity_by_t for r in reports]) if per else None,
    )
    out.verdict()
    return out


def check_stationary(y, split, drift, b0, path, probe_times, tol=None):
    """``|u(t, 0, Y(0)) - Y(t)|`` at each probe time; ``Y(t)`` realizes ``Y(theta_t W)``.

    Returns an :class:`IdentityReport` whose ``semiflow_by_t`` holds the
    defect at each probe.
    """
    if not drift.autonomous:
        raise NotAutonomous("the stationary check needs an autonomous drift")
    if not b0.is_constant:
        raise NotAutonomous("the stationary check needs a constant B0")
    g = y.grid
    dt = g.dt
    j0 = g.node(0.0)
    probes = sorted(float(t) for t in probe_times)
    n_max = lattice_index(probes[-1], dt)
    inc = path.window(g.k0 + j0, g.k0 + j0 + n_max)[None]
    traj = forward_flow(split.matrix, drift, b0, np.array([g.k0 + j0]), inc, y.values[j0][None], dt)[0]
    ks = np.array([lattice_index(t, dt) for t in probes])
    defect = np.linalg.norm(traj[ks] - y.values[j0 + ks], axis=-1)
    rep = IdentityReport(
        semiflow_defect=[float(defect.max())],
        periodicity_defect=[],
        semiflow_rms=float(defect.max()),
        periodicity_rms=float("nan"),
        dt=dt,
        semiflow_tol=tol,
        times=np.array(probes),
        semiflow_by_t=defect[None],
    )
    rep.verdict()
    return rep


def stationary_oracle(split, drift, b0):
    """Closed-form mean and covariance of the stationary solution.

    Available for ``F = 0``, constant ``F`` and affine ``F = K u + c`` with
    symmetric ``K``: the solution is then the stationary solution of the linear
    equation with matrix ``A - K``, whose splitting gives the covariance.
    """
    if drift.family == "zero":
        return np.zeros(split.dim), stationary_covariance_oracle(split, b0)
    if drift.family == "constant":
        return np.linalg.solve(split.matrix, drift.params["c"]), stationary_covariance_oracle(split, b0)
    if drift.family == "affine":
        shifted = decompose(split.matrix - drift.params["K"])
        mean = np.linalg.solve(shifted.matrix, drift.params["c"])
        return mean, stationary_covariance_oracle(shifted, b0)
    return None


def compare_moments(samples, oracle_mean, oracle_cov, n_se=3.0, bias=0.0):
    """Check MC mean and covariance against an oracle within ``n_se`` standard errors plus ``bias``."""
    mom = aggregate_moments(samples)
    dmean = np.abs(mom["mean"] - oracle_mean)
    dcov = np.abs(mom["cov"] - oracle_cov)
    ok_mean = bool(np.all(dmean <= n_se * mom["se_mean"] + bias))
    ok_cov = bool(np.all(dcov <= n_se * mom["se_cov"] + bias))
    return {
        "mean": mom["mean"].tolist(), "cov": mom["cov"].tolist(),
        "se_mean": mom["se_mean"].tolist(), "se_cov": mom["se_cov"].tolist(),
        "oracle_mean": np.asarray(oracle_mean).tolist(), "oracle_cov": np.asarray(oracle_cov).tolist(),
        "n_se": n_se, "bias_allowance": bias, "n_paths": mom["n"],
        "mean_ok": ok_mean, "cov_ok": ok_cov, "passed": ok_mean and ok_cov,
    }
