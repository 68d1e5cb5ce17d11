"""Acceptance criteria 1-9.  Each test prints one ``CRITERION n: PASS|FAIL`` line.

Tolerances and fixtures are pinned below; none of them are tuned after the
fact.  Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""
import math
import os
import time

import numpy as np
import pytest

from rpsde.cli import main as cli_main
from rpsde.convolution import (
    DiffusionSpec, malliavin_y1, stationary_covariance_oracle, y1_at, y1_grid,
    y1_periodicity_defect, y1_values,
)
from rpsde.drift import ConditionM, DriftSpec, choose_cutoff_N, condition_m_ledger
from rpsde.solver import SolverConfig, contraction_constant, solve, solve_ensemble, solve_paths
from rpsde.spectral import decompose
from rpsde.stats import aggregate_moments
from rpsde.verifier import check_random_periodicity
from rpsde.wiener import TimeGrid, WienerPath, sample

A2 = np.diag([2.0, -3.0])
MAX_WORKERS = max(os.cpu_count() or 1, 3)

# pinned tolerances
C1_REL = 1e-9
N_SE = 3.0
C3_CQ = 2 * math.pi          # |forced-mean bias| <= C_q dt, from |d/dt sin(2 pi t)| <= 2 pi
RATIO_BAND = (1.6, 2.4)
C4_C = 1.0                   # defect <= C dt
C5_KAPPA = 13 / 450
C5_KAPPA_TOL = 1e-6
C5_SLACK = 0.05
C5_MAX_ITERS = 10
C6_BIAS = 1.0                # allowance bias = C6_BIAS * dt
C7_EXPECTED = dict(lam=0.005, gamma=3.0, ratio=1 / 300, zplus_sq_bound=1.391284)
C8_REL = 1e-10


def verdict(n, ok, detail, elapsed=None, budget=None):
    if budget is not None:
        ok = ok and elapsed < budget
        detail += f"; runtime {elapsed:.1f}s (budget {budget}s)"
    print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, detail


def forced_response(t):
    w = 2 * math.pi
    return (np.sin(w * t) - w * np.cos(w * t)) / (1 + w * w)


def fourier_b0():
    rng = np.random.default_rng(2024)
    return DiffusionSpec.fourier(
        np.eye(2), rng.normal(scale=0.3, size=(3, 2, 2)), rng.normal(scale=0.3, size=(3, 2, 2)), 1.0
    )


def test_criterion_1_shift_identity():
    t0 = time.perf_counter()
    split, b0 = decompose(A2), fourier_b0()
    dt, t_h, tau = 1e-3, 10.0, 1.0
    eg = TimeGrid.span(0.0, 2.0, dt)
    worst = 0.0
    for pid in range(16):
        path = sample(TimeGrid.span(-t_h, 2.0 + tau + t_h, dt), 2, 1, pid)
        sup = np.abs(y1_grid(split, b0, path, TimeGrid.span(0.0, 3.0, dt), t_h).values).max()
        d = y1_periodicity_defect(split, b0, path, tau, eg, t_h)
        worst = max(worst, d / (C1_REL * (1 + sup)))
    verdict(1, worst <= 1.0, f"max defect / (1e-9 (1 + sup|Y1|)) = {worst:.3g} over 16 paths",
            time.perf_counter() - t0, 10)


def test_criterion_2_ou_covariance():
    t0 = time.perf_counter()
    split, b0 = decompose(A2), DiffusionSpec.constant(np.eye(2))
    dt, t_h, n_paths = 1e-3, 10.0, 10_000
    h = round(t_h / dt)
    grid = TimeGrid(-h, 2 * h, dt)
    vals = []
    for lo in range(0, n_paths, 500):
        inc = np.stack([sample(grid, 2, 0, p).increments for p in range(lo, lo + 500)])
        vals.append(y1_values(split, b0, -h, inc, h, 1, dt)[:, 0])
    mom = aggregate_moments(np.concatenate(vals))
    oracle = stationary_covariance_oracle(split, b0)
    z = np.abs(mom["cov"] - oracle) / mom["se_cov"]
    verdict(2, bool(np.all(z <= N_SE)),
            f"Var = ({mom['cov'][0, 0]:.5f}, {mom['cov'][1, 1]:.5f}), cross = {mom['cov'][0, 1]:.5f}; "
            f"|dev|/SE = {np.round(z, 2).tolist()}", time.perf_counter() - t0, 120)


def _forced_bias(dt):
    split = decompose(np.array([[1.0]]))
    cfg = SolverConfig(dt=dt, tau=1.0, T_h=12.0)
    z, _, _ = solve(cfg, split, DriftSpec.sinusoidal_forcing(1.0, 1.0),
                    DiffusionSpec.constant([[0.0]]), sample(cfg.path_grid, 1, 0, 0))
    return np.abs(z.values[:, 0] - forced_response(cfg.eval_grid.times)).max()


def test_criterion_3_forced_periodic_mean():
    t0 = time.perf_counter()
    split = decompose(np.array([[1.0]]))
    dt = 1e-3
    cfg = SolverConfig(dt=dt, tau=1.0, T_h=12.0, n_paths=4000, batch_size=100)
    res = solve_ensemble(cfg, split, DriftSpec.sinusoidal_forcing(1.0, 1.0),
                         DiffusionSpec.constant([[1.0]]), workers=MAX_WORKERS)
    t = res.grid.times
    period = t <= 1.0 + 1e-12
    dev = np.abs(res.moments["mean"][period, 0] - forced_response(t[period]))
    allow = N_SE * res.moments["se_mean"][period, 0] + C3_CQ * dt
    b1, b2 = _forced_bias(dt), _forced_bias(dt / 2)
    ratio = b1 / b2
    ok = bool(np.all(dev <= allow)) and RATIO_BAND[0] <= ratio <= RATIO_BAND[1]
    verdict(3, ok, f"max dev/allowance = {(dev / allow).max():.3f}; bias {b1:.3e} -> {b2:.3e}, ratio {ratio:.3f}",
            time.perf_counter() - t0, 180)


def _identity_defects(dt, b0, n_paths=4):
    split = decompose(np.array([[1.0]]))
    drift = DriftSpec.sinusoidal_forcing(1.0, 1.0)
    cfg = SolverConfig(dt=dt, tau=1.0, T_h=12.0)
    reports = []
    for pid in range(n_paths):
        path = sample(cfg.path_grid, 1, 0, pid)
        _, y, _ = solve(cfg, split, drift, b0, path)
        reports.append(check_random_periodicity(
            y, split, drift, b0, path, cfg, semiflow_tol=C4_C * dt, periodicity_tol=C4_C * dt))
    semi = max(r.semiflow_defect[0] for r in reports)
    per = max(r.periodicity_defect[0] for r in reports)
    return semi, per, all(r.passed for r in reports)


def test_criterion_4_semiflow_identity():
    t0 = time.perf_counter()
    b0 = DiffusionSpec.constant([[1.0]])
    s1, p1, ok1 = _identity_defects(2e-3, b0)
    s2, p2, ok2 = _identity_defects(1e-3, b0)
    ramp = DiffusionSpec.table([-40.0, 40.0], [[[0.2]], [[3.0]]])
    _, pn, okn = _identity_defects(1e-3, ramp, n_paths=1)
    rs, rp = s1 / s2, p1 / p2
    in_band = lambda r: RATIO_BAND[0] <= r <= RATIO_BAND[1]
    ok = ok1 and ok2 and in_band(rs) and in_band(rp) and not okn
    verdict(4, ok,
            f"semiflow {s1:.3e} -> {s2:.3e} (ratio {rs:.3f}); periodicity {p1:.3e} -> {p2:.3e} "
            f"(ratio {rp:.3f}); within C*dt: {ok1 and ok2}; negative control defect {pn:.3g}, "
            f"{'FAIL' if not okn else 'PASS'} as reported", time.perf_counter() - t0, 180)


def test_criterion_5_contraction():
    t0 = time.perf_counter()
    split = decompose(A2)
    drift = DriftSpec.affine(0.1 * np.eye(2))
    cfg = SolverConfig(dt=1e-3, tau=1.0, T_h=10.0, n_paths=8, tol=1e-8)
    res = solve_ensemble(cfg, split, drift, DiffusionSpec.constant(np.eye(2)))
    rep = res.report
    kappa = contraction_constant(split, drift)
    tr = np.array(rep.residual_trace)
    sq = (tr[1:] / tr[:-1]) ** 2
    ok = (abs(kappa - C5_KAPPA) <= C5_KAPPA_TOL and bool(np.all(sq <= kappa + C5_SLACK))
          and rep.converged and rep.iterations <= C5_MAX_ITERS)
    verdict(5, ok, f"kappa = {kappa:.6f}; squared ratios {np.round(sq, 4).tolist()}; "
            f"{rep.iterations} iterations", time.perf_counter() - t0, 30)


def test_criterion_6_stationary_with_drift():
    t0 = time.perf_counter()
    split = decompose(np.array([[1.0]]))
    drift = DriftSpec.affine([[0.1]])
    b0 = DiffusionSpec.constant([[1.0]])
    dt = 0.01
    cfg = SolverConfig(dt=dt, tau=1.0, T_h=20.0, n_paths=10_000, batch_size=500)
    res = solve_ensemble(cfg, split, drift, b0, workers=MAX_WORKERS)
    mom = aggregate_moments(res.y[:, res.grid.node(0.0)])
    var, se = mom["cov"][0, 0], mom["se_cov"][0, 0]
    var_ok = abs(var - 1 / 1.8) <= N_SE * se + C6_BIAS * dt

    worst, allow = 0.0, 0.0
    for pid in range(8):
        ys = []
        for tau in (1.0, 2.0):
            c = SolverConfig(dt=dt, tau=tau, T_h=20.0)
            path = sample(c.path_grid, 1, 0, pid)
            _, y, rep = solve(c, split, drift, b0, path)
            ys.append(y.values[: cfg.eval_grid.n + 1])
        worst = max(worst, np.abs(ys[0] - ys[1]).max())
        allow = cfg.tol + rep.tail_bound["total"]
    verdict(6, var_ok and worst <= allow,
            f"Var(Y) = {var:.5f} vs 1/1.8 = {1 / 1.8:.5f} (SE {se:.5f}, bias allowance {C6_BIAS * dt}); "
            f"tau=1 vs tau=2 max diff {worst:.3e} <= {allow:.3e}", time.perf_counter() - t0, 120)


def test_criterion_7_ledger_and_cutoff():
    t0 = time.perf_counter()
    split = decompose(A2)
    cond = ConditionM(0.25, 0.1, 0.1, 0.25, 1.0, 1.0)
    led = condition_m_ledger(cond, split)
    sig6 = lambda x: float(f"{x:.6g}")
    mism = {k: (getattr(led, k), v) for k, v in C7_EXPECTED.items() if sig6(getattr(led, k)) != sig6(v)}
    formulas_agree = abs(led.ratio - led.ratio_alt) <= 1e-12

    drift = DriftSpec.dissipative_poly([[0.0, 0.1], [0.1, 0.0]], [-1.0, 1.0], [0.5, -0.5], cond)
    b0 = DiffusionSpec.constant(0.1 * np.eye(2))
    n_min = choose_cutoff_N(led, drift)
    stable, n_ok = True, True
    for pid in range(4):
        cfg = SolverConfig(dt=0.01, tau=1.0, T_h=6.0, cutoff_mode="adaptive")
        path = sample(cfg.path_grid, 2, 0, pid)
        raw = solve_paths(cfg, split, drift, b0, [path])
        n_acc = raw["N"][0]
        n_ok &= n_acc >= n_min
        cfg2 = SolverConfig(dt=0.01, tau=1.0, T_h=6.0, cutoff_mode="fixed", cutoff_N=2 * n_acc)
        raw2 = solve_paths(cfg2, split, drift, b0, [path])
        stable &= bool(raw["converged"].all()) and np.abs(raw["z"] - raw2["z"]).max() <= cfg.tol
    ok = not mism and formulas_agree and stable and n_ok
    verdict(7, ok, f"ledger mismatches at 6 significant digits: "
            f"{ {k: (f'{a:.7g}', b) for k, (a, b) in mism.items()} or 'none'}; "
            f"|ratio - ratio_alt| = {abs(led.ratio - led.ratio_alt):.1e}; "
            f"doubling N stable: {stable}; accepted N >= {n_min:.4f}: {n_ok}",
            time.perf_counter() - t0, 60)


def test_criterion_8_malliavin():
    t0 = time.perf_counter()
    split, b0 = decompose(A2), fourier_b0()
    dt, t_h = 1e-3, 4.0
    path = sample(TimeGrid.span(-6.0, 6.0, dt), 2, 3, 0)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        kt = int(rng.integers(-1000, 1000))
        kr = kt
        while kr == kt:
            kr = kt + int(rng.integers(-2000, 2000))
        base, _ = y1_at(split, b0, path, kt * dt, t_h)
        fd = np.empty((2, 2))
        for j in range(2):
            inc = path.increments.copy()
            inc[kr - path.grid.k0, j] += 1.0
            bumped = WienerPath(path.grid, inc, path.master_seed, path.path_id)
            fd[:, j] = y1_at(split, b0, bumped, kt * dt, t_h)[0] - base
        exact = malliavin_y1(split, b0, kr * dt, kt * dt)
        worst = max(worst, np.abs(fd - exact).max() / np.abs(exact).max())
    verdict(8, worst <= C8_REL, f"max relative error {worst:.2e} at 100 (r, t) pairs",
            time.perf_counter() - t0, 10)


DET_CONFIG = """\
[problem]
A = [[2.0, 0.0], [0.0, -3.0]]
tau = 1.0

[problem.drift]
family = "affine"
K = [[0.1, 0.05], [0.05, -0.1]]
c = [0.3, -0.2]

[problem.diffusion]
family = "fourier"
mean = [[1.0, 0.0], [0.0, 1.0]]
cos = [[[0.2, 0.0], [0.1, 0.3]]]
sin = [[[0.0, 0.1], [0.2, 0.0]]]

[numerics]
dt = 0.01
T_h = 8.0
batch_size = 7

[monte_carlo]
n_paths = 40
master_seed = 99
"""


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "det.toml"
    cfg.write_text(DET_CONFIG)
    same = True
    for command in ("solve", "verify"):
        outs = []
        for w in (1, MAX_WORKERS):
            d = tmp_path / f"{command}_{w}"
            cli_main([command, "--config", str(cfg), "--out-dir", str(d), "--workers", str(w)])
            outs.append({f: (d / f).read_bytes() for f in sorted(os.listdir(d))})
        same &= outs[0] == outs[1] and len(outs[0]) == 2
    verdict(9, same, f"solve and verify outputs byte-identical at 1 and {MAX_WORKERS} workers",
            time.perf_counter() - t0, 60)
