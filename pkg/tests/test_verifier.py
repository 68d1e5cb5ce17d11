import numpy as np
import pytest
from scipy.linalg import expm

import rpsde.solver as solver_mod
from rpsde.convolution import DiffusionSpec, forward_window
from rpsde.drift import DriftSpec
from rpsde.errors import NotAutonomous
from rpsde.solver import SolverConfig, solve
from rpsde.stats import aggregate_moments
from rpsde.verifier import (
    check_random_periodicity, check_stationary, compare_moments, integrate_forward,
    stationary_oracle, step_operators,
)
from rpsde.wiener import sample

from conftest import random_symmetric


def test_step_operators_closed_form():
    e, k = step_operators(np.diag([2.0, -3.0]), 0.1)
    np.testing.assert_allclose(np.diag(e), np.exp([-0.2, 0.3]), rtol=1e-14)
    np.testing.assert_allclose(np.diag(k), [-np.expm1(-0.2) / 2, np.expm1(0.3) / 3], rtol=1e-13)


def test_integrate_forward_linear_homogeneous():
    a = random_symmetric(np.random.default_rng(0), 3)
    from rpsde.spectral import decompose

    split = decompose(a)
    cfg = SolverConfig(dt=0.01, tau=1.0, T_h=2.0)
    path = sample(cfg.path_grid, 3, 0, 0)
    x = np.array([1.0, -0.5, 0.25])
    got = integrate_forward(split, DriftSpec.zero(3), DiffusionSpec.constant(np.zeros((3, 3))), path, 0.0, x, 1.0)
    np.testing.assert_allclose(got, expm(-a) @ x, rtol=1e-11)


def _problem(dt, b0=None, t_h=12.0, seed=0):
    from rpsde.spectral import decompose

    split = decompose(np.array([[1.0]]))
    cfg = SolverConfig(dt=dt, tau=1.0, T_h=t_h)
    drift = DriftSpec.sinusoidal_forcing(1.0, 1.0)
    b0 = b0 or DiffusionSpec.constant([[1.0]])
    path = sample(cfg.path_grid, 1, seed, 0)
    _, y, _ = solve(cfg, split, drift, b0, path)
    return split, cfg, drift, b0, path, y


def test_zero_drift_periodicity_exact(split2, fourier_b0):
    cfg = SolverConfig(dt=0.01, tau=1.0, T_h=8.0)
    path = sample(cfg.path_grid, 2, 1, 0)
    drift = DriftSpec.zero(2)
    _, y, _ = solve(cfg, split2, drift, fourier_b0, path)
    rep = check_random_periodicity(y, split2, drift, fourier_b0, path, cfg, semiflow_tol=1e-4, periodicity_tol=1e-9)
    assert rep.periodicity_defect[0] <= 1e-9 * (1 + np.abs(y.values).max())
    assert rep.passed


def test_sinusoidal_identities_hold():
    split, cfg, drift, b0, path, y = _problem(2e-3)
    rep = check_random_periodicity(y, split, drift, b0, path, cfg, semiflow_tol=1e-4, periodicity_tol=1e-9)
    assert rep.passed
    assert rep.dt == 2e-3


def test_negative_control_fails():
    ramp = DiffusionSpec.table([-40.0, 40.0], [[[0.2]], [[3.0]]])
    split, cfg, drift, b0, path, y = _problem(1e-2, ramp)
    rep = check_random_periodicity(y, split, drift, b0, path, cfg, semiflow_tol=1e-4, periodicity_tol=1e-4)
    assert rep.periodicity_defect[0] > 1e-2
    assert rep.passed is False


def test_mutated_kernel_breaks_semiflow(monkeypatch):
    # a 1% error in the solver's stable kernel must be caught by the independent integrator
    split, cfg, drift, b0, path, _ = _problem(1e-2, t_h=8.0)
    monkeypatch.setattr(solver_mod, "forward_window", lambda x, a, h: 1.01 * forward_window(x, a, h))
    _, y, _ = solve(cfg, split, drift, b0, path)
    rep = check_random_periodicity(y, split, drift, b0, path, cfg, semiflow_tol=1e-4, resolve=False)
    assert rep.semiflow_defect[0] > 1e-3
    assert rep.passed is False


def test_stationary_identity_and_oracle(split2):
    cfg = SolverConfig(dt=0.01, tau=1.0, T_h=12.0)
    b0 = DiffusionSpec.constant(np.eye(2))
    drift = DriftSpec.zero(2)
    path = sample(cfg.path_grid, 2, 0, 0)
    _, y, _ = solve(cfg, split2, drift, b0, path)
    rep = check_stationary(y, split2, drift, b0, path, [0.5, 1.0, 2.0], tol=1e-4)
    assert rep.passed
    mean, cov = stationary_oracle(split2, drift, b0)
    np.testing.assert_allclose(cov, np.diag([0.25, 1 / 6]))


def test_stationary_requires_autonomy(split1, sin_drift):
    cfg = SolverConfig(dt=0.01, tau=1.0, T_h=4.0)
    b0 = DiffusionSpec.constant([[1.0]])
    path = sample(cfg.path_grid, 1, 0, 0)
    _, y, _ = solve(cfg, split1, sin_drift, b0, path)
    with pytest.raises(NotAutonomous):
        check_stationary(y, split1, sin_drift, b0, path, [1.0])


def test_affine_oracle(split1):
    mean, cov = stationary_oracle(split1, DriftSpec.affine([[0.1]], [0.9]), DiffusionSpec.constant([[1.0]]))
    assert mean[0] == pytest.approx(1.0)
    assert cov[0, 0] == pytest.approx(1 / 1.8)


def test_aggregate_moments_examples():
    m = aggregate_moments(np.ones((5, 2)))
    np.testing.assert_array_equal(m["cov"], 0)
    two = aggregate_moments(np.array([[1.0], [3.0]]))
    assert two["cov"][0, 0] == pytest.approx(2.0)  # (1-2)^2 + (3-2)^2 over n-1
    x = np.random.default_rng(0).normal(size=(10_000, 1))
    m = aggregate_moments(x)
    assert abs(m["mean"][0]) < 5 * m["se_mean"][0]


def test_compare_moments_flags_wrong_oracle():
    x = np.random.default_rng(1).normal(size=(4000, 1))
    assert compare_moments(x, [0.0], [[1.0]])["passed"]
    assert not compare_moments(x, [0.0], [[1.5]])["passed"]
