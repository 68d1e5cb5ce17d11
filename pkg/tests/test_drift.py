from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpsde.drift import (
    ConditionM, DriftSpec, check_condition_m, check_condition_p, check_grad_bound,
    choose_cutoff_N, condition_m_ledger, cutoff, radial_clamp,
)
from rpsde.errors import ConditionMViolation, UnknownFamily
from rpsde.spectral import decompose


def _fraction_ledger(mu_p, mu_n, L1, L2, L3, L4, A1, B1):
    """Independent exact-arithmetic route to the bound constants."""
    L1s, L4s = 2 * L1, 2 * L4
    L2s, L3s = max(L2, L2 * L2 / L1), max(L3, L3 * L3 / L4)
    gs, gu = mu_p - L1s, -mu_n - L4s
    lam = 2 * L2s * L3s / (gs + gu)
    gamma = min(2 * gs, 2 * gu)
    M = A1 / gs + L2s * B1 / (gs * gu)
    ratio = 2 * lam / gamma
    zp = 2 * M / (1 - ratio)
    zm = (L3s * zp + B1) / gu
    return dict(lam=lam, gamma=gamma, M_const=M, ratio=ratio, zplus_sq_bound=zp, zminus_sq_bound=zm)


# frozen from _fraction_ledger on the worked example
WORKED = dict(lam=Fr(1, 200), gamma=Fr(3), M_const=Fr(52, 75), ratio=Fr(1, 300),
              zplus_sq_bound=Fr(32, 23), zminus_sq_bound=Fr(262, 575))
COND = ConditionM(0.25, 0.1, 0.1, 0.25, 1.0, 1.0)


def test_fraction_oracle_is_frozen_correctly():
    got = _fraction_ledger(Fr(2), Fr(-3), Fr(1, 4), Fr(1, 10), Fr(1, 10), Fr(1, 4), Fr(1), Fr(1))
    for k, v in WORKED.items():
        assert float(got[k]) == pytest.approx(float(v), rel=1e-15)


def test_worked_ledger(split2):
    led = condition_m_ledger(COND, split2)
    for k, v in WORKED.items():
        assert getattr(led, k) == pytest.approx(float(v), rel=1e-13)
    assert abs(led.ratio - led.ratio_alt) <= 1e-12
    assert led.alpha == 5.0


@settings(max_examples=60, deadline=None)
@given(
    st.fractions(Fr(1, 100), Fr(1, 2)), st.fractions(Fr(1, 100), Fr(1, 5)),
    st.fractions(Fr(1, 100), Fr(1, 5)), st.fractions(Fr(1, 100), Fr(1, 2)),
    st.fractions(0, 3), st.fractions(0, 3),
)
def test_ledger_matches_exact_arithmetic(L1, L2, L3, L4, A1, B1):
    split = decompose(np.diag([2.0, -3.0]))
    exact = _fraction_ledger(Fr(2), Fr(-3), L1, L2, L3, L4, A1, B1)
    led = condition_m_ledger(ConditionM(*(float(x) for x in (L1, L2, L3, L4, A1, B1))), split)
    for k, v in exact.items():
        assert getattr(led, k) == pytest.approx(float(v), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("cond, name", [
    (ConditionM(1.5, 0.1, 0.1, 0.25), "L1* < mu_{m+1}"),
    (ConditionM(0.25, 0.1, 0.1, 1.6), "L4* < -mu_m"),
    (ConditionM(0.25, 2.0, 2.0, 0.25), "L2* L3*"),
])
def test_named_violations(split2, cond, name):
    with pytest.raises(ConditionMViolation) as exc:
        condition_m_ledger(cond, split2)
    assert exc.value.inequality.startswith(name)


def test_needs_both_subspaces():
    with pytest.raises(ConditionMViolation):
        condition_m_ledger(COND, decompose(np.diag([1.0, 2.0])))


def test_choose_cutoff_N(split2):
    led = condition_m_ledger(COND, split2)
    n = choose_cutoff_N(led)
    assert n == pytest.approx(1.5 * np.sqrt(32 / 23), rel=1e-12)
    assert n >= np.sqrt(led.zminus_sq_bound)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=4), st.floats(0.01, 100))
def test_radial_clamp(v, n):
    v = np.array(v)
    out = radial_clamp(v, n)
    assert np.linalg.norm(out) <= min(np.linalg.norm(v), n) * (1 + 1e-12) + 1e-300
    if np.linalg.norm(v) <= n:
        np.testing.assert_array_equal(out, v)
    else:
        np.testing.assert_allclose(out / np.linalg.norm(out), v / np.linalg.norm(v), atol=1e-12)


def test_cutoff_is_bounded(split2):
    spec = DriftSpec.dissipative_poly(np.zeros((2, 2)), [-1.0, 1.0])
    f = cutoff(spec, split2, 2.0)
    u = np.random.default_rng(0).normal(scale=100, size=(500, 2))
    assert np.abs(f(0.0, u)).max() <= 2.0**3 + 1e-9
    small = np.array([[0.3, -0.2]])
    np.testing.assert_array_equal(f(0.0, small), spec(0.0, small))


def test_families():
    s = DriftSpec.sinusoidal_forcing(1.0, 1.0)
    assert s(0.25, np.zeros(1))[0] == pytest.approx(1.0)
    assert check_condition_p(s, np.linspace(0, 1, 17))
    a = DriftSpec.affine(0.1 * np.eye(2))
    assert a.grad_sup == pytest.approx(0.1) and a.autonomous
    assert check_grad_bound(a)
    tab = DriftSpec.table([0.0, 0.5, 1.0], [[0.0], [1.0], [0.0]], period=1.0)
    assert tab(1.25, np.zeros(1))[0] == pytest.approx(0.5)
    with pytest.raises(UnknownFamily):
        DriftSpec("quartic", 1)


def test_jacobian_matches_finite_differences():
    spec = DriftSpec.dissipative_poly([[0.0, 0.1], [0.1, 0.0]], [-1.0, 1.0], [0.5, -0.5])
    u = np.array([0.7, -1.3])
    h = 1e-6
    fd = np.stack([(spec(0.0, u + h * e) - spec(0.0, u - h * e)) / (2 * h) for e in np.eye(2)], 1)
    np.testing.assert_allclose(spec.jacobian(0.0, u), fd, atol=1e-8)


def test_condition_m_spot_check(split2):
    good = DriftSpec.dissipative_poly([[0.0, 0.1], [0.1, 0.0]], [-1.0, 1.0], [0.5, -0.5], COND)
    assert check_condition_m(good, split2)
    # anti-dissipative cubic breaks the first inequality at large |x|
    bad = DriftSpec.dissipative_poly(np.zeros((2, 2)), [1.0, 1.0], None, COND)
    with pytest.raises(ConditionMViolation):
        check_condition_m(bad, split2)
