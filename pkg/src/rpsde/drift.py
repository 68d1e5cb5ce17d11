"""Drift families F(t, u), the radial cutoff and the Condition (M) bounds ledger."""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConditionMViolation, UnknownFamily

__all__ = [
    "ConditionM",
    "DriftSpec",
    "CutoffDrift",
    "BoundsLedger",
    "eval_F",
    "eval_gradF",
    "radial_clamp",
    "cutoff",
    "condition_m_ledger",
    "choose_cutoff_N",
    "check_condition_p",
    "check_grad_bound",
    "check_condition_m",
]

FAMILIES = ("zero", "constant", "sinusoidal_forcing", "affine", "dissipative_poly", "table")


@dataclass(frozen=True)
class ConditionM:
    """Declared one-sided growth constants.

    For x in E^s and y in E^u::

        (x, P+ F(s, x + y))  <= L1 |x|^2 + L2 |y|^2 + A1
        (y, -P- F(s, x + y)) <= L3 |x|^2 + L4 |y|^2 + B1
    """

    L1: float
    L2: float
    L3: float
    L4: float
    A1: float = 0.0
    B1: float = 0.0


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """A drift family with its parameters and declared bounds.

    ``period`` is ``inf`` for autonomous drifts.  ``sup_norm`` and
    ``grad_sup`` are ``None`` when the family is unbounded.
    """

    family: str
    dim: int
    params: dict = field(default_factory=dict, repr=False)
    period: float = math.inf
    sup_norm: float = None
    grad_sup: float = None
    condition_m: ConditionM = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnknownFamily(f"unknown drift family {self.family!r}; known: {', '.join(FAMILIES)}")

    @property
    def autonomous(self):
        return not math.isfinite(self.period)

    @property
    def state_independent(self):
        return self.family in ("zero", "constant", "sinusoidal_forcing", "table")

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, dim, condition_m=None):
        return cls("zero", dim, {}, math.inf, 0.0, 0.0, condition_m)

    @classmethod
    def constant(cls, c, condition_m=None):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls("constant", c.size, {"c": c}, math.inf, float(np.linalg.norm(c)), 0.0, condition_m)

    @classmethod
    def sinusoidal_forcing(cls, amplitude, period, dim=None, condition_m=None):
        """``F(t, u) = amplitude * sin(2 pi t / period)``; a scalar amplitude acts along e_1."""
        amp = np.asarray(amplitude, dtype=float)
        if amp.ndim == 0:
            dim = 1 if dim is None else dim
            vec = np.zeros(dim)
            vec[0] = float(amp)
            amp = vec
        return cls(
            "sinusoidal_forcing", amp.size, {"amplitude": amp}, float(period),
            float(np.linalg.norm(amp)), 0.0, condition_m,
        )

    @classmethod
    def affine(cls, K, c=None, condition_m=None):
        """``F(t, u) = K u + c``."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        c = np.zeros(K.shape[0]) if c is None else np.atleast_1d(np.asarray(c, dtype=float))
        return cls(
            "affine", K.shape[0], {"K": K, "c": c}, math.inf,
            None if np.any(K) else float(np.linalg.norm(c)),
            float(np.linalg.norm(K, 2)), condition_m,
        )

    @classmethod
    def dissipative_poly(cls, linear, cubic, offset=None, condition_m=None):
        """``F_i(u) = (K u)_i + cubic_i * u_i**3 + offset_i``.

        Dissipation means ``cubic_i < 0`` on stable coordinates and
        ``cubic_i > 0`` on unstable ones; ``u - u^3`` is ``K=1, cubic=-1``.
        """
        K = np.atleast_2d(np.asarray(linear, dtype=float))
        cubic = np.atleast_1d(np.asarray(cubic, dtype=float))
        d = K.shape[0]
        offset = np.zeros(d) if offset is None else np.atleast_1d(np.asarray(offset, dtype=float))
        bounded = not np.any(cubic) and not np.any(K)
        return cls(
            "dissipative_poly", d, {"K": K, "cubic": cubic, "offset": offset}, math.inf,
            float(np.linalg.norm(offset)) if bounded else None,
            None if np.any(cubic) else float(np.linalg.norm(K, 2)),
            condition_m,
        )

    @classmethod
    def table(cls, times, values, period=None, condition_m=None):
        """State-independent forcing, piecewise-linear in ``t`` through ``values``."""
        times = np.asarray(times, dtype=float)
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] != times.shape[0]:
            values = values.T
        if period is not None:
            if abs(times[-1] - times[0] - period) > 1e-12 * max(1.0, period):
                raise ValueError("a periodic table must span exactly one period")
            if not np.allclose(values[0], values[-1], rtol=1e-12, atol=1e-15):
                raise ValueError("a periodic table must repeat its first row at the end")
        return cls(
            "table", values.shape[1], {"times": times, "values": values},
            math.inf if period is None else float(period),
            float(np.linalg.norm(values, axis=1).max()), 0.0, condition_m,
        )

    # -- evaluation ---------------------------------------------------------

    def __call__(self, t, u):
        """Vectorized ``F(t, u)``: ``u`` has shape ``(..., d)``, ``t`` broadcasts against ``u[..., 0]``."""
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, u.shape[:-1]) + (self.dim,)
        fam, p = self.family, self.params
        if fam == "zero":
            return np.zeros(shape)
        if fam == "constant":
            return np.broadcast_to(p["c"], shape).copy()
        if fam == "sinusoidal_forcing":
            s = np.sin(2 * np.pi * np.mod(t, self.period) / self.period)
            return np.broadcast_to(s[..., None] * p["amplitude"], shape).copy()
        if fam == "affine":
            return np.broadcast_to(u @ p["K"].T + p["c"], shape).copy()
        if fam == "dissipative_poly":
            return np.broadcast_to(u @ p["K"].T + p["cubic"] * u**3 + p["offset"], shape).copy()
        times, values = p["times"], p["values"]
        if math.isfinite(self.period):
            t = times[0] + np.mod(t - times[0], self.period)
        cols = [np.interp(t, times, values[:, i]) for i in range(self.dim)]
        return np.broadcast_to(np.stack(cols, -1), shape).copy()

    def jacobian(self, t, u):
        """Analytic ``dF/du``, shape ``(..., d, d)``."""
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, u.shape[:-1]) + (self.dim, self.dim)
        fam, p = self.family, self.params
        if fam == "affine":
            return np.broadcast_to(p["K"], shape).copy()
        if fam == "dissipative_poly":
            diag = 3.0 * p["cubic"] * u**2
            jac = p["K"] + diag[..., :, None] * np.eye(self.dim)
            return np.broadcast_to(jac, shape).copy()
        return np.zeros(shape)


def eval_F(spec, t, u):
    return spec(t, u)


def eval_gradF(spec, t, u):
    return spec.jacobian(t, u)


def radial_clamp(v, N):
    """``v * min(|v|, N) / |v|`` along the last axis; zero vectors pass through."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    N = np.asarray(N, dtype=float)
    if N.ndim:
        N = N.reshape(N.shape + (1,) * (v.ndim - N.ndim))
    scale = np.where(norm > N, N / np.where(norm > 0, norm, 1.0), 1.0)
    return v * scale


@dataclass(frozen=True, eq=False)
class CutoffDrift:
    """``F`` with its stable and unstable arguments clamped to radius ``N``.

    ``shift`` (optional, same shape as ``u``) is added after clamping; the
    solver passes Y1 there, which realizes the shifted drift
    ``F*(s, x, y) = F(s, x + Y1+, y + Y1-)`` clamped in ``(x, y)``.
    """

    base: object
    split: object
    N: object

    @property
    def dim(self):
        return self.base.dim

    @property
    def period(self):
        return self.base.period

    def clamp(self, u):
        x = u @ self.split.p_plus.T
        y = u @ self.split.p_minus.T
        return radial_clamp(x, self.N) + radial_clamp(y, self.N)

    def __call__(self, t, u, shift=None):
        v = self.clamp(np.asarray(u, dtype=float))
        if shift is not None:
            v = v + shift
        return self.base(t, v)

    def sup_on_ball(self):
        """Declared sup norm of the base drift if any; the clamp only helps."""
        return self.base.sup_norm


def cutoff(spec, split, N):
    if np.any(np.asarray(N) <= 0):
        raise ValueError("cutoff radius must be positive")
    return CutoffDrift(spec, split, N)


@dataclass(frozen=True)
class BoundsLedger:
    """Derived constants of the coupled a priori bound on the cut-off solution."""

    mu_m: float
    mu_m1: float
    L1: float
    A1: float
    B1: float
    L1s: float
    L2s: float
    L3s: float
    L4s: float
    lam: float
    alpha: float
    gamma: float
    M_const: float
    ratio: float
    ratio_alt: float
    zplus_sq_bound: float
    zminus_sq_bound: float

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def condition_m_ledger(cond, split):
    """Compute and check every constant of the bound; raises :class:`ConditionMViolation`."""
    if isinstance(cond, DriftSpec):
        if cond.condition_m is None:
            raise ConditionMViolation("condition_m declared", "drift has no Condition (M) constants")
        cond = cond.condition_m
    if split.mu_m is None or split.mu_m1 is None:
        raise ConditionMViolation(
            "both E^s and E^u nontrivial", f"spectrum {split.eigenvalues.tolist()}"
        )
    mu_p, mu_n = split.mu_m1, split.mu_m
    L1, L2, L3, L4 = cond.L1, cond.L2, cond.L3, cond.L4
    if min(L1, L2, L3, L4) <= 0:
        raise ConditionMViolation("L_i > 0", f"L = {(L1, L2, L3, L4)}")
    if cond.A1 < 0 or cond.B1 < 0:
        raise ConditionMViolation("A1, B1 >= 0")

    L1s = 2 * L1
    L2s = max(L2, L2 * L2 / L1)
    L3s = max(L3, L3 * L3 / L4)
    L4s = 2 * L4
    if not L1s < mu_p:
        raise ConditionMViolation("L1* < mu_{m+1}", f"{L1s} >= {mu_p}")
    if not L4s < -mu_n:
        raise ConditionMViolation("L4* < -mu_m", f"{L4s} >= {-mu_n}")
    gap_s = mu_p - L1s
    gap_u = -(mu_n + L4s)
    if not L2s * L3s <= 0.5 * (gap_s + gap_u) * min(gap_s, gap_u):
        raise ConditionMViolation(
            "L2* L3* <= (mu_{m+1} - mu_m - L1* - L4*) min{...} / 2",
            f"{L2s * L3s} > {0.5 * (gap_s + gap_u) * min(gap_s, gap_u)}",
        )

    lam = 2 * L2s * L3s / (gap_s + gap_u)
    alpha = max(2 * gap_s, 2 * gap_u)
    gamma = min(2 * gap_s, 2 * gap_u)
    M_const = cond.A1 / gap_s + L2s * cond.B1 / (gap_s * gap_u)
    ratio = 2 * lam / gamma
    ratio_alt = 8 * L2s * L3s / ((alpha + gamma) * gamma)
    if not ratio < 1:
        raise ConditionMViolation("2 lambda / gamma < 1", f"ratio = {ratio}")
    if abs(ratio - ratio_alt) > 1e-12 * max(abs(ratio), 1e-300):
        raise ConditionMViolation("ratio formulas agree", f"{ratio} vs {ratio_alt}")
    zplus = 2 * M_const / (1 - ratio)
    zminus = (L3s * zplus + cond.B1) / gap_u
    return BoundsLedger(
        mu_n, mu_p, L1, cond.A1, cond.B1, L1s, L2s, L3s, L4s, lam, alpha, gamma,
        M_const, ratio, ratio_alt, zplus, zminus,
    )


def choose_cutoff_N(ledger, spec=None, margin=0.5, floor=1.0):
    """Radius large enough that the clamp never acts on the solution.

    ``max(sqrt(A1 / (2 L1)), (1 + margin) sqrt(z+ bound), (1 + margin) sqrt(z- bound))``;
    ``floor`` is used only when every term vanishes (A1 = B1 = 0).
    """
    n = max(
        math.sqrt(ledger.A1 / (2 * ledger.L1)),
        (1 + margin) * math.sqrt(ledger.zplus_sq_bound),
        (1 + margin) * math.sqrt(ledger.zminus_sq_bound),
    )
    return n if n > 0 else floor


# -- spot checks of declared properties ---------------------------------------


def check_condition_p(spec, times, n_states=20, seed=0, rtol=1e-12):
    """``F(t + period, u) == F(t, u)`` on the given times and random states."""
    if spec.autonomous:
        return True
    rng = np.random.default_rng(seed)
    u = rng.normal(scale=2.0, size=(n_states, 1, spec.dim))
    t = np.asarray(times, dtype=float)[None, :]
    a = spec(t, u)
    b = spec(t + spec.period, u)
    return bool(np.all(np.abs(a - b) <= rtol * (1 + np.abs(a))))


def check_grad_bound(spec, n=100, seed=0, h=1e-6):
    """Finite-difference Jacobian norms never exceed ``grad_sup * (1 + 1e-3)``."""
    if spec.grad_sup is None:
        return True
    rng = np.random.default_rng(seed)
    period = spec.period if math.isfinite(spec.period) else 10.0
    for _ in range(n):
        t = rng.uniform(0, period)
        u = rng.normal(scale=3.0, size=spec.dim)
        jac = np.empty((spec.dim, spec.dim))
        for j in range(spec.dim):
            e = np.zeros(spec.dim)
            e[j] = h
            jac[:, j] = (spec(t, u + e) - spec(t, u - e)) / (2 * h)
        if np.linalg.norm(jac, 2) > spec.grad_sup * (1 + 1e-3) + 1e-9:
            return False
    return True


def check_condition_m(spec, split, n=1000, seed=0, radii=(1e-2, 1e2)):
    """Sample the two inequalities; raises :class:`ConditionMViolation` on the first failure.

    Points are drawn at log-uniform radii in each subspace so both the small
    and the large-state regimes get probed.
    """
    cond = spec.condition_m
    if cond is None:
        raise ConditionMViolation("condition_m declared")
    rng = np.random.default_rng(seed)
    period = spec.period if math.isfinite(spec.period) else 10.0
    lo, hi = np.log(radii[0]), np.log(radii[1])
    g = rng.normal(size=(n, 2, spec.dim))
    x = g[:, 0] @ split.p_plus.T
    y = g[:, 1] @ split.p_minus.T
    x *= (np.exp(rng.uniform(lo, hi, n)) / np.maximum(np.linalg.norm(x, axis=1), 1e-300))[:, None]
    y *= (np.exp(rng.uniform(lo, hi, n)) / np.maximum(np.linalg.norm(y, axis=1), 1e-300))[:, None]
    s = rng.uniform(0, period, n)
    f = spec(s, x + y)
    x2 = np.sum(x * x, axis=1)
    y2 = np.sum(y * y, axis=1)
    lhs1 = np.sum(x * (f @ split.p_plus.T), axis=1)
    rhs1 = cond.L1 * x2 + cond.L2 * y2 + cond.A1
    lhs2 = np.sum(y * (-(f @ split.p_minus.T)), axis=1)
    rhs2 = cond.L3 * x2 + cond.L4 * y2 + cond.B1
    slack = 1e-12 * (1 + np.abs(rhs1))
    bad = np.nonzero(lhs1 > rhs1 + slack)[0]
    if bad.size:
        i = bad[0]
        raise ConditionMViolation(
            "(x, P+F) <= L1 x^2 + L2 y^2 + A1", f"at s={s[i]:.4g}: {lhs1[i]:.6g} > {rhs1[i]:.6g}"
        )
    bad = np.nonzero(lhs2 > rhs2 + 1e-12 * (1 + np.abs(rhs2)))[0]
    if bad.size:
        i = bad[0]
        raise ConditionMViolation(
            "(y, -P-F) <= L3 x^2 + L4 y^2 + B1", f"at s={s[i]:.4g}: {lhs2[i]:.6g} > {rhs2[i]:.6g}"
        )
    return True
