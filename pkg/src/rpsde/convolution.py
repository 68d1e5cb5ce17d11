"""The stochastic convolution Y1: forward Ito sum on E^s minus backward sum on E^u.

    Y1(t) = int_{-inf}^t T_{t-s} P+ B0(s) dW(s) - int_t^inf T_{t-s} P- B0(s) dW(s)

Both integrals are truncated to a horizon ``T_h`` and evaluated as
left-endpoint sums with the exact semigroup weight ``T_{t - s_k}``.  The
omitted tails are bounded in root-mean-square by the Ito isometry.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.signal import lfilter

from .errors import HorizonOffGrid, NonConstantDiffusion, WindowTooSmall
from .wiener import TimeGrid, lattice_index

__all__ = [
    "DiffusionSpec",
    "GridFunction",
    "forward_window",
    "backward_window",
    "y1_tail_bound",
    "default_horizon",
    "y1_at",
    "y1_grid",
    "y1_values",
    "y1_periodicity_defect",
    "malliavin_y1",
    "stationary_covariance_oracle",
]


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Deterministic noise coefficient ``B0(t)``, a ``d x M`` matrix.

    Families: ``constant`` (one matrix), ``fourier`` (mean plus finitely many
    cosine/sine modes of period ``period``) and ``table`` (piecewise-linear in
    ``t`` through matrices given at ``times``; periodic when ``period`` is set).
    """

    family: str
    data: dict = field(repr=False)
    period: float = math.inf
    sup_norm: float = 0.0
    time_holder_const: float = 0.0

    @classmethod
    def constant(cls, b):
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return cls("constant", {"B": b}, math.inf, float(np.linalg.norm(b)), 0.0)

    @classmethod
    def fourier(cls, mean, cos, sin, period):
        mean = np.atleast_2d(np.asarray(mean, dtype=float))
        cos = np.asarray(cos, dtype=float).reshape((-1,) + mean.shape)
        sin = np.asarray(sin, dtype=float).reshape((-1,) + mean.shape)
        if cos.shape != sin.shape:
            raise ValueError("cos and sin coefficient stacks must have equal shape")
        mode_norms = np.linalg.norm(cos, axis=(1, 2)) + np.linalg.norm(sin, axis=(1, 2))
        sup = float(np.linalg.norm(mean) + mode_norms.sum())
        freqs = 2 * np.pi * np.arange(1, cos.shape[0] + 1) / period
        lip = float(np.sum(freqs * mode_norms))
        # |B(s1)-B(s2)| <= min(lip |ds|, 2 sup)  ==>  |.|^2 <= 2 sup lip |ds|
        return cls("fourier", {"mean": mean, "cos": cos, "sin": sin}, float(period), sup, 2 * sup * lip)

    @classmethod
    def table(cls, times, values, period=None):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if times.ndim != 1 or values.shape[0] != times.shape[0] or times.shape[0] < 2:
            raise ValueError("table needs >= 2 increasing times and one matrix per time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("table times must be strictly increasing")
        if period is not None:
            if abs(times[-1] - times[0] - period) > 1e-12 * max(1.0, period):
                raise ValueError("a periodic table must span exactly one period")
            if not np.allclose(values[0], values[-1], rtol=1e-12, atol=1e-15):
                raise ValueError("a periodic table must repeat its first value at the end")
        norms = np.linalg.norm(values, axis=(1, 2))
        slopes = np.linalg.norm(np.diff(values, axis=0), axis=(1, 2)) / np.diff(times)
        sup = float(norms.max())
        return cls(
            "table", {"times": times, "values": values},
            math.inf if period is None else float(period), sup, 2 * sup * float(slopes.max()),
        )

    @property
    def shape(self):
        if self.family == "constant":
            return self.data["B"].shape
        if self.family == "fourier":
            return self.data["mean"].shape
        return self.data["values"].shape[1:]

    @property
    def is_constant(self):
        return self.family == "constant"

    def __call__(self, t):
        """``B0`` at times ``t``; returns shape ``t.shape + (d, M)``."""
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            return np.broadcast_to(self.data["B"], t.shape + self.data["B"].shape)
        if self.family == "fourier":
            mean, cos, sin = self.data["mean"], self.data["cos"], self.data["sin"]
            k = np.arange(1, cos.shape[0] + 1)
            phase = 2 * np.pi * np.multiply.outer(np.mod(t, self.period) / self.period, k)
            return (
                mean
                + np.tensordot(np.cos(phase), cos, axes=(-1, 0))
                + np.tensordot(np.sin(phase), sin, axes=(-1, 0))
            )
        times, values = self.data["times"], self.data["values"]
        if math.isfinite(self.period):
            t = times[0] + np.mod(t - times[0], self.period)
        flat = values.reshape(values.shape[0], -1)
        out = np.stack([np.interp(t.ravel(), times, flat[:, i]) for i in range(flat.shape[1])], -1)
        return out.reshape(t.shape + values.shape[1:])


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of an ``R^d``-valued function at the nodes of ``grid``.

    ``values`` has shape ``(n + 1, d)`` for one path, or ``(P, n + 1, d)`` for
    a batch whose path ids are listed in ``path_ids``.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    path_ids: tuple = ()

    def __post_init__(self):
        if self.values.shape[-2] != self.grid.n + 1:
            raise ValueError("values do not match the grid's node count")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("grid function has non-finite entries")

    def at(self, t):
        return self.values[..., self.grid.node(t), :]

    def restrict(self, grid):
        if not self.grid.contains(grid):
            raise WindowTooSmall("restriction grid not inside the function's grid")
        lo = grid.k0 - self.grid.k0
        return GridFunction(grid, self.values[..., lo : lo + grid.n + 1, :], self.path_ids)


def forward_window(x, a, h):
    """``out[j] = sum_{k=j-h}^{j-1} a**(j-1-k) x[k]`` for ``j = 0..n`` along axis -1.

    ``x`` has ``n`` entries per row.  Windows reaching past the start are
    clipped.  Uses the running recursion ``G[j+1] = a G[j] + x[j]`` and the
    exact identity ``out[j] = G[j] - a**h G[j-h]``.
    """
    g = lfilter([1.0], [1.0, -a], x, axis=-1)
    g = np.concatenate([np.zeros(x.shape[:-1] + (1,)), g], axis=-1)
    if h < g.shape[-1]:
        g[..., h:] = g[..., h:] - a**h * g[..., :-h].copy()
    return g


def backward_window(x, c, h):
    """``out[j] = sum_{k=j}^{j+h-1} c**(k-j) x[k]`` for ``j = 0..n``; clipped at the end."""
    r = lfilter([1.0], [1.0, -c], x[..., ::-1], axis=-1)[..., ::-1]
    r = np.concatenate([r, np.zeros(x.shape[:-1] + (1,))], axis=-1)
    if h < r.shape[-1]:
        r[..., :-h] = r[..., :-h] - c**h * r[..., h:].copy()
    return r


def y1_tail_bound(split, b0, horizon):
    """RMS bound on the part of Y1 beyond the truncation horizon."""
    bound = 0.0
    if split.mu_m1 is not None:
        mu = split.mu_m1
        bound += math.exp(-0.5 * mu * horizon) * math.sqrt(2.0 / mu)
    if split.mu_m is not None:
        mu = split.mu_m
        bound += math.exp(0.5 * mu * horizon) * math.sqrt(-2.0 / mu)
    return split.decay_C * b0.sup_norm * bound


def default_horizon(split, rel_tol=1e-6, multiple_of=None):
    """Smallest horizon (rounded up to ``multiple_of``) with tail bound <= ``rel_tol * ||B0||``.

    Each subspace gets half the budget, which turns the exponential inequality
    into a closed form.
    """
    need = 0.0
    for mu in (split.mu_m1, split.mu_m):
        if mu is None:
            continue
        a = abs(mu)
        budget = 0.5 * rel_tol / split.decay_C
        need = max(need, 2.0 / a * math.log(math.sqrt(2.0 / a) / budget))
    if multiple_of:
        need = math.ceil(need / multiple_of - 1e-9) * multiple_of
    return need


def _horizon_steps(horizon, dt):
    try:
        return lattice_index(horizon, dt, "horizon")
    except Exception:
        raise HorizonOffGrid(f"horizon {horizon} is not a multiple of dt={dt}") from None


def y1_at(split, b0, path, t, horizon):
    """Y1 at one node by direct summation; returns ``(value, tail_bound)``."""
    dt = path.grid.dt
    h = _horizon_steps(horizon, dt)
    k = lattice_index(t, dt)
    g = path.grid
    if k - h < g.k0 or k + h > g.k0 + g.n:
        raise WindowTooSmall(
            f"Y1({t}) needs increments on [{t - horizon}, {t + horizon}], path covers "
            f"[{g.t_start}, {g.t_end}]"
        )
    steps = np.arange(k - h, k + h)
    s = steps * dt
    inc = path.window(k - h, k + h)
    b = np.einsum("kij,kj->ki", b0(s), inc)
    bt = split.to_eigen(b)
    mu = split.eigenvalues
    lag = (t - s)[:, None]
    fwd = (steps < k)[:, None] & split.stable[None, :]
    bwd = (steps >= k)[:, None] & ~split.stable[None, :]
    expo = np.where(fwd | bwd, -mu[None, :] * lag, -np.inf)
    signed = np.where(fwd, 1.0, -1.0) * np.exp(expo)
    value = split.from_eigen(np.sum(signed * bt, axis=0))
    return value, y1_tail_bound(split, b0, horizon)


def y1_values(split, b0, k_start, increments, h, n_nodes, dt):
    """Y1 at nodes ``k_start + h + j``, ``j < n_nodes``, from increments of steps ``k_start...``.

    ``increments`` has shape ``(..., n_steps, M)`` with
    ``n_steps == n_nodes - 1 + 2h``.  Returns ``(..., n_nodes, d)``.
    """
    n_steps = increments.shape[-2]
    if n_steps != n_nodes - 1 + 2 * h:
        raise WindowTooSmall("increment block does not match requested nodes and horizon")
    s = (k_start + np.arange(n_steps)) * dt
    if b0.is_constant:
        b = increments @ b0.data["B"].T
    else:
        b = np.einsum("kij,...kj->...ki", b0(s), increments)
    bt = split.to_eigen(b)
    out = np.empty(increments.shape[:-2] + (n_nodes, split.dim))
    for i, mu in enumerate(split.eigenvalues):
        x = bt[..., i]
        if mu > 0:
            a = math.exp(-mu * dt)
            full = a * forward_window(x, a, h)
            out[..., i] = full[..., h : h + n_nodes]
        else:
            c = math.exp(mu * dt)
            full = -backward_window(x, c, h)
            out[..., i] = full[..., h : h + n_nodes]
    return split.from_eigen(out)


def y1_grid(split, b0, path, eval_grid, horizon):
    """Y1 at every node of ``eval_grid`` using windowed exponential recursions.

    Agrees with node-wise :func:`y1_at` to rounding; ``path`` may be a single
    path or a view.
    """
    dt = path.grid.dt
    h = _horizon_steps(horizon, dt)
    k_lo = eval_grid.k0 - h
    k_hi = eval_grid.k0 + eval_grid.n + h
    g = path.grid
    if k_lo < g.k0 or k_hi > g.k0 + g.n:
        raise WindowTooSmall(
            f"Y1 on [{eval_grid.t_start}, {eval_grid.t_end}] with horizon {horizon} needs "
            f"increments on [{k_lo * dt}, {k_hi * dt}], path covers [{g.t_start}, {g.t_end}]"
        )
    inc = path.window(k_lo, k_hi)
    vals = y1_values(split, b0, k_lo, inc, h, eval_grid.n + 1, dt)
    return GridFunction(eval_grid, vals, (path.path_id,))


def y1_periodicity_defect(split, b0, path, tau, eval_grid, horizon):
    """``max_t |Y1(t + tau, W) - Y1(t, theta_tau W)|`` over ``eval_grid``.

    Both sides use the same horizon; for ``tau``-periodic ``B0`` they are the
    same finite sum after reindexing, so the defect is at rounding level.
    """
    from .wiener import shift

    dt = path.grid.dt
    lattice_index(tau, dt, "tau")
    later = TimeGrid(eval_grid.k0 + lattice_index(tau, dt), eval_grid.n, dt)
    lhs = y1_grid(split, b0, path, later, horizon).values
    rhs = y1_grid(split, b0, shift(path, tau), eval_grid, horizon).values
    return float(np.max(np.linalg.norm(lhs - rhs, axis=-1)))


def malliavin_y1(split, b0, r, t):
    """Derivative of ``Y1(t)`` with respect to the noise at time ``r``; a ``d x M`` matrix.

    ``T_{t-r} P+ B0(r)`` for ``r <= t`` and ``-T_{t-r} P- B0(r)`` for ``r > t``.
    """
    mu = split.eigenvalues
    if r <= t:
        mask, sign = split.stable, 1.0
    else:
        mask, sign = ~split.stable, -1.0
    weights = np.exp(np.where(mask, -mu * (t - r), -np.inf))
    v = split.eigenvectors
    kernel = (v * weights) @ v.T
    return sign * kernel @ b0(np.asarray(float(r)))


def stationary_covariance_oracle(split, b0):
    """Closed-form covariance of the untruncated Y1 for constant ``B0``.

    In the eigenbasis, with ``S = V^T B0 B0^T V``: ``S_ij / (|mu_i| + |mu_j|)``
    when ``mu_i`` and ``mu_j`` share a sign, zero otherwise (the forward and
    backward integrals use disjoint noise).
    """
    if not b0.is_constant:
        raise NonConstantDiffusion("the closed-form covariance needs a constant B0")
    v = split.eigenvectors
    bt = v.T @ b0.data["B"]
    s = bt @ bt.T
    mu = split.eigenvalues
    same = np.sign(mu)[:, None] == np.sign(mu)[None, :]
    denom = np.abs(mu)[:, None] + np.abs(mu)[None, :]
    cov_eig = np.where(same, s / denom, 0.0)
    return v @ cov_eig @ v.T
