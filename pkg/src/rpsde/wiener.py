"""Two-sided discretized Brownian motion with an exact lattice shift.

Every grid lives on the lattice ``dt * Z``: node ``k`` sits at time ``k * dt``.
Increments are generated from a counter-based stream (numpy's Philox) keyed on
``(master_seed, path_id)`` and addressed by the absolute step index and noise
component, so any window of any path can be regenerated independently of how
the work is split up.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import EmptyWindow, NotOnGrid

__all__ = [
    "TimeGrid",
    "WienerPath",
    "ShiftedView",
    "sample",
    "shift",
    "evaluate",
    "increment_sum",
    "coarsen",
    "lattice_index",
]

ON_GRID_RTOL = 1e-9
# step index 0 maps to counter position OFFSET * M; leaves room for negative times
_COUNTER_OFFSET = 1 << 40


def lattice_index(t, dt, what="time"):
    """Integer ``k`` with ``t == k * dt`` (to ``1e-9`` relative), else :class:`NotOnGrid`."""
    x = t / dt
    k = int(round(x))
    if abs(x - k) > ON_GRID_RTOL * max(1.0, abs(x)):
        raise NotOnGrid(f"{what} {t!r} is not a multiple of dt={dt!r}")
    return k


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n`` steps starting at lattice node ``k0``."""

    k0: int
    n: int
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n < 0:
            raise ValueError("number of steps must be nonnegative")

    @classmethod
    def span(cls, t_start, t_end, dt):
        k0 = lattice_index(t_start, dt, "t_start")
        k1 = lattice_index(t_end, dt, "t_end")
        if k1 < k0:
            raise ValueError(f"t_end={t_end} precedes t_start={t_start}")
        return cls(k0, k1 - k0, dt)

    @property
    def t_start(self):
        return self.k0 * self.dt

    @property
    def t_end(self):
        return (self.k0 + self.n) * self.dt

    @property
    def times(self):
        """Node times, ``n + 1`` of them."""
        return (self.k0 + np.arange(self.n + 1)) * self.dt

    def node(self, t):
        """Local node index of time ``t``; raises if off the lattice or outside."""
        j = lattice_index(t, self.dt) - self.k0
        if not 0 <= j <= self.n:
            raise EmptyWindow(f"t={t} outside grid [{self.t_start}, {self.t_end}]")
        return j

    def contains(self, other):
        return other.k0 >= self.k0 and other.k0 + other.n <= self.k0 + self.n

    def sub(self, t_start, t_end):
        g = TimeGrid.span(t_start, t_end, self.dt)
        if not self.contains(g):
            raise EmptyWindow(
                f"[{t_start}, {t_end}] not inside [{self.t_start}, {self.t_end}]"
            )
        return g


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Brownian increments on a grid; row ``j`` is ``W(t_{j+1}) - W(t_j)``."""

    grid: TimeGrid
    increments: np.ndarray = field(repr=False)
    master_seed: int = 0
    path_id: int = 0

    @property
    def noise_dim(self):
        return self.increments.shape[1]

    @property
    def shift_steps(self):
        return 0

    @property
    def base(self):
        return self

    def window(self, k_start, k_end):
        """Increments for absolute steps ``k_start <= k < k_end``."""
        lo = k_start - self.grid.k0
        hi = k_end - self.grid.k0
        if lo < 0 or hi > self.grid.n or hi < lo:
            raise EmptyWindow(
                f"steps [{k_start}, {k_end}) outside path steps "
                f"[{self.grid.k0}, {self.grid.k0 + self.grid.n})"
            )
        return self.increments[lo:hi]


@dataclass(frozen=True, eq=False)
class ShiftedView:
    """The shifted path ``theta_delta W`` with ``delta = shift_steps * dt``.

    View time ``s`` corresponds to base time ``s + delta``; the increments are
    the base's own array, reindexed, never copied or recomputed.
    """

    base: WienerPath
    shift_steps: int

    @property
    def grid(self):
        g = self.base.grid
        return TimeGrid(g.k0 - self.shift_steps, g.n, g.dt)

    @property
    def increments(self):
        return self.base.increments

    @property
    def noise_dim(self):
        return self.base.noise_dim

    @property
    def master_seed(self):
        return self.base.master_seed

    @property
    def path_id(self):
        return self.base.path_id

    def window(self, k_start, k_end):
        return self.base.window(k_start + self.shift_steps, k_end + self.shift_steps)


def _philox_uniforms(master_seed, path_id, start, count):
    """``count`` uniforms in (0, 1) at stream positions ``start, start+1, ...``."""
    bg = np.random.Philox(key=[master_seed & 0xFFFFFFFFFFFFFFFF, path_id & 0xFFFFFFFFFFFFFFFF])
    block, lane = divmod(start, 4)
    state = bg.state
    state["state"]["counter"] = np.array(
        [block & 0xFFFFFFFFFFFFFFFF, block >> 64, 0, 0], dtype=np.uint64
    )
    state["buffer_pos"] = 4
    bg.state = state
    raw = bg.random_raw(count + lane)[lane:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def sample(grid, noise_dim, master_seed, path_id):
    """Draw the increments of path ``path_id`` on ``grid``.

    Increment ``(k, c)`` depends only on ``(master_seed, path_id, k, c)``, with
    ``k`` the absolute lattice step; overlapping windows agree bitwise.
    """
    if grid.n < 1 or noise_dim < 1:
        raise ValueError("need at least one step and one noise component")
    start = (grid.k0 + _COUNTER_OFFSET) * noise_dim
    u = _philox_uniforms(int(master_seed), int(path_id), start, grid.n * noise_dim)
    inc = np.sqrt(grid.dt) * ndtri(u)
    return WienerPath(grid, inc.reshape(grid.n, noise_dim), int(master_seed), int(path_id))


def shift(path, delta):
    """The view ``theta_delta`` of ``path``; ``delta`` must be a multiple of dt."""
    dt = path.grid.dt
    k = lattice_index(delta, dt, "shift")
    base = path.base
    total = path.shift_steps + k
    g = base.grid
    # theta_delta needs W(delta) itself, i.e. a base node
    if not g.k0 <= total <= g.k0 + g.n:
        raise EmptyWindow(f"shift by {total * dt} leaves the path window")
    if total == 0:
        return base
    return ShiftedView(base, total)


def increment_sum(path, t0, t1):
    """``W(t1) - W(t0)`` as the ordered running sum of the increments in between."""
    dt = path.grid.dt
    k0 = lattice_index(t0, dt)
    k1 = lattice_index(t1, dt)
    if k1 < k0:
        return -increment_sum(path, t1, t0)
    inc = path.window(k0, k1)
    if inc.shape[0] == 0:
        return np.zeros(path.noise_dim)
    return np.cumsum(inc, axis=0)[-1]


def evaluate(path, t):
    """``W(t) - W(window start)`` at grid node ``t``."""
    return increment_sum(path, path.grid.t_start, t)


def coarsen(path, factor):
    """Aggregate ``factor`` consecutive increments: the same Brownian path on a coarser grid."""
    g = path.grid
    if factor < 1 or g.k0 % factor or g.n % factor:
        raise NotOnGrid(f"grid [{g.k0}, {g.k0 + g.n}] not divisible into blocks of {factor}")
    inc = path.increments.reshape(g.n // factor, factor, -1).sum(axis=1)
    return WienerPath(
        TimeGrid(g.k0 // factor, g.n // factor, g.dt * factor), inc,
        path.master_seed, path.path_id,
    )
