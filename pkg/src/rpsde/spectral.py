"""Hyperbolic splitting of a symmetric matrix and its exponential semigroup.

The linear part of the equation is ``du = -A u dt``.  For symmetric ``A`` with
no eigenvalue near zero, the eigenvectors with positive eigenvalues span the
stable space (``e^{-At}`` decays forward in time) and those with negative
eigenvalues span the unstable space (decays backward in time).
"""
from dataclasses import dataclass

import numpy as np

from .errors import EigensolveFailure, NotHyperbolic, NotSymmetric

__all__ = [
    "HyperbolicSplitting",
    "jacobi_eigh",
    "decompose",
    "semigroup_apply",
    "semigroup_matrix",
    "project",
]

SYMMETRY_RTOL = 1e-10
OFFDIAG_RTOL = 1e-12
MAX_SWEEPS = 100


def jacobi_eigh(a, tol=OFFDIAG_RTOL, max_sweeps=MAX_SWEEPS):
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` sorted ascending, eigenvectors in
    columns.  Sweeps until the off-diagonal Frobenius norm drops below
    ``tol * ||a||_F``; raises :class:`EigensolveFailure` after ``max_sweeps``.
    """
    a = np.array(a, dtype=float, copy=True)
    d = a.shape[0]
    v = np.eye(d)
    scale = np.linalg.norm(a)
    if scale == 0.0 or d == 1:
        return _sorted_pairs(np.diag(a).copy(), v)

    offdiag = ~np.eye(d, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offdiag])
        if off <= tol * scale:
            return _sorted_pairs(np.diag(a).copy(), v)
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # symmetric Schur 2x2 rotation zeroing a[p, q]
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-300 * max(abs(diff), 1.0):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = diff / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
    raise EigensolveFailure(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def _sorted_pairs(w, v):
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    # fix the sign of each eigenvector so results are reproducible
    for j in range(v.shape[1]):
        k = np.argmax(np.abs(v[:, j]))
        if v[k, j] < 0:
            v[:, j] = -v[:, j]
    return w, v


@dataclass(frozen=True, eq=False)
class HyperbolicSplitting:
    """Eigenstructure of ``A`` with the stable/unstable projections.

    ``p_plus`` projects onto the stable space E^s (positive eigenvalues),
    ``p_minus`` onto the unstable space E^u (negative eigenvalues).
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    decay_C: float = 1.0

    @property
    def dim(self):
        return self.eigenvalues.shape[0]

    @property
    def stable(self):
        """Boolean mask over eigen-directions belonging to E^s."""
        return self.eigenvalues > 0

    @property
    def m(self):
        """Number of negative eigenvalues (the dimension of E^u)."""
        return int(np.count_nonzero(self.eigenvalues < 0))

    @property
    def mu_m(self):
        """Largest negative eigenvalue, or None when E^u is trivial."""
        return float(self.eigenvalues[self.m - 1]) if self.m > 0 else None

    @property
    def mu_m1(self):
        """Smallest positive eigenvalue, or None when E^s is trivial."""
        return float(self.eigenvalues[self.m]) if self.m < self.dim else None

    def to_eigen(self, u):
        """Coordinates of ``u`` (last axis) in the eigenbasis."""
        return np.asarray(u) @ self.eigenvectors

    def from_eigen(self, w):
        return np.asarray(w) @ self.eigenvectors.T


def decompose(a, eps_hyp=1e-8):
    """Split ``R^d`` by the sign of the spectrum of the symmetric matrix ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    scale = np.linalg.norm(a)
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise NotSymmetric(f"max |A - A^T| = {asym:.3e} exceeds {SYMMETRY_RTOL:g}*||A||")
    a = 0.5 * (a + a.T)

    w, v = jacobi_eigh(a)
    small = np.abs(w) < eps_hyp
    if np.any(small):
        raise NotHyperbolic(
            f"eigenvalue(s) {w[small].tolist()} within eps_hyp={eps_hyp:g} of zero"
        )
    stable = w > 0
    p_plus = (v[:, stable]) @ v[:, stable].T
    p_minus = (v[:, ~stable]) @ v[:, ~stable].T
    return HyperbolicSplitting(
        matrix=a, eigenvalues=w, eigenvectors=v, p_plus=p_plus, p_minus=p_minus
    )


def semigroup_matrix(split, t):
    """The matrix ``e^{-A t}``, assembled in the eigenbasis."""
    v = split.eigenvectors
    return (v * np.exp(-split.eigenvalues * t)) @ v.T


def semigroup_apply(split, t, v):
    """Apply ``T_t = e^{-A t}`` to ``v`` (vectors along the last axis); any real ``t``."""
    w = split.to_eigen(v)
    return split.from_eigen(w * np.exp(-split.eigenvalues * t))


def project(split, sign, v):
    """Project ``v`` onto E^s (``sign='plus'``) or E^u (``sign='minus'``)."""
    if sign in ("plus", "+", 1):
        p = split.p_plus
    elif sign in ("minus", "-", -1):
        p = split.p_minus
    else:
        raise ValueError(f"sign must be 'plus' or 'minus', got {sign!r}")
    return np.asarray(v, dtype=float) @ p.T
