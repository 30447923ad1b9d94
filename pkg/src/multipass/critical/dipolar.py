"""Reduction of dipole-multipole energies to the sphere pair (e, p).

For a pair where one molecule carries a dipole ``D`` and the other a tensor
``T`` of order k, F depends on the rotations only through ``e`` (the direction
e1 seen from the T-molecule) and ``p`` (the dipole direction seen from the
same frame):

    F = sign * |D| * <X(e), p>

with X_1(e) = T - 3 (e.T) e, X_2(e) = 5 T(e,e) e - 2 T e and
X_3(e) = 3 T(e,e,.) - 7 T(e,e,e) e.
"""

from __future__ import annotations

import numpy as np

from ..errors import UnsupportedOrderError
from ..so3 import minimal_rotation
from .structure import fibonacci_sphere


def field_vector(T, k, e):
    """X_k(e) for a stack of unit vectors ``e`` (shape (..., 3))."""
    e = np.asarray(e, dtype=float)
    if k == 1:
        return T - 3 * (e @ T)[..., None] * e
    if k == 2:
        Te = e @ T
        return 5 * (e * Te).sum(axis=-1)[..., None] * e - 2 * Te
    if k == 3:
        ee = (e[..., :, None] * e[..., None, :]).reshape(e.shape[:-1] + (9,))
        Tee = ee @ T.reshape(9, 3)
        return 3 * Tee - 7 * (Tee * e).sum(axis=-1)[..., None] * e
    if k == 4:
        Teee = np.einsum("ijkl,...i,...j,...k->...l", T, e, e, e)
        return 9 * np.einsum("...l,...l->...", Teee, e)[..., None] * e - 4 * Teee
    raise UnsupportedOrderError(f"no dipolar reduction for order {k}")


class DipolarReduction:
    """Bookkeeping for a (1, k) or (k, 1) interaction.

    ``side`` is 0 when molecule 1 carries the dipole.  ``sign`` absorbs the
    (-1)^(n+m) rule when the dipole sits on molecule 2.
    """

    def __init__(self, m1, m2, n, m):
        if min(n, m) != 1:
            raise UnsupportedOrderError("dipolar reduction needs a dipole on one side")
        if n == 1:
            self.side, self.k, self.sign = 0, m, 1.0
            D, self.T = m1.D, np.asarray(m2.tensor(m))
        else:
            self.side, self.k, self.sign = 1, n, float((-1) ** (n + m))
            D, self.T = m2.D, np.asarray(m1.tensor(n))
        self.dnorm = float(np.linalg.norm(D))
        self.dhat = D / self.dnorm if self.dnorm > 0 else np.array([1.0, 0.0, 0.0])

    def split(self, U, V):
        """Return (A, B): A rotates the dipole molecule, B the tensor molecule."""
        return (U, V) if self.side == 0 else (V, U)

    def join(self, A, B):
        return (A, B) if self.side == 0 else (B, A)

    def reduce(self, U, V):
        return self.reduce_ab(*self.split(U, V))

    def reduce_ab(self, A, B):
        """(e, p) from the dipole rotation A and the tensor rotation B."""
        e = B[..., 0, :]
        a = A @ self.dhat
        p = (B * a[..., :, None]).sum(axis=-2)
        return e, p

    def value(self, e, p):
        return self.sign * self.dnorm * (field_vector(self.T, self.k, e) * p).sum(axis=-1)

    def xnorm(self, e):
        return np.linalg.norm(field_vector(self.T, self.k, e), axis=-1)

    def best_p(self, e):
        """The p minimising F at fixed e (unit vector along -sign * X(e))."""
        X = field_vector(self.T, self.k, e)
        return -self.sign * X / np.linalg.norm(X, axis=-1, keepdims=True)

    def min_xnorm(self, n_grid=20000):
        """Minimum of |X(e)| over a dense sphere grid, refined locally."""
        from scipy.optimize import minimize

        pts = fibonacci_sphere(n_grid)
        vals = self.xnorm(pts)
        best = np.argsort(vals)[:8]
        out = vals[best[0]]
        for i in best:
            res = minimize(lambda x: self.xnorm(x / np.linalg.norm(x)), pts[i], method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000})
            out = min(out, float(res.fun))
        return float(out)

    def lift_p(self, A, B, p_target):
        """New A with the dipole pointing along ``p_target`` in B's frame."""
        p_now = B.T @ A @ self.dhat
        R = minimal_rotation(p_now, p_target)
        return B @ R @ B.T @ A
