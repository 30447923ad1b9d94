"""Cartesian multipole moments of point-charge molecules.

Moments are traceless Cartesian tensors of rank 1 to 4 built by direct
summation over the charges.  Rotations act on every index (pushforward), so a
rotated quadrupole is ``R @ Q @ R.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import mpmath
import numpy as np

from .errors import InvalidInputError, OutOfDomainError, SingularityError, UnsupportedOrderError
from .so3 import Rotation, check_rotation_matrix

NEUTRALITY_TOL = 1e-12
VANISH_RTOL = 1e-8
E1 = np.array([1.0, 0.0, 0.0])


def as_matrix(R):
    """Accept a Rotation or a 3x3 array and return a checked matrix."""
    if isinstance(R, Rotation):
        return R.matrix
    return check_rotation_matrix(R)


@dataclass(frozen=True)
class ChargeDistribution:
    """Point charges ``charges[i]`` sitting at ``positions[i]``."""

    charges: np.ndarray
    positions: np.ndarray
    label: str = ""
    declared_charge: float | None = None

    def __post_init__(self):
        q = np.asarray(self.charges, dtype=float).reshape(-1)
        x = np.asarray(self.positions, dtype=float)
        if q.size == 0:
            raise InvalidInputError("charge distribution has no points")
        if x.shape != (q.size, 3):
            raise InvalidInputError(f"positions must have shape ({q.size}, 3), got {x.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(x))):
            raise InvalidInputError("charges and positions must be finite")
        declared = 0.0 if self.declared_charge is None else float(self.declared_charge)
        if abs(q.sum() - declared) > NEUTRALITY_TOL:
            raise InvalidInputError(
                f"total charge {q.sum():.3e} differs from declared charge {declared}")
        q.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "charges", q)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "declared_charge", declared)

    @classmethod
    def from_points(cls, points, label="", declared_charge=0.0):
        """``points`` is an iterable of ``(q, (x, y, z))``."""
        points = list(points)
        if not points:
            raise InvalidInputError("charge distribution has no points")
        q = [p[0] for p in points]
        x = [p[1] for p in points]
        return cls(np.array(q, dtype=float), np.array(x, dtype=float), label, declared_charge)

    @property
    def total_charge(self):
        return float(self.charges.sum())

    @property
    def radius(self):
        return float(np.max(np.linalg.norm(self.positions, axis=1)))

    def rotated(self, R):
        return ChargeDistribution(self.charges, self.positions @ as_matrix(R).T,
                                  self.label, self.declared_charge)

    def translated(self, shift):
        return ChargeDistribution(self.charges, self.positions + np.asarray(shift, dtype=float),
                                  self.label, self.declared_charge)


@dataclass(frozen=True)
class MultipoleSet:
    total_charge: float = 0.0
    D: np.ndarray = field(default_factory=lambda: np.zeros(3))
    Q: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    O: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 3)))
    H: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 3, 3)))
    max_order: int = 4
    # sum |q| and max |x| of the source distribution, for scale-aware tolerances
    charge_scale: float = 1.0
    length_scale: float = 1.0

    def tensor(self, n):
        if n == 0:
            return self.total_charge
        if n not in (1, 2, 3, 4):
            raise UnsupportedOrderError(f"multipole order {n} is outside 0..4")
        return (self.D, self.Q, self.O, self.H)[n - 1]

    def vanish_tol(self, n):
        return VANISH_RTOL * self.charge_scale * self.length_scale**n

    def to_dict(self):
        return {
            "total_charge": self.total_charge,
            "max_order": self.max_order,
            "D": self.D.tolist(),
            "Q": self.Q.tolist(),
            "O": self.O.tolist(),
            "H": self.H.tolist(),
        }

    @classmethod
    def from_tensors(cls, D=None, Q=None, O=None, H=None, total_charge=0.0):
        """Build a set directly from tensors (symmetry is the caller's job)."""
        D = np.zeros(3) if D is None else np.asarray(D, dtype=float)
        Q = np.zeros((3, 3)) if Q is None else np.asarray(Q, dtype=float)
        O = np.zeros((3, 3, 3)) if O is None else np.asarray(O, dtype=float)
        H = np.zeros((3, 3, 3, 3)) if H is None else np.asarray(H, dtype=float)
        scale = max(np.abs(t).max() for t in (D, Q, O, H)) or 1.0
        return cls(float(total_charge), D, Q, O, H, 4, scale, 1.0)


def _sym_pair_delta(z):
    """Sum over the six placements of z_i z_j delta_kl (per point, shape (n,3,3,3,3))."""
    d = np.eye(3)
    zz = np.einsum("ni,nj->nij", z, z)
    out = np.zeros((z.shape[0], 3, 3, 3, 3))
    out += np.einsum("nij,kl->nijkl", zz, d)
    out += np.einsum("nik,jl->nijkl", zz, d)
    out += np.einsum("nil,jk->nijkl", zz, d)
    out += np.einsum("njk,il->nijkl", zz, d)
    out += np.einsum("njl,ik->nijkl", zz, d)
    out += np.einsum("nkl,ij->nijkl", zz, d)
    return out


def _delta_pairs():
    d = np.eye(3)
    return (np.einsum("ij,kl->ijkl", d, d) + np.einsum("ik,jl->ijkl", d, d)
            + np.einsum("il,jk->ijkl", d, d))


def compute_multipoles(dist: ChargeDistribution, max_order: int = 4) -> MultipoleSet:
    if max_order not in (1, 2, 3, 4):
        raise UnsupportedOrderError("max_order must be one of 1, 2, 3, 4")
    q = dist.charges
    z = dist.positions
    r2 = np.einsum("ni,ni->n", z, z)
    d = np.eye(3)
    D = np.einsum("n,ni->i", q, z)
    Q = np.zeros((3, 3))
    O = np.zeros((3, 3, 3))
    H = np.zeros((3, 3, 3, 3))
    if max_order >= 2:
        Q = 0.5 * (3 * np.einsum("n,ni,nj->ij", q, z, z) - np.sum(q * r2) * d)
    if max_order >= 3:
        zd = (np.einsum("ni,jk->nijk", z, d) + np.einsum("nj,ik->nijk", z, d)
              + np.einsum("nk,ij->nijk", z, d))
        O = 0.5 * (5 * np.einsum("n,ni,nj,nk->ijk", q, z, z, z)
                   - np.einsum("n,nijk->ijk", q * r2, zd))
    if max_order >= 4:
        H = 0.125 * (35 * np.einsum("n,ni,nj,nk,nl->ijkl", q, z, z, z, z)
                     - 5 * np.einsum("n,nijkl->ijkl", q * r2, _sym_pair_delta(z))
                     + np.sum(q * r2**2) * _delta_pairs())
    return MultipoleSet(dist.total_charge, D, Q, O, H, max_order,
                        float(np.sum(np.abs(q))), max(dist.radius, 1e-300))


def rotate_tensor(T, R):
    """Contract every index of ``T`` with ``R`` (R may be a stack (..., 3, 3))."""
    T = np.asarray(T, dtype=float)
    R = np.asarray(R, dtype=float)
    rank = T.ndim
    batch = R.shape[:-2]
    X = T
    for _ in range(rank):
        # rotate the leading tensor index, then cycle it to the back
        X = (R @ X.reshape(X.shape[: X.ndim - rank] + (3, -1))).reshape(batch + (3,) * rank)
        X = np.moveaxis(X, len(batch), -1)
    return X


def rotate_multipoles(m: MultipoleSet, R) -> MultipoleSet:
    Rm = as_matrix(R)
    return MultipoleSet(m.total_charge, Rm @ m.D, Rm @ m.Q @ Rm.T, rotate_tensor(m.O, Rm),
                        rotate_tensor(m.H, Rm), m.max_order, m.charge_scale, m.length_scale)


def first_nonzero_multipole(m: MultipoleSet, tol: float | None = None):
    """Lowest order with a nonvanishing tensor, or None when orders 1..4 all vanish."""
    if abs(m.total_charge) > NEUTRALITY_TOL:
        raise InvalidInputError("first nonzero multipole is defined for neutral molecules only")
    for n in range(1, 5):
        t = tol if tol is not None else m.vanish_tol(n)
        if np.linalg.norm(m.tensor(n)) > t:
            return n
    return None


def symmetry_defects(m: MultipoleSet):
    """Largest deviation from symmetry and tracelessness per tensor."""
    Q, O, H = m.Q, m.O, m.H
    out = {
        "Q_sym": float(np.abs(Q - Q.T).max()),
        "Q_trace": float(abs(np.trace(Q))),
        "O_sym": max(float(np.abs(O - O.transpose(p)).max()) for p in permutations(range(3))),
        "O_trace": float(np.abs(np.einsum("iik->k", O)).max()),
        "H_sym": max(float(np.abs(H - H.transpose(p)).max()) for p in permutations(range(4))),
        "H_trace": float(np.abs(np.einsum("iikl->kl", H)).max()),
    }
    return out


# ---------------------------------------------------------------------------
# Taylor expansion of 1/|L e1 - h|


def expansion_terms(h, N=5):
    """Coefficients of 1/L^(n+1), n = 0..N, in the expansion of 1/|L e1 - h|."""
    h = np.asarray(h, dtype=float)
    x = h[0]
    r2 = float(h @ h)
    c = [
        1.0,
        x,
        (3 * x**2 - r2) / 2,
        (5 * x**3 - 3 * x * r2) / 2,
        (3 * r2**2 - 30 * x**2 * r2 + 35 * x**4) / 8,
        (15 * x * r2**2 - 70 * x**3 * r2 + 63 * x**5) / 8,
    ]
    return np.array(c[: N + 1])


@dataclass(frozen=True)
class ExpansionReport:
    terms: np.ndarray
    order: int
    L: float
    exact: float
    partial_sums: np.ndarray
    residuals: np.ndarray

    @property
    def value(self):
        return float(self.partial_sums[-1])

    @property
    def residual(self):
        return float(self.residuals[-1])


def coulomb_expansion(h, L: float, N: int) -> ExpansionReport:
    h = np.asarray(h, dtype=float)
    if N < 0 or N > 5:
        raise UnsupportedOrderError("expansion order must lie in 0..5")
    if not L > 0 or np.linalg.norm(h) > L / 2:
        raise OutOfDomainError("coulomb expansion requires |h| <= L/2")
    c = expansion_terms(h, N)
    powers = L ** -(np.arange(N + 1) + 1.0)
    partial = np.cumsum(c * powers)
    exact = 1.0 / np.linalg.norm(L * E1 - h)
    return ExpansionReport(c, N, float(L), float(exact), partial, exact - partial)


def direct_coulomb(dist1: ChargeDistribution, dist2: ChargeDistribution, U, V, L: float,
                   precise: bool = False) -> float:
    """Pairwise Coulomb energy with molecule 2 centred at ``L e1``.

    ``precise=True`` evaluates the sum with 50-digit arithmetic, which is needed
    once the energy drops many orders of magnitude below the individual terms.
    """
    x = dist1.positions @ as_matrix(U).T
    y0 = dist2.positions @ as_matrix(V).T
    y = y0 + L * E1
    diff = x[:, None, :] - y[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    scale = max(dist1.radius, dist2.radius, abs(L), 1.0)
    if np.any(r <= 1e-12 * scale):
        raise SingularityError("coincident charges in direct Coulomb sum")
    qq = np.outer(dist1.charges, dist2.charges)
    if precise:
        with mpmath.workdps(50):
            total = mpmath.mpf(0)
            xs = [[mpmath.mpf(float(a)) for a in row] for row in x]
            ys = [[mpmath.mpf(float(a)) for a in row] for row in y0]
            Lm = mpmath.mpf(float(L))
            for (i, j), c in np.ndenumerate(qq):
                d = [xs[i][0] - ys[j][0] - Lm, xs[i][1] - ys[j][1], xs[i][2] - ys[j][2]]
                total += mpmath.mpf(float(c)) / mpmath.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
            return float(total)
    return math.fsum((qq / r).ravel())
