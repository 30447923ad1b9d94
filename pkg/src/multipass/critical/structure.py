"""Algebraic structure of the octopole and quadrupole-quadrupole energies."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from ..errors import InvalidInputError, PreconditionError
from ..so3 import Rotation

P1 = np.diag([1.0, 0.0, 0.0])


def fibonacci_sphere(n):
    """Quasi-uniform points on the unit sphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + 5**0.5) * i
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sign_normalize(v):
    v = np.asarray(v, dtype=float)
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


# ---------------------------------------------------------------------------
# octopole


def octopole_vv(O, v):
    """The vector O(v, v, .) for one v or a stack of them."""
    return np.einsum("ijk,...i,...j->...k", O, v, v)


def octopole_kernel_vectors(O, tol=None, n_grid=6000):
    """Unit vectors (up to sign) with O(v, v, .) = 0.

    Candidates are local minima of |O(v,v,.)| on a Fibonacci grid, refined by
    Gauss-Newton on the sphere.  At most three non-parallel solutions exist
    for a nonzero octopole; finding more means ``tol`` is too loose.
    """
    O = np.asarray(O, dtype=float)
    norm = np.linalg.norm(O)
    if norm == 0:
        raise InvalidInputError("octopole tensor vanishes")
    if tol is None:
        tol = 1e-8 * norm
    pts = fibonacci_sphere(n_grid)
    pts = pts[pts[:, 2] >= 0]
    vals = np.linalg.norm(octopole_vv(O, pts), axis=1)
    full = np.vstack([pts, -pts])
    fvals = np.concatenate([vals, vals])
    tree = cKDTree(full)
    _, nbr = tree.query(pts, k=9)
    is_min = np.all(vals[:, None] <= fvals[nbr], axis=1)
    cand = pts[is_min & (vals < 0.2 * vals.max())]
    found = []
    for v0 in cand:
        res = least_squares(lambda v: np.append(octopole_vv(O, v), v @ v - 1.0), v0,
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        v = res.x / np.linalg.norm(res.x)
        if np.linalg.norm(octopole_vv(O, v)) > tol:
            continue
        if all(abs(v @ w) < 1 - 1e-6 for w in found):
            found.append(sign_normalize(v))
    if len(found) > 3:
        raise PreconditionError(
            f"found {len(found)} non-parallel kernel directions; tolerance too loose or octopole ~ 0")
    return sorted(found, key=lambda v: tuple(-v))


def check_octopole_nondegeneracy(O, tol=1e-8):
    """True iff v -> O(v, ., .) has trivial kernel."""
    O = np.asarray(O, dtype=float)
    M = O.reshape(3, 9).T
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return False
    return bool(s[-1] > tol * s[0])


# ---------------------------------------------------------------------------
# quadrupole-quadrupole


def L_operator(Q1):
    """35 pQp - 10 pQ - 10 Qp + 2Q with p the projector on e1."""
    Q1 = np.asarray(Q1, dtype=float)
    return 35 * P1 @ Q1 @ P1 - 10 * P1 @ Q1 - 10 * Q1 @ P1 + 2 * Q1


def M_operator(Q1):
    L = L_operator(Q1)
    return L - np.trace(L) / 3.0 * np.eye(3)


def sorted_eigh(A, descending=False, tol=1e-10):
    """Eigen-decomposition with deterministic ordering of degenerate eigenvalues.

    Eigenvectors are sign-normalised; within a degenerate cluster they are
    ordered lexicographically (descending).
    """
    lam, vec = np.linalg.eigh(np.asarray(A, dtype=float))
    vec = np.column_stack([sign_normalize(v) for v in vec.T])
    scale = max(np.abs(lam).max(), 1e-300)
    keys = []
    for i in range(3):
        # bucket degenerate eigenvalues to the cluster's smallest member
        rep = min(lam[j] for j in range(3) if abs(lam[j] - lam[i]) <= tol * scale)
        keys.append(((-rep if descending else rep), tuple(-vec[:, i])))
    order = sorted(range(3), key=lambda i: keys[i])
    return lam[order], vec[:, order]


def check_quadrupole(Q, name="Q"):
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (3, 3):
        raise InvalidInputError(f"{name} must be 3x3")
    scale = np.abs(Q).max()
    if scale == 0:
        raise InvalidInputError(f"{name} must be nonzero")
    if np.abs(Q - Q.T).max() > 1e-10 * scale or abs(np.trace(Q)) > 1e-10 * scale:
        raise InvalidInputError(f"{name} must be symmetric and traceless")
    return 0.5 * (Q + Q.T)


def _A(a, b, sigma):
    return sum(a[k] * b[sigma[k]] for k in range(3))


@dataclass
class QQStructure:
    L_of_Q1: np.ndarray
    M_of_Q1: np.ndarray
    eigen_a: np.ndarray
    eigvec_a: np.ndarray
    eigen_b: np.ndarray
    critical_values: dict
    g_min: float
    h_max: float
    hess_min_eig: dict

    def to_dict(self):
        key = lambda s: "".join(str(i + 1) for i in s)
        return {
            "L_of_Q1": self.L_of_Q1.tolist(),
            "M_of_Q1": self.M_of_Q1.tolist(),
            "eigen_a": self.eigen_a.tolist(),
            "eigen_b": self.eigen_b.tolist(),
            "critical_values": {key(s): v for s, v in self.critical_values.items()},
            "g_min": self.g_min,
            "h_max": self.h_max,
            "hess_min_eig": {key(s): v for s, v in self.hess_min_eig.items()},
        }


def qq_structure(Q1ref, Q2ref, orientationU=None) -> QQStructure:
    """Critical values of Q2 -> F^(2,2)(Q1, Q2) by eigenvalue pairing.

    ``Q1 = U^T Q1ref U``.  Values use the 1/3 normalisation of ``f_nm``.
    Critical points are indexed by permutations ``sigma``: the eigenvector of
    ``a_k`` carries eigenvalue ``b_sigma(k)``.
    """
    Q1ref = check_quadrupole(Q1ref, "Q1ref")
    Q2ref = check_quadrupole(Q2ref, "Q2ref")
    U = np.eye(3) if orientationU is None else (
        orientationU.matrix if isinstance(orientationU, Rotation) else np.asarray(orientationU))
    Q1 = U.T @ Q1ref @ U
    L = L_operator(Q1)
    M = L - np.trace(L) / 3.0 * np.eye(3)
    a, va = sorted_eigh(L)
    b = np.sort(np.linalg.eigvalsh(Q2ref))[::-1]
    crit = {}
    hmin = {}
    for s in permutations(range(3)):
        crit[s] = _A(a, b, s) / 3.0
        curv = []
        for i, j in ((0, 1), (0, 2), (1, 2)):
            t = list(s)
            t[i], t[j] = t[j], t[i]
            curv.append(-2.0 * (_A(a, b, s) - _A(a, b, tuple(t))) / 3.0)
        hmin[s] = float(min(curv))
    return QQStructure(L, M, a, va, b, crit, crit[(0, 1, 2)], crit[(2, 1, 0)], hmin)


def orient_M_sign(Q1ref, want="two-negative") -> Rotation:
    """Orientation ``U`` (with ``Q1 = U^T Q1ref U``) giving M(Q1) the requested signs.

    For two negative eigenvalues e1 is aligned with the top eigenvector of Q1;
    for two positive ones with the bottom eigenvector.
    """
    Q1ref = check_quadrupole(Q1ref, "Q1ref")
    lam, vec = sorted_eigh(Q1ref, descending=True)
    if want == "two-negative":
        cols = [vec[:, 0], vec[:, 1], vec[:, 2]]
    elif want == "two-positive":
        cols = [vec[:, 2], vec[:, 0], vec[:, 1]]
    else:
        raise InvalidInputError("want must be 'two-positive' or 'two-negative'")
    U = np.column_stack(cols)
    if np.linalg.det(U) < 0:
        U[:, 2] *= -1
    return Rotation.from_matrix(U)


def exchange_rotation(v_i, v_j, theta):
    """Rotation by ``theta`` in the plane of orthonormal ``v_i``, ``v_j``."""
    v_i = np.asarray(v_i, float)
    v_j = np.asarray(v_j, float)
    c, s = np.cos(theta), np.sin(theta)
    P = np.outer(v_i, v_i) + np.outer(v_j, v_j)
    return (np.eye(3) - P + c * P + s * (np.outer(v_j, v_i) - np.outer(v_i, v_j)))


def qq_fiber_minimizer(Q1, Q2ref):
    """A minimiser of Q2 -> tr(L(Q1) Q2) over rotations of ``Q2ref`` (paired eigenbasis)."""
    a, va = sorted_eigh(L_operator(Q1))
    b, vb = sorted_eigh(Q2ref, descending=True)
    V = va @ vb.T
    if np.linalg.det(V) < 0:
        # flip one paired axis of Q2ref: still maps eigenvectors to eigenvectors
        V = va @ np.diag([1.0, 1.0, -1.0]) @ vb.T
    return V
