"""Rotations, configurations and Riemannian calculus on SO(3) x SO(3).

Rotations are stored as unit quaternions ``[w, x, y, z]``.  Tangent vectors at
``U`` are body-frame angular velocities: the geodesic through ``U`` in the
direction ``omega`` is ``U @ expm(t * hat(omega))``.  With this bi-invariant
metric the Hessian of ``x -> f(exp_p(x))`` at zero is the Riemannian Hessian,
so plain central differences in that chart are used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial.transform import Rotation as _SciRot

from .errors import DomainExitError, EvaluationError, InvalidRotationError, ParseError

ORTHO_TOL = 1e-10


def hat(w):
    """Skew matrix with ``hat(w) @ v == cross(w, v)``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def expm_so3(w):
    """Rodrigues formula, vectorised over leading axes."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        x, y, z = w
        th = math.sqrt(x * x + y * y + z * z)
        if th < 1e-8:
            a, b = 1.0 - th * th / 6.0, 0.5 - th * th / 24.0
        else:
            a, b = math.sin(th) / th, (1.0 - math.cos(th)) / (th * th)
        K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        return np.eye(3) + a * K + b * (K @ K)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = hat(w)
    K2 = K @ K
    small = theta < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - theta**2 / 24.0,
                     (1.0 - np.cos(theta)) / np.where(small, 1.0, theta) ** 2)
    return np.eye(3) + a * K + b * K2


def logm_so3(R):
    """Rotation vector of a rotation matrix (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 2:
        return _SciRot.from_matrix(R).as_rotvec()
    return _SciRot.from_matrix(R.reshape(-1, 3, 3)).as_rotvec().reshape(R.shape[:-2] + (3,))


def rotation_angle(R):
    """Angle of rotation, robust near 0 and pi."""
    return np.linalg.norm(logm_so3(R), axis=-1)


def check_rotation_matrix(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R @ R.T - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidRotationError("matrix is not orthogonal with determinant +1")
    return R


def _quat_from_matrix(R):
    x, y, z, w = _SciRot.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return q if q[0] >= 0 else -q


@dataclass(frozen=True)
class Rotation:
    """Element of SO(3) as a unit quaternion ``[w, x, y, z]``."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise InvalidRotationError("quaternion must be finite and nonzero")
        q = q / n
        # renormalise once more so the drift bound holds even for tiny inputs
        q = q / np.linalg.norm(q)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, check=True):
        if check:
            check_rotation_matrix(R)
        return cls(_quat_from_matrix(np.asarray(R, dtype=float)))

    @classmethod
    def from_rotvec(cls, w):
        return cls.from_matrix(expm_so3(w), check=False)

    @classmethod
    def from_axis_angle(cls, axis, theta):
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            if theta == 0.0:
                return cls()
            raise InvalidRotationError("rotation axis must be nonzero")
        return cls.from_rotvec(axis / n * theta)

    @classmethod
    def parse(cls, text):
        """Read ``"w,x,y,z"``, ``"[w,x,y,z]"`` or axis-angle ``"ax:ay:az:theta"``."""
        s = str(text).strip()
        try:
            if ":" in s:
                parts = [float(v) for v in s.split(":")]
                if len(parts) != 4:
                    raise ValueError
                return cls.from_axis_angle(parts[:3], parts[3])
            parts = [float(v) for v in s.strip("[]").split(",")]
            if len(parts) != 4:
                raise ValueError
            return cls(np.array(parts))
        except ValueError:
            raise ParseError(f"cannot parse rotation {text!r}; expected w,x,y,z or ax:ay:az:theta") from None

    @property
    def matrix(self):
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def __matmul__(self, other):
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self):
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, v):
        return np.asarray(v, dtype=float) @ self.matrix.T

    def to_list(self):
        q = self.q if self.q[0] >= 0 else -self.q
        return [float(c) for c in q]


@dataclass(frozen=True)
class Tangent:
    dL: float = 0.0
    wU: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wV: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        wU = np.asarray(self.wU, dtype=float).reshape(3)
        wV = np.asarray(self.wV, dtype=float).reshape(3)
        if not (np.isfinite(self.dL) and np.all(np.isfinite(wU)) and np.all(np.isfinite(wV))):
            raise EvaluationError("tangent entries must be finite")
        object.__setattr__(self, "dL", float(self.dL))
        object.__setattr__(self, "wU", wU)
        object.__setattr__(self, "wV", wV)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(a[0], a[1:4], a[4:7])

    def as_array(self):
        return np.concatenate([[self.dL], self.wU, self.wV])

    def norm(self):
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class Config:
    """Separation ``L`` along e1 and orientations ``U``, ``V`` of the two molecules."""

    L: float
    U: Rotation = field(default_factory=Rotation)
    V: Rotation = field(default_factory=Rotation)

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L <= 0:
            raise DomainExitError(f"separation must be positive, got {self.L}")
        object.__setattr__(self, "L", float(self.L))

    @classmethod
    def from_matrices(cls, L, U, V):
        return cls(L, Rotation.from_matrix(U, check=False), Rotation.from_matrix(V, check=False))

    def matrices(self):
        return self.L, self.U.matrix, self.V.matrix

    def to_dict(self):
        return {"L": self.L, "U": self.U.to_list(), "V": self.V.to_list()}


def geodesic(p: Config, v: Tangent, t: float) -> Config:
    L = p.L + t * v.dL
    if L <= 0:
        raise DomainExitError("geodesic leaves L > 0")
    U = p.U.matrix @ expm_so3(t * v.wU)
    V = p.V.matrix @ expm_so3(t * v.wV)
    return Config.from_matrices(L, U, V)


def config_distance(a: Config, b: Config) -> float:
    """Product-metric distance with unit weights."""
    dU = rotation_angle(a.U.matrix.T @ b.U.matrix)
    dV = rotation_angle(a.V.matrix.T @ b.V.matrix)
    return float(np.sqrt((a.L - b.L) ** 2 + dU**2 + dV**2))


def uv_distance(U1, V1, U2, V2):
    """Geodesic distance on SO(3) x SO(3) between matrix pairs (vectorised)."""
    dU = rotation_angle(np.swapaxes(U1, -1, -2) @ U2)
    dV = rotation_angle(np.swapaxes(V1, -1, -2) @ V2)
    return np.sqrt(dU**2 + dV**2)


# ---------------------------------------------------------------------------
# finite-difference calculus


def _chart(p: Config, x):
    """exp_p(x) for a 7-vector x."""
    L, U, V = p.matrices()
    return L + x[0], U @ expm_so3(x[1:4]), V @ expm_so3(x[4:7])


def _eval_chart(f, p, x):
    L, U, V = _chart(p, x)
    if L <= 0:
        raise DomainExitError("finite-difference stencil leaves L > 0")
    val = f(Config.from_matrices(L, U, V))
    if not np.isfinite(val):
        raise EvaluationError("objective returned a non-finite value")
    return float(val)


def riem_grad(f, p: Config, h: float = 1e-4) -> Tangent:
    """Central-difference Riemannian gradient of ``f`` at ``p``."""
    g = np.zeros(7)
    for i in range(7):
        e = np.zeros(7)
        e[i] = h
        g[i] = (_eval_chart(f, p, e) - _eval_chart(f, p, -e)) / (2 * h)
    return Tangent.from_array(g)


def riem_hess(f, p: Config, h: float = 1e-4) -> np.ndarray:
    """Symmetric 7x7 Riemannian Hessian; ``[1:, 1:]`` is the (U, V) block."""
    f0 = _eval_chart(f, p, np.zeros(7))
    H = np.zeros((7, 7))
    for i in range(7):
        ei = np.zeros(7)
        ei[i] = h
        H[i, i] = (_eval_chart(f, p, ei) - 2 * f0 + _eval_chart(f, p, -ei)) / h**2
        for j in range(i + 1, 7):
            ej = np.zeros(7)
            ej[j] = h
            H[i, j] = (_eval_chart(f, p, ei + ej) - _eval_chart(f, p, ei - ej)
                       - _eval_chart(f, p, -ei + ej) + _eval_chart(f, p, -ei - ej)) / (4 * h**2)
            H[j, i] = H[i, j]
    return H


# Batched versions on SO(3) x SO(3).  ``fb(Us, Vs)`` maps (N,3,3) stacks to (N,).

_UNIT6 = np.eye(6)


@lru_cache(maxsize=256)
def _shared_expm(w):
    return expm_so3(np.array(w))


def _perturb(Us, Vs, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        # one shared displacement: right-multiplying by a single 3x3 is one gemm
        def right(S, w):
            if not w.any():
                return S
            return (S.reshape(-1, 3) @ _shared_expm(tuple(w))).reshape(S.shape)
        return right(Us, x[:3]), right(Vs, x[3:])
    return Us @ expm_so3(x[:, :3]), Vs @ expm_so3(x[:, 3:])


@lru_cache(maxsize=8)
def _stencil(h, hessian):
    """Displacements of the central-difference stencil and their rotation matrices."""
    rows = []
    for i in range(6):
        rows += [h * _UNIT6[i], -h * _UNIT6[i]]
    if hessian:
        for i in range(6):
            for j in range(i + 1, 6):
                ei, ej = h * _UNIT6[i], h * _UNIT6[j]
                rows += [ei + ej, ei - ej, ej - ei, -ei - ej]
    X = np.array(rows)
    return expm_so3(X[:, :3]), expm_so3(X[:, 3:])


_STACK_LIMIT = 20000


def _stacked(fb, Us, Vs, h, hessian):
    """Evaluate the whole stencil in one call; returns (n, n_stencil)."""
    EU, EV = _stencil(h, hessian)
    n, k = Us.shape[0], EU.shape[0]
    Up = (Us[:, None] @ EU[None]).reshape(n * k, 3, 3)
    Vp = (Vs[:, None] @ EV[None]).reshape(n * k, 3, 3)
    return fb(Up, Vp).reshape(n, k)


def batch_grad_uv(fb, Us, Vs, h=1e-4):
    if Us.shape[0] * 12 <= _STACK_LIMIT:
        f = _stacked(fb, Us, Vs, h, False)
        return (f[:, 0::2] - f[:, 1::2]) / (2 * h)
    g = np.empty((Us.shape[0], 6))
    for i in range(6):
        e = h * _UNIT6[i]
        g[:, i] = (fb(*_perturb(Us, Vs, e)) - fb(*_perturb(Us, Vs, -e))) / (2 * h)
    return g


def batch_hess_uv(fb, Us, Vs, h=1e-4):
    n = Us.shape[0]
    f0 = fb(Us, Vs)
    H = np.empty((n, 6, 6))
    if n * 72 <= _STACK_LIMIT:
        f = _stacked(fb, Us, Vs, h, True)
        H[:, range(6), range(6)] = (f[:, 0:12:2] - 2 * f0[:, None] + f[:, 1:12:2]) / h**2
        c = 12
        for i in range(6):
            for j in range(i + 1, 6):
                H[:, i, j] = H[:, j, i] = (f[:, c] - f[:, c + 1] - f[:, c + 2] + f[:, c + 3]) / (4 * h**2)
                c += 4
        return H
    for i in range(6):
        ei = h * _UNIT6[i]
        H[:, i, i] = (fb(*_perturb(Us, Vs, ei)) - 2 * f0 + fb(*_perturb(Us, Vs, -ei))) / h**2
        for j in range(i + 1, 6):
            ej = h * _UNIT6[j]
            H[:, i, j] = (fb(*_perturb(Us, Vs, ei + ej)) - fb(*_perturb(Us, Vs, ei - ej))
                          - fb(*_perturb(Us, Vs, ej - ei)) + fb(*_perturb(Us, Vs, -ei - ej))) / (4 * h**2)
            H[:, j, i] = H[:, i, j]
    return H


# ---------------------------------------------------------------------------
# Haar measure


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def haar_quaternions(n, rng=None):
    """Uniform unit quaternions from normalised Gaussian 4-vectors."""
    g = _as_generator(rng).standard_normal((n, 4))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def quat_to_matrix(q):
    """Vectorised ``[w,x,y,z]`` to rotation matrix."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def haar_matrices(n, rng=None):
    return quat_to_matrix(haar_quaternions(n, rng))


def haar_sample(rng_seed=None) -> Rotation:
    """One Haar-distributed rotation; pass a Generator to draw a sequence."""
    return Rotation(haar_quaternions(1, rng_seed)[0])


def trace_cdf(t):
    """CDF of tr(R) for Haar-distributed R (angle density (1 - cos a)/pi)."""
    c = np.clip((np.asarray(t, dtype=float) - 1.0) / 2.0, -1.0, 1.0)
    a = np.arccos(c)
    return 1.0 - (a - np.sin(a)) / np.pi


def rotation_about(axis, theta):
    """Matrix of the rotation by ``theta`` about ``axis`` (lab frame)."""
    axis = np.asarray(axis, dtype=float)
    return expm_so3(axis / np.linalg.norm(axis) * theta)


def minimal_rotation(a, b):
    """Smallest rotation taking unit vector ``a`` to unit vector ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.cross(a, b)
    s = np.linalg.norm(c)
    d = float(np.clip(a @ b, -1.0, 1.0))
    if s < 1e-12:
        if d > 0:
            return np.eye(3)
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return rotation_about(perp, np.pi)
    return expm_so3(c / s * np.arctan2(s, d))
