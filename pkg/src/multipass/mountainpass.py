"""Model energy over (L, U, V), min-max paths, surgery at a separation cap, saddle refinement.

The model energy is

    E = E1 + E2 + kappa/L + sum_{2 <= n+m <= N} F^(n,m)(U, V) / L^(n+m+1)
        - cvdw(U, V) / L^6 + A / L^12

where the last term is an optional short-range wall (A >= 0, default 0).  Paths
are stored as arrays of separations and rotation matrices and are treated as
piecewise geodesics in the product metric dL^2 + |dU|^2 + |dV|^2.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .critical.descent import descend_to_pseudo_minimum
from .critical.sublevel import compute_delta0, connect_negative_sublevel
from .errors import (
    InvalidInputError,
    OutOfDomainError,
    PreconditionError,
    SurgeryError,
)
from .interaction import SUPPORTED, make_batch_objective
from .multipole import MultipoleSet, first_nonzero_multipole, rotate_tensor
from .so3 import Config, Rotation, _perturb, expm_so3, logm_so3, riem_grad, riem_hess

E1 = np.array([1.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# van der Waals coefficient models


@dataclass(frozen=True)
class ConstantCvdw:
    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise InvalidInputError("constant C_vdW must be positive")

    def __call__(self, Us, Vs):
        return np.full(np.shape(Us)[:-2], float(self.value))

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class PolynomialCvdw:
    """c0 + sum_ij c_ij (U D1)_i (V D2)_j^2, positive when c0 beats the worst case of the sum."""

    c0: float
    coeffs: np.ndarray
    D1: np.ndarray
    D2: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.coeffs, dtype=float).reshape(3, 3)
        D1 = np.asarray(self.D1, dtype=float)
        D2 = np.asarray(self.D2, dtype=float)
        object.__setattr__(self, "coeffs", C)
        object.__setattr__(self, "D1", D1)
        object.__setattr__(self, "D2", D2)
        bound = np.abs(C).sum() * np.linalg.norm(D1) * np.linalg.norm(D2) ** 2
        if not self.c0 > bound:
            raise InvalidInputError(f"c0 = {self.c0} does not exceed the bound {bound:.6g}; C_vdW could vanish")

    def __call__(self, Us, Vs):
        a = Us @ self.D1
        b = (Vs @ self.D2) ** 2
        return self.c0 + np.einsum("...i,ij,...j->...", a, self.coeffs, b)

    def to_dict(self):
        return {"kind": "polynomial", "c0": self.c0, "coeffs": self.coeffs.tolist(),
                "D1": self.D1.tolist(), "D2": self.D2.tolist()}


class CallableCvdw:
    """Wrap a scalar ``fn(U, V) -> float`` (for instance a toy-quantum evaluation)."""

    def __init__(self, fn, label="callable"):
        self.fn = fn
        self.label = label

    def __call__(self, Us, Vs):
        Us = np.asarray(Us)
        flat_U = Us.reshape(-1, 3, 3)
        flat_V = np.asarray(Vs).reshape(-1, 3, 3)
        out = np.array([self.fn(U, V) for U, V in zip(flat_U, flat_V)], dtype=float)
        return out.reshape(Us.shape[:-2])

    def to_dict(self):
        return {"kind": self.label}


# ---------------------------------------------------------------------------
# model energy


@dataclass
class ModelEnergy:
    m1: MultipoleSet
    m2: MultipoleSet
    E1: float = 0.0
    E2: float = 0.0
    cvdw: object = field(default_factory=ConstantCvdw)
    order: int = 4
    kappa: float = 0.0
    repulsion: float = 0.0
    L_min: float = 1e-6

    def __post_init__(self):
        if not 1 <= self.order <= 5:
            raise InvalidInputError("expansion order N must lie in 1..5")
        if self.kappa > 0:
            raise InvalidInputError("kappa must be <= 0")
        if self.repulsion < 0:
            raise InvalidInputError("repulsion coefficient must be >= 0")
        terms = []
        for n, m in SUPPORTED:
            if n + m > self.order:
                continue
            if (np.linalg.norm(self.m1.tensor(n)) > self.m1.vanish_tol(n)
                    and np.linalg.norm(self.m2.tensor(m)) > self.m2.vanish_tol(m)):
                terms.append((n, m, make_batch_objective(self.m1, self.m2, n, m)))
        self._terms = terms

    @property
    def e_inf(self):
        return self.E1 + self.E2

    def leading_orders(self):
        """(n1, n2) of the first nonzero multipoles when their term is in the model, else None."""
        n1 = first_nonzero_multipole(self.m1)
        n2 = first_nonzero_multipole(self.m2)
        if n1 is None or n2 is None or n1 + n2 > self.order:
            return None
        return n1, n2

    def energy_batch(self, L, Us, Vs):
        L = np.asarray(L, dtype=float)
        if np.any(L < self.L_min):
            raise OutOfDomainError(f"separation below the model floor L_min = {self.L_min}")
        out = self.e_inf + self.kappa / L
        for n, m, fb in self._terms:
            out = out + fb(Us, Vs) / L ** (n + m + 1)
        c = self.cvdw(Us, Vs)
        if np.any(c <= 0):
            raise InvalidInputError("C_vdW must stay positive")
        out = out - c / L**6
        if self.repulsion:
            out = out + self.repulsion / L**12
        return np.broadcast_to(out, np.broadcast_shapes(L.shape, np.shape(Us)[:-2])).astype(float)

    def __call__(self, tau: Config) -> float:
        L, U, V = tau.matrices()
        return float(self.energy_batch(L, U[None], V[None])[0])

    def to_dict(self):
        cv = self.cvdw.to_dict() if hasattr(self.cvdw, "to_dict") else {"kind": "custom"}
        return {"E1": self.E1, "E2": self.E2, "order": self.order, "kappa": self.kappa,
                "repulsion": self.repulsion, "L_min": self.L_min, "cvdw": cv,
                "m1": self.m1.to_dict(), "m2": self.m2.to_dict()}


def model_energy(me: ModelEnergy, tau: Config) -> float:
    return me(tau)


def energy_grad_batch(me, L, Us, Vs, h=1e-5):
    """Central-difference gradients (K, 7) in the chart (dL, body omega_U, body omega_V)."""
    L = np.asarray(L, dtype=float)
    g = np.empty((L.shape[0], 7))
    hL = h * np.maximum(L, 1.0)
    g[:, 0] = (me.energy_batch(L + hL, Us, Vs) - me.energy_batch(L - hL, Us, Vs)) / (2 * hL)
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        Up, Vp = _perturb(Us, Vs, e)
        Um, Vm = _perturb(Us, Vs, -e)
        g[:, 1 + i] = (me.energy_batch(L, Up, Vp) - me.energy_batch(L, Um, Vm)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# paths


def _log_chart(L0, U0, V0, L1, U1, V1):
    """Chart coordinates of (L1, U1, V1) seen from (L0, U0, V0), batched."""
    wU = logm_so3(np.swapaxes(U0, -1, -2) @ U1)
    wV = logm_so3(np.swapaxes(V0, -1, -2) @ V1)
    return np.concatenate([(L1 - L0)[..., None], wU, wV], axis=-1)


def _exp_chart(L, U, V, X):
    return L + X[..., 0], U @ expm_so3(X[..., 1:4]), V @ expm_so3(X[..., 4:7])


@dataclass
class DiscretePath:
    L: np.ndarray
    U: np.ndarray
    V: np.ndarray
    energies: np.ndarray | None = None

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        if self.L.ndim != 1 or self.L.shape[0] < 2:
            raise InvalidInputError("a path needs at least two nodes")
        if self.U.shape != (len(self.L), 3, 3) or self.V.shape != (len(self.L), 3, 3):
            raise InvalidInputError("U and V must be stacks of rotation matrices matching L")

    def __len__(self):
        return len(self.L)

    @classmethod
    def from_configs(cls, configs):
        mats = [c.matrices() for c in configs]
        return cls(np.array([m[0] for m in mats]), np.array([m[1] for m in mats]),
                   np.array([m[2] for m in mats]))

    @classmethod
    def geodesic(cls, a: Config, b: Config, n_nodes=64):
        La, Ua, Va = a.matrices()
        Lb, Ub, Vb = b.matrices()
        t = np.linspace(0.0, 1.0, n_nodes)
        wU = logm_so3(Ua.T @ Ub)
        wV = logm_so3(Va.T @ Vb)
        return cls(La + t * (Lb - La), Ua @ expm_so3(t[:, None] * wU), Va @ expm_so3(t[:, None] * wV))

    @property
    def t(self):
        return np.linspace(0.0, 1.0, len(self))

    def copy(self):
        return DiscretePath(self.L.copy(), self.U.copy(), self.V.copy(),
                            None if self.energies is None else self.energies.copy())

    def configs(self):
        return [Config.from_matrices(L, U, V) for L, U, V in zip(self.L, self.U, self.V)]

    def segment_lengths(self):
        X = _log_chart(self.L[:-1], self.U[:-1], self.V[:-1], self.L[1:], self.U[1:], self.V[1:])
        return np.linalg.norm(X, axis=1)

    def evaluate(self, me):
        self.energies = me.energy_batch(self.L, self.U, self.V)
        return self.energies

    @property
    def max_energy(self):
        if self.energies is None:
            raise InvalidInputError("path energies not evaluated")
        return float(np.max(self.energies))

    def point_at(self, j, frac):
        """Configuration a fraction ``frac`` of the way along segment j."""
        X = _log_chart(self.L[j], self.U[j], self.V[j], self.L[j + 1], self.U[j + 1], self.V[j + 1])
        L, U, V = _exp_chart(self.L[j], self.U[j], self.V[j], frac * X)
        return float(L), U, V

    def resample(self, n_nodes=None):
        """Uniform-arclength re-mesh along the piecewise geodesic; endpoints kept exactly."""
        n_nodes = n_nodes or len(self)
        seg = self.segment_lengths()
        s = np.concatenate([[0.0], np.cumsum(seg)])
        if s[-1] == 0:
            return DiscretePath(np.repeat(self.L[:1], n_nodes), np.repeat(self.U[:1], n_nodes, 0),
                                np.repeat(self.V[:1], n_nodes, 0))
        target = np.linspace(0.0, s[-1], n_nodes)
        j = np.clip(np.searchsorted(s, target, side="right") - 1, 0, len(seg) - 1)
        frac = np.where(seg[j] > 0, (target - s[j]) / np.where(seg[j] > 0, seg[j], 1.0), 0.0)
        X = _log_chart(self.L[j], self.U[j], self.V[j], self.L[j + 1], self.U[j + 1], self.V[j + 1])
        L, U, V = _exp_chart(self.L[j], self.U[j], self.V[j], frac[:, None] * X)
        L[0], U[0], V[0] = self.L[0], self.U[0], self.V[0]
        L[-1], U[-1], V[-1] = self.L[-1], self.U[-1], self.V[-1]
        return DiscretePath(L, U, V)

    def densify(self, max_step):
        """Insert geodesic points so no segment is longer than ``max_step``."""
        seg = self.segment_lengths()
        L, U, V = [self.L[:1]], [self.U[:1]], [self.V[:1]]
        for j, d in enumerate(seg):
            k = max(1, int(np.ceil(d / max_step)))
            X = _log_chart(self.L[j], self.U[j], self.V[j], self.L[j + 1], self.U[j + 1], self.V[j + 1])
            f = (np.arange(1, k + 1) / k)[:, None]
            Ls, Us, Vs = _exp_chart(self.L[j], self.U[j], self.V[j], f * X)
            Us[-1], Vs[-1], Ls[-1] = self.U[j + 1], self.V[j + 1], self.L[j + 1]
            L.append(Ls)
            U.append(Us)
            V.append(Vs)
        return DiscretePath(np.concatenate(L), np.concatenate(U), np.concatenate(V))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "L", "uw", "ux", "uy", "uz", "vw", "vx", "vy", "vz", "energy"])
        E = self.energies if self.energies is not None else np.full(len(self), np.nan)
        for t, L, U, V, e in zip(self.t, self.L, self.U, self.V, E):
            qu = Rotation.from_matrix(U, check=False).to_list()
            qv = Rotation.from_matrix(V, check=False).to_list()
            w.writerow([f"{t:.17g}", f"{L:.17g}", *(f"{x:.17g}" for x in qu),
                        *(f"{x:.17g}" for x in qv), f"{e:.17g}"])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# local minima and the string method


@dataclass
class MinimumReport:
    tau: Config
    energy: float
    grad_norm: float
    hess_min_eig: float
    steps: int
    converged: bool


def is_local_minimum(me, tau, grad_tol=1e-6, hess_tol=1e-6, h=1e-4):
    g = riem_grad(me, tau, h).norm()
    lam = float(np.linalg.eigvalsh(riem_hess(me, tau, h))[0])
    return bool(g <= grad_tol and lam >= -hess_tol), float(g), lam


def relax_to_minimum(me, tau: Config, tol=1e-9, max_steps=500, h=1e-4, max_move=0.2) -> MinimumReport:
    """Damped Newton / gradient descent in the (L, U, V) chart; energy never increases."""
    f0 = me(tau)
    steps = 0
    gn = np.inf
    for steps in range(1, max_steps + 1):
        g = riem_grad(me, tau, h).as_array()
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            break
        H = riem_hess(me, tau, h)
        lam, vec = np.linalg.eigh(H)
        scale = max(np.abs(lam).max(), 1e-300)
        keep = np.abs(lam) > 1e-9 * scale
        if np.all(lam[keep] > 0):
            d = -(vec[:, keep] @ ((vec[:, keep].T @ g) / lam[keep]))
        else:
            d = -g / scale
        nd = np.linalg.norm(d)
        if nd > max_move:
            d *= max_move / nd
        moved = False
        for _ in range(40):
            L, U, V = tau.matrices()
            Ln, Un, Vn = _exp_chart(L, U, V, d)
            if Ln > me.L_min:
                cand = Config.from_matrices(float(Ln), Un, Vn)
                fn = me(cand)
                if fn <= f0:
                    tau, f0, moved = cand, fn, True
                    break
            d = d * 0.5
        if not moved:
            break
    lam_min = float(np.linalg.eigvalsh(riem_hess(me, tau, h))[0])
    return MinimumReport(tau, f0, gn, lam_min, steps, gn <= tol)


def _chart_batch(path, X):
    return _exp_chart(path.L, path.U, path.V, X)


def minmax_optimize(me, init: DiscretePath, iters=200, step=0.05, remesh=True, check_endpoints=True,
                    grad_tol=1e-6, hess_tol=1e-6, h=1e-5):
    """String-method descent of the path maximum with fixed endpoints.

    Interior nodes move along the component of -grad E normal to the path;
    after each sweep the path is re-meshed to uniform arclength.  A sweep is
    kept only when the largest node energy does not increase.  Returns the
    optimised path and a history of accepted maxima.
    """
    path = init.copy()
    if check_endpoints:
        for idx in (0, -1):
            tau = Config.from_matrices(path.L[idx], path.U[idx], path.V[idx])
            ok, gn, lam = is_local_minimum(me, tau, grad_tol, hess_tol)
            if not ok:
                raise PreconditionError(
                    f"path endpoint {idx} is not a local minimum (|grad| = {gn:.3g}, min eig = {lam:.3g})")
    path.evaluate(me)
    best = path.max_energy
    history = [best]
    eta = step
    K = len(path)
    if K < 3:
        return path, history
    for _ in range(iters):
        inner = slice(1, K - 1)
        g = energy_grad_batch(me, path.L[inner], path.U[inner], path.V[inner], h)
        fwd = _log_chart(path.L[inner], path.U[inner], path.V[inner], path.L[2:], path.U[2:], path.V[2:])
        bwd = _log_chart(path.L[inner], path.U[inner], path.V[inner], path.L[:-2], path.U[:-2], path.V[:-2])
        tau = fwd - bwd
        tn = np.linalg.norm(tau, axis=1, keepdims=True)
        tau = np.where(tn > 0, tau / np.where(tn > 0, tn, 1.0), 0.0)
        gperp = g - np.sum(g * tau, axis=1, keepdims=True) * tau
        gmax = np.abs(gperp).max()
        if gmax == 0:
            break
        X = -eta * gperp / gmax
        Ln, Un, Vn = _exp_chart(path.L[inner], path.U[inner], path.V[inner], X)
        if np.any(Ln <= me.L_min):
            eta *= 0.5
            continue
        cand = DiscretePath(np.concatenate([path.L[:1], Ln, path.L[-1:]]),
                            np.concatenate([path.U[:1], Un, path.U[-1:]]),
                            np.concatenate([path.V[:1], Vn, path.V[-1:]]))
        if remesh:
            cand = cand.resample(K)
        cand.evaluate(me)
        if cand.max_energy <= best:
            path, best = cand, cand.max_energy
            history.append(best)
            eta = min(eta * 1.2, 0.2)
        else:
            eta *= 0.5
            if eta < 1e-10:
                break
    return path, history


# ---------------------------------------------------------------------------
# surgery


@dataclass
class SurgeryReport:
    t0_index: int
    t1_index: int
    L_star: float
    replaced_segment: DiscretePath | None
    max_energy_before: float
    max_energy_after: float
    noop: bool = False
    mode: str = ""
    delta: float | None = None

    def to_dict(self):
        return {
            "t0_index": self.t0_index, "t1_index": self.t1_index, "L_star": self.L_star,
            "replaced_nodes": 0 if self.replaced_segment is None else len(self.replaced_segment),
            "max_energy_before": self.max_energy_before, "max_energy_after": self.max_energy_after,
            "noop": self.noop, "mode": self.mode, "delta": self.delta,
        }


def _densify_uv(pairs, max_step=0.1):
    out = [pairs[0]]
    for U1, V1 in pairs[1:]:
        U0, V0 = out[-1]
        wU, wV = logm_so3(U0.T @ U1), logm_so3(V0.T @ V1)
        k = max(1, int(np.ceil(np.hypot(np.linalg.norm(wU), np.linalg.norm(wV)) / max_step)))
        for t in np.arange(1, k + 1) / k:
            out.append((U0 @ expm_so3(t * wU), V0 @ expm_so3(t * wV)))
        out[-1] = (U1, V1)
    return out


def _rotation_leg(me, L_star, a, b, delta, descent_steps):
    """Pairs (U, V) joining a to b at fixed L_star, plus the mode used and delta."""
    lead = me.leading_orders()
    if lead is None or me.kappa < 0:
        return _densify_uv([a, b]), "any-rotation", None
    n, m = lead
    if n + m == 5:
        raise SurgeryError(f"leading orders ({n}, {m}) have n+m = 5: sublevel connectivity is not available")
    if delta is None:
        delta = 0.5 * compute_delta0(n, m, me.m1, me.m2)
    k = n + m + 1
    e_inf = me.e_inf

    def scaled(Us, Vs):
        return (me.energy_batch(L_star, Us, Vs) - e_inf) * L_star**k

    ends = []
    for U, V in (a, b):
        rep = descend_to_pseudo_minimum(scaled, (U, V), batched=True, max_steps=descent_steps, tol=1e-6)
        ends.append(rep)
    fb = make_batch_objective(me.m1, me.m2, n, m)
    for name, rep in zip(("first", "last"), ends):
        f = float(fb(rep.U[None], rep.V[None])[0])
        if not f < -delta:
            raise SurgeryError(
                f"{name} crossing: pseudo-minimum has F^({n},{m}) = {f:.6g}, not below -delta = {-delta:.6g} "
                "(negative energy at near-critical points fails)")
    sub = connect_negative_sublevel(n, m, me.m1, me.m2, ends[0].point, ends[1].point, delta)
    leg = list(ends[0].trajectory) + list(sub.nodes[1:]) + list(ends[1].trajectory[::-1][1:])
    return _densify_uv(leg), "sublevel", delta


def surgery(me, path: DiscretePath, L_star: float, delta=None, descent_steps=400, tol=1e-9):
    """Replace the excursion beyond ``L_star`` by a rotation leg at constant L = L_star."""
    if path.energies is None:
        path = path.copy()
        path.evaluate(me)
    above = np.flatnonzero(path.L > L_star)
    if above.size == 0:
        rep = SurgeryReport(-1, -1, float(L_star), None, path.max_energy, path.max_energy, noop=True, mode="no-op")
        return path, rep
    if path.L[0] >= L_star or path.L[-1] >= L_star:
        raise PreconditionError("L_star must exceed the separation at both endpoints")
    i0, i1 = int(above[0]), int(above[-1])
    f0 = (L_star - path.L[i0 - 1]) / (path.L[i0] - path.L[i0 - 1])
    _, Ua, Va = path.point_at(i0 - 1, f0)
    f1 = (path.L[i1] - L_star) / (path.L[i1] - path.L[i1 + 1])
    _, Ub, Vb = path.point_at(i1, f1)
    cross = me.energy_batch(L_star, np.array([Ua, Ub]), np.array([Va, Vb]))
    before = max(path.max_energy, float(cross.max()))
    leg, mode, delta = _rotation_leg(me, L_star, (Ua, Va), (Ub, Vb), delta, descent_steps)
    Uleg = np.array([u for u, _ in leg])
    Vleg = np.array([v for _, v in leg])
    seg = DiscretePath(np.full(len(leg), float(L_star)), Uleg, Vleg)
    seg.evaluate(me)
    new = DiscretePath(np.concatenate([path.L[:i0], seg.L, path.L[i1 + 1:]]),
                       np.concatenate([path.U[:i0], seg.U, path.U[i1 + 1:]]),
                       np.concatenate([path.V[:i0], seg.V, path.V[i1 + 1:]]))
    new.evaluate(me)
    after = new.max_energy
    rep = SurgeryReport(i0, i1, float(L_star), seg, before, after, mode=mode, delta=delta)
    if after > before + tol:
        raise SurgeryError(f"surgery raised the path maximum from {before:.12g} to {after:.12g}")
    return new, rep


# ---------------------------------------------------------------------------
# transition state


def _stabilizer(ms: MultipoleSet, orders, h=1e-5):
    """Body-frame angular velocities that leave every listed tensor of ``ms`` fixed."""
    rows = []
    for n in orders:
        T = np.asarray(ms.tensor(n))
        if np.linalg.norm(T) <= ms.vanish_tol(n):
            continue
        cols = []
        for a in range(3):
            w = np.zeros(3)
            w[a] = h
            cols.append(((rotate_tensor(T, expm_so3(w)) - rotate_tensor(T, expm_so3(-w))) / (2 * h)).ravel())
        rows.append(np.array(cols).T / max(np.linalg.norm(T), 1e-300))
    if not rows:
        return np.eye(3)
    G = np.vstack(rows)
    _, s, vt = np.linalg.svd(G)
    s = np.concatenate([s, np.zeros(3 - len(s))])
    return vt[s <= 1e-7 * max(s.max(), 1e-300)]


def symmetry_modes(me, tau: Config, tol=1e-9):
    """Orthonormal chart directions along which the model energy is exactly flat."""
    L, U, V = tau.matrices()
    cands = [np.concatenate([[0.0], U.T @ E1, V.T @ E1])]
    orders1 = sorted({n for n, _, _ in me._terms})
    orders2 = sorted({m for _, m, _ in me._terms})
    for w in _stabilizer(me.m1, orders1):
        cands.append(np.concatenate([[0.0], w, np.zeros(3)]))
    for w in _stabilizer(me.m2, orders2):
        cands.append(np.concatenate([[0.0], np.zeros(3), w]))
    f0 = me(tau)
    scale = max(abs(f0 - me.e_inf), 1e-300)
    keep = []
    for c in cands:
        c = c / np.linalg.norm(c)
        vals = [me(Config.from_matrices(*[float(x) if i == 0 else x for i, x in
                                          enumerate(_exp_chart(L, U, V, s * c))])) for s in (-0.3, 0.3)]
        if max(abs(v - f0) for v in vals) <= tol * scale + 1e-15:
            keep.append(c)
    if not keep:
        return np.zeros((0, 7))
    u, s, vt = np.linalg.svd(np.array(keep))
    r = int(np.sum(s > 1e-8))
    return vt[:r]


@dataclass
class TransitionState:
    tau: Config
    energy: float
    grad_norm: float
    hess_spectrum: np.ndarray
    reduced_spectrum: np.ndarray
    negative_count: int
    symmetry_dim: int
    refined: bool
    path_index: int
    path_max: float

    def to_dict(self):
        return {
            "tau": self.tau.to_dict(), "energy": self.energy, "grad_norm": self.grad_norm,
            "hess_spectrum": self.hess_spectrum.tolist(), "reduced_spectrum": self.reduced_spectrum.tolist(),
            "negative_count": self.negative_count, "symmetry_dim": self.symmetry_dim,
            "refined": self.refined, "path_index": self.path_index, "path_max": self.path_max,
        }


def transition_state(me, path: DiscretePath, refine=True, h=1e-4, tol=1e-10, max_iter=60,
                     max_move=0.05, neg_tol=1e-8):
    """Refine the highest node to a critical point and count its unstable directions.

    Newton steps on the gradient act on the complement of the symmetry modes
    and are accepted only when they shrink the gradient norm.
    """
    if path.energies is None:
        path = path.copy()
        path.evaluate(me)
    i = int(np.argmax(path.energies))
    start = Config.from_matrices(path.L[i], path.U[i], path.V[i])
    tau = start
    g = riem_grad(me, tau, h).as_array()
    gn = float(np.linalg.norm(g))
    refined = False
    if refine:
        for _ in range(max_iter):
            if gn <= tol:
                break
            S = symmetry_modes(me, tau)
            B = np.linalg.svd(np.eye(7) - S.T @ S)[0][:, : 7 - len(S)]
            H = riem_hess(me, tau, h)
            Hr = B.T @ H @ B
            lam, vec = np.linalg.eigh(Hr)
            inv = np.divide(1.0, lam, out=np.zeros_like(lam), where=np.abs(lam) > 1e-12 * np.abs(lam).max())
            d = -B @ (vec @ (inv * (vec.T @ (B.T @ g))))
            nd = np.linalg.norm(d)
            if nd > max_move:
                d *= max_move / nd
            ok = False
            for _ in range(30):
                L, U, V = tau.matrices()
                Ln, Un, Vn = _exp_chart(L, U, V, d)
                if Ln > me.L_min:
                    cand = Config.from_matrices(float(Ln), Un, Vn)
                    gc = riem_grad(me, cand, h).as_array()
                    if np.linalg.norm(gc) < gn:
                        tau, g, gn, ok = cand, gc, float(np.linalg.norm(gc)), True
                        break
                d = d * 0.5
            if not ok:
                break
        refined = gn <= max(tol, 1e-7)
    H = riem_hess(me, tau, h)
    S = symmetry_modes(me, tau)
    B = np.linalg.svd(np.eye(7) - S.T @ S)[0][:, : 7 - len(S)]
    red = np.linalg.eigvalsh(B.T @ H @ B)
    full = np.linalg.eigvalsh(H)
    neg = int(np.sum(red < -neg_tol * max(np.abs(red).max(), 1e-300)))
    return TransitionState(tau, me(tau), gn, full, red, neg, len(S), refined, i, path.max_energy)
