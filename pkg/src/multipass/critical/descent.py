"""Geodesic descent to local pseudo-minima and batched critical-point search.

A point is accepted as a pseudo-minimum when the gradient norm is below ``tol``
and no Hessian eigenvalue is below ``-hess_tol``.  Every accepted step lowers
(or keeps) the objective, so the recorded trajectory never climbs above its
starting value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..so3 import batch_grad_uv, batch_hess_uv, expm_so3


@dataclass
class PseudoMinReport:
    U: np.ndarray
    V: np.ndarray
    grad_norm: float
    hess_min_eig: float
    f_value: float
    steps: int
    converged: bool
    trajectory: list = field(default_factory=list)
    f_trajectory: list = field(default_factory=list)

    @property
    def point(self):
        return self.U, self.V

    def to_dict(self):
        return {
            "grad_norm": self.grad_norm,
            "hess_min_eig": self.hess_min_eig,
            "f_value": self.f_value,
            "steps": self.steps,
            "converged": self.converged,
        }


def as_batched(f):
    """Wrap a scalar ``f(U, V)`` into the stack-in, array-out form."""
    def fb(Us, Vs):
        return np.array([f(U, V) for U, V in zip(Us, Vs)], dtype=float)
    return fb


def move(U, V, x):
    """exp chart on SO(3) x SO(3); ``x`` is a 6-vector of body-frame angles."""
    return U @ expm_so3(x[:3]), V @ expm_so3(x[3:])


def move_batch(Us, Vs, X):
    return Us @ expm_so3(X[:, :3]), Vs @ expm_so3(X[:, 3:])


def descend_to_pseudo_minimum(f, start, step=0.5, tol=1e-7, hess_tol=1e-6, max_steps=5000,
                              h=1e-4, batched=False, max_move=0.25, record=True):
    """Walk downhill from ``start = (U, V)`` until a local pseudo-minimum is reached.

    ``f`` is a scalar function of two rotation matrices (or a stack-wise function
    when ``batched`` is true).  Steps never exceed ``max_move`` radians.
    """
    fb = f if batched else as_batched(f)
    U, V = (np.array(start[0], dtype=float), np.array(start[1], dtype=float))

    def val(U, V):
        return float(fb(U[None], V[None])[0])

    def grad(U, V):
        return batch_grad_uv(fb, U[None], V[None], h)[0]

    def hess(U, V):
        return batch_hess_uv(fb, U[None], V[None], h)[0]

    fx = val(U, V)
    traj = [(U, V)] if record else []
    ftraj = [fx] if record else []
    alpha = step
    steps = 0
    converged = False
    lam_min = np.nan
    gn = np.inf

    def accept(Un, Vn, fn):
        nonlocal U, V, fx, steps
        assert fn <= fx, "descent step increased the objective"
        U, V, fx = Un, Vn, fn
        steps += 1
        if record:
            traj.append((U, V))
            ftraj.append(fx)

    while steps < max_steps:
        g = grad(U, V)
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            lam, vecs = np.linalg.eigh(hess(U, V))
            lam_min = float(lam[0])
            if lam_min >= -hess_tol:
                converged = True
                break
            d = vecs[:, 0]
            moved = False
            t = max_move
            while t > 1e-6 and not moved:
                for sgn in (1.0, -1.0):
                    Un, Vn = move(U, V, sgn * t * d)
                    fn = val(Un, Vn)
                    if fn < fx:
                        accept(Un, Vn, fn)
                        moved = True
                        break
                t *= 0.5
            if not moved:
                break
            continue

        if gn < 1e-2 * max(1.0, abs(fx)):
            H = hess(U, V)
            lam, vecs = np.linalg.eigh(H)
            scale = max(np.abs(lam).max(), 1e-300)
            keep = np.abs(lam) > 1e-7 * scale
            if np.all(lam[keep] > 0):
                c = vecs[:, keep].T @ g
                d = -(vecs[:, keep] @ (c / lam[keep]))
                nd = np.linalg.norm(d)
                if nd > max_move:
                    d *= max_move / nd
                Un, Vn = move(U, V, d)
                fn = val(Un, Vn)
                if fn <= fx:
                    accept(Un, Vn, fn)
                    continue

        t = alpha
        moved = False
        while t * gn > 1e-15:
            dx = -t * g
            nd = np.linalg.norm(dx)
            if nd > max_move:
                dx *= max_move / nd
            Un, Vn = move(U, V, dx)
            fn = val(Un, Vn)
            if fn <= fx - 1e-4 * t * gn**2 * min(1.0, max_move / max(t * gn, 1e-300)):
                accept(Un, Vn, fn)
                alpha = min(2 * t, 10.0 * step)
                moved = True
                break
            t *= 0.5
        if not moved:
            break

    if not converged and np.isnan(lam_min):
        lam_min = float(np.linalg.eigvalsh(hess(U, V))[0])
    return PseudoMinReport(U, V, gn, lam_min, fx, steps, converged, traj, ftraj)


# ---------------------------------------------------------------------------
# batched routines for Monte-Carlo work


def batch_descend(fb, Us, Vs, iters=100, h=1e-4, step=0.5, max_move=0.25, callback=None):
    """Vectorised gradient descent with per-sample backtracking.

    ``callback(k, Us, Vs, f, g)`` sees every iterate before the step is taken.
    Returns final stacks, values and gradients.
    """
    Us = np.array(Us, dtype=float)
    Vs = np.array(Vs, dtype=float)
    n = Us.shape[0]
    f = fb(Us, Vs)
    alpha = np.full(n, step)
    for k in range(iters):
        g = batch_grad_uv(fb, Us, Vs, h)
        if callback is not None:
            callback(k, Us, Vs, f, g)
        gn = np.linalg.norm(g, axis=1)
        active = np.ones(n, dtype=bool)
        t = alpha.copy()
        for _ in range(30):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            dx = -t[idx, None] * g[idx]
            nd = np.linalg.norm(dx, axis=1)
            clip = nd > max_move
            dx[clip] *= (max_move / nd[clip])[:, None]
            Un, Vn = move_batch(Us[idx], Vs[idx], dx)
            fn = fb(Un, Vn)
            ok = fn <= f[idx] - 1e-4 * np.minimum(t[idx] * gn[idx] ** 2, max_move * gn[idx])
            acc = idx[ok]
            Us[acc], Vs[acc], f[acc] = Un[ok], Vn[ok], fn[ok]
            alpha[acc] = np.minimum(2 * t[acc], 10 * step)
            active[acc] = False
            t[idx[~ok]] *= 0.5
        alpha[active] = t[active]
    g = batch_grad_uv(fb, Us, Vs, h)
    if callback is not None:
        callback(iters, Us, Vs, f, g)
    return Us, Vs, f, g


def batch_newton_critical(fb, Us, Vs, iters=40, h=1e-4, max_move=0.3, rcond=1e-7):
    """Drive the gradient to zero with pseudo-inverse Newton steps.

    Steps are accepted per sample only when they reduce the gradient norm, so
    the iteration converges to whatever critical point is nearby (minimum,
    maximum or saddle).
    """
    Us = np.array(Us, dtype=float)
    Vs = np.array(Vs, dtype=float)
    g = batch_grad_uv(fb, Us, Vs, h)
    gn = np.linalg.norm(g, axis=1)
    for _ in range(iters):
        H = batch_hess_uv(fb, Us, Vs, h)
        lam, vec = np.linalg.eigh(H)
        scale = np.maximum(np.abs(lam).max(axis=1, keepdims=True), 1e-300)
        keep = np.abs(lam) > rcond * scale
        inv = np.divide(1.0, lam, out=np.zeros_like(lam), where=keep)
        c = np.einsum("nji,nj->ni", vec, g)
        d = -np.einsum("nij,nj->ni", vec, inv * c)
        t = np.ones(len(Us))
        pending = np.ones(len(Us), dtype=bool)
        for _ in range(8):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            dx = t[idx, None] * d[idx]
            nd = np.linalg.norm(dx, axis=1)
            clip = nd > max_move
            dx[clip] *= (max_move / nd[clip])[:, None]
            Un, Vn = move_batch(Us[idx], Vs[idx], dx)
            gnew = batch_grad_uv(fb, Un, Vn, h)
            gnn = np.linalg.norm(gnew, axis=1)
            ok = gnn < gn[idx]
            acc = idx[ok]
            Us[acc], Vs[acc], g[acc], gn[acc] = Un[ok], Vn[ok], gnew[ok], gnn[ok]
            pending[acc] = False
            t[idx[~ok]] *= 0.5
        if np.all(gn < 1e-10):
            break
    return Us, Vs, gn


def critical_levels(fb, starts, tol=1e-6, grad_tol=1e-7, h=1e-4, descent_iters=150):
    """Distinct critical values reached by descent, ascent and Newton from ``starts``.

    Returns sorted cluster representatives together with how many converged
    runs landed in each cluster.
    """
    Us, Vs = starts
    neg = lambda A, B: -fb(A, B)
    found = []
    for obj, polish in ((fb, True), (neg, True), (None, True)):
        if obj is None:
            U1, V1 = Us, Vs
        else:
            U1, V1, _, _ = batch_descend(obj, Us, Vs, iters=descent_iters, h=h)
        U2, V2, gn = batch_newton_critical(fb, U1, V1, h=h)
        ok = gn <= grad_tol
        found.append(fb(U2[ok], V2[ok]))
    vals = np.sort(np.concatenate(found))
    levels, counts = [], []
    for v in vals:
        if levels and abs(v - levels[-1]) <= tol:
            counts[-1] += 1
        else:
            levels.append(float(v))
            counts.append(1)
    return levels, counts
