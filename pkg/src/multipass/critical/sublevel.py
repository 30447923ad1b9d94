"""Explicit paths inside the negative sublevel set {F^(n,m) < -delta} on SO(3) x SO(3).

Dipole cases work on the sphere pair (e, p): each endpoint first turns its
dipole onto the fiber minimiser p = -sign X(e)/|X(e)|, then e is transported
along a path on which |X| stays above delta/|D|, and the two ends are matched
by motions that leave (e, p) fixed.

The quadrupole-quadrupole case minimises over the second molecule, walks the
first molecule to a bridging orientation with a favourable eigenvalue
pattern, and links the fiber minimisers there by half-turns about common
eigenvectors.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, minimum_spanning_tree
from scipy.spatial import cKDTree

from ..errors import ConnectionFailedError, PreconditionError, UnsupportedDeltaError
from ..interaction import make_batch_objective
from ..multipole import as_matrix
from ..so3 import Rotation, expm_so3, logm_so3, minimal_rotation, rotation_angle, rotation_about
from .dipolar import DipolarReduction
from .localmin import _key, _unkey, check_case, qq_c0
from .structure import L_operator, fibonacci_sphere, orient_M_sign, sorted_eigh

MAX_STEP = 0.1


@dataclass
class SublevelPath:
    nodes: list
    f_values: list
    delta: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.nodes)

    @property
    def max_f(self):
        return float(max(self.f_values))

    def steps(self):
        if len(self.nodes) < 2:
            return np.zeros(0)
        U = np.array([u for u, _ in self.nodes])
        V = np.array([v for _, v in self.nodes])
        dU = rotation_angle(np.swapaxes(U[:-1], 1, 2) @ U[1:])
        dV = rotation_angle(np.swapaxes(V[:-1], 1, 2) @ V[1:])
        return np.sqrt(dU**2 + dV**2)

    def is_valid(self, max_step=MAX_STEP):
        return bool(self.max_f < -self.delta and np.all(self.steps() <= max_step + 1e-12))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "uw", "ux", "uy", "uz", "vw", "vx", "vy", "vz", "F"])
        for i, ((U, V), f) in enumerate(zip(self.nodes, self.f_values)):
            qu = Rotation.from_matrix(U, check=False).to_list()
            qv = Rotation.from_matrix(V, check=False).to_list()
            w.writerow([i, *(f"{x:.17g}" for x in qu), *(f"{x:.17g}" for x in qv), f"{f:.17g}"])
        return buf.getvalue()

    def to_dict(self):
        return {
            "delta": self.delta,
            "n_nodes": len(self.nodes),
            "max_f": self.max_f,
            "max_step": float(self.steps().max()) if len(self.nodes) > 1 else 0.0,
            **self.meta,
        }


def _interp(A, B, t):
    return A @ expm_so3(t * logm_so3(A.T @ B))


def _densify(nodes, max_step=MAX_STEP):
    """Insert geodesic points so consecutive nodes are at most ``max_step`` apart."""
    U = np.array([u for u, _ in nodes])
    V = np.array([v for _, v in nodes])
    d = np.hypot(rotation_angle(np.swapaxes(U[:-1], 1, 2) @ U[1:]),
                 rotation_angle(np.swapaxes(V[:-1], 1, 2) @ V[1:]))
    out = [nodes[0]]
    for i in range(1, len(nodes)):
        if d[i - 1] <= 1e-13:
            continue
        k = int(np.ceil(d[i - 1] / (0.98 * max_step)))
        U0, V0 = nodes[i - 1]
        for t in np.arange(1, k) / k:
            out.append((_interp(U0, nodes[i][0], t), _interp(V0, nodes[i][1], t)))
        out.append(nodes[i])
    return out


def _arc(a, b, n):
    """``n`` + 1 points on the great circle from a to b (b = -a picks some plane)."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    c = float(np.clip(a @ b, -1, 1))
    if c < -1 + 1e-12:
        w = np.cross(a, [1.0, 0, 0] if abs(a[0]) < 0.9 else [0, 1.0, 0])
        w /= np.linalg.norm(w)
        t = np.linspace(0, np.pi, n + 1)
        return np.cos(t)[:, None] * a + np.sin(t)[:, None] * w
    R = minimal_rotation(a, b)
    w = logm_so3(R)
    return np.array([expm_so3(t * w) @ a for t in np.linspace(0, 1, n + 1)])


# ---------------------------------------------------------------------------
# dipole-multipole


class _DipoleConnector:
    def __init__(self, n, m, m1, m2, n_grid=6000, k=10):
        self.n, self.m = n, m
        self.red = DipolarReduction(m1, m2, n, m)
        self.fb = make_batch_objective(m1, m2, n, m)
        red = self.red
        self.grid = fibonacci_sphere(n_grid)
        self.g = red.xnorm(self.grid)
        self.tree = cKDTree(self.grid)
        _, nbr = self.tree.query(self.grid, k=k + 1)
        rows = np.repeat(np.arange(n_grid), k)
        cols = nbr[:, 1:].ravel()
        keep = rows < cols
        rows, cols = rows[keep], cols[keep]
        w = self._arc_min(self.grid[rows], self.grid[cols])
        self.edges = (rows, cols, w)
        big = float(self.g.max()) + 1.0
        G = coo_matrix((big - w, (rows, cols)), shape=(n_grid, n_grid)).tocsr()
        T = minimum_spanning_tree(G)
        self.mst = (T + T.T).tocsr()
        self.gmin = red.min_xnorm()
        self.threshold = self._connectivity_level()

    def _arc_min(self, a, b, samples=6):
        t = np.linspace(0, 1, samples)[:, None, None]
        pts = (1 - t) * a + t * b
        pts /= np.linalg.norm(pts, axis=-1, keepdims=True)
        return self.red.xnorm(pts).min(axis=0)

    def _connectivity_level(self):
        """Largest s such that the grid graph restricted to {|X| > s'} is connected for all s' < s.

        A node joins when its first edge does, so isolated grid points never
        count as separate components.
        """
        rows, cols, w = self.edges
        order = np.argsort(-w, kind="stable")
        parent = np.arange(len(self.grid))
        born = np.zeros(len(self.grid), dtype=bool)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        count = 0
        level = 0.0
        for e in order:
            i, j = rows[e], cols[e]
            if not born[i] and not born[j]:
                count += 1
            elif born[i] and born[j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    count -= 1
            born[i] = born[j] = True
            parent[find(i)] = find(j)
            if count > 1:
                level = float(w[e])
        return level

    def delta0(self):
        red = self.red
        if red.k == 1:
            return 0.5 * red.dnorm * float(np.linalg.norm(red.T))
        if red.k == 2:
            scale = float(self.g.max())
            if self.gmin > 1e-9 * scale:
                return red.dnorm * self.gmin
            return red.dnorm * float(np.abs(np.linalg.eigvalsh(red.T)).max())
        return red.dnorm * self.threshold

    # -- legs ---------------------------------------------------------------

    def _fiber_leg(self, A, B):
        """Turn the dipole onto the fiber minimiser along a great circle (F decreases)."""
        red = self.red
        e, p = red.reduce_ab(A, B)
        target = red.best_p(e)
        ang = np.arccos(np.clip(p @ target, -1, 1))
        k = max(1, int(np.ceil(ang / 0.09)))
        nodes = []
        for q in _arc(p, target, k)[1:]:
            A = red.lift_p(A, B, q)
            nodes.append(red.join(A, B))
        return A, B, nodes

    def _base_curve(self, e0, e1, level):
        """Sphere path from e0 to e1 with |X| > level, or raise."""
        n = max(2, int(np.ceil(np.arccos(np.clip(e0 @ e1, -1, 1)) / 0.02)))
        arc = _arc(e0, e1, n)
        if self.red.xnorm(arc).min() > level:
            return arc
        # the climbs only ever raise |X|, so they can be kept as path pieces
        up0 = self._climb(e0, level)
        up1 = self._climb(e1, level)
        s, path_s = self._attach(up0[-1], level)
        t, path_t = self._attach(up1[-1], level)
        _, pred = breadth_first_order(self.mst, s, directed=False, return_predecessors=True)
        chain = [t]
        while chain[-1] != s:
            nxt = pred[chain[-1]]
            if nxt < 0:
                raise ConnectionFailedError("grid graph disconnected")
            chain.append(nxt)
        chain = chain[::-1]
        pts = [*up0, *path_s[1:]]
        for i, j in zip(chain[:-1], chain[1:]):
            pts.extend(_arc(self.grid[i], self.grid[j], 4)[1:])
        pts.extend(path_t[::-1][1:])
        pts.extend(up1[::-1][1:])
        pts = np.array(pts)
        if self.red.xnorm(pts).min() <= level:
            raise ConnectionFailedError("no sphere path keeps |X| above the requested level")
        return pts

    def _climb(self, e, level, steps=400, h=1e-6):
        """Gradient ascent of |X| on the sphere until comfortably above ``level``; returns the trajectory."""
        g = self.red.xnorm
        traj = [e]
        for _ in range(steps):
            if g(e) > 1.5 * level:
                break
            P = np.eye(3) - np.outer(e, e)
            grad = P @ np.array([(g(e + h * u) - g(e - h * u)) / (2 * h) for u in np.eye(3)])
            gn = np.linalg.norm(grad)
            if gn == 0:
                break
            nxt = e + 0.01 * grad / gn
            nxt /= np.linalg.norm(nxt)
            if g(nxt) <= g(e):
                break
            e = nxt
            traj.append(e)
        return traj

    def _attach(self, e, level):
        """Pick the grid node reachable from ``e`` by the best short arc."""
        _, idx = self.tree.query(e, k=16)
        best, best_val = None, -np.inf
        for i in idx:
            val = self.red.xnorm(_arc(e, self.grid[i], 8)).min()
            if val > best_val:
                best, best_val = i, val
        if best_val <= level:
            raise ConnectionFailedError("endpoint cannot be attached to the sphere grid")
        return best, list(_arc(e, self.grid[best], 8))

    def _transport(self, A, B, curve):
        red = self.red
        nodes = []
        for e_next in curve[1:]:
            B = B @ minimal_rotation(B[0], e_next).T
            A = red.lift_p(A, B, red.best_p(e_next))
            nodes.append(red.join(A, B))
        return A, B, nodes

    def _match(self, A, B, A2, B2):
        """Rotate (A, B) onto (A2, B2) without changing (e, p)."""
        nodes = []
        Rx = B2 @ B.T
        w = logm_so3(Rx)
        k = max(1, int(np.ceil(np.linalg.norm(w) / 0.07)))
        for t in np.arange(1, k + 1) / k:
            R = expm_so3(t * w)
            nodes.append(self.red.join(R @ A, R @ B))
        A = Rx @ A
        B = B2
        wd = logm_so3(A.T @ A2)
        k = max(1, int(np.ceil(np.linalg.norm(wd) / 0.07)))
        for t in np.arange(1, k + 1) / k:
            nodes.append(self.red.join(A @ expm_so3(t * wd), B))
        return nodes

    def connect(self, start, end, delta):
        red = self.red
        A0, B0 = red.split(*start)
        A1, B1 = red.split(*end)
        A0, B0, leg0 = self._fiber_leg(A0, B0)
        A1, B1, leg1 = self._fiber_leg(A1, B1)
        e0, _ = red.reduce_ab(A0, B0)
        e1, _ = red.reduce_ab(A1, B1)
        curve = self._base_curve(e0, e1, delta / red.dnorm)
        A, B, mid = self._transport(A0, B0, curve)
        tail = self._match(A, B, A1, B1)
        back = ([end] + leg1)[:-1]
        return [start] + leg0 + mid + tail + back[::-1]


# ---------------------------------------------------------------------------
# quadrupole-quadrupole


def _vee(K):
    return np.array([K[2, 1], K[0, 2], K[1, 0]])


def _rot_frame(vecs):
    vecs = np.array(vecs, dtype=float)
    if np.linalg.det(vecs) < 0:
        vecs[:, 2] *= -1
    return vecs


def _axis_rot(k, theta):
    return rotation_about(np.eye(3)[k], theta)


class _QQConnector:
    def __init__(self, m1, m2):
        self.Q1ref = np.asarray(m1.Q, float)
        self.Q2ref = np.asarray(m2.Q, float)
        self.fb = make_batch_objective(m1, m2, 2, 2)
        self.c0 = qq_c0(self.Q1ref, self.Q2ref)
        b_sorted = np.sort(np.linalg.eigvalsh(self.Q2ref))[::-1]
        want = "two-positive" if b_sorted[1] >= 0 else "two-negative"
        self.want = want
        self.Ut = orient_M_sign(self.Q1ref, want).matrix.T
        self.Lt = self._L(self.Ut)
        a, P = sorted_eigh(self.Lt)
        b, W = sorted_eigh(self.Q2ref, descending=True)
        self.a, self.P = a, _rot_frame(P)
        self.b, self.W = b, _rot_frame(W)
        sa = max(np.abs(a).max(), 1e-300)
        sb = max(np.abs(b).max(), 1e-300)
        self.left_gens = [k for k in range(3) if abs(a[(k + 1) % 3] - a[(k + 2) % 3]) <= 1e-9 * sa]
        self.right_gens = [k for k in range(3) if abs(b[(k + 1) % 3] - b[(k + 2) % 3]) <= 1e-9 * sb]
        self.fmid = []
        for k in range(3):
            j, l = (k + 1) % 3, (k + 2) % 3
            bb = b.copy()
            bb[j], bb[l] = b[l], b[j]
            self.fmid.append(float(a @ bb) / 3.0)
        self.delta_prime = -sorted(self.fmid)[1]

    def delta0(self):
        return min(self.delta_prime, self.c0 / 2.0)

    def _L(self, U):
        return L_operator(U @ self.Q1ref @ U.T)

    def f(self, U, V):
        return float(np.trace(self._L(U) @ V @ self.Q2ref @ V.T)) / 3.0

    def _descend_V(self, L, V, target, max_iter=5000):
        """Gradient descent of V -> tr(L V Q2 V^T)/3 until within ``target`` of the minimum."""
        B = self.Q2ref
        fmin = float(np.sort(np.linalg.eigvalsh(L)) @ np.sort(np.linalg.eigvalsh(B))[::-1]) / 3.0
        val = lambda V: float(np.trace(L @ V @ B @ V.T)) / 3.0
        fv = val(V)
        nodes = []
        eta = 1.0 / (3 * np.abs(np.linalg.eigvalsh(L)).max() * np.abs(np.linalg.eigvalsh(B)).max() + 1e-300)
        for _ in range(max_iter):
            if fv - fmin <= target:
                break
            C = V.T @ L @ V
            g = -2.0 / 3.0 * _vee(B @ C - C @ B)
            t = eta
            while True:
                step = -t * g
                ns = np.linalg.norm(step)
                if ns > 0.09:
                    step *= 0.09 / ns
                Vn = V @ expm_so3(step)
                fn = val(Vn)
                if fn <= fv - 1e-4 * t * (g @ g) * min(1.0, 0.09 / max(t * np.linalg.norm(g), 1e-300)) \
                        or t < 1e-12:
                    break
                t *= 0.5
            if fn > fv:
                break
            V, fv = Vn, fn
            eta = min(2 * t, 50.0 / (np.abs(np.linalg.eigvalsh(L)).max() + 1e-300))
            nodes.append(V)
        return V, fv, nodes

    def _walk(self, U, V):
        """Walk U to the bridging orientation while V tracks the fiber minimum."""
        c0 = self.c0
        nodes = []
        V, _, vs = self._descend_V(self._L(U), V, 1e-3 * c0)
        nodes += [(U, x) for x in vs]
        w_total = logm_so3(U.T @ self.Ut)
        total = np.linalg.norm(w_total)
        U0 = U
        t, h = 0.0, 0.05
        while t < total - 1e-15:
            hs = min(h, total - t)
            Un = U0 @ expm_so3((t + hs) / total * w_total) if total > 0 else U0
            if self.f(Un, V) >= -0.6 * c0:
                h *= 0.5
                if h < 1e-6:
                    raise ConnectionFailedError("bridging walk stalled")
                continue
            t += hs
            U = Un
            nodes.append((U, V))
            h = min(2 * h, 0.05)
            if self.f(U, V) > -0.75 * c0:
                V, _, vs = self._descend_V(self._L(U), V, 1e-3 * c0)
                nodes += [(U, x) for x in vs]
        U = self.Ut
        V, _, vs = self._descend_V(self.Lt, V, 1e-13 * max(c0, 1.0))
        nodes += [(U, x) for x in vs]
        return V, nodes

    def _snap(self, V):
        """Constant-energy moves taking a fiber minimiser to P D W^T with D diagonal."""
        P, W = self.P, self.W
        X = P.T @ V @ W
        gens = [("L", k) for k in self.left_gens[:1]] + [("R", k) for k in self.right_gens[:1]]

        def apply(params, X):
            Y = X
            for (side, k), th in zip(gens, params):
                Y = _axis_rot(k, th) @ Y if side == "L" else Y @ _axis_rot(k, th)
            return Y

        def off(params):
            Y = apply(params, X)
            return (Y - np.diag(np.diag(Y))).ravel()

        params = np.zeros(len(gens))
        if gens:
            grid = np.linspace(-np.pi, np.pi, 9)
            starts = np.array(np.meshgrid(*[grid] * len(gens))).reshape(len(gens), -1).T
            best = min(starts, key=lambda s: np.sum(off(s) ** 2))
            params = least_squares(off, best, xtol=1e-15, ftol=1e-15, gtol=1e-15).x
        nodes = []
        for (side, k), th in zip(gens, params):
            n = max(1, int(np.ceil(abs(th) / 0.09)))
            for t in np.arange(1, n + 1) / n:
                R = _axis_rot(k, t * th)
                nodes.append(P @ R @ P.T @ V if side == "L" else V @ W @ R @ W.T)
            V = nodes[-1]
        Y = P.T @ V @ W
        D = np.diag(np.where(np.diag(Y) >= 0, 1.0, -1.0))
        if np.linalg.det(D) < 0:
            raise ConnectionFailedError("could not reach an eigenframe-aligned minimiser")
        Vd = P @ D @ W.T
        nodes.append(Vd)
        return D, nodes

    def _klein(self, Da, Db, delta):
        """Half-turn moves between sign frames, using only axes whose midpoint stays below -delta."""
        allowed = [k for k in range(3) if self.fmid[k] < -delta]
        key = lambda D: tuple(np.diag(D).astype(int))
        prev = {key(Da): None}
        queue = [Da]
        while queue:
            D = queue.pop(0)
            if key(D) == key(Db):
                break
            for k in allowed:
                Dn = D @ _axis_rot(k, np.pi)
                Dn = np.diag(np.round(np.diag(Dn)))
                if key(Dn) not in prev:
                    prev[key(Dn)] = (D, k)
                    queue.append(Dn)
        if key(Db) not in prev:
            raise ConnectionFailedError("sign frames not linked by allowed half-turns")
        moves = []
        cur = Db
        while prev[key(cur)] is not None:
            D, k = prev[key(cur)]
            moves.append((D, k))
            cur = D
        nodes = []
        for D, k in moves[::-1]:
            for t in np.arange(1, 33) / 32:
                nodes.append(self.P @ D @ _axis_rot(k, t * np.pi) @ self.W.T)
        return nodes

    def _half(self, U, V):
        """Nodes from (U, V) to an aligned minimiser at the bridging orientation."""
        if np.ptp(self.a) <= 1e-12 * max(np.abs(self.a).max(), 1e-300):
            raise ConnectionFailedError("L is isotropic at the bridging orientation")
        V, walk = self._walk(U, V)
        D, snap = self._snap(V)
        return D, walk + [(self.Ut, x) for x in snap]

    def connect(self, start, end, delta):
        Da, half_a = self._half(*start)
        Db, half_b = self._half(*end)
        mid = [(self.Ut, x) for x in self._klein(Da, Db, delta)]
        back = ([end] + half_b)[:-1]
        return [start] + half_a + mid + back[::-1]


# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _connector(n, m, key1, key2):
    m1, m2 = _unkey(key1), _unkey(key2)
    if (n, m) == (2, 2):
        return _QQConnector(m1, m2)
    return _DipoleConnector(n, m, m1, m2)


def sublevel_connector(n, m, m1, m2):
    check_case(n, m, m1, m2)
    return _connector(n, m, _key(m1), _key(m2))


def compute_delta0(n, m, m1, m2):
    """Threshold below which the construction is guaranteed to apply."""
    return float(sublevel_connector(n, m, m1, m2).delta0())


def _pair(cfg):
    U, V = cfg
    return as_matrix(U), as_matrix(V)


def connect_negative_sublevel(n, m, m1, m2, start, end, delta, max_step=MAX_STEP) -> SublevelPath:
    """Path from ``start`` to ``end`` (pairs of rotations) with F < -delta at every node."""
    conn = sublevel_connector(n, m, m1, m2)
    start, end = _pair(start), _pair(end)
    fb = conn.fb
    f_ends = fb(np.array([start[0], end[0]]), np.array([start[1], end[1]]))
    for name, f in zip(("start", "end"), f_ends):
        if not f < -delta:
            raise PreconditionError(f"{name} has F = {f:.6g}, not below -delta = {-delta:.6g}")
    d0 = conn.delta0()
    if not 0 < delta < d0:
        raise UnsupportedDeltaError(f"delta = {delta:.6g} must lie in (0, delta0 = {d0:.6g})")
    if np.allclose(start[0], end[0], atol=1e-14) and np.allclose(start[1], end[1], atol=1e-14):
        nodes = [start]
    else:
        nodes = _densify(conn.connect(start, end, delta), max_step)
        if len(nodes) == 1:
            nodes.append(end)
        nodes[-1] = end
    U = np.array([u for u, _ in nodes])
    V = np.array([v for _, v in nodes])
    f = fb(U, V)
    path = SublevelPath(nodes, [float(x) for x in f], float(delta), {"delta0": d0, "n": n, "m": m})
    if not path.is_valid(max_step):
        raise ConnectionFailedError(
            f"constructed path violates the sublevel bound: max F = {path.max_f:.6g} vs {-delta:.6g}")
    return path
