"""Default thresholds and the Monte-Carlo check that near-critical points are negative.

The property being checked: whenever |grad F| <= delta and Hess F >= -delta
on SO(3) x SO(3), the energy satisfies F <= -delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from ..errors import PreconditionError, UnsupportedCaseError
from ..interaction import check_order, make_batch_objective
from ..so3 import batch_grad_uv, batch_hess_uv, expm_so3, haar_matrices, minimal_rotation
from .descent import batch_descend, batch_newton_critical
from .dipolar import DipolarReduction
from .structure import check_octopole_nondegeneracy, fibonacci_sphere, octopole_kernel_vectors

SUPPORTED_CASES = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2)]


def check_case(n, m, m1=None, m2=None):
    check_order(n, m)
    if n + m == 5:
        raise UnsupportedCaseError(
            f"(n, m) = ({n}, {m}) has n+m = 5; the negative-energy and connectivity statements are not available")
    if (n, m) not in SUPPORTED_CASES:
        raise UnsupportedCaseError(f"(n, m) = ({n}, {m}) is not handled")
    if m1 is not None and 3 in (n, m):
        O = m1.O if n == 3 else m2.O
        if not check_octopole_nondegeneracy(O):
            raise PreconditionError("octopole is degenerate: O(v, ., .) = 0 for some v != 0")


def _batched_g(Q1ref, Q2ref, Us):
    """min over Q2 orientations of F^(2,2) for Q1 = U Q1ref U^T (stack of U)."""
    Q1 = Us @ Q1ref @ np.swapaxes(Us, -1, -2)
    P = np.zeros((3, 3))
    P[0, 0] = 1.0
    L = 35 * P @ Q1 @ P - 10 * P @ Q1 - 10 * Q1 @ P + 2 * Q1
    a = np.linalg.eigvalsh(L)
    b = np.sort(np.linalg.eigvalsh(Q2ref))[::-1]
    return a @ b / 3.0


def qq_c0(Q1ref, Q2ref, samples=20000, seed=0):
    """c0 = min over Q1 orientations of -g(Q1), from a Haar grid plus local refinement."""
    Q1ref = np.asarray(Q1ref, float)
    Q2ref = np.asarray(Q2ref, float)
    Us = haar_matrices(samples, seed)
    g = _batched_g(Q1ref, Q2ref, Us)
    best = np.argsort(g)[::-1][:6]
    top = float(g[best[0]])
    for i in best:
        U0 = Us[i]
        res = minimize(lambda x: -_batched_g(Q1ref, Q2ref, (U0 @ expm_so3(x))[None])[0], np.zeros(3),
                       method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 3000})
        top = max(top, float(-res.fun))
    return -top


def case_objective(n, m, m1, m2):
    """Batched F^(n,m); dipole-quadrupole and dipole-octopole use the cheaper (e, p) reduction."""
    if min(n, m) != 1 or max(n, m) < 2:
        return make_batch_objective(m1, m2, n, m)
    red = DipolarReduction(m1, m2, n, m)
    return lambda Us, Vs: red.value(*red.reduce(Us, Vs))


def _phi(fb, Us, Vs, h=1e-4):
    """max(|grad|, -lambda_min, -F): the property fails at delta iff phi <= delta."""
    g = np.linalg.norm(batch_grad_uv(fb, Us, Vs, h), axis=1)
    lam = np.linalg.eigvalsh(batch_hess_uv(fb, Us, Vs, h))[:, 0]
    return np.maximum(np.maximum(g, -lam), -fb(Us, Vs))


def calibrate_delta(n, m, m1, m2, samples=20000, seed=12345):
    """Estimate inf phi over SO(3)^2; the calibrated default is half of it."""
    fb = case_objective(n, m, m1, m2)
    Us, Vs = haar_matrices(samples, seed), haar_matrices(samples, seed + 1)
    best = float(_phi(fb, Us, Vs).min())
    Uc, Vc, gn = batch_newton_critical(fb, Us[:2000], Vs[:2000])
    crit = gn < 1e-6
    if crit.any():
        best = min(best, float(_phi(fb, Uc[crit], Vc[crit]).min()))
    if min(n, m) == 1:
        red = DipolarReduction(m1, m2, n, m)
        centers = []
        if red.k == 3:
            centers = octopole_kernel_vectors(red.T)
        elif red.k == 2:
            lam, vec = np.linalg.eigh(red.T)
            centers = [vec[:, i] for i in range(3) if abs(lam[i]) < 1e-8 * np.abs(lam).max()]
        ps = fibonacci_sphere(200)
        for v in centers:
            for sgn in (1.0, -1.0):
                es = []
                w1 = np.cross(v, [1.0, 0, 0] if abs(v[0]) < 0.9 else [0, 1.0, 0])
                w1 /= np.linalg.norm(w1)
                w2 = np.cross(v, w1)
                for r in (0.0, 0.03, 0.1, 0.25):
                    for ang in np.linspace(0, 2 * np.pi, 12, endpoint=False):
                        es.append(sgn * (np.cos(r) * v + np.sin(r) * (np.cos(ang) * w1 + np.sin(ang) * w2)))
                A, B = [], []
                for e in es:
                    Bm = minimal_rotation(e, [1.0, 0.0, 0.0])
                    for p in ps:
                        B.append(Bm)
                        A.append(minimal_rotation(red.dhat, Bm @ p))
                U, V = red.join(np.array(A), np.array(B))
                best = min(best, float(_phi(fb, U, V).min()))
    return best


_SHAPES = ((3,), (3, 3), (3, 3, 3), (3, 3, 3, 3))


def _key(ms):
    return tuple(np.ascontiguousarray(t, dtype=float).tobytes() for t in (ms.D, ms.Q, ms.O, ms.H))


def _unkey(key):
    from ..multipole import MultipoleSet

    return MultipoleSet.from_tensors(*[np.frombuffer(b).reshape(s) for b, s in zip(key, _SHAPES)])


@lru_cache(maxsize=64)
def _default_delta_cached(n, m, key1, key2):
    m1, m2 = _unkey(key1), _unkey(key2)
    if (n, m) == (2, 2):
        return qq_c0(m1.Q, m2.Q) / 8.0, "c0/8"
    red = DipolarReduction(m1, m2, n, m)
    xmin = red.min_xnorm()
    scale = float(np.max(red.xnorm(fibonacci_sphere(2000))))
    if xmin > 1e-6 * scale:
        return red.dnorm * xmin / 3.0, "delta0/3"
    return 0.5 * calibrate_delta(n, m, m1, m2), "calibrated"


def default_delta(n, m, m1, m2):
    """Module default threshold and the rule that produced it."""
    check_case(n, m, m1, m2)
    return _default_delta_cached(n, m, _key(m1), _key(m2))


@dataclass
class LocalMinReport:
    n: int
    m: int
    delta: float
    delta_rule: str
    samples: int
    checked: int
    counterexamples: list = field(default_factory=list)
    max_f_near_critical: float = float("-inf")

    def to_dict(self):
        return {
            "n": self.n, "m": self.m, "delta": self.delta, "delta_rule": self.delta_rule,
            "samples": self.samples, "checked_points": self.checked,
            "counterexamples": self.counterexamples,
            "max_f_near_critical": self.max_f_near_critical,
        }


def verify_localmin_property(n, m, m1, m2, delta=None, samples=100000, seed=0,
                             descent_iters=25, newton_samples=1000, chunk=25000, h=1e-4):
    """Search for points with small gradient, Hessian >= -delta and F > -delta.

    Haar samples are pushed downhill in batches; every iterate whose gradient
    norm is at most delta and whose value exceeds -delta gets its Hessian
    checked.  Critical points found by Newton iteration from a subset are
    checked as well.
    """
    check_case(n, m, m1, m2)
    rule = "given"
    if delta is None:
        delta, rule = default_delta(n, m, m1, m2)
    fb = case_objective(n, m, m1, m2)
    rng = np.random.default_rng(seed)
    counter = []
    stats = {"checked": 0, "worst": -np.inf}

    def inspect(Us, Vs, f, g):
        gn = np.linalg.norm(g, axis=1)
        near = gn <= delta
        stats["checked"] += int(near.sum())
        sus = np.flatnonzero(near & (f > -2.0 * delta))
        if sus.size == 0:
            return
        lam = np.linalg.eigvalsh(batch_hess_uv(fb, Us[sus], Vs[sus], h))[:, 0]
        flat = lam >= -delta
        if flat.any():
            stats["worst"] = max(stats["worst"], float(f[sus[flat]].max()))
        for i, l in zip(sus, lam):
            if l >= -delta and f[i] > -delta:
                counter.append({"U": Us[i].tolist(), "V": Vs[i].tolist(), "F": float(f[i]),
                                "grad_norm": float(gn[i]), "hess_min_eig": float(l)})

    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        Us, Vs = haar_matrices(k, rng), haar_matrices(k, rng)
        batch_descend(fb, Us, Vs, iters=descent_iters, h=h,
                      callback=lambda it, U, V, f, g: inspect(U, V, f, g))
        if done == 0 and newton_samples:
            j = min(newton_samples, k)
            Uc, Vc, gn = batch_newton_critical(fb, Us[:j], Vs[:j], h=h)
            g = batch_grad_uv(fb, Uc, Vc, h)
            inspect(Uc, Vc, fb(Uc, Vc), g)
        done += k
    return LocalMinReport(n, m, float(delta), rule, samples, stats["checked"], counter, stats["worst"])
