"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed after the run.
"""

import time

import numpy as np
from scipy.optimize import minimize

from conftest import ACCEPTANCE, DATA, random_neutral, random_traceless
from oracles import align, sphere_pair_bottleneck
from multipass.critical import (
    check_octopole_nondegeneracy,
    compute_delta0,
    connect_negative_sublevel,
    critical_levels,
    exchange_rotation,
    qq_structure,
    verify_localmin_property,
)
from multipass.interaction import f_nm_batch, f_nm_tensors, interaction_expansion, make_batch_objective
from multipass.io import load_config, load_model
from multipass.mountainpass import ConstantCvdw, DiscretePath, ModelEnergy, minmax_optimize, surgery, transition_state
from multipass.multipole import ChargeDistribution, MultipoleSet, compute_multipoles, direct_coulomb
from multipass.so3 import expm_so3, haar_matrices
from multipass.toyquantum import (
    HermitianFamily,
    ToyMolecule,
    check_vdw_positivity,
    cvdw_pair,
    dress_path,
    full_vdw_correction,
    three_body_W,
)

E = np.eye(3)
UNIT_D = MultipoleSet.from_tensors(D=E[0])
TILTED_D = MultipoleSet.from_tensors(D=[0.6, -0.3, 0.9])
LIN_Q = MultipoleSet.from_tensors(Q=np.diag([2.0, -1.0, -1.0]))
TETRA = compute_multipoles(ChargeDistribution.from_points(
    [(-4, (0, 0, 0)), (1, (1, 1, 1)), (1, (1, -1, -1)), (1, (-1, 1, -1)), (1, (-1, -1, 1))]), 4)


def record(k, ok, detail):
    ACCEPTANCE[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, ACCEPTANCE[k]


# ---------------------------------------------------------------------------


def test_criterion_01_dipole_critical_levels():
    t0 = time.perf_counter()
    fb = make_batch_objective(UNIT_D, UNIT_D, 1, 1)
    rng = np.random.default_rng(1)
    levels, counts = critical_levels(fb, (haar_matrices(1000, rng), haar_matrices(1000, rng)))
    dt = time.perf_counter() - t0
    want = [-2.0, -1.0, 1.0, 2.0]
    ok = len(levels) == 4 and np.allclose(levels, want, rtol=0, atol=1e-6) and dt < 10
    record(1, ok, f"levels {np.round(levels, 9).tolist()} counts {counts} in {dt:.1f}s")


def test_criterion_02_expansion_order_slopes():
    """Common slope across pairs, with a free intercept per pair.

    Single pairs whose leading residual coefficient nearly cancels can show a
    pre-asymptotic slope on this range of L; they are counted in the report.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    Ls = np.array([30.0, 60.0, 120.0, 240.0])
    slopes = {N: [] for N in (2, 3, 4, 5)}
    for _ in range(20):
        d1, d2 = random_neutral(rng, 5), random_neutral(rng, 5)
        U, V = haar_matrices(2, rng)
        exact = np.array([direct_coulomb(d1, d2, U, V, L, precise=True) for L in Ls])
        for N in slopes:
            approx = np.array([interaction_expansion(d1, d2, U, V, L, N)[1] for L in Ls])
            slopes[N].append(np.polyfit(np.log(Ls), np.log(np.abs(approx - exact)), 1)[0])
    dt = time.perf_counter() - t0
    # with a shared design in L the fixed-effects slope is the mean of the per-pair slopes
    pooled = {N: float(np.mean(v)) for N, v in slopes.items()}
    worst = max(abs(s + N + 2) for N, s in pooled.items())
    outliers = sum(int(np.sum(np.abs(np.array(v) + N + 2) > 0.2)) for N, v in slopes.items())
    record(2, worst <= 0.2 and dt < 30,
           f"pooled slopes { {N: round(s, 3) for N, s in pooled.items()} }, worst deviation {worst:.3f}; "
           f"{outliers}/80 single-pair fits outside 0.2, in {dt:.1f}s")


def test_criterion_03_haar_averages_vanish():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    m1 = compute_multipoles(random_neutral(rng, 6), 4)
    m2 = compute_multipoles(random_neutral(rng, 6), 4)
    S = 100_000
    U, V = haar_matrices(S, rng), haar_matrices(S, rng)
    ratios = {}
    for n in range(1, 5):
        for m in range(1, 6 - n):
            f = f_nm_batch(m1, m2, U, V, n, m)
            assert f.std() > 0
            ratios[(n, m)] = abs(f.mean()) / (f.std() / np.sqrt(S))
    dt = time.perf_counter() - t0
    worst = max(ratios.values())
    record(3, worst <= 4 and dt < 60, f"{len(ratios)} orders, max |mean|/(std/sqrt S) = {worst:.2f} in {dt:.1f}s")


LOCALMIN_CASES = {
    (1, 1): (UNIT_D, UNIT_D),
    (1, 2): (UNIT_D, LIN_Q),
    (2, 1): (LIN_Q, UNIT_D),
    (1, 3): (UNIT_D, TETRA),
    (3, 1): (TETRA, UNIT_D),
    (2, 2): (LIN_Q, LIN_Q),
}


def test_criterion_04_no_flat_points_above_threshold():
    t0 = time.perf_counter()
    assert check_octopole_nondegeneracy(TETRA.O)
    found = {}
    for nm, (m1, m2) in LOCALMIN_CASES.items():
        rep = verify_localmin_property(*nm, m1, m2, samples=100_000, seed=sum(nm))
        found[nm] = (len(rep.counterexamples), round(rep.delta, 4), rep.checked)
    dt = time.perf_counter() - t0
    bad = sum(v[0] for v in found.values())
    detail = ", ".join(f"{n}{m}: {c} bad (delta {d}, {k} checked)" for (n, m), (c, d, k) in found.items())
    record(4, bad == 0 and dt < 300, f"{detail} in {dt:.0f}s")


# ---------------------------------------------------------------------------
# sublevel connectedness, cross-checked on a reduced configuration space


SUBLEVEL_CASES = {
    (1, 1): (UNIT_D, TILTED_D),
    (1, 2): (TILTED_D, LIN_Q),
    (2, 1): (LIN_Q, UNIT_D),
    (1, 3): (UNIT_D, TETRA),
    (3, 1): (TETRA, TILTED_D),
    (2, 2): (LIN_Q, LIN_Q),
}


def reduction(nm, m1, m2):
    """Maps (U, V) -> (x, y) in S^2 x S^2 and back.

    F is unchanged by a joint rotation about the separation axis and by
    rotations of a dipole about itself, so it depends only on (x, y).  The
    lift is a continuous section, and the fibres are connected.
    """
    n, m = nm
    if nm == (2, 2):
        def down(U, V):
            return U[..., :, 0], V[..., :, 0]

        def up(x, y):
            return align(E[0], x), align(E[0], y)
        return down, up
    dip, other = (0, 1) if n == 1 else (1, 0)
    d = np.asarray((m1, m2)[dip].D, float)
    d = d / np.linalg.norm(d)

    def down(U, V):
        R = (U, V)
        A, B = R[other], R[dip]
        return A[..., 0, :], np.einsum("...ji,...jk,k->...i", A, B, d)

    def up(x, y):
        A = align(x, E[0])
        B = align(d, np.einsum("nij,nj->ni", A, y))
        return (B, A) if dip == 0 else (A, B)
    return down, up


def test_criterion_05_sublevel_connectedness():
    t0 = time.perf_counter()
    per_case = {}
    oracle_worst = -np.inf
    for nm, (m1, m2) in SUBLEVEL_CASES.items():
        delta = compute_delta0(*nm, m1, m2) / 2
        fb = make_batch_objective(m1, m2, *nm)
        rng = np.random.default_rng(50 + 10 * nm[0] + nm[1])
        U, V = haar_matrices(40_000, rng), haar_matrices(40_000, rng)
        keep = fb(U, V) < -delta
        U, V = U[keep][:2000], V[keep][:2000]
        assert len(U) == 2000
        fails, nodes, worst = 0, 0, -np.inf
        for i in range(1000):
            start, end = (U[2 * i], V[2 * i]), (U[2 * i + 1], V[2 * i + 1])
            try:
                path = connect_negative_sublevel(*nm, m1, m2, start, end, delta)
            except Exception:
                fails += 1
                continue
            Up = np.array([a for a, _ in path.nodes])
            Vp = np.array([b for _, b in path.nodes])
            f = f_nm_batch(m1, m2, Up, Vp, *nm)
            ends_ok = all(np.allclose(p, q, atol=1e-12) for p, q in zip((Up[0], Vp[0], Up[-1], Vp[-1]),
                                                                      (*start, *end)))
            if f.max() >= -delta or not ends_ok:
                fails += 1
            worst = max(worst, f.max() + delta)
            nodes += len(f)
        # independent cross-check on 50 pairs
        down, up = reduction(nm, m1, m2)
        x, y = down(U[:100], V[:100])
        Ul, Vl = up(x, y)
        np.testing.assert_allclose(f_nm_batch(m1, m2, Ul, Vl, *nm), fb(U[:100], V[:100]), atol=1e-10)
        pairs = [((x[2 * i], y[2 * i]), (x[2 * i + 1], y[2 * i + 1])) for i in range(50)]
        F = lambda xs, ys: f_nm_batch(m1, m2, *up(xs, ys), *nm)
        levels = np.array(sphere_pair_bottleneck(F, pairs, seed=nm[0] * 7 + nm[1]))
        oracle_worst = max(oracle_worst, float((levels + delta).max()))
        per_case[nm] = (fails, round(delta, 3), int(np.sum(levels < -delta)))
    dt = time.perf_counter() - t0
    ok = all(v[0] == 0 and v[2] == 50 for v in per_case.values()) and dt < 600
    detail = ", ".join(f"{n}{m}: {fl} failed, oracle {o}/50 (delta {d})" for (n, m), (fl, d, o) in per_case.items())
    record(5, ok, f"{detail}; oracle margin {oracle_worst:.3g} in {dt:.0f}s")


# ---------------------------------------------------------------------------


def _brute_extreme(Q1, Q2, sign, rng):
    """Extreme of F22(Q1, V Q2 V^T) over V by Haar sampling, shrinking random zoom, then simplex."""
    g = lambda Vs: sign * f_nm_tensors(Q1, Vs @ Q2 @ np.swapaxes(Vs, -1, -2), 2, 2)
    Vs = haar_matrices(20_000, rng)
    vals = g(Vs)
    best = [Vs[i] for i in np.argsort(vals)[:5]]
    for r in (0.3, 0.1, 0.03, 0.01, 0.003, 0.001):
        for k, B in enumerate(best):
            cand = np.concatenate([B[None], B @ expm_so3(rng.normal(scale=r, size=(400, 3)))])
            best[k] = cand[np.argmin(g(cand))]
    B = min(best, key=lambda R: g(R[None])[0])
    coarse = sign * g(B[None])[0]
    res = minimize(lambda w: g((B @ expm_so3(w))[None])[0], np.zeros(3), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    return coarse, sign * res.fun


def test_criterion_06_quadrupole_structure():
    rng = np.random.default_rng(6)
    err_coarse = err_fine = asum = decpath = 0.0
    theta = np.linspace(0.0, np.pi, 9)
    for _ in range(100):
        Q1, Q2 = random_traceless(rng), random_traceless(rng)
        st = qq_structure(Q1, Q2)
        lo, lo_fine = _brute_extreme(Q1, Q2, 1.0, rng)
        hi, hi_fine = _brute_extreme(Q1, Q2, -1.0, rng)
        err_coarse = max(err_coarse, abs(lo - st.g_min), abs(hi - st.h_max))
        err_fine = max(err_fine, abs(lo_fine - st.g_min), abs(hi_fine - st.h_max))
        A = {s: 3 * v for s, v in st.critical_values.items()}
        asum = max(asum, abs(A[(2, 1, 0)] + A[(1, 0, 2)] + A[(0, 2, 1)]))
        a, v, b = st.eigen_a, st.eigvec_a, st.eigen_b
        for s in A:
            Qc = sum(b[s[k]] * np.outer(v[:, k], v[:, k]) for k in range(3))
            base = 3 * f_nm_tensors(Q1, Qc, 2, 2)
            decpath = max(decpath, abs(base - A[s]))
            for i, j in ((0, 1), (0, 2), (1, 2)):
                R = np.array([exchange_rotation(v[:, i], v[:, j], t) for t in theta])
                moved = 3 * f_nm_tensors(Q1, R @ Qc @ np.swapaxes(R, 1, 2), 2, 2) - base
                want = -(a[i] - a[j]) * (b[s[i]] - b[s[j]]) * np.sin(theta) ** 2
                decpath = max(decpath, float(np.abs(moved - want).max()))
    ok = err_coarse <= 1e-3 and err_fine <= 1e-6 and asum <= 1e-10 and decpath <= 1e-9
    record(6, ok, f"sampled err {err_coarse:.2e}, refined err {err_fine:.2e}, "
                  f"A-sum {asum:.1e}, exchange-path residual {decpath:.1e}")


# ---------------------------------------------------------------------------


def _wander(rng, L_star, K=12):
    L = np.concatenate([[rng.uniform(0.5, 0.9)], rng.uniform(0.5, 1.0, K - 2), [rng.uniform(0.5, 0.9)]]) * L_star
    j = rng.integers(1, K - 1, size=rng.integers(1, 4))
    L[j] = L_star * rng.uniform(1.5, 50.0, size=len(j))
    return DiscretePath(L, haar_matrices(K, rng), haar_matrices(K, rng)).densify(1.0)


def surgery_models():
    Q = np.diag([2.0, -1.0, -1.0])
    Q2 = np.array([[1.0, 0.5, 0.0], [0.5, -0.3, 0.2], [0.0, 0.2, -0.7]])
    return {
        "vdW-only": ModelEnergy(MultipoleSet.from_tensors(), MultipoleSet.from_tensors(),
                                E1=-1.0, E2=-2.0, cvdw=ConstantCvdw(3.0)),
        "dipole": ModelEnergy(MultipoleSet.from_tensors(D=[1.0, 0.3, -0.2], Q=0.5 * Q),
                              MultipoleSet.from_tensors(D=[0.0, 1.0, 0.0], Q=Q), order=4),
        "quadrupole": ModelEnergy(MultipoleSet.from_tensors(Q=Q), MultipoleSet.from_tensors(Q=Q2), order=5),
    }


def test_criterion_07_surgery_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad = {}
    for name, me in surgery_models().items():
        bad[name] = 0
        for k in range(100):
            L_star = 10.0 if k % 2 else 30.0
            try:
                new, rep = surgery(me, _wander(rng, L_star), L_star)
            except Exception:
                bad[name] += 1
                continue
            if new.L.max() > L_star + 1e-12 or rep.max_energy_after > rep.max_energy_before + 1e-9:
                bad[name] += 1
    dt = time.perf_counter() - t0
    record(7, sum(bad.values()) == 0 and dt < 300, f"failures per class {bad} over 100 paths each in {dt:.0f}s")


# ---------------------------------------------------------------------------


def test_criterion_08_toy_vdw():
    rng = np.random.default_rng(8)
    min_c = np.inf
    flagged = 0
    for dims in ((2, 2), (2, 3), (3, 4), (4, 4), (5, 3)):
        a, b = ToyMolecule.random(dims[0], rng), ToyMolecule.random(dims[1], rng)
        rep = check_vdw_positivity(a, b, samples=1000, seed=int(rng.integers(1 << 31)))
        flagged += len(rep.violations) + len(rep.inconsistent)
        min_c = min(min_c, rep.min_cvdw)
    two = 0.0
    for _ in range(200):
        da = rng.normal(size=3) + 1j * rng.normal(size=3)
        db = rng.normal(size=3) + 1j * rng.normal(size=3)
        sa, sb = rng.uniform(0.2, 3.0, size=2)
        U, V = haar_matrices(2, rng)
        M = U.T @ (np.eye(3) - 3 * np.outer(E[0], E[0])) @ V
        ref = abs(da.conj() @ M @ db.conj()) ** 2 / (sa + sb)
        two = max(two, abs(cvdw_pair(ToyMolecule.two_level(sa, da), ToyMolecule.two_level(sb, db), U, V) - ref))
    three = 0.0
    for _ in range(200):
        mols = [ToyMolecule.random(int(n), rng) for n in rng.integers(2, 5, size=3)]
        Us = haar_matrices(3, rng)
        ab, ac = rng.normal(size=(2, 3))
        Wij = three_body_W(*mols, *Us, ab, ac, resolvent="ij")
        Wik = three_body_W(*mols, *Us, ab, ac, resolvent="ik")
        three = max(three, abs(Wij - Wik))
    worst_total = -np.inf
    for _ in range(200):
        k = int(rng.integers(2, 5))
        mols = [ToyMolecule.random(int(n), rng) for n in rng.integers(2, 4, size=k)]
        pos = rng.normal(size=(k, 3)) * 6
        worst_total = max(worst_total, full_vdw_correction(mols, pos, haar_matrices(k, rng)).total)
    ok = flagged == 0 and min_c > 0 and two <= 1e-10 and three <= 1e-10 and worst_total <= 0
    record(8, ok, f"min C {min_c:.3e} over 5000 samples, two-level err {two:.1e}, "
                  f"three-body ij/ik gap {three:.1e}, max full correction {worst_total:.3e}")


# ---------------------------------------------------------------------------


def analytic_family(rng, n=8, degree=3, crossing=None):
    """Cubic Hermitian family; ``crossing`` puts two decoupled low levels through each other there."""
    def herm():
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        return 0.25 * (A + A.conj().T)

    coeffs = [herm() for _ in range(degree + 1)]
    if crossing is not None:
        for c in coeffs:
            c[:2, :] = 0
            c[:, :2] = 0
        coeffs[0][2:, 2:] += 6 * np.eye(n - 2)
        slope = rng.uniform(1.0, 4.0)
        coeffs[0][0, 0], coeffs[1][0, 0] = -slope * crossing, slope
        coeffs[0][1, 1], coeffs[1][1, 1] = slope * crossing, -slope
    return HermitianFamily(coeffs=coeffs)


def test_criterion_09_path_dressing():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    eps = 1e-3
    grid = np.linspace(0.0, 1.0, 20001)
    worst = -np.inf
    crossings = 0
    for k in range(50):
        fam = analytic_family(rng, crossing=rng.uniform(0.2, 0.8) if k % 5 == 0 else None)
        x0 = np.linalg.eigh(fam(0.0))[1][:, 0]
        x1 = np.linalg.eigh(fam(1.0))[1][:, 0]
        crossings += abs(np.vdot(x0, x1)) < 1e-12
        path = dress_path(fam, x0, x1, eps=eps, per_part=8)
        ray = np.real(np.einsum("ni,nij,nj->n", path.x.conj(), fam(path.t), path.x))
        top = np.linalg.eigvalsh(fam(np.concatenate([grid, path.t])))[:, 0].max()
        assert np.allclose(np.linalg.norm(path.x, axis=1), 1.0, atol=1e-12)
        worst = max(worst, ray.max() - top - eps)
    dt = time.perf_counter() - t0
    record(9, worst <= 0 and crossings == 10 and dt < 60,
           f"max(Rayleigh) - max E - eps = {worst:.3e} over 50 families ({crossings} with crossings) in {dt:.1f}s")


def test_criterion_10_transition_state_index():
    me = load_model(DATA / "quad_model.json")
    a, b = load_config(DATA / "t_shape_a.json"), load_config(DATA / "t_shape_b.json")
    path, _ = minmax_optimize(me, DiscretePath.geodesic(a, b, 64), iters=500)
    ts = transition_state(me, path)
    neg = ts.reduced_spectrum[ts.reduced_spectrum < 0]
    record(10, ts.refined and ts.negative_count == 1,
           f"refined={ts.refined}, negative eigenvalues {np.round(neg, 5).tolist()}, "
           f"{ts.symmetry_dim} symmetry modes excluded, energy {ts.energy:.7f}")
