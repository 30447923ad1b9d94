"""Finite-dimensional stand-ins for the quantum side of the model.

A ``ToyMolecule`` is a Hermitian Hamiltonian together with three Hermitian
"instantaneous dipole" operators.  Everything is computed in the eigenbasis of
each Hamiltonian, where the restricted resolvent of a sum of molecular
Hamiltonians is diagonal with the ground block removed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import IllPosedResolventError, InvalidInputError, PreconditionError, ResolutionExceededError
from .multipole import as_matrix
from .so3 import haar_matrices

CLUSTER_RTOL = 1e-8
HERMITIAN_RTOL = 1e-10


def _check_hermitian(A, name):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"{name} must be a square matrix")
    scale = max(np.abs(A).max(), 1.0)
    if np.abs(A - A.conj().T).max() > HERMITIAN_RTOL * scale:
        raise InvalidInputError(f"{name} is not Hermitian")
    return 0.5 * (A + A.conj().T)


def _ground_cluster(w, scale):
    """Number of eigenvalues in the lowest cluster (gap threshold relative to ``scale``)."""
    tol = CLUSTER_RTOL * max(scale, 1e-300)
    return int(np.searchsorted(w, w[0] + tol, side="right"))


@dataclass
class ToyMolecule:
    H: np.ndarray
    dipoles: np.ndarray
    label: str = ""
    E0: float = field(init=False)
    gap: float = field(init=False)
    rank: int = field(init=False)

    def __post_init__(self):
        self.H = _check_hermitian(self.H, "H")
        D = np.asarray(self.dipoles, dtype=complex)
        n = self.H.shape[0]
        if D.shape != (3, n, n):
            raise InvalidInputError(f"dipole operators must have shape (3, {n}, {n})")
        self.dipoles = np.array([_check_hermitian(d, f"D[{k}]") for k, d in enumerate(D)])
        w, W = np.linalg.eigh(self.H)
        self.norm = float(np.abs(w).max()) or 1.0
        r = _ground_cluster(w, self.norm)
        self.energies, self.basis, self.rank = w, W, r
        self.E0 = float(w[0])
        # a spectrum that is all ground cluster leaves nothing to invert: report no gap
        self.gap = float(w[r] - w[0]) if r < n else 0.0
        # dipoles written in the eigenbasis
        self._Dt = np.einsum("ai,kab,bj->kij", W.conj(), self.dipoles, W)

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def ground_projector(self):
        G = self.basis[:, : self.rank]
        return G @ G.conj().T

    @property
    def ground_states(self):
        return self.basis[:, : self.rank].T

    def coords(self, psi=None):
        """Eigenbasis coordinates of a normalized ground state (default: first eigenvector)."""
        if psi is None:
            c = np.zeros(self.dim, dtype=complex)
            c[0] = 1.0
            return c
        psi = np.asarray(psi, dtype=complex)
        nrm = np.linalg.norm(psi)
        if nrm == 0:
            raise InvalidInputError("ground state must be nonzero")
        c = self.basis.conj().T @ (psi / nrm)
        if np.linalg.norm(c[self.rank:]) > 1e-8:
            raise PreconditionError("vector is not in the ground eigenspace")
        c[self.rank:] = 0.0
        return c / np.linalg.norm(c)

    def require_gap(self):
        if not self.gap > CLUSTER_RTOL * self.norm:
            raise IllPosedResolventError(f"molecule {self.label or '?'} has no spectral gap above E0")

    @classmethod
    def random(cls, n, rng=None, dipole_scale=1.0, label=""):
        rng = np.random.default_rng(rng)

        def herm():
            A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            return 0.5 * (A + A.conj().T)

        return cls(herm(), dipole_scale * np.array([herm() for _ in range(3)]), label)

    @classmethod
    def two_level(cls, splitting, d, label=""):
        """H = diag(0, splitting), D_k = [[0, d_k], [conj d_k, 0]]."""
        d = np.asarray(d, dtype=complex)
        D = np.zeros((3, 2, 2), dtype=complex)
        D[:, 0, 1] = d
        D[:, 1, 0] = d.conj()
        return cls(np.diag([0.0, float(splitting)]), D, label)

    def to_dict(self):
        def enc(A):
            return [[[float(z.real), float(z.imag)] for z in row] for row in A]

        return {"label": self.label, "H": enc(self.H), "dipoles": [enc(d) for d in self.dipoles]}


def coupling_matrix(U, V, axis=(1.0, 0.0, 0.0)):
    """M with f = sum_kl M_kl D1_k (x) D2_l, i.e. U^T (I - 3 n n^T) V (stackable)."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    J = np.eye(3) - 3.0 * np.outer(n, n)
    return np.swapaxes(np.asarray(U), -1, -2) @ J @ np.asarray(V)


def _f_state(a, b, ca, cb, M):
    """Eigenbasis coefficients of f Psi_a (x) Psi_b; M may be a stack (S, 3, 3)."""
    xa = a._Dt @ ca  # (3, na)
    xb = b._Dt @ cb
    return np.einsum("ki,...kl,lj->...ij", xa, M, xb)


def _pair_weights(a, b):
    """1 / (e_i + e_j - E_a - E_b) off the ground block, 0 on it."""
    den = (a.energies - a.E0)[:, None] + (b.energies - b.E0)[None, :]
    w = np.zeros_like(den)
    mask = np.ones_like(den, dtype=bool)
    mask[: a.rank, : b.rank] = False
    w[mask] = 1.0 / den[mask]
    return w, mask


def cvdw_pair(a: ToyMolecule, b: ToyMolecule, U, V, psi_a=None, psi_b=None) -> float:
    """Quadratic form of the restricted pair resolvent on the excited part of f Psi_a (x) Psi_b."""
    a.require_gap()
    b.require_gap()
    M = coupling_matrix(as_matrix(U), as_matrix(V))
    psi = _f_state(a, b, a.coords(psi_a), b.coords(psi_b), M)
    w, _ = _pair_weights(a, b)
    return float(np.sum(w * np.abs(psi) ** 2))


def cvdw_batch(a: ToyMolecule, b: ToyMolecule, Us, Vs, averaged=True):
    """Vectorised C_vdW over stacks of rotations; averaged over the ground bases when asked."""
    a.require_gap()
    b.require_gap()
    M = coupling_matrix(np.asarray(Us), np.asarray(Vs))
    w, _ = _pair_weights(a, b)
    ra = a.rank if averaged else 1
    rb = b.rank if averaged else 1
    out = np.zeros(M.shape[:-2])
    for i in range(ra):
        for j in range(rb):
            ca = np.eye(a.dim, dtype=complex)[i]
            cb = np.eye(b.dim, dtype=complex)[j]
            out = out + np.sum(w * np.abs(_f_state(a, b, ca, cb, M)) ** 2, axis=(-2, -1))
    return out / (ra * rb)


def cvdw_averaged(a, b, U, V) -> float:
    return float(cvdw_batch(a, b, as_matrix(U)[None], as_matrix(V)[None])[0])


def excited_norm(a, b, U, V, psi_a=None, psi_b=None) -> float:
    """Norm of the component of f Psi_a (x) Psi_b orthogonal to the ground block."""
    M = coupling_matrix(as_matrix(U), as_matrix(V))
    psi = _f_state(a, b, a.coords(psi_a), b.coords(psi_b), M)
    _, mask = _pair_weights(a, b)
    return float(np.sqrt(np.sum(np.abs(psi[mask]) ** 2)))


def dipole_expectation(a, b, U, V, psi_a=None, psi_b=None) -> float:
    """<Psi_a (x) Psi_b, f Psi_a (x) Psi_b>: the leading multipolar term of the pair."""
    ca, cb = a.coords(psi_a), b.coords(psi_b)
    da = np.real(np.einsum("i,kij,j->k", ca.conj(), a._Dt, ca))
    db = np.real(np.einsum("i,kij,j->k", cb.conj(), b._Dt, cb))
    M = coupling_matrix(np.asarray(U) if np.ndim(U) == 3 else as_matrix(U),
                        np.asarray(V) if np.ndim(V) == 3 else as_matrix(V))
    return np.einsum("k,...kl,l->...", da, M, db)


class ToyCvdw:
    """C_vdW plug-in for the model energy, averaged over the ground bases."""

    def __init__(self, a, b):
        self.a, self.b = a, b

    def __call__(self, Us, Vs):
        Us = np.asarray(Us)
        flat = cvdw_batch(self.a, self.b, Us.reshape(-1, 3, 3), np.asarray(Vs).reshape(-1, 3, 3))
        return flat.reshape(Us.shape[:-2])

    def to_dict(self):
        return {"kind": "toy", "a": self.a.to_dict(), "b": self.b.to_dict()}


@dataclass
class PositivityReport:
    samples: int
    min_cvdw: float
    min_excited_norm: float
    violations: list
    inconsistent: list

    @property
    def ok(self):
        return not self.violations and not self.inconsistent

    def to_dict(self):
        return {"samples": self.samples, "min_cvdw": self.min_cvdw, "min_excited_norm": self.min_excited_norm,
                "violations": self.violations, "inconsistent": self.inconsistent}


def check_vdw_positivity(a, b, samples=1000, seed=0, tol=1e-12, psi_a=None, psi_b=None) -> PositivityReport:
    """Sample Haar rotations and flag any with a vanishing excited component or C_vdW.

    A flagged sample is reported, not raised: finite matrices can violate
    positivity.  ``inconsistent`` lists samples where C and the excited norm
    disagree about vanishing.
    """
    a.require_gap()
    b.require_gap()
    rng = np.random.default_rng(seed)
    Us, Vs = haar_matrices(samples, rng), haar_matrices(samples, rng)
    M = coupling_matrix(Us, Vs)
    psi = _f_state(a, b, a.coords(psi_a), b.coords(psi_b), M)
    w, mask = _pair_weights(a, b)
    C = np.sum(w * np.abs(psi) ** 2, axis=(-2, -1))
    nrm = np.sqrt(np.sum(np.abs(psi[:, mask]) ** 2, axis=-1))
    scale = max(a.norm, b.norm)
    small_n = nrm <= tol
    small_c = C <= tol * tol / scale
    violations = [{"index": int(i), "cvdw": float(C[i]), "excited_norm": float(nrm[i])}
                  for i in np.flatnonzero(small_n | small_c)]
    inconsistent = [int(i) for i in np.flatnonzero(small_n != small_c)]
    return PositivityReport(samples, float(C.min()), float(nrm.min()), violations, inconsistent)


# ---------------------------------------------------------------------------
# several molecules


def _apply_dipole(mol, state, axis_index, weights):
    """sum_k weights[k] D_k acting on tensor factor ``axis_index`` of ``state``."""
    op = np.tensordot(weights, mol._Dt, axes=(0, 0))
    out = np.tensordot(op, state, axes=(1, axis_index))
    return np.moveaxis(out, 0, axis_index)


def _apply_pair(mols, state, i, j, M):
    """f_ij = sum_kl M_kl D_i,k (x) D_j,l on a K-fold tensor state."""
    out = np.zeros_like(state)
    for k in range(3):
        tmp = _apply_dipole(mols[i], state, i, np.eye(3)[k])
        out = out + _apply_dipole(mols[j], tmp, j, M[k])
    return out


def _resolve(mols, state, subset):
    """Restricted inverse of sum_{n in subset} (H_n - E_n), identity on the other factors."""
    K = len(mols)
    den = np.zeros(state.shape)
    ground = np.ones(state.shape, dtype=bool)
    for n in subset:
        shape = [1] * K
        shape[n] = mols[n].dim
        e = (mols[n].energies - mols[n].E0).reshape(shape)
        den = den + e
        g = (np.arange(mols[n].dim) < mols[n].rank).reshape(shape)
        ground = ground & g
    w = np.zeros(state.shape)
    w[~ground] = 1.0 / den[~ground]
    return w * state


def _product_state(mols, coords):
    out = coords[0]
    for c in coords[1:]:
        out = np.multiply.outer(out, c)
    return out


def _pair_axis(positions, i, j):
    d = np.asarray(positions[j], float) - np.asarray(positions[i], float)
    L = np.linalg.norm(d)
    if L == 0:
        raise InvalidInputError("two molecules share a position")
    return d / L, L


def three_body_W(a, b, c, Ua, Ub, Uc, axis_ab, axis_ac, resolvent="ij", states=None) -> float:
    """Real part of <f_ik Psi, R f_ij Psi> for i = a, j = b, k = c.

    ``resolvent`` picks the restricted inverse: the (a, b) pair ("ij"), the
    (a, c) pair ("ik") or all three ("ijk").  The three choices agree.
    """
    mols = (a, b, c)
    for mol in mols:
        mol.require_gap()
    states = states or (None, None, None)
    Ua, Ub, Uc = (as_matrix(R) for R in (Ua, Ub, Uc))
    psi = _product_state(mols, [m.coords(s) for m, s in zip(mols, states)])
    f_ij = _apply_pair(mols, psi, 0, 1, coupling_matrix(Ua, Ub, axis_ab))
    f_ik = _apply_pair(mols, psi, 0, 2, coupling_matrix(Ua, Uc, axis_ac))
    subset = {"ij": (0, 1), "ik": (0, 2), "ijk": (0, 1, 2)}.get(resolvent)
    if subset is None:
        raise InvalidInputError("resolvent must be 'ij', 'ik' or 'ijk'")
    return float(np.real(np.vdot(f_ik, _resolve(mols, f_ij, subset))))


@dataclass
class ManyBodyCorrection:
    total: float
    pair_terms: dict
    three_body_terms: dict

    def to_dict(self):
        return {"total": self.total,
                "pair_terms": {f"{i},{j}": v for (i, j), v in self.pair_terms.items()},
                "three_body_terms": {f"{i};{j},{k}": v for (i, j, k), v in self.three_body_terms.items()}}


def full_vdw_correction(mols, positions, rotations, states=None) -> ManyBodyCorrection:
    """-<S Psi, R S Psi> with S = sum_{i<j} f_ij / L_ij^3 and R the full restricted inverse.

    Also returns the decomposition into pair terms -C_ij / L_ij^6 and
    three-body terms -2 Re W(i; j, k) / (L_ij^3 L_ik^3) over unordered {j, k}.
    """
    K = len(mols)
    if K < 2 or len(positions) != K or len(rotations) != K:
        raise InvalidInputError("need matching molecules, positions and rotations (K >= 2)")
    for mol in mols:
        mol.require_gap()
    states = states or [None] * K
    Us = [as_matrix(R) for R in rotations]
    psi = _product_state(mols, [m.coords(s) for m, s in zip(mols, states)])
    S = np.zeros_like(psi)
    fs = {}
    for i in range(K):
        for j in range(i + 1, K):
            n, L = _pair_axis(positions, i, j)
            fs[(i, j)] = (_apply_pair(mols, psi, i, j, coupling_matrix(Us[i], Us[j], n)), L)
            S = S + fs[(i, j)][0] / L**3
    everyone = tuple(range(K))
    total = -float(np.real(np.vdot(S, _resolve(mols, S, everyone))))
    pairs = {}
    for (i, j), (f, L) in fs.items():
        pairs[(i, j)] = -float(np.real(np.vdot(f, _resolve(mols, f, (i, j))))) / L**6
    triples = {}
    for i in range(K):
        others = [j for j in range(K) if j != i]
        for x in range(len(others)):
            for y in range(x + 1, len(others)):
                j, k = others[x], others[y]
                fij, Lij = fs[tuple(sorted((i, j)))]
                fik, Lik = fs[tuple(sorted((i, k)))]
                w = float(np.real(np.vdot(fik, _resolve(mols, fij, (i, j)))))
                triples[(i, j, k)] = -2.0 * w / (Lij**3 * Lik**3)
    return ManyBodyCorrection(total, pairs, triples)


# ---------------------------------------------------------------------------
# dressing a path of Hamiltonians with ground-state vectors


class HermitianFamily:
    """t -> H(t) on [0, 1], either polynomial sum_k t^k H_k or piecewise linear in samples."""

    def __init__(self, coeffs=None, times=None, samples=None):
        if (coeffs is None) == (samples is None):
            raise InvalidInputError("give either polynomial coefficients or sampled matrices")
        if coeffs is not None:
            self.coeffs = np.array([_check_hermitian(c, f"H_{k}") for k, c in enumerate(coeffs)])
            self.times = self.samples = None
        else:
            samples = np.array([_check_hermitian(s, f"H(t_{k})") for k, s in enumerate(samples)])
            times = np.linspace(0.0, 1.0, len(samples)) if times is None else np.asarray(times, float)
            if len(times) != len(samples) or len(times) < 2 or np.any(np.diff(times) <= 0):
                raise InvalidInputError("sample times must be increasing and match the samples")
            if times[0] != 0.0 or times[-1] != 1.0:
                raise InvalidInputError("sample times must span [0, 1]")
            self.coeffs, self.times, self.samples = None, times, samples

    @property
    def dim(self):
        return (self.coeffs if self.coeffs is not None else self.samples).shape[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.coeffs is not None:
            powers = t[..., None] ** np.arange(len(self.coeffs))
            return np.tensordot(powers, self.coeffs, axes=(-1, 0))
        j = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        s = ((t - self.times[j]) / (self.times[j + 1] - self.times[j]))[..., None, None]
        return (1 - s) * self.samples[j] + s * self.samples[j + 1]

    def lipschitz(self):
        """Upper bound on ||H(t) - H(s)|| / |t - s| in operator norm."""
        if self.coeffs is not None:
            return float(sum(k * np.linalg.norm(c, 2) for k, c in enumerate(self.coeffs)))
        d = np.diff(self.samples, axis=0)
        return float(max(np.linalg.norm(x, 2) / dt for x, dt in zip(d, np.diff(self.times))))

    def ground_energy(self, t):
        return np.linalg.eigvalsh(self(t))[..., 0]

    def to_dict(self):
        def enc(A):
            return [[[float(z.real), float(z.imag)] for z in row] for row in A]

        if self.coeffs is not None:
            return {"coeffs": [enc(c) for c in self.coeffs]}
        return {"times": self.times.tolist(), "samples": [enc(s) for s in self.samples]}


@dataclass
class DressedPath:
    t: np.ndarray
    x: np.ndarray
    rayleigh: np.ndarray
    energy: np.ndarray
    steps: int
    bound: float
    segments: list = field(default_factory=list)

    @property
    def max_rayleigh(self):
        return float(self.rayleigh.max())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "rayleigh", "E"])
        for t, r, e in zip(self.t, self.rayleigh, self.energy):
            w.writerow([f"{t:.17g}", f"{r:.17g}", f"{e:.17g}"])
        return buf.getvalue()


def _projectors(Hs):
    """Orthonormal bases of the lowest eigen-cluster of each matrix in a stack."""
    w, W = np.linalg.eigh(Hs)
    out = []
    for wk, Wk in zip(w, W):
        r = _ground_cluster(wk, np.abs(wk).max())
        out.append(Wk[:, :r])
    return w[:, 0], out


def _sphere_arc(y, z, s):
    """Unit vectors from y to z inside span{y, z}: phase-align, great circle, then phase."""
    ov = np.vdot(y, z)
    phase = np.angle(ov) if abs(ov) > 0 else 0.0
    zr = np.exp(-1j * phase) * z
    c = float(np.clip(np.real(np.vdot(y, zr)), -1.0, 1.0))
    ang = np.arccos(c)
    perp = zr - c * y
    pn = np.linalg.norm(perp)
    perp = perp / pn if pn > 1e-300 else perp
    out = []
    for u in s:
        # first half: rotate y to zr, second half: multiply by the phase
        if u <= 0.5:
            v = np.cos(2 * u * ang) * y + np.sin(2 * u * ang) * perp
        else:
            v = np.exp(1j * (2 * u - 1) * phase) * zr
        out.append(v / np.linalg.norm(v))
    return out


def _adaptive_grid(fam, lip, eps, max_steps, h_max, coarse=1025):
    """Times 0 = t_0 < ... < t_N = 1 with E(t_k) + 2 lip h_k <= running max of E + eps."""
    top = float(fam.ground_energy(np.linspace(0.0, 1.0, coarse)).max())
    ts = [0.0]
    e = float(fam.ground_energy(0.0))
    while ts[-1] < 1.0:
        h = min(h_max, (top + eps - e) / (2.0 * lip)) if lip > 0 else h_max
        t = min(1.0, ts[-1] + h)
        ts.append(t)
        if len(ts) - 1 > max_steps:
            raise ResolutionExceededError(
                f"more than {max_steps} steps needed; achievable excess bound {2 * lip / max_steps:.3g}")
        e = float(fam.ground_energy(t))
        top = max(top, e)
    return np.array(ts)


def dress_path(fam: HermitianFamily, x0, x1, eps=1e-3, n_steps=None, max_steps=200000, per_part=3,
               h_max=0.01):
    """Continuous unit vectors from x0 to x1 whose Rayleigh quotient stays below max E + eps.

    On a step [t_k, t_k + h] the quotient exceeds E(t_k) by at most 2 L h,
    with L the Lipschitz bound of the family.  Steps are sized so this stays
    below the largest ground energy seen so far plus eps; ``n_steps`` forces a
    uniform grid instead.
    """
    x0 = np.asarray(x0, dtype=complex)
    x1 = np.asarray(x1, dtype=complex)
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    lip = fam.lipschitz()
    if n_steps:
        if n_steps > max_steps:
            raise ResolutionExceededError(f"{n_steps} steps exceed the cap {max_steps}")
        tk = np.arange(n_steps + 1) / n_steps
    else:
        tk = _adaptive_grid(fam, lip, eps, max_steps, h_max)
    N = len(tk) - 1
    E, bases = _projectors(fam(tk))
    for idx, (x, name) in enumerate(((x0, "x0"), (x1, "x1"))):
        G = bases[0] if idx == 0 else bases[-1]
        if abs(np.linalg.norm(x) - 1) > 1e-8 or np.linalg.norm(x - G @ (G.conj().T @ x)) > 1e-8:
            raise PreconditionError(f"{name} must be a unit ground vector of H({idx})")
    hk = np.diff(tk)
    bound = float(np.max(E[:-1] + 2 * lip * hk))
    s = np.linspace(0.0, 1.0, per_part + 1)
    ts, xs, segs = [0.0], [x0], []
    x = x0
    for k in range(N):
        G = bases[k + 1]
        y = G @ (G.conj().T @ x)
        ny = np.linalg.norm(y)
        t0 = tk[k]
        last = k == N - 1
        if ny <= 1e-12:
            z = x1 if last else G[:, 0]
            for u in s[1:]:
                ts.append(t0 + u * hk[k])
                xs.append(np.cos(np.pi * u / 2) * x + np.sin(np.pi * u / 2) * z)
            xs[-1] = x = z
            segs.append("quarter")
            continue
        yh = y / ny
        r = x - y
        nr = np.linalg.norm(r)
        alpha = np.arccos(min(ny, 1.0))
        rh = r / nr if nr > 1e-300 else np.zeros_like(r)
        for u in s[1:]:
            ts.append(t0 + u * hk[k] / 2)
            v = np.cos(alpha * (1 - u)) * yh + np.sin(alpha * (1 - u)) * rh
            xs.append(v / np.linalg.norm(v))
        x = yh
        segs.append("project")
        if last:
            for u, v in zip(s[1:], _sphere_arc(x, x1, s[1:])):
                ts.append(t0 + (1 + u) * hk[k] / 2)
                xs.append(v)
            xs[-1] = x = x1
        else:
            ts.append(tk[k + 1])
            xs.append(x)
    ts = np.array(ts)
    X = np.array(xs)
    Hs = fam(ts)
    ray = np.real(np.einsum("ni,nij,nj->n", X.conj(), Hs, X))
    En = np.linalg.eigvalsh(Hs)[:, 0]
    return DressedPath(ts, X, ray, En, N, max(bound, float(E.max())), segs)
