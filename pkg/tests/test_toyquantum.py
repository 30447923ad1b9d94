import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import haar_rotation
from multipass.errors import (
    IllPosedResolventError,
    InvalidInputError,
    PreconditionError,
    ResolutionExceededError,
)
from multipass.toyquantum import (
    HermitianFamily,
    ToyCvdw,
    ToyMolecule,
    check_vdw_positivity,
    cvdw_batch,
    cvdw_pair,
    dipole_expectation,
    dress_path,
    excited_norm,
    full_vdw_correction,
    three_body_W,
)

E1 = np.array([1.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# explicit tensor-product oracle


def kron_all(ops):
    out = ops[0]
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def embed(op, slot, dims):
    return kron_all([op if i == slot else np.eye(d) for i, d in enumerate(dims)])


def pair_operator(mols, i, j, Ui, Uj, axis):
    dims = [m.dim for m in mols]
    n = np.asarray(axis) / np.linalg.norm(axis)
    M = Ui.T @ (np.eye(3) - 3 * np.outer(n, n)) @ Uj
    return sum(M[k, l] * embed(mols[i].dipoles[k], i, dims) @ embed(mols[j].dipoles[l], j, dims)
               for k in range(3) for l in range(3))


def restricted_inverse(mols, subset):
    """Inverse of sum_{n in subset}(H_n - E_n) off its kernel, tensored with identity elsewhere."""
    dims = [m.dim for m in mols]
    A = sum(embed(mols[n].H - np.linalg.eigvalsh(mols[n].H)[0] * np.eye(mols[n].dim), n, dims) for n in subset)
    w, W = np.linalg.eigh(A)
    inv = np.where(w > 1e-9, 1.0 / np.where(w > 1e-9, w, 1.0), 0.0)
    return (W * inv) @ W.conj().T


def ground_product(mols):
    return kron_all([np.linalg.eigh(m.H)[1][:, 0] for m in mols])


# ---------------------------------------------------------------------------


def test_two_level_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(50):
        da = rng.normal(size=3) + 1j * rng.normal(size=3)
        db = rng.normal(size=3) + 1j * rng.normal(size=3)
        sa, sb = rng.uniform(0.2, 3.0, size=2)
        a, b = ToyMolecule.two_level(sa, da), ToyMolecule.two_level(sb, db)
        U, V = haar_rotation(rng), haar_rotation(rng)
        M = U.T @ (np.eye(3) - 3 * np.outer(E1, E1)) @ V
        ref = abs(da.conj() @ M @ db.conj()) ** 2 / (sa + sb)
        assert cvdw_pair(a, b, U, V) == pytest.approx(ref, abs=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_pair_coefficient_matches_tensor_product(seed):
    rng = np.random.default_rng(seed)
    a, b = ToyMolecule.random(3, rng), ToyMolecule.random(4, rng)
    U, V = haar_rotation(rng), haar_rotation(rng)
    f = pair_operator([a, b], 0, 1, U, V, E1)
    psi = ground_product([a, b])
    ref = np.real(np.vdot(f @ psi, restricted_inverse([a, b], (0, 1)) @ f @ psi))
    assert cvdw_pair(a, b, U, V) == pytest.approx(ref, abs=1e-10)
    assert cvdw_batch(a, b, U[None], V[None], averaged=False)[0] == pytest.approx(ref, abs=1e-10)
    ex = f @ psi - psi * np.vdot(psi, f @ psi)
    assert excited_norm(a, b, U, V) == pytest.approx(np.linalg.norm(ex), abs=1e-10)
    assert dipole_expectation(a, b, U, V) == pytest.approx(np.real(np.vdot(psi, f @ psi)), abs=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_three_body_term_matches_tensor_product(seed):
    rng = np.random.default_rng(seed)
    mols = [ToyMolecule.random(n, rng) for n in (2, 3, 2)]
    Us = [haar_rotation(rng) for _ in range(3)]
    pos = rng.normal(size=(3, 3)) * 5
    ax_ab = (pos[1] - pos[0]) / np.linalg.norm(pos[1] - pos[0])
    ax_ac = (pos[2] - pos[0]) / np.linalg.norm(pos[2] - pos[0])
    psi = ground_product(mols)
    fij = pair_operator(mols, 0, 1, Us[0], Us[1], ax_ab) @ psi
    fik = pair_operator(mols, 0, 2, Us[0], Us[2], ax_ac) @ psi
    ref = np.real(np.vdot(fik, restricted_inverse(mols, (0, 1)) @ fij))
    vals = [three_body_W(*mols, *Us, ax_ab, ax_ac, resolvent=r) for r in ("ij", "ik", "ijk")]
    np.testing.assert_allclose(vals, ref, atol=1e-10)


def test_full_correction_matches_tensor_product_and_is_nonpositive():
    rng = np.random.default_rng(4)
    mols = [ToyMolecule.random(n, rng) for n in (2, 2, 3)]
    Us = [haar_rotation(rng) for _ in range(3)]
    pos = np.array([[0.0, 0, 0], [6.0, 1, 0], [1.0, 7, 2]])
    psi = ground_product(mols)
    S = 0
    for i, j in ((0, 1), (0, 2), (1, 2)):
        d = pos[j] - pos[i]
        S = S + pair_operator(mols, i, j, Us[i], Us[j], d) @ psi / np.linalg.norm(d) ** 3
    ref = -np.real(np.vdot(S, restricted_inverse(mols, (0, 1, 2)) @ S))
    corr = full_vdw_correction(mols, pos, Us)
    assert corr.total == pytest.approx(ref, abs=1e-12)
    assert corr.total <= 0
    # with three molecules every pair of pairs shares one molecule, so the split is exact
    parts = sum(corr.pair_terms.values()) + sum(corr.three_body_terms.values())
    assert parts == pytest.approx(corr.total, abs=1e-12)


def test_positivity_report_and_averaging(data_dir):
    from multipass.io import load_toy
    a, b = load_toy(data_dir / "toy_a.json"), load_toy(data_dir / "toy_b.json")
    rep = check_vdw_positivity(a, b, samples=300, seed=1)
    assert rep.ok and rep.min_cvdw > 0
    plug = ToyCvdw(a, b)
    Us = np.stack([np.eye(3)] * 2)
    assert plug(Us, Us).shape == (2,)


def test_gapless_molecule_is_rejected():
    flat = ToyMolecule(np.eye(2), np.zeros((3, 2, 2)))
    other = ToyMolecule.two_level(1.0, [1, 0, 0])
    with pytest.raises(IllPosedResolventError):
        cvdw_pair(flat, other, np.eye(3), np.eye(3))


def test_bad_molecule_inputs():
    with pytest.raises(InvalidInputError):
        ToyMolecule(np.array([[0, 1], [2, 0]]), np.zeros((3, 2, 2)))
    with pytest.raises(InvalidInputError):
        ToyMolecule(np.eye(2), np.zeros((2, 2, 2)))
    mol = ToyMolecule.two_level(1.0, [1, 0, 0])
    with pytest.raises(PreconditionError):
        mol.coords(np.array([0.0, 1.0]))


# ---------------------------------------------------------------------------
# path dressing


def random_family(rng, n=8, degree=3, crossing=False):
    def herm():
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        return 0.25 * (A + A.conj().T)

    coeffs = [herm() for _ in range(degree + 1)]
    if crossing:
        # two decoupled levels cross at t = 1/2 well below the rest
        for c in coeffs:
            c[:2, :] = 0
            c[:, :2] = 0
        coeffs[0][2:, 2:] += 6 * np.eye(n - 2)
        coeffs[0][0, 0], coeffs[1][0, 0] = -1.0, 2.0
        coeffs[0][1, 1], coeffs[1][1, 1] = 1.0, -2.0
    return HermitianFamily(coeffs=coeffs)


def dense_check(fam, path, eps):
    grid = np.linspace(0.0, 1.0, 4001)
    E = np.linalg.eigvalsh(fam(np.concatenate([grid, path.t])))[:, 0]
    H = fam(path.t)
    ray = np.real(np.einsum("ni,nij,nj->n", path.x.conj(), H, path.x))
    norms = np.linalg.norm(path.x, axis=1)
    return ray.max(), E.max() + eps, norms


@pytest.mark.parametrize("crossing", [False, True])
def test_dressing_stays_below_running_maximum(crossing):
    rng = np.random.default_rng(17 if crossing else 5)
    fam = random_family(rng, crossing=crossing)
    x0 = np.linalg.eigh(fam(0.0))[1][:, 0]
    x1 = np.linalg.eigh(fam(1.0))[1][:, 0]
    path = dress_path(fam, x0, x1, eps=1e-3, per_part=12)
    top, limit, norms = dense_check(fam, path, 1e-3)
    assert top <= limit
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)
    np.testing.assert_allclose(path.x[0], x0)
    np.testing.assert_allclose(path.x[-1], x1)
    if crossing:
        # the ground state swaps levels, so the path has to leave the start eigenvector entirely
        assert abs(np.vdot(x0, x1)) < 1e-12


def test_sampled_family_and_errors():
    rng = np.random.default_rng(2)
    samples = [np.diag(rng.normal(size=4)).astype(complex) for _ in range(5)]
    fam = HermitianFamily(samples=samples)
    np.testing.assert_allclose(fam(0.25), samples[1])
    x0 = np.linalg.eigh(fam(0.0))[1][:, 0]
    x1 = np.linalg.eigh(fam(1.0))[1][:, 0]
    path = dress_path(fam, x0, x1, eps=1e-2)
    assert path.max_rayleigh <= np.linalg.eigvalsh(fam(np.linspace(0, 1, 2001)))[:, 0].max() + 1e-2
    with pytest.raises(PreconditionError):
        dress_path(fam, np.roll(x0, 1) if abs(np.roll(x0, 1) @ x0) < 1e-12 else 2 * x0, x1)
    with pytest.raises(ResolutionExceededError):
        dress_path(fam, x0, x1, eps=1e-6, max_steps=10)
    with pytest.raises(InvalidInputError):
        HermitianFamily(samples=samples, times=[0, 0.5, 0.4, 0.8, 1.0])
