import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_neutral
from oracles import haar_rotation, pair_term
from multipass.errors import OutOfDomainError, UnsupportedOrderError
from multipass.interaction import (
    SUPPORTED,
    MoleculePlacement,
    f_nm,
    f_nm_batch,
    interaction_expansion,
    interaction_table,
    pairwise_multimolecule_energy,
)
from multipass.multipole import compute_multipoles, direct_coulomb


@given(st.integers(0, 2**32 - 1))
def test_f_nm_matches_polynomial_coefficients(seed):
    rng = np.random.default_rng(seed)
    d1, d2 = random_neutral(rng, 4), random_neutral(rng, 3)
    m1, m2 = compute_multipoles(d1, 4), compute_multipoles(d2, 4)
    U, V = haar_rotation(rng), haar_rotation(rng)
    for n, m in SUPPORTED:
        ref = pair_term(d1.charges, d1.positions, d2.charges, d2.positions, U, V, n, m)
        assert f_nm(m1, m2, U, V, n, m) == pytest.approx(ref, abs=1e-10)


def test_batch_matches_scalar():
    rng = np.random.default_rng(7)
    m1 = compute_multipoles(random_neutral(rng, 5), 4)
    m2 = compute_multipoles(random_neutral(rng, 5), 4)
    Us = np.array([haar_rotation(rng) for _ in range(6)])
    Vs = np.array([haar_rotation(rng) for _ in range(6)])
    for n, m in SUPPORTED:
        got = f_nm_batch(m1, m2, Us, Vs, n, m)
        ref = [f_nm(m1, m2, U, V, n, m) for U, V in zip(Us, Vs)]
        np.testing.assert_allclose(got, ref, atol=1e-13)


def test_dipole_pair_closed_form():
    from multipass.multipole import MultipoleSet
    a = MultipoleSet.from_tensors(D=[1.0, 0, 0])
    I = np.eye(3)
    # head-to-tail along the axis: D1.D2 - 3 D1x D2x
    assert f_nm(a, a, I, I, 1, 1) == pytest.approx(-2.0)
    Rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    assert f_nm(a, a, Rz, Rz, 1, 1) == pytest.approx(1.0)


def test_unsupported_orders():
    from multipass.multipole import MultipoleSet
    a = MultipoleSet.from_tensors(D=[1.0, 0, 0])
    for n, m in [(0, 1), (1, 5), (3, 3), (4, 2)]:
        with pytest.raises(UnsupportedOrderError):
            f_nm(a, a, np.eye(3), np.eye(3), n, m)


def test_expansion_converges_to_direct():
    rng = np.random.default_rng(11)
    d1, d2 = random_neutral(rng, 5), random_neutral(rng, 5)
    U, V = haar_rotation(rng), haar_rotation(rng)
    L = 25.0
    exact = direct_coulomb(d1, d2, U, V, L, precise=True)
    errs = [abs(interaction_expansion(d1, d2, U, V, L, N)[1] - exact) for N in (2, 3, 4, 5)]
    assert errs[-1] < errs[0] * 1e-2
    with pytest.raises(OutOfDomainError):
        interaction_expansion(d1, d2, U, V, 2.0, 5)
    with pytest.raises(UnsupportedOrderError):
        interaction_expansion(d1, d2, U, V, L, 6)


def test_table_keys_and_serialisation():
    rng = np.random.default_rng(2)
    m1 = compute_multipoles(random_neutral(rng, 4), 4)
    tab = interaction_table(m1, m1, np.eye(3), np.eye(3), N=3)
    assert set(tab.entries) == {(1, 1), (1, 2), (2, 1)}
    assert set(tab.to_dict()) == {"1,1", "1,2", "2,1"}


def test_pairwise_energy_matches_two_molecule_expansion():
    rng = np.random.default_rng(5)
    d1, d2 = random_neutral(rng, 4), random_neutral(rng, 4)
    m1, m2 = compute_multipoles(d1, 4), compute_multipoles(d2, 4)
    U, V = haar_rotation(rng), haar_rotation(rng)
    L = 12.0
    ref = interaction_expansion(d1, d2, U, V, L, 5)[1]
    got = pairwise_multimolecule_energy([MoleculePlacement(m1, U, np.zeros(3), 1.0),
                                         MoleculePlacement(m2, V, np.array([L, 0, 0]), 1.0)])
    assert got == pytest.approx(ref, rel=1e-12)


def test_pairwise_energy_is_frame_independent():
    rng = np.random.default_rng(6)
    ms = [compute_multipoles(random_neutral(rng, 4), 4) for _ in range(3)]
    Rs = [haar_rotation(rng) for _ in range(3)]
    centers = [np.zeros(3), np.array([9.0, 1.0, 0.0]), np.array([-2.0, 8.0, 3.0])]
    G = haar_rotation(rng)
    e1 = pairwise_multimolecule_energy([MoleculePlacement(m, R, c, 1.0) for m, R, c in zip(ms, Rs, centers)])
    e2 = pairwise_multimolecule_energy([MoleculePlacement(m, G @ R, G @ c, 1.0) for m, R, c in zip(ms, Rs, centers)])
    assert e1 == pytest.approx(e2, rel=1e-10)
