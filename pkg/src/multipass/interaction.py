"""Multipolar interaction energies F^(n,m) and the large-separation expansion.

Molecule 1 sits at the origin and molecule 2 at ``L e1``.  The closed forms
below take lab-frame (already rotated) tensors; ``n`` refers to molecule 1 and
``m`` to molecule 2.  All kernels broadcast over a leading batch axis, which is
what the Monte-Carlo and descent code relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomainError, UnsupportedOrderError
from .multipole import (
    ChargeDistribution,
    MultipoleSet,
    as_matrix,
    compute_multipoles,
    rotate_tensor,
)

SUPPORTED = [(n, m) for n in range(1, 5) for m in range(1, 5) if n + m <= 5]


def _f11(D1, D2):
    return np.einsum("...i,...i->...", D1, D2) - 3 * D1[..., 0] * D2[..., 0]


def _f12(D1, Q2):
    return 5 * D1[..., 0] * Q2[..., 0, 0] - 2 * np.einsum("...i,...i->...", D1, Q2[..., :, 0])


def _f13(D1, O2):
    return (3 * np.einsum("...k,...k->...", O2[..., 0, 0, :], D1)
            - 7 * D1[..., 0] * O2[..., 0, 0, 0])


def _f14(D1, H2):
    return (9 * H2[..., 0, 0, 0, 0] * D1[..., 0]
            - 4 * np.einsum("...k,...k->...", H2[..., 0, 0, 0, :], D1))


def _f22(Q1, Q2):
    # tr((35 pQp - 10 pQ - 10 Qp + 2Q) Q2) / 3 with p = e1 e1^T
    return (35 * Q1[..., 0, 0] * Q2[..., 0, 0]
            - 20 * np.einsum("...k,...k->...", Q1[..., 0, :], Q2[..., 0, :])
            + 2 * np.einsum("...ij,...ij->...", Q1, Q2)) / 3.0


def _f23(Q1, O2):
    return (-21 * O2[..., 0, 0, 0] * Q1[..., 0, 0]
            + 14 * np.einsum("...k,...k->...", O2[..., 0, 0, :], Q1[..., :, 0])
            - 2 * np.einsum("...jk,...jk->...", O2[..., 0, :, :], Q1))


_KERNELS = {(1, 1): _f11, (1, 2): _f12, (1, 3): _f13, (1, 4): _f14, (2, 2): _f22, (2, 3): _f23}


def check_order(n, m):
    if (n, m) not in SUPPORTED:
        raise UnsupportedOrderError(f"interaction order (n, m) = ({n}, {m}) needs 2 <= n+m <= 5, n, m >= 1")


def f_nm_tensors(T1, T2, n, m):
    """F^(n,m) from lab-frame tensors ``T1`` (rank n) and ``T2`` (rank m)."""
    check_order(n, m)
    if n <= m:
        return _KERNELS[(n, m)](T1, T2)
    return (-1) ** (n + m) * _KERNELS[(m, n)](T2, T1)


def f_nm(m1: MultipoleSet, m2: MultipoleSet, U, V, n: int, m: int) -> float:
    check_order(n, m)
    T1 = rotate_tensor(m1.tensor(n), as_matrix(U))
    T2 = rotate_tensor(m2.tensor(m), as_matrix(V))
    return float(f_nm_tensors(T1, T2, n, m))


def f_nm_batch(m1: MultipoleSet, m2: MultipoleSet, Us, Vs, n: int, m: int):
    """Vectorised F^(n,m) over stacks of rotation matrices of shape (N,3,3)."""
    check_order(n, m)
    T1 = rotate_tensor(m1.tensor(n), np.asarray(Us))
    T2 = rotate_tensor(m2.tensor(m), np.asarray(Vs))
    return f_nm_tensors(T1, T2, n, m)


def make_batch_objective(m1, m2, n, m, scale=1.0):
    """Closure ``(Us, Vs) -> scale * F^(n,m)`` for the batched optimisers."""
    check_order(n, m)
    A = np.asarray(m1.tensor(n))
    B = np.asarray(m2.tensor(m))

    def fb(Us, Vs):
        return scale * f_nm_tensors(rotate_tensor(A, Us), rotate_tensor(B, Vs), n, m)

    return fb


@dataclass(frozen=True)
class InteractionTable:
    entries: dict

    def __getitem__(self, key):
        return self.entries[key]

    def to_dict(self):
        return {f"{n},{m}": v for (n, m), v in sorted(self.entries.items())}


def interaction_table(m1, m2, U, V, N=5):
    return InteractionTable({(n, m): f_nm(m1, m2, U, V, n, m) for (n, m) in SUPPORTED if n + m <= N})


def expansion_value(table: InteractionTable, L: float, N: int):
    return sum(v / L ** (n + m + 1) for (n, m), v in table.entries.items() if n + m <= N)


def interaction_expansion(dist1: ChargeDistribution, dist2: ChargeDistribution, U, V,
                          L: float, N: int = 5):
    """Multipolar approximation of the Coulomb energy up to total order ``N``."""
    if N > 5:
        raise UnsupportedOrderError("expansion order N must be at most 5")
    if max(dist1.radius, dist2.radius) > L / 3:
        raise OutOfDomainError("molecule supports must lie within L/3 of their centres")
    m1 = compute_multipoles(dist1, 4)
    m2 = compute_multipoles(dist2, 4)
    table = interaction_table(m1, m2, U, V, N)
    return table, float(expansion_value(table, L, N))


# ---------------------------------------------------------------------------
# several molecules


@dataclass(frozen=True)
class MoleculePlacement:
    multipoles: MultipoleSet
    rotation: object
    center: np.ndarray
    radius: float = 0.0


def pair_frame(axis):
    """Rotation ``P`` with ``P @ axis = e1`` (deterministic choice)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b = np.cross(helper, a)
    b /= np.linalg.norm(b)
    c = np.cross(a, b)
    return np.vstack([a, b, c])


def pairwise_multimolecule_energy(placements, N: int = 5) -> float:
    """Sum of pair expansions, each evaluated in a frame whose e1 is the pair axis."""
    if len(placements) < 2:
        raise OutOfDomainError("need at least two molecules")
    total = 0.0
    for i in range(len(placements)):
        for j in range(i + 1, len(placements)):
            a, b = placements[i], placements[j]
            axis = np.asarray(b.center, float) - np.asarray(a.center, float)
            Lij = float(np.linalg.norm(axis))
            if Lij == 0 or max(a.radius, b.radius) > Lij / 3:
                raise OutOfDomainError(f"molecules {i} and {j} are too close")
            P = pair_frame(axis)
            Ui = P @ as_matrix(a.rotation)
            Uj = P @ as_matrix(b.rotation)
            table = interaction_table(a.multipoles, b.multipoles, Ui, Uj, N)
            total += expansion_value(table, Lij, N)
    return float(total)
