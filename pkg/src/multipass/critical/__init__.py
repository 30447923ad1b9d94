"""Critical points of the multipolar energies on SO(3) x SO(3)."""

from .descent import PseudoMinReport, batch_descend, batch_newton_critical, critical_levels, descend_to_pseudo_minimum
from .dipolar import DipolarReduction, field_vector
from .localmin import LocalMinReport, case_objective, check_case, default_delta, qq_c0, verify_localmin_property
from .structure import (
    QQStructure,
    L_operator,
    M_operator,
    check_octopole_nondegeneracy,
    exchange_rotation,
    octopole_kernel_vectors,
    orient_M_sign,
    qq_fiber_minimizer,
    qq_structure,
)
from .sublevel import SublevelPath, compute_delta0, connect_negative_sublevel, sublevel_connector

__all__ = [
    "PseudoMinReport", "batch_descend", "batch_newton_critical", "critical_levels", "descend_to_pseudo_minimum",
    "DipolarReduction", "field_vector",
    "LocalMinReport", "case_objective", "check_case", "default_delta", "qq_c0", "verify_localmin_property",
    "QQStructure", "L_operator", "M_operator", "check_octopole_nondegeneracy", "exchange_rotation",
    "octopole_kernel_vectors", "orient_M_sign", "qq_fiber_minimizer", "qq_structure",
    "SublevelPath", "compute_delta0", "connect_negative_sublevel", "sublevel_connector",
]
