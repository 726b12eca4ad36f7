"""Stabilization of near-representations of finite groups into U(d)."""

__version__ = "0.1.0"

from .groups import (FiniteGroup, GroupError, ProductStructure, SplitExtension, make_cyclic,
                     make_dihedral, make_direct_product, make_semidirect, make_subgroup_chain,
                     parse_group, verify_group_axioms)
from .linalg import FiniteMean, matrix_mean, op_norm, polar_unitary_factor
from .repmap import (MatrixMap, UMap, defect, defect_breakdown, exact_cyclic_representation,
                     is_representation, perturb_representation, sup_distance)
from .stabilizer import (StabilizerTrace, product_stabilize, semidirect_stabilize,
                         single_group_average, stabilize_single)

__all__ = [
    "FiniteGroup", "FiniteMean", "GroupError", "MatrixMap", "ProductStructure", "SplitExtension",
    "StabilizerTrace", "UMap", "defect", "defect_breakdown", "exact_cyclic_representation",
    "is_representation", "make_cyclic", "make_dihedral", "make_direct_product", "make_semidirect",
    "make_subgroup_chain", "matrix_mean", "op_norm", "parse_group", "perturb_representation",
    "polar_unitary_factor", "product_stabilize", "semidirect_stabilize", "single_group_average",
    "stabilize_single", "sup_distance", "verify_group_axioms",
]
