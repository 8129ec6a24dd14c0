"""Conic program representation, text dump and solver backends."""

from .ir import (Affine, ConicProgram, LinearConstraint, Objective, PsdConstraint, Relation,
                 Sense, SocConstraint, ValidationError, VariableHandle, VarKind, as_affine,
                 linear_sum, validate)
from .backends import (ClarabelBackend, RawResult, ScsBackend, Solution, SolverBackend,
                       StandardForm, Status, constraint_violation, get_backend,
                       lower_quadratic_objective, solve, to_standard_form)
from .textio import dumps, loads

__all__ = [
    "Affine", "ConicProgram", "LinearConstraint", "Objective", "PsdConstraint", "Relation",
    "Sense", "SocConstraint", "ValidationError", "VariableHandle", "VarKind", "as_affine",
    "linear_sum", "validate", "ClarabelBackend", "RawResult", "ScsBackend", "Solution",
    "SolverBackend", "StandardForm", "Status", "constraint_violation", "get_backend",
    "lower_quadratic_objective", "solve", "to_standard_form", "dumps", "loads",
]
