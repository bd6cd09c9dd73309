"""Finite-element solver and verification harness for an antiplane frictional contact problem
in mixed (Lagrange multiplier) form."""

from .assembly import ProblemSpec, assemble_operators
from .mesh import Mesh, build_rect_mesh
from .solver import DiscreteState, SolverConfig, oracle_minimize, uzawa_solve

__all__ = [
    "DiscreteState",
    "Mesh",
    "ProblemSpec",
    "SolverConfig",
    "assemble_operators",
    "build_rect_mesh",
    "oracle_minimize",
    "uzawa_solve",
]
__version__ = "0.1.0"
