"""Finite element solver for steady multicomponent Stefan-Maxwell diffusion."""

from .fespace import Field, FiniteSpace, cg_space, dg_vector_space, interpolate, mixed_spaces, norms
from .mesh import DIRICHLET, NEUMANN, Diagonal, Tag, TriMesh, build_rectangle, build_unit_square, tag_boundary
from .solver import (
    ConvergenceError,
    FactorizationError,
    PicardSettings,
    SolveError,
    SolveReport,
    picard_iterate,
    solve_linear,
)
from .system import ConsistencyError, ProblemData, SaddleSystem, apply_dirichlet_lifting, assemble
from .transport import (
    PositivityError,
    TransportCoefficients,
    TransportError,
    augmentation_matrix,
    augmented_matrix,
    onsager_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "ConsistencyError",
    "ConvergenceError",
    "DIRICHLET",
    "Diagonal",
    "FactorizationError",
    "Field",
    "FiniteSpace",
    "NEUMANN",
    "PicardSettings",
    "PositivityError",
    "ProblemData",
    "SaddleSystem",
    "SolveError",
    "SolveReport",
    "Tag",
    "TransportCoefficients",
    "TransportError",
    "TriMesh",
    "apply_dirichlet_lifting",
    "assemble",
    "augmentation_matrix",
    "augmented_matrix",
    "build_rectangle",
    "build_unit_square",
    "cg_space",
    "dg_vector_space",
    "interpolate",
    "mixed_spaces",
    "norms",
    "onsager_matrix",
    "picard_iterate",
    "solve_linear",
    "tag_boundary",
]
