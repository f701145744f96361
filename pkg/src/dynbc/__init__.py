"""Adaptive finite elements for parabolic problems with dynamic boundary conditions.

The boundary condition is treated as a second evolution equation on Gamma for
p = tr u, coupled to the bulk through a Lagrange multiplier on the trace mesh.
Bulk and boundary meshes are refined independently.
"""
from .adapt import AdaptConfig, AdaptState, ConvergenceTable, adaptive_loop, doerfler_mark
from .assembly import ProblemData, SaddleSystem, assemble
from .estimator import EstimatorReport, attribute, error_norms, estimate
from .mesh import (
    GammaMesh, Mesh2D, bisect, create_lshape, create_unit_square, refine_gamma, trace_gamma,
    uniform_refine, uniform_refine_gamma,
)
from .solver import SolutionTriple, SolverError, infsup_constant, solve
from .spaces import DofMap, SchemeConfig, build_spaces, evaluate
from .timestep import TimeProblem, TimeState, euler_step, run_parabolic

__version__ = "0.1.0"
