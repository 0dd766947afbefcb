"""FETI-DP solver for incompressible Stokes flow with Q2-Q1 Taylor-Hood elements."""
from .dd_system import ReducedSystem, build_reduced
from .fem import manufactured_case
from .krylov import PcgConfig, SolveReport, pcg
from .mesh import BoxMesh, ConfigError, build_jump, build_mesh, classify_dofs
from .preconditioners import PrecondConfig, make_preconditioner
from .solver import FetiDPResult, solve, solve_box

__all__ = [
    "BoxMesh",
    "ConfigError",
    "FetiDPResult",
    "PcgConfig",
    "PrecondConfig",
    "ReducedSystem",
    "SolveReport",
    "build_jump",
    "build_mesh",
    "build_reduced",
    "classify_dofs",
    "make_preconditioner",
    "manufactured_case",
    "pcg",
    "solve",
    "solve_box",
]
__version__ = "0.1.0"
