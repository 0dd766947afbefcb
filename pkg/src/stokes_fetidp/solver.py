"""End-to-end FETI-DP solve of a manufactured Stokes problem."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .dd_system import RHS, ReducedSystem, Solution
from .krylov import PcgConfig, SolveReport, pcg
from .mesh import BoxMesh, build_mesh, classify_dofs
from .preconditioners import PrecondConfig, make_preconditioner


@dataclass
class FetiDPResult:
    system: ReducedSystem
    rhs: RHS
    x: np.ndarray
    report: SolveReport
    solution: Solution


def setup(mesh: BoxMesh, primal_spec: str | None = None, parallel: bool = False) -> ReducedSystem:
    return ReducedSystem(classify_dofs(mesh, primal_spec), parallel=parallel)


def solve(
    mesh: BoxMesh,
    case: fem.ManufacturedCase | None = None,
    precond: PrecondConfig | None = None,
    pcg_cfg: PcgConfig | None = None,
    system: ReducedSystem | None = None,
    parallel: bool = False,
    callback=None,
) -> FetiDPResult:
    """Build (or reuse) the reduced system, run PCG on ``G x = g`` and back-substitute."""
    case = case or fem.manufactured_case(mesh.dim)
    precond = precond or PrecondConfig()
    sys = system if system is not None else setup(mesh, parallel=parallel)
    rhs = sys.build_rhs(case)
    g = sys.build_g(rhs)
    M = make_preconditioner(sys, precond)
    x, report = pcg(sys.apply_G, M, g, pcg_cfg, callback=callback)
    return FetiDPResult(system=sys, rhs=rhs, x=x, report=report, solution=sys.back_substitute(rhs, x))


def solve_box(dim: int, subs, ratio: int, kind: str = "dirichlet", alpha: float = 1.0, tol: float = 1e-6, **kw):
    mesh = build_mesh(dim, subs, ratio)
    return solve(mesh, precond=PrecondConfig(kind, alpha), pcg_cfg=PcgConfig(tol=tol), **kw)
