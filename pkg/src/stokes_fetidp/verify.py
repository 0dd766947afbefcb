"""Independent reference computations on the fully assembled Stokes system.

Nothing here touches the subdomain machinery: the monolithic matrices come
from an element loop over the whole mesh (``fem.assemble_global``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .dd_system import Solution, zero_mean_pressure
from .mesh import BoxMesh
from .sparse_core import SingularMatrix

DENSE_LIMIT = 5000


@dataclass
class DirectSolution:
    u: np.ndarray  # all nodal velocity DOFs, boundary included
    p: np.ndarray  # zero mean
    residual: float
    system: fem.GlobalSystem


def direct_solve(mesh: BoxMesh, case: fem.ManufacturedCase | None = None, system: fem.GlobalSystem | None = None):
    """Monolithic sparse LU of ``[A B^T; B 0]`` with the first pressure pinned."""
    case = case or fem.manufactured_case(mesh.dim)
    G = system or fem.assemble_global(mesh)
    f = fem.global_rhs(mesh, case, G.free)
    nv, npr = G.A.shape[0], G.B.shape[0]
    K = sp.bmat([[G.A, G.B.T], [G.B, None]], format="csr")
    keep = np.r_[np.arange(nv), nv + np.arange(1, npr)]
    Kp = K[keep][:, keep].tocsc()
    rhs = np.r_[f, np.zeros(npr)]
    try:
        y = spla.splu(Kp).solve(rhs[keep])
    except RuntimeError as exc:
        raise SingularMatrix(f"pinned Stokes matrix is singular: {exc}") from exc
    sol = np.zeros(nv + npr)
    sol[keep] = y
    res = float(np.linalg.norm(K @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    u = np.zeros(mesh.n_vnodes * mesh.dim)
    u[G.free] = sol[:nv]
    return DirectSolution(u=u, p=zero_mean_pressure(mesh, sol[nv:]), residual=res, system=G)


def compare_fetidp(mesh: BoxMesh, reference: DirectSolution, fetidp: Solution) -> dict:
    """Relative max-norm velocity and pressure discrepancies (pressures mean-aligned)."""
    du = np.abs(fetidp.u - reference.u).max() / max(np.abs(reference.u).max(), 1e-300)
    pa = zero_mean_pressure(mesh, fetidp.p)
    pb = zero_mean_pressure(mesh, reference.p)
    dp = np.abs(pa - pb).max() / max(np.abs(pb).max(), 1e-300)
    return {"velocity": float(du), "pressure": float(dp)}


def _check_size(n: int) -> None:
    if n > DENSE_LIMIT:
        raise ValueError(f"dense eigenproblem of size {n} exceeds limit {DENSE_LIMIT}")


def infsup_spectrum(mesh: BoxMesh, system: fem.GlobalSystem | None = None) -> np.ndarray:
    """Generalized eigenvalues of ``(B A^-1 B^T, Z)``, ascending."""
    G = system or fem.assemble_global(mesh)
    _check_size(G.A.shape[0] + G.B.shape[0])
    AinvBt = spla.splu(G.A.tocsc()).solve(G.B.T.toarray())
    S = G.B @ AinvBt
    S = 0.5 * (S + S.T)
    return scipy.linalg.eigh(S, G.Z.toarray(), eigvals_only=True)


def estimate_infsup(mesh: BoxMesh, system: fem.GlobalSystem | None = None) -> float:
    """``beta`` from the smallest eigenvalue on zero-mean pressures.

    The constant pressure spans the kernel of ``B^T`` so the first
    eigenvalue is zero and the second is ``beta^2``.
    """
    ev = infsup_spectrum(mesh, system)
    return float(np.sqrt(max(ev[1], 0.0)))


def mass_spectral_bounds(mesh: BoxMesh) -> tuple[float, float]:
    Z = fem.pressure_mass(mesh)
    _check_size(Z.shape[0])
    ev = np.linalg.eigvalsh(Z.toarray())
    s = mesh.elem_volume
    return float(ev[0] / s), float(ev[-1] / s)


@dataclass
class DiscretizationErrors:
    velocity_max: float
    velocity_h1: float
    pressure_l2: float


def discretization_errors(
    mesh: BoxMesh, case: fem.ManufacturedCase, u: np.ndarray, p: np.ndarray, system: fem.GlobalSystem | None = None
) -> DiscretizationErrors:
    """Nodal max error, discrete H1 seminorm (through ``A``) and L2 pressure error (through ``Z``)."""
    G = system or fem.assemble_global(mesh)
    ue = case.velocity(mesh.velocity_coords()).ravel()
    pe = zero_mean_pressure(mesh, case.pressure(mesh.pressure_coords()))
    eu = u - ue
    ef = eu[G.free]
    ep = zero_mean_pressure(mesh, p) - pe
    return DiscretizationErrors(
        velocity_max=float(np.abs(eu).max()),
        velocity_h1=float(np.sqrt(max(ef @ (G.A @ ef), 0.0))),
        pressure_l2=float(np.sqrt(max(ep @ (G.Z @ ep), 0.0))),
    )


@dataclass
class VerificationReport:
    dim: int
    subs: list[int]
    ratio: int
    velocity_max_error: float
    velocity_h1_error: float
    pressure_l2_error: float
    direct_residual: float
    velocity_discrepancy: float | None = None
    pressure_discrepancy: float | None = None
    infsup: float | None = None
    mass_bounds: tuple[float, float] | None = None

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        d = json.loads(text)
        if d.get("mass_bounds") is not None:
            d["mass_bounds"] = tuple(d["mass_bounds"])
        return cls(**d)


def verify(
    mesh: BoxMesh,
    case: fem.ManufacturedCase | None = None,
    fetidp: Solution | None = None,
    dense: bool | None = None,
) -> VerificationReport:
    """Direct solve, error measurement and, when given, comparison with a FETI-DP solution."""
    case = case or fem.manufactured_case(mesh.dim)
    G = fem.assemble_global(mesh)
    ref = direct_solve(mesh, case, G)
    err = discretization_errors(mesh, case, ref.u, ref.p, G)
    rep = VerificationReport(
        dim=mesh.dim,
        subs=list(mesh.subs),
        ratio=mesh.ratio,
        velocity_max_error=err.velocity_max,
        velocity_h1_error=err.velocity_h1,
        pressure_l2_error=err.pressure_l2,
        direct_residual=ref.residual,
    )
    if fetidp is not None:
        d = compare_fetidp(mesh, ref, fetidp)
        rep.velocity_discrepancy = d["velocity"]
        rep.pressure_discrepancy = d["pressure"]
    if dense is None:
        dense = G.A.shape[0] + G.B.shape[0] <= DENSE_LIMIT
    if dense:
        rep.infsup = estimate_infsup(mesh, G)
        rep.mass_bounds = mass_spectral_bounds(mesh)
    return rep
