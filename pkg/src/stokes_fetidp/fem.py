"""Q2-Q1 Taylor-Hood matrices on uniform box grids.

All forms separate over the coordinate axes on axis-aligned boxes, so every
matrix is a sum of Kronecker products of one-dimensional matrices computed
with a 3-point Gauss rule (exact for all Q2-Q1 integrands).  A separate
element-by-element assembler, :func:`assemble_global`, builds the fully
assembled system from element matrices and serves as the reference path.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import BoxMesh, DofPartition, SubdomainDofs

_GX, _GW = np.polynomial.legendre.leggauss(3)
GAUSS_X = 0.5 * (_GX + 1.0)
GAUSS_W = 0.5 * _GW


def q2_basis(x: np.ndarray) -> np.ndarray:
    """Quadratic Lagrange basis on [0, 1] with nodes 0, 1/2, 1; shape (3, len(x))."""
    x = np.asarray(x, dtype=float)
    return np.array([2 * (x - 0.5) * (x - 1), -4 * x * (x - 1), 2 * x * (x - 0.5)])


def q2_basis_deriv(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([4 * x - 3, -8 * x + 4, 4 * x - 1])


def q1_basis(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([1 - x, x])


def _ref_1d():
    phi, dphi, psi = q2_basis(GAUSS_X), q2_basis_deriv(GAUSS_X), q1_basis(GAUSS_X)
    w = GAUSS_W
    return {
        "K": (dphi * w) @ dphi.T,  # int phi' phi'
        "M": (phi * w) @ phi.T,  # int phi phi
        "P": (psi * w) @ psi.T,  # int psi psi
        "X": (psi * w) @ phi.T,  # int psi phi
        "D": (psi * w) @ dphi.T,  # int psi phi'
    }


REF_1D = _ref_1d()


def _assemble_1d(n: int, h: float) -> dict[str, sp.csr_matrix]:
    """One-dimensional Q2/Q1 matrices on ``n`` elements of width ``h``."""
    nv, npr = 2 * n + 1, n + 1
    out = {}
    scale = {"K": 1.0 / h, "M": h, "P": h, "X": h, "D": 1.0}
    rows_v = (2 * np.arange(n))[:, None] + np.arange(3)
    rows_p = np.arange(n)[:, None] + np.arange(2)
    for key, ref in REF_1D.items():
        ri = rows_p if key in "PXD" else rows_v
        ci = rows_p if key == "P" else rows_v
        R = np.repeat(ri[:, :, None], ci.shape[1], axis=2)
        C = np.repeat(ci[:, None, :], ri.shape[1], axis=1)
        V = np.broadcast_to(ref * scale[key], R.shape)
        shape = (npr if key in "PXD" else nv, npr if key == "P" else nv)
        out[key] = sp.csr_matrix((V.ravel(), (R.ravel(), C.ravel())), shape=shape)
    return out


def _kron_all(mats) -> sp.csr_matrix:
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def _dense_kron(mats) -> np.ndarray:
    return reduce(np.kron, mats)


def _axis_h(dim: int, h) -> np.ndarray:
    return np.broadcast_to(np.asarray(h, dtype=float), (dim,)).copy()


def element_stiffness(dim: int, h=1.0) -> np.ndarray:
    """Scalar Q2 Laplacian stiffness on one box element, ``3^dim`` square."""
    hs = _axis_h(dim, h)
    K = np.zeros((3**dim, 3**dim))
    for k in range(dim):
        K += _dense_kron([REF_1D["K"] / hs[j] if j == k else REF_1D["M"] * hs[j] for j in range(dim)])
    return K


def element_divergence(dim: int, h=1.0) -> np.ndarray:
    """``-int div(u) q`` on one element: rows Q1 nodes, columns ``node*dim + comp``."""
    hs = _axis_h(dim, h)
    B = np.zeros((2**dim, 3**dim * dim))
    for c in range(dim):
        Bc = -_dense_kron([REF_1D["D"] if j == c else REF_1D["X"] * hs[j] for j in range(dim)])
        B[:, c::dim] = Bc
    return B


def element_pressure_mass(dim: int, h=1.0) -> np.ndarray:
    hs = _axis_h(dim, h)
    return _dense_kron([REF_1D["P"] * hs[j] for j in range(dim)])


@dataclass(frozen=True)
class GridOperators:
    """Assembled matrices on a tensor grid of ``n`` elements per axis (all nodes, no BCs)."""

    A: sp.csr_matrix  # vector Laplacian, dofs node*dim + comp
    B: sp.csr_matrix  # pressure nodes x velocity dofs
    Z: sp.csr_matrix  # pressure mass
    K: sp.csr_matrix  # scalar Laplacian


def grid_operators(dim: int, n_axis, h_axis) -> GridOperators:
    one = [_assemble_1d(int(n), float(h)) for n, h in zip(n_axis, h_axis)]
    K = sum(_kron_all([one[j]["K"] if j == k else one[j]["M"] for j in range(dim)]) for k in range(dim))
    A = sp.kron(K, sp.identity(dim), format="csr")
    n_p = int(np.prod([n + 1 for n in n_axis]))
    n_v = int(np.prod([2 * n + 1 for n in n_axis]))
    B = sp.csr_matrix((n_p, n_v * dim))
    for c in range(dim):
        Bc = -_kron_all([one[j]["D"] if j == c else one[j]["X"] for j in range(dim)])
        e = sp.csr_matrix(([1.0], ([0], [c])), shape=(1, dim))
        B = B + sp.kron(Bc, e, format="csr")
    Z = _kron_all([one[j]["P"] for j in range(dim)])
    for M in (A, B, Z, K):
        M.sort_indices()
    return GridOperators(A=A.tocsr(), B=B.tocsr(), Z=Z.tocsr(), K=K.tocsr())


def pressure_mass(mesh: BoxMesh) -> sp.csr_matrix:
    return grid_operators(mesh.dim, mesh.n_elem_axis, mesh.h_axis).Z


# ---------------------------------------------------------------------------
# manufactured solutions

PI = np.pi


def _u2(x):
    X, Y = x[:, 0], x[:, 1]
    sx, sy, cx, cy = np.sin(PI * X), np.sin(PI * Y), np.cos(PI * X), np.cos(PI * Y)
    return np.column_stack([sx**3 * sy**2 * cy, -(sx**2) * sy**3 * cx])


def _p2(x):
    return x[:, 0] ** 2 - x[:, 1] ** 2


def _f2(x):
    X, Y = x[:, 0], x[:, 1]
    sx, sy, cx, cy = np.sin(PI * X), np.sin(PI * Y), np.cos(PI * X), np.cos(PI * Y)
    p2 = PI**2
    f0 = 2 * (X + 9 * p2 * sx**3 * sy**2 * cy - p2 * sx**3 * cy - 3 * p2 * sx * sy**2 * cy)
    f1 = -2 * (Y + 9 * p2 * sx**2 * sy**3 * cx - 3 * p2 * sx**2 * sy * cx - p2 * sy**3 * cx)
    return np.column_stack([f0, f1])


def _u3(x):
    X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
    s = lambda t: np.sin(PI * t)  # noqa: E731
    s2 = lambda t: np.sin(2 * PI * t)  # noqa: E731
    return np.column_stack(
        [
            s(X) ** 2 * (s2(Y) * s(Z) - s(Y) * s2(Z)),
            s(Y) ** 2 * (s2(Z) * s(X) - s(Z) * s2(X)),
            s(Z) ** 2 * (s2(X) * s(Y) - s(X) * s2(Y)),
        ]
    )


def _p3(x):
    return x[:, 0] * x[:, 1] * x[:, 2] - 0.125


def _f3(x):
    X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
    sx, sy, sz = np.sin(PI * X), np.sin(PI * Y), np.sin(PI * Z)
    cx, cy, cz = np.cos(PI * X), np.cos(PI * Y), np.cos(PI * Z)
    p2 = PI**2
    f0 = Y * Z + 18 * p2 * sx**2 * sy * sz * (cy - cz) - 4 * p2 * sy * sz * (cy - cz)
    f1 = X * Z - 18 * p2 * sx * sy**2 * sz * (cx - cz) + 4 * p2 * sx * sz * (cx - cz)
    f2 = X * Y + 18 * p2 * sx * sy * sz**2 * (cx - cy) - 4 * p2 * sx * sy * (cx - cy)
    return np.column_stack([f0, f1, f2])


@dataclass(frozen=True)
class ManufacturedCase:
    dim: int
    velocity: Callable[[np.ndarray], np.ndarray]
    pressure: Callable[[np.ndarray], np.ndarray]
    force: Callable[[np.ndarray], np.ndarray]


def manufactured_case(dim: int) -> ManufacturedCase:
    if dim == 2:
        return ManufacturedCase(2, _u2, _p2, _f2)
    if dim == 3:
        return ManufacturedCase(3, _u3, _p3, _f3)
    raise ValueError(f"no manufactured solution for dim={dim}")


def zero_case(dim: int) -> ManufacturedCase:
    zero_v = lambda x: np.zeros((len(x), dim))  # noqa: E731
    return ManufacturedCase(dim, zero_v, lambda x: np.zeros(len(x)), zero_v)


def exact_eval(case: ManufacturedCase, x) -> tuple[np.ndarray, np.ndarray]:
    """Exact velocity and pressure at points ``x`` (shape ``(n, dim)`` or ``(dim,)``)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return case.velocity(x), case.pressure(x)


def tensor_load(force, dim: int, origin, n_axis, h_axis) -> np.ndarray:
    """Load vector ``int f . phi`` on a tensor grid, dofs ``node*dim + comp``.

    Uses the 3-point Gauss rule per element and axis; ``force`` maps points of
    shape ``(n, dim)`` to values of shape ``(n, dim)``.
    """
    pts, wphi = [], []
    for k in range(dim):
        n, h = int(n_axis[k]), float(h_axis[k])
        xq = origin[k] + h * (np.arange(n)[:, None] + GAUSS_X[None, :])
        pts.append(xq.ravel())
        W = np.zeros((2 * n + 1, 3 * n))
        vals = q2_basis(GAUSS_X) * GAUSS_W * h  # (3 basis, 3 points)
        for e in range(n):
            W[2 * e : 2 * e + 3, 3 * e : 3 * e + 3] += vals
        wphi.append(W)
    grids = np.meshgrid(*pts, indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=1)
    F = force(X)
    qshape = tuple(p.size for p in pts)
    out = []
    for c in range(dim):
        T = F[:, c].reshape(qshape)
        for k in range(dim):
            T = np.tensordot(wphi[k], T, axes=([1], [k]))
            T = np.moveaxis(T, 0, k)
        out.append(T.ravel())
    return np.stack(out, axis=1).ravel()


# ---------------------------------------------------------------------------
# subdomain blocks


@dataclass(frozen=True)
class LocalOperators:
    """Matrices of one reference subdomain (identical for all subdomains)."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    Z: sp.csr_matrix


def local_operators(mesh: BoxMesh) -> LocalOperators:
    ops = grid_operators(mesh.dim, (mesh.ratio,) * mesh.dim, mesh.h_axis)
    return LocalOperators(A=ops.A, B=ops.B, Z=ops.Z)


@dataclass
class SubdomainBlocks:
    """Velocity/pressure blocks of one subdomain in its transformed basis.

    ``A`` is the full local velocity stiffness ordered ``[I, Delta, Pi]``;
    ``BI`` and ``BG`` are the divergence rows of interior and interface
    pressures.  The named sub-blocks are views of these.
    """

    dofs: SubdomainDofs
    A: sp.csr_matrix
    BI: sp.csr_matrix
    BG: sp.csr_matrix

    def _a(self, r: slice, c: slice) -> sp.csr_matrix:
        return self.A[r, c]

    @property
    def A_II(self):
        return self._a(self.dofs.sl_I, self.dofs.sl_I)

    @property
    def A_ID(self):
        return self._a(self.dofs.sl_I, self.dofs.sl_D)

    @property
    def A_IP(self):
        return self._a(self.dofs.sl_I, self.dofs.sl_P)

    @property
    def A_DD(self):
        return self._a(self.dofs.sl_D, self.dofs.sl_D)

    @property
    def A_DP(self):
        return self._a(self.dofs.sl_D, self.dofs.sl_P)

    @property
    def A_PP(self):
        return self._a(self.dofs.sl_P, self.dofs.sl_P)

    @property
    def B_II(self):
        return self.BI[:, self.dofs.sl_I]

    @property
    def B_ID(self):
        return self.BI[:, self.dofs.sl_D]

    @property
    def B_IP(self):
        return self.BI[:, self.dofs.sl_P]

    @property
    def B_GI(self):
        return self.BG[:, self.dofs.sl_I]

    @property
    def B_GD(self):
        return self.BG[:, self.dofs.sl_D]

    @property
    def B_GP(self):
        return self.BG[:, self.dofs.sl_P]


def assemble_subdomain(partition: DofPartition, i: int, local: LocalOperators | None = None) -> SubdomainBlocks:
    """Restrict the reference subdomain matrices to subdomain ``i`` and change basis."""
    if local is None:
        local = local_operators(partition.mesh)
    dofs = partition.subdomains[i]
    T = dofs.T
    A = (T.T @ local.A @ T).tocsr()
    BT = (local.B @ T).tocsr()
    BI = BT[dofs.pI_local]
    BG = BT[dofs.pG_local]
    for M in (A, BI, BG):
        M.sum_duplicates()
        M.eliminate_zeros()
        M.sort_indices()
    return SubdomainBlocks(dofs=dofs, A=A, BI=BI, BG=BG)


def subdomain_origin(mesh: BoxMesh, i: int) -> np.ndarray:
    s = np.asarray(mesh.sub_index(i))
    return s * mesh.ratio * mesh.h_axis


def assemble_rhs(partition: DofPartition, case: ManufacturedCase, i: int) -> np.ndarray:
    """Subdomain load ``T^T f`` ordered ``[I, Delta, Pi]``."""
    mesh = partition.mesh
    if case.dim != mesh.dim:
        raise ValueError(f"case dimension {case.dim} does not match mesh dimension {mesh.dim}")
    f = tensor_load(case.force, mesh.dim, subdomain_origin(mesh, i), (mesh.ratio,) * mesh.dim, mesh.h_axis)
    return partition.subdomains[i].T.T @ f


def assemble_rhs_split(partition: DofPartition, case: ManufacturedCase, i: int):
    """``(f_I, f_Delta, f_Pi)`` of subdomain ``i``."""
    f = assemble_rhs(partition, case, i)
    d = partition.subdomains[i]
    return f[d.sl_I], f[d.sl_D], f[d.sl_P]


# ---------------------------------------------------------------------------
# reference path: element-by-element global assembly


@dataclass(frozen=True)
class GlobalSystem:
    """Fully assembled Stokes matrices restricted to free velocity DOFs."""

    mesh: BoxMesh
    A: sp.csr_matrix
    B: sp.csr_matrix
    Z: sp.csr_matrix
    free: np.ndarray  # global velocity dof ids kept (non-boundary)


def element_connectivity(mesh: BoxMesh) -> tuple[np.ndarray, np.ndarray]:
    """Velocity (``3^dim``) and pressure (``2^dim``) node ids of every element."""
    d = mesh.dim
    eidx = np.indices(mesh.n_elem_axis).reshape(d, -1)
    loc_v = np.indices((3,) * d).reshape(d, -1)
    loc_p = np.indices((2,) * d).reshape(d, -1)
    vn = np.ravel_multi_index(tuple(2 * eidx[:, :, None] + loc_v[:, None, :]), mesh.vshape)
    pn = np.ravel_multi_index(tuple(eidx[:, :, None] + loc_p[:, None, :]), mesh.pshape)
    return vn, pn


def _coo(Ke, rows, cols, shape) -> sp.csr_matrix:
    R = np.repeat(rows[:, :, None], cols.shape[1], axis=2)
    C = np.repeat(cols[:, None, :], rows.shape[1], axis=1)
    V = np.broadcast_to(Ke, R.shape)
    M = sp.csr_matrix((V.ravel(), (R.ravel(), C.ravel())), shape=shape)
    M.sum_duplicates()
    M.sort_indices()
    return M


def assemble_global(mesh: BoxMesh) -> GlobalSystem:
    d = mesh.dim
    vn, pn = element_connectivity(mesh)
    h = mesh.h_axis
    Ks = element_stiffness(d, h)
    Ke = np.kron(Ks, np.eye(d))
    Be = element_divergence(d, h)
    Ze = element_pressure_mass(d, h)
    vd = (vn[:, :, None] * d + np.arange(d)).reshape(vn.shape[0], -1)
    nv = mesh.n_vnodes * d
    A = _coo(Ke, vd, vd, (nv, nv))
    B = _coo(Be, pn, vd, (mesh.n_pnodes, nv))
    Z = _coo(Ze, pn, pn, (mesh.n_pnodes, mesh.n_pnodes))
    idx = np.indices(mesh.vshape).reshape(d, -1)
    nmax = np.asarray(mesh.vshape)[:, None] - 1
    bnd = np.any((idx == 0) | (idx == nmax), axis=0)
    free = (np.flatnonzero(~bnd)[:, None] * d + np.arange(d)).ravel()
    return GlobalSystem(mesh=mesh, A=A[free][:, free].tocsr(), B=B[:, free].tocsr(), Z=Z, free=free)


def global_rhs(mesh: BoxMesh, case: ManufacturedCase, free: np.ndarray | None = None) -> np.ndarray:
    f = tensor_load(case.force, mesh.dim, np.zeros(mesh.dim), mesh.n_elem_axis, mesh.h_axis)
    return f if free is None else f[free]
