"""The partially assembled saddle-point operator and its reduced interface system.

Per subdomain the unknowns ``r = (u_I, p_I, u_Delta)`` are eliminated with a
sparse indefinite factorization of ``A_rr``; the primal velocities couple the
subdomains through the dense coarse matrix
``S_Pi = A_PiPi - A_Pir A_rr^{-1} A_rPi``.  The reduced unknown is
``x = (p_Gamma, lambda)`` (interface pressures first) and the reduced
operator is ``G = B_C Atilde^{-1} B_C^T``.
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import DofPartition, InterfaceJump, build_jump
from .sparse_core import DirectFactor, NotPositiveDefinite, dense_factor_spd, factor_sym_indef

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChangeOfBasis:
    """Per-subdomain maps from ``[I, Delta, Pi]`` unknowns to nodal DOFs."""

    T: list[sp.csr_matrix]
    identity: bool
    edge_len: int

    def to_nodal(self, i: int, u_local: np.ndarray) -> np.ndarray:
        return self.T[i] @ u_local


def build_change_of_basis(partition: DofPartition) -> ChangeOfBasis:
    """Collect the subdomain basis transformations.

    With edge-average primal unknowns each subdomain edge of ``m`` nodes gets
    one primal unknown (the nodal average, basis vector all ones) and ``m-1``
    zero-average dual unknowns ``e_j - e_m``; elsewhere the map is the nodal
    identity on non-boundary DOFs.
    """
    if partition.change_of_basis and partition.edge_len < 1:
        logger.warning("subdomain edges have no interior nodes; no edge-average primal DOFs")
    return ChangeOfBasis(
        T=[s.T for s in partition.subdomains],
        identity=not partition.change_of_basis,
        edge_len=partition.edge_len,
    )


@dataclass
class SubdomainSolver:
    """Factored local problem of one subdomain."""

    blocks: fem.SubdomainBlocks
    A_rr: sp.csr_matrix
    A_rP: sp.csr_matrix
    B_Gr: sp.csr_matrix
    factor: DirectFactor
    Phi: np.ndarray  # A_rr^{-1} A_rPi, dense
    n_I: int
    n_pI: int
    n_D: int

    @property
    def n_r(self) -> int:
        return self.n_I + self.n_pI + self.n_D

    @property
    def sl_D(self) -> slice:
        return slice(self.n_I + self.n_pI, self.n_r)


def _local_rr(bl: fem.SubdomainBlocks):
    n_pI = bl.BI.shape[0]
    A_rr = sp.bmat(
        [
            [bl.A_II, bl.B_II.T, bl.A_ID],
            [bl.B_II, sp.csr_matrix((n_pI, n_pI)), bl.B_ID],
            [bl.A_ID.T, bl.B_ID.T, bl.A_DD],
        ],
        format="csr",
    )
    A_rP = sp.vstack([bl.A_IP, bl.B_IP, bl.A_DP], format="csr")
    nG = bl.BG.shape[0]
    B_Gr = sp.hstack([bl.B_GI, sp.csr_matrix((nG, n_pI)), bl.B_GD], format="csr")
    return A_rr, A_rP, B_Gr


def _matrix_key(*mats) -> str:
    h = hashlib.sha1()
    for M in mats:
        M = M.tocsr()
        M.sort_indices()
        h.update(np.asarray(M.shape, dtype=np.int64).tobytes())
        for arr in (M.indptr, M.indices, M.data):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class RHS:
    """Right-hand side of the partially assembled system, ``(f_r, f_Pi)``."""

    f_r: np.ndarray
    f_P: np.ndarray


@dataclass
class Solution:
    """Nodal velocity (all velocity DOFs incl. boundary) and zero-mean pressure."""

    u: np.ndarray
    p: np.ndarray
    x_r: np.ndarray = field(repr=False)
    u_P: np.ndarray = field(repr=False)


class ReducedSystem:
    """Factored subdomain problems, coarse problem and the operator ``G``.

    Immutable after construction; ``apply_*`` methods may be called
    concurrently.
    """

    def __init__(
        self,
        partition: DofPartition,
        jump: InterfaceJump | None = None,
        blocks: list[fem.SubdomainBlocks] | None = None,
        parallel: bool = False,
    ):
        self.partition = partition
        self.mesh = partition.mesh
        self.cob = build_change_of_basis(partition)
        self.jump = jump if jump is not None else build_jump(partition)
        if blocks is None:
            local = fem.local_operators(self.mesh)
            blocks = [fem.assemble_subdomain(partition, i, local) for i in range(self.mesh.n_sub)]
        self.blocks = blocks
        self.parallel = parallel
        self._pool = ThreadPoolExecutor() if parallel else None

        n_sub = len(blocks)
        nP = partition.n_primal
        nG = partition.n_pgamma

        # translated subdomains with the same boundary contact have identical
        # local matrices; factor each distinct one once
        local = [_local_rr(bl) for bl in blocks]
        keys = [_matrix_key(A_rr, A_rP) for A_rr, A_rP, _ in local]
        first = {}
        for i, k in enumerate(keys):
            first.setdefault(k, i)

        def factor_one(i):
            A_rr, A_rP, _ = local[i]
            factor = factor_sym_indef(A_rr)
            return factor, factor.solve(A_rP.toarray())

        uniq = list(first.values())
        done = dict(zip(uniq, self._map(factor_one, uniq)))
        logger.debug("%d distinct subdomain factorizations for %d subdomains", len(uniq), n_sub)

        def setup(i):
            bl = blocks[i]
            A_rr, A_rP, B_Gr = local[i]
            factor, Phi = done[first[keys[i]]]
            return SubdomainSolver(
                blocks=bl,
                A_rr=A_rr,
                A_rP=A_rP,
                B_Gr=B_Gr,
                factor=factor,
                Phi=Phi,
                n_I=bl.dofs.n_I,
                n_pI=bl.BI.shape[0],
                n_D=bl.dofs.n_D,
            )

        self.sub = [setup(i) for i in range(n_sub)]
        self.r_off = np.zeros(n_sub + 1, dtype=np.int64)
        self.r_off[1:] = np.cumsum([s.n_r for s in self.sub])
        self.n_r = int(self.r_off[-1])

        # coarse matrix assembled from subdomain Schur complements
        S = np.zeros((nP, nP))
        App_rows, App_cols, App_vals = [], [], []
        for s in self.sub:
            pg = s.blocks.dofs.primal_global
            App = s.blocks.A_PP.toarray()
            S[np.ix_(pg, pg)] += App - s.A_rP.T @ s.Phi
            App_rows.append(np.repeat(pg, pg.size))
            App_cols.append(np.tile(pg, pg.size))
            App_vals.append(App.ravel())
        self.S_Pi = 0.5 * (S + S.T)
        if nP:
            try:
                self.S_factor = dense_factor_spd(self.S_Pi)
            except NotPositiveDefinite as exc:
                raise NotPositiveDefinite(f"coarse matrix S_Pi is not positive definite: {exc}") from exc
        else:
            self.S_factor = dense_factor_spd(np.zeros((0, 0)))
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
        self.A_PP = sp.csr_matrix((cat(App_vals), (cat(App_rows).astype(int), cat(App_cols).astype(int))), shape=(nP, nP))

        # global coupling matrices over the concatenated r vector
        rows, cols, vals = [], [], []
        grow, gcol, gval = [], [], []
        prow, pcol, pval = [], [], []
        for i, s in enumerate(self.sub):
            d = s.blocks.dofs
            off = self.r_off[i]
            Ar = s.A_rP.tocoo()
            rows.append(Ar.row + off)
            cols.append(d.primal_global[Ar.col])
            vals.append(Ar.data)
            Bg = s.B_Gr.tocoo()
            grow.append(d.pG_global[Bg.row])
            gcol.append(Bg.col + off)
            gval.append(Bg.data)
            Bp = s.blocks.B_GP.tocoo()
            prow.append(d.pG_global[Bp.row])
            pcol.append(d.primal_global[Bp.col])
            pval.append(Bp.data)
        self.A_rP = sp.csr_matrix((cat(vals), (cat(rows).astype(int), cat(cols).astype(int))), shape=(self.n_r, nP))
        self.B_Gr = sp.csr_matrix((cat(gval), (cat(grow).astype(int), cat(gcol).astype(int))), shape=(nG, self.n_r))
        self.B_GP = sp.csr_matrix((cat(pval), (cat(prow).astype(int), cat(pcol).astype(int))), shape=(nG, nP))
        # Delta columns inside the r vector
        dcols = np.concatenate(
            [self.r_off[i] + np.arange(s.sl_D.start, s.sl_D.stop) for i, s in enumerate(self.sub)]
        ) if n_sub else np.zeros(0, dtype=int)
        self.delta_in_r = dcols
        E = sp.csr_matrix((np.ones(dcols.size), (np.arange(dcols.size), dcols)), shape=(dcols.size, self.n_r))
        self.B_Dr = (self.jump.B @ E).tocsr()
        for M in (self.A_rP, self.B_Gr, self.B_GP, self.B_Dr, self.A_PP):
            M.sum_duplicates()
            M.sort_indices()

    # ------------------------------------------------------------------
    def _map(self, fn, items):
        if getattr(self, "_pool", None) is not None:
            return self._pool.map(fn, items)
        return map(fn, items)

    @property
    def n_pgamma(self) -> int:
        return self.partition.n_pgamma

    @property
    def n_mult(self) -> int:
        return self.jump.n_mult

    @property
    def n_x(self) -> int:
        return self.n_pgamma + self.n_mult

    def split_x(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_pgamma], x[self.n_pgamma :]

    def r_slice(self, i: int) -> slice:
        return slice(int(self.r_off[i]), int(self.r_off[i + 1]))

    def _solve_rr(self, f_r: np.ndarray) -> np.ndarray:
        out = np.empty_like(f_r)

        def one(i):
            sl = self.r_slice(i)
            out[sl] = self.sub[i].factor.solve(f_r[sl])

        for _ in self._map(one, range(len(self.sub))):
            pass
        return out

    # ------------------------------------------------------------------
    def apply_Atilde_inv(self, f_r: np.ndarray, f_P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``Atilde [x_r; u_Pi] = [f_r; f_Pi]`` with one coarse solve."""
        y = self._solve_rr(np.asarray(f_r, dtype=float))
        t = f_P - self.A_rP.T @ y
        u_P = self.S_factor.solve(t)
        x_r = y
        for i, s in enumerate(self.sub):
            if s.Phi.shape[1]:
                x_r[self.r_slice(i)] -= s.Phi @ u_P[s.blocks.dofs.primal_global]
        return x_r, u_P

    def apply_Atilde(self, x_r: np.ndarray, u_P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = np.empty_like(x_r)
        for i, s in enumerate(self.sub):
            sl = self.r_slice(i)
            out[sl] = s.A_rr @ x_r[sl]
        out += self.A_rP @ u_P
        return out, self.A_rP.T @ x_r + self.A_PP @ u_P

    def apply_BCt(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p, lam = self.split_x(x)
        return self.B_Gr.T @ p + self.B_Dr.T @ lam, self.B_GP.T @ p

    def apply_BC(self, x_r: np.ndarray, u_P: np.ndarray) -> np.ndarray:
        return np.concatenate([self.B_Gr @ x_r + self.B_GP @ u_P, self.B_Dr @ x_r])

    def apply_G(self, x: np.ndarray) -> np.ndarray:
        f_r, f_P = self.apply_BCt(np.asarray(x, dtype=float))
        return self.apply_BC(*self.apply_Atilde_inv(f_r, f_P))

    # ------------------------------------------------------------------
    def build_rhs(self, case: fem.ManufacturedCase) -> RHS:
        f_r = np.zeros(self.n_r)
        f_P = np.zeros(self.partition.n_primal)
        for i, s in enumerate(self.sub):
            f = fem.assemble_rhs(self.partition, case, i)
            d = s.blocks.dofs
            sl = self.r_slice(i)
            loc = np.zeros(s.n_r)
            loc[: s.n_I] = f[d.sl_I]
            loc[s.sl_D] = f[d.sl_D]
            f_r[sl] = loc
            np.add.at(f_P, d.primal_global, f[d.sl_P])
        return RHS(f_r, f_P)

    def build_g(self, rhs: RHS) -> np.ndarray:
        return self.apply_BC(*self.apply_Atilde_inv(rhs.f_r, rhs.f_P))

    def face_flux(self) -> np.ndarray:
        """``[B_IDelta^T B_GammaDelta^T] (1; 1)`` as a vector over all Delta unknowns."""
        parts = []
        for s in self.sub:
            bl = s.blocks
            parts.append(np.asarray(bl.B_ID.sum(axis=0)).ravel() + np.asarray(bl.B_GD.sum(axis=0)).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def null_vector(self) -> np.ndarray:
        lam = self.jump.BD @ self.face_flux()
        return np.concatenate([np.ones(self.n_pgamma), -lam])

    # ------------------------------------------------------------------
    def back_substitute(self, rhs: RHS, x: np.ndarray) -> Solution:
        """Recover all unknowns from ``(p_Gamma, lambda)`` and return nodal fields."""
        g_r, g_P = self.apply_BCt(x)
        x_r, u_P = self.apply_Atilde_inv(rhs.f_r - g_r, rhs.f_P - g_P)
        p_gamma, _ = self.split_x(x)
        return self.assemble_solution(x_r, u_P, p_gamma)

    def assemble_solution(self, x_r: np.ndarray, u_P: np.ndarray, p_gamma: np.ndarray) -> Solution:
        mesh = self.mesh
        d = mesh.dim
        u = np.zeros(mesh.n_vnodes * d)
        mult = np.zeros(mesh.n_vnodes * d)
        p = np.zeros(mesh.n_pnodes)
        p[self.partition.pgamma_nodes] = p_gamma
        for i, s in enumerate(self.sub):
            dofs = s.blocks.dofs
            xl = x_r[self.r_slice(i)]
            u_loc = np.concatenate([xl[: s.n_I], xl[s.sl_D], u_P[dofs.primal_global]])
            nodal = self.cob.to_nodal(i, u_loc)
            gn = mesh.local_vnodes_global(i)
            gd = (gn[:, None] * d + np.arange(d)).ravel()
            live = np.diff(dofs.T.indptr) > 0
            u[gd[live]] += nodal[live]
            mult[gd[live]] += 1.0
            pn = mesh.local_pnodes_global(i)
            p[pn[dofs.pI_local]] = xl[s.n_I : s.n_I + s.n_pI]
        u[mult > 0] /= mult[mult > 0]
        return Solution(u=u, p=zero_mean_pressure(mesh, p), x_r=x_r, u_P=u_P)

    def big_residual(self, rhs: RHS, x_r: np.ndarray, u_P: np.ndarray, x: np.ndarray) -> float:
        """Relative residual of the full partially assembled saddle system."""
        a_r, a_P = self.apply_Atilde(x_r, u_P)
        g_r, g_P = self.apply_BCt(x)
        res = np.concatenate([a_r + g_r - rhs.f_r, a_P + g_P - rhs.f_P, self.apply_BC(x_r, u_P)])
        ref = np.linalg.norm(np.concatenate([rhs.f_r, rhs.f_P]))
        return float(np.linalg.norm(res) / ref) if ref > 0 else float(np.linalg.norm(res))

    # ------------------------------------------------------------------
    # explicit matrices, for small-mesh checks only

    def atilde_matrix(self) -> sp.csr_matrix:
        Arr = sp.block_diag([s.A_rr for s in self.sub], format="csr")
        return sp.bmat([[Arr, self.A_rP], [self.A_rP.T, self.A_PP]], format="csr")

    def bc_matrix(self) -> sp.csr_matrix:
        nG, nL, nP = self.n_pgamma, self.n_mult, self.partition.n_primal
        return sp.bmat(
            [[self.B_Gr, self.B_GP], [self.B_Dr, sp.csr_matrix((nL, nP))]],
            format="csr",
        )

    def dense_G(self) -> np.ndarray:
        return np.column_stack([self.apply_G(e) for e in np.eye(self.n_x)])

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def build_reduced(partition: DofPartition, jump: InterfaceJump | None = None, parallel: bool = False) -> ReducedSystem:
    return ReducedSystem(partition, jump=jump, parallel=parallel)


def pressure_weights(mesh) -> np.ndarray:
    """Integral of each Q1 basis function (row sums of the pressure mass matrix)."""
    w1 = [np.full(n + 1, h) for n, h in zip(mesh.n_elem_axis, mesh.h_axis)]
    for w in w1:
        w[0] *= 0.5
        w[-1] *= 0.5
    out = w1[0]
    for w in w1[1:]:
        out = np.multiply.outer(out, w)
    return np.asarray(out).ravel()


def zero_mean_pressure(mesh, p: np.ndarray) -> np.ndarray:
    w = pressure_weights(mesh)
    return p - (w @ p) / w.sum()
