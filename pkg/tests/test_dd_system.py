import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from conftest import random_V0 as _random_V0
from conftest import reduced

from stokes_fetidp import fem
from stokes_fetidp.dd_system import RHS, zero_mean_pressure
from stokes_fetidp.krylov import PcgConfig, pcg
from stokes_fetidp.mesh import range_projector
from stokes_fetidp.preconditioners import DirichletPreconditioner


def test_change_of_basis_2d_identity(sys2d):
    assert sys2d.cob.identity
    for s in sys2d.partition.subdomains:
        T = s.T.tocsr()
        assert np.all(T.data == 1.0)
        assert np.all(np.diff(T.tocsc().indptr) == 1)


def test_change_of_basis_3d_edges(sys3d):
    part = sys3d.partition
    assert not sys3d.cob.identity
    m = part.edge_len
    d = part.dim
    for s in part.subdomains:
        T = s.T.toarray()
        Tinv_rows = np.linalg.pinv(T)
        assert np.linalg.matrix_rank(T) == s.n_vel
        kinds = part.primal_kind[s.primal_global]
        for j, k in enumerate(kinds):
            col = T[:, s.n_I + s.n_D + j]
            if k == "edge":
                # primal edge unknown: the constant 1 on the m edge nodes of one component
                assert np.count_nonzero(col) == m and np.all(col[col != 0] == 1.0)
                row = Tinv_rows[s.n_I + s.n_D + j]
                big = np.abs(row) > 1e-12
                assert np.count_nonzero(big) == m and np.allclose(row[big], 1.0 / m)
                # every dual basis vector has zero average on this edge
                edge_rows = np.flatnonzero(col)
                D = T[edge_rows][:, s.sl_D]
                assert np.allclose(D.sum(axis=0), 0.0)
        assert d == 3


def test_coarse_matrix(tiny):
    S = tiny.S_Pi
    assert np.abs(S - S.T).max() <= 1e-10 * np.abs(S).max()
    assert np.linalg.eigvalsh(S)[0] > 0


def test_coarse_dimension_2d(sys2d):
    assert sys2d.S_Pi.shape == (2, 2)
    assert reduced(2, (3, 3), 3).S_Pi.shape == (2 * 4, 2 * 4)


def test_apply_atilde_inv(tiny, rng):
    n_r, nP = tiny.n_r, tiny.partition.n_primal
    for _ in range(5):
        f_r, f_P = rng.standard_normal(n_r), rng.standard_normal(nP)
        x_r, u_P = tiny.apply_Atilde_inv(f_r, f_P)
        a_r, a_P = tiny.apply_Atilde(x_r, u_P)
        res = np.linalg.norm(np.r_[a_r - f_r, a_P - f_P])
        assert res <= 1e-9 * np.linalg.norm(np.r_[f_r, f_P])


def test_atilde_inv_vs_dense_lu(sys2d, rng):
    At = sys2d.atilde_matrix().toarray()
    f = rng.standard_normal(At.shape[0])
    n_r = sys2d.n_r
    x_r, u_P = sys2d.apply_Atilde_inv(f[:n_r], f[n_r:])
    ref = scipy.linalg.lu_solve(scipy.linalg.lu_factor(At), f)
    assert np.allclose(np.r_[x_r, u_P], ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_primal_only_load(sys2d, rng):
    f_P = rng.standard_normal(sys2d.partition.n_primal)
    x_r, u_P = sys2d.apply_Atilde_inv(np.zeros(sys2d.n_r), f_P)
    assert np.allclose(u_P, np.linalg.solve(sys2d.S_Pi, f_P))


def test_G_symmetric_psd(tiny, rng):
    for _ in range(5):
        x, y = rng.standard_normal(tiny.n_x), rng.standard_normal(tiny.n_x)
        Gx, Gy = tiny.apply_G(x), tiny.apply_G(y)
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        assert abs(Gx @ y - x @ Gy) <= 1e-10 * nx * ny
        assert x @ Gx >= -1e-10 * nx**2


def test_dense_G_vs_dense_oracle(tiny):
    At = tiny.atilde_matrix().toarray()
    BC = tiny.bc_matrix().toarray()
    ref = BC @ np.linalg.solve(At, BC.T)
    G = tiny.dense_G()
    assert np.abs(G - ref).max() <= 1e-10 * np.abs(ref).max()


def test_null_vector(tiny):
    n = tiny.null_vector()
    assert np.linalg.norm(n) > 0
    assert np.linalg.norm(tiny.apply_G(n)) <= 1e-10 * np.linalg.norm(n)


def test_null_vector_in_big_system(tiny):
    """``(u=0, p_I=1, p_Gamma=1, lambda)`` solves the homogeneous partially assembled system."""
    x_r = np.zeros(tiny.n_r)
    for i, s in enumerate(tiny.sub):
        sl = tiny.r_slice(i)
        x_r[sl][s.n_I : s.n_I + s.n_pI] = 1.0
    u_P = np.zeros(tiny.partition.n_primal)
    rhs = RHS(np.zeros(tiny.n_r), np.zeros_like(u_P))
    n = tiny.null_vector()
    assert tiny.big_residual(rhs, x_r, u_P, n) <= 1e-12 * np.linalg.norm(n)


def test_face_flux_identity(tiny):
    J = tiny.jump
    flux = tiny.face_flux()
    lam = J.BD @ flux
    assert np.linalg.norm(J.B.T @ lam - flux) <= 1e-12 * max(np.linalg.norm(flux), 1.0)


def test_g_properties(tiny):
    case = fem.manufactured_case(tiny.mesh.dim)
    zero = tiny.build_rhs(fem.zero_case(tiny.mesh.dim))
    assert np.all(tiny.build_g(zero) == 0)
    rhs = tiny.build_rhs(case)
    g = tiny.build_g(rhs)
    n = tiny.null_vector()
    assert abs(g @ n) <= 1e-10 * np.linalg.norm(g) * np.linalg.norm(n)
    At = tiny.atilde_matrix().toarray()
    BC = tiny.bc_matrix().toarray()
    ref = BC @ np.linalg.solve(At, np.r_[rhs.f_r, rhs.f_P])
    assert np.allclose(g, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_back_substitution(tiny):
    rhs = tiny.build_rhs(fem.manufactured_case(tiny.mesh.dim))
    g = tiny.build_g(rhs)
    x, rep = pcg(tiny.apply_G, DirichletPreconditioner(tiny), g, PcgConfig(tol=1e-12))
    assert rep.converged
    sol = tiny.back_substitute(rhs, x)
    assert tiny.big_residual(rhs, sol.x_r, sol.u_P, x) <= 1e-8
    m = tiny.mesh
    from stokes_fetidp.dd_system import pressure_weights

    assert abs(pressure_weights(m) @ sol.p) <= 1e-12 * np.abs(sol.p).max()
    assert np.allclose(zero_mean_pressure(m, sol.p), sol.p)


def _range_basis(J):
    U, s, _ = np.linalg.svd(J.B.toarray(), full_matrices=False)
    return U[:, s > 1e-10 * s[0]]


def test_sylvester_structure(tiny):
    G = tiny.dense_G()
    G = 0.5 * (G + G.T)
    scale = np.abs(np.linalg.eigvalsh(G)).max()
    ev = np.linalg.eigvalsh(G)
    J = tiny.jump
    null_dim = J.n_mult - np.linalg.matrix_rank(J.B.toarray())
    assert np.count_nonzero(np.abs(ev) < 1e-9 * scale) == 1 + null_dim
    R = _range_basis(J)
    nG = tiny.n_pgamma
    Q = scipy.linalg.block_diag(np.eye(nG), R)
    evR = np.linalg.eigvalsh(Q.T @ G @ Q)
    assert np.count_nonzero(np.abs(evR) < 1e-9 * scale) == 1
    assert evR.min() > -1e-9 * scale


def _velocity_energy(sys, x_r, u_P):
    tot = 0.0
    for i, s in enumerate(sys.sub):
        bl = s.blocks
        xl = x_r[sys.r_slice(i)]
        w = np.r_[xl[: s.n_I], xl[s.sl_D], u_P[bl.dofs.primal_global]]
        tot += w @ bl.A @ w
    return tot


def test_energy_identity(tiny, rng):
    from stokes_fetidp.preconditioners import energy

    for _ in range(5):
        x_r, u_P = _random_V0(tiny, rng)
        e1 = energy(tiny, x_r, u_P)
        e_vel = _velocity_energy(tiny, x_r, u_P)
        assert e1 == pytest.approx(e_vel, rel=1e-10)
        # perturbing p_I leaves it unchanged
        y = x_r.copy()
        for i, s in enumerate(tiny.sub):
            sl = tiny.r_slice(i)
            y[sl][s.n_I : s.n_I + s.n_pI] += rng.standard_normal(s.n_pI)
        assert energy(tiny, y, u_P) == pytest.approx(e1, rel=1e-10)


def _tilde_operators(sys):
    """Dense velocity stiffness and divergence on the partially assembled velocity space."""
    m = sys.mesh
    nloc = [s.n_I + s.n_D for s in sys.sub]
    off = np.r_[0, np.cumsum(nloc)]
    N = off[-1] + sys.partition.n_primal
    A = np.zeros((N, N))
    B = np.zeros((m.n_pnodes, N))
    for i, s in enumerate(sys.sub):
        bl = s.blocks
        d = bl.dofs
        idx = np.r_[np.arange(off[i], off[i + 1]), off[-1] + d.primal_global]
        A[np.ix_(idx, idx)] += bl.A.toarray()
        pn = m.local_pnodes_global(i)
        B[np.ix_(pn[d.pI_local], idx)] += bl.BI.toarray()
        B[np.ix_(pn[d.pG_local], idx)] += bl.BG.toarray()
    return A, B, fem.pressure_mass(m).toarray()


def test_btilde_stability_sampled(tiny, rng):
    A, B, Z = _tilde_operators(tiny)
    for _ in range(100):
        w = rng.standard_normal(A.shape[0])
        q = rng.standard_normal(B.shape[0])
        assert q @ B @ w <= np.sqrt(w @ A @ w) * np.sqrt(q @ Z @ q) * (1 + 1e-10)


def test_btilde_stability_sharp_constant(tiny):
    # for broken fields |div w| <= sqrt(dim) |grad w| pointwise; this is the exact bound
    A, B, Z = _tilde_operators(tiny)
    ev = scipy.linalg.eigh(B @ np.linalg.solve(A, B.T), Z, eigvals_only=True)
    assert np.sqrt(ev[-1]) <= np.sqrt(tiny.mesh.dim) * (1 + 1e-10)


def test_range_confinement(sys3d, rng):
    P = range_projector(sys3d.jump)
    lam = sys3d.jump.B @ rng.standard_normal(sys3d.jump.n_dual)
    x = np.r_[rng.standard_normal(sys3d.n_pgamma), lam]
    _, Glam = sys3d.split_x(sys3d.apply_G(x))
    assert np.linalg.norm(P(Glam) - Glam) <= 1e-10 * np.linalg.norm(Glam)


def test_parallel_matches_serial(rng):
    from stokes_fetidp import build_mesh, classify_dofs
    from stokes_fetidp.dd_system import ReducedSystem

    part = classify_dofs(build_mesh(2, (3, 3), 2))
    a = ReducedSystem(part)
    b = ReducedSystem(part, parallel=True)
    x = rng.standard_normal(a.n_x)
    assert np.array_equal(a.apply_G(x), b.apply_G(x))
    b.close()


def test_identical_subdomains_share_factor():
    # 4x4 layout: boundary contact gives 9 distinct subdomain types
    s = reduced(2, (4, 4), 2)
    ids = {id(sub.factor) for sub in s.sub}
    assert len(ids) == 9
