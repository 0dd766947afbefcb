import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from conftest import random_V0, reduced

from stokes_fetidp.mesh import range_projector
from stokes_fetidp.preconditioners import (
    DirichletPreconditioner,
    IdentityPreconditioner,
    LumpedPreconditioner,
    PrecondConfig,
    apply_dirichlet,
    apply_lumped,
    build_harmonic_extension,
    energy,
    jump_PDD,
    jump_PDL,
    make_preconditioner,
    pressure_scale,
)


def test_config_validation():
    with pytest.raises(ValueError):
        PrecondConfig("jacobi")
    with pytest.raises(ValueError):
        PrecondConfig("lumped", alpha=0.0)
    with pytest.raises(ValueError):
        PrecondConfig("lumped", spacing="cell")


def test_pressure_scale(sys2d, sys3d):
    h2, h3 = sys2d.mesh.h, sys3d.mesh.h
    assert pressure_scale(sys2d, 1.0) == pytest.approx((h2 / 2) ** -2)
    assert pressure_scale(sys2d, 0.5, "element") == pytest.approx(0.5 * h2**-2)
    assert pressure_scale(sys3d, 1.0) == pytest.approx((h3 / 2) ** -3)
    assert pressure_scale(sys3d, 2.0, "element") == pytest.approx(2 * h3**-3)


def test_make_preconditioner_kinds(sys2d):
    assert isinstance(make_preconditioner(sys2d, PrecondConfig("lumped")), LumpedPreconditioner)
    assert isinstance(make_preconditioner(sys2d, PrecondConfig("dirichlet")), DirichletPreconditioner)
    ident = make_preconditioner(sys2d, PrecondConfig("identity"))
    assert isinstance(ident, IdentityPreconditioner)
    x = np.arange(sys2d.n_x, dtype=float)
    assert np.array_equal(ident(x), x)


@pytest.mark.parametrize("kind", ["lumped", "dirichlet"])
def test_zero_in_zero_out(tiny, kind):
    M = make_preconditioner(tiny, PrecondConfig(kind))
    assert np.all(M(np.zeros(tiny.n_x)) == 0)


def _range_vec(sys, rng):
    lam = sys.jump.B @ rng.standard_normal(sys.jump.n_dual)
    return np.r_[rng.standard_normal(sys.n_pgamma), lam]


@pytest.mark.parametrize("kind", ["lumped", "dirichlet"])
def test_symmetric_and_pd_on_range(tiny, kind, rng):
    M = make_preconditioner(tiny, PrecondConfig(kind, alpha=0.7))
    for _ in range(10):
        x, y = rng.standard_normal(tiny.n_x), rng.standard_normal(tiny.n_x)
        Mx, My = M(x), M(y)
        assert abs(Mx @ y - x @ My) <= 1e-12 * max(np.linalg.norm(Mx) * np.linalg.norm(y), 1e-300)
        z = _range_vec(tiny, rng)
        assert z @ M(z) > 0
        lam_only = np.r_[np.zeros(tiny.n_pgamma), z[tiny.n_pgamma :]]
        assert lam_only @ M(lam_only) > 0


def test_lumped_dense_oracle(tiny):
    J = tiny.jump
    brute = np.zeros((J.n_mult, J.n_mult))
    for i, s in enumerate(tiny.sub):
        BDi = J.block(i, scaled=True).toarray()
        brute += BDi @ s.blocks.A_DD.toarray() @ BDi.T
    M = LumpedPreconditioner(tiny)
    dense = np.column_stack([M.apply_lambda(e) for e in np.eye(J.n_mult)])
    assert np.abs(dense - brute).max() <= 1e-13 * np.abs(brute).max()


def test_dirichlet_dense_oracle(tiny, rng):
    J = tiny.jump
    brute = np.zeros((J.n_mult, J.n_mult))
    for i, s in enumerate(tiny.sub):
        bl = s.blocks
        AII, AID, ADD = bl.A_II.toarray(), bl.A_ID.toarray(), bl.A_DD.toarray()
        H = ADD - AID.T @ np.linalg.solve(AII, AID)
        assert np.linalg.eigvalsh(0.5 * (H + H.T))[0] > -1e-10 * np.abs(H).max()
        BDi = J.block(i, scaled=True).toarray()
        brute += BDi @ H @ BDi.T
    M = DirichletPreconditioner(tiny)
    dense = np.column_stack([M.apply_lambda(e) for e in np.eye(J.n_mult)])
    assert np.abs(dense - brute).max() <= 1e-10 * np.abs(brute).max()
    # quadratic form equals summed energies of the subdomain harmonic extensions
    hx = M.hext
    for _ in range(5):
        lam = rng.standard_normal(J.n_mult)
        tot = 0.0
        for i, s in enumerate(tiny.sub):
            bl = s.blocks
            w = J.block(i, scaled=True).T @ lam
            u = np.r_[hx.extend(i, w), w, np.zeros(bl.dofs.n_P)]
            tot += u @ bl.A @ u
        assert lam @ M.apply_lambda(lam) == pytest.approx(tot, rel=1e-10)
        assert tot >= 0


def test_functional_forms(sys2d, rng):
    x = rng.standard_normal(sys2d.n_x)
    assert np.array_equal(apply_lumped(sys2d, x), LumpedPreconditioner(sys2d)(x))
    assert np.allclose(apply_dirichlet(sys2d, x), DirichletPreconditioner(sys2d)(x))


def _continuous_V(sys, rng):
    """Random partially assembled vector whose dual values agree across subdomains."""
    keys = np.concatenate([s.blocks.dofs.dual_key for s in sys.sub])
    vals = rng.standard_normal(keys.max() + 1)
    x_r = rng.standard_normal(sys.n_r)
    x_r[sys.delta_in_r] = vals[keys]
    return x_r, rng.standard_normal(sys.partition.n_primal)


def test_jumps_vanish_on_continuous(tiny, rng):
    hx = build_harmonic_extension(tiny)
    x_r, u_P = _continuous_V(tiny, rng)
    for out in (jump_PDL(tiny, x_r, u_P), jump_PDD(tiny, hx, x_r, u_P)):
        assert np.abs(out[0]).max() < 1e-14 and np.abs(out[1]).max() == 0


def test_PDL_preserves_jump(tiny, rng):
    x_r = rng.standard_normal(tiny.n_r)
    u_P = rng.standard_normal(tiny.partition.n_primal)
    y, _ = jump_PDL(tiny, x_r, u_P)
    B = tiny.jump.B
    assert np.allclose(B @ y[tiny.delta_in_r], B @ x_r[tiny.delta_in_r], atol=1e-12 * np.abs(x_r).max())


def test_PDL_nodal_face_value(rng):
    sys = reduced(2, (2, 2), 3)
    J = sys.jump
    x_r = rng.standard_normal(sys.n_r)
    y, _ = jump_PDL(sys, x_r, np.zeros(sys.partition.n_primal))
    wd, yd = x_r[sys.delta_in_r], y[sys.delta_in_r]
    B = J.B.tocsr()
    for k in range(J.n_mult):
        cols = B.indices[B.indptr[k] : B.indptr[k + 1]]
        a, b = cols[B.data[B.indptr[k] : B.indptr[k + 1]] > 0][0], cols[B.data[B.indptr[k] : B.indptr[k + 1]] < 0][0]
        # 2D face node: two sharing subdomains, one multiplier
        assert yd[a] == pytest.approx(0.5 * (wd[a] - wd[b]))
        assert yd[b] == pytest.approx(-0.5 * (wd[a] - wd[b]))


def test_PDD_energy_optimality(tiny, rng):
    hx = build_harmonic_extension(tiny)
    for _ in range(100):
        x_r = rng.standard_normal(tiny.n_r)
        u_P = rng.standard_normal(tiny.partition.n_primal)
        eL = energy(tiny, *jump_PDL(tiny, x_r, u_P))
        eD = energy(tiny, *jump_PDD(tiny, hx, x_r, u_P))
        assert eD <= eL * (1 + 1e-12) + 1e-14


def test_PDD_energy_equals_schur_forms(tiny, rng):
    hx = build_harmonic_extension(tiny)
    x_r = rng.standard_normal(tiny.n_r)
    u_P = rng.standard_normal(tiny.partition.n_primal)
    y, z = jump_PDD(tiny, hx, x_r, u_P)
    yd = y[tiny.delta_in_r]
    tot = 0.0
    for i in range(len(tiny.sub)):
        sl = slice(int(hx.offsets[i]), int(hx.offsets[i + 1]))
        tot += yd[sl] @ hx.dense(i) @ yd[sl]
    assert energy(tiny, y, z) == pytest.approx(tot, rel=1e-10)


def test_projection_preserved_by_preconditioners(sys3d, rng):
    P = range_projector(sys3d.jump)
    for kind in ("lumped", "dirichlet"):
        M = make_preconditioner(sys3d, PrecondConfig(kind))
        _, zl = sys3d.split_x(M(_range_vec(sys3d, rng)))
        assert np.linalg.norm(P(zl) - zl) <= 1e-10 * np.linalg.norm(zl)


def _jump_suprema(sys):
    """Exact ``max <P v, P v> / <v, v>`` over ``Vtilde_0`` for both jump operators.

    The minimum-energy member of ``Vtilde_0`` with a given dual trace is the
    Schur complement of ``Atilde`` onto the dual unknowns.
    """
    At = sys.atilde_matrix().tocsc()
    d = sys.delta_in_r
    e = np.setdiff1d(np.arange(At.shape[0]), d)
    Ked = At[e][:, d].toarray()
    S = At[d][:, d].toarray() - Ked.T @ spla.splu(At[e][:, e].tocsc()).solve(Ked)
    S = 0.5 * (S + S.T)
    J = sys.jump
    C = (J.BD.T @ J.B).toarray()
    ADD = sp.block_diag([b.A_DD for b in sys.blocks]).toarray()
    hx = build_harmonic_extension(sys)
    H = scipy.linalg.block_diag(*[hx.dense(i) for i in range(len(sys.sub))])
    top = lambda N: scipy.linalg.eigh(C.T @ N @ C, S, eigvals_only=True)[-1]  # noqa: E731
    return top(ADD), top(H)


def test_jump_bounds_growth():
    ratios = [2, 4, 8, 16]
    fitL, fitD = [], []
    for r in ratios:
        sL, sD = _jump_suprema(reduced(2, (2, 2), r))
        assert np.isfinite(sL) and np.isfinite(sD) and sD <= sL * (1 + 1e-10)
        fitL.append(sL / (r * (1 + np.log(r))))
        fitD.append(sD / (1 + np.log(r)) ** 2)
    # normalized by the growth function the suprema must not increase
    assert all(b <= a * 1.05 for a, b in zip(fitL, fitL[1:]))
    assert all(b <= a * 1.05 for a, b in zip(fitD, fitD[1:]))


def test_energy_of_V0_vector_positive(tiny, rng):
    x_r, u_P = random_V0(tiny, rng)
    assert energy(tiny, x_r, u_P) > 0
