import numpy as np
import pytest

from stokes_fetidp import fem
from stokes_fetidp.krylov import PcgConfig
from stokes_fetidp.mesh import build_mesh
from stokes_fetidp.preconditioners import PrecondConfig
from stokes_fetidp.solver import solve
from stokes_fetidp.verify import (
    VerificationReport,
    compare_fetidp,
    direct_solve,
    discretization_errors,
    estimate_infsup,
    mass_spectral_bounds,
    verify,
)

TINY = [(2, (2, 2), 2), (2, (2, 2), 3), (2, (3, 3), 2), (2, (3, 3), 3), (3, (2, 2, 2), 2)]


def test_direct_zero_case():
    m = build_mesh(2, (2, 2), 2)
    ref = direct_solve(m, fem.zero_case(2))
    assert np.all(ref.u == 0) and np.allclose(ref.p, 0)


@pytest.mark.parametrize("dim", [2, 3])
def test_direct_residual(dim):
    m = build_mesh(dim, (2,) * dim, 2)
    assert direct_solve(m).residual <= 1e-9


def test_direct_convergence_rate():
    case = fem.manufactured_case(2)
    errs = []
    for n in (4, 8, 16):
        m = build_mesh(2, (1, 1), n)
        ref = direct_solve(m, case)
        errs.append(discretization_errors(m, case, ref.u, ref.p).velocity_max)
    assert errs[0] / errs[1] >= 6 and errs[1] / errs[2] >= 6


@pytest.mark.parametrize("dim,subs,r", TINY)
def test_fetidp_matches_direct(dim, subs, r):
    m = build_mesh(dim, subs, r)
    res = solve(m, precond=PrecondConfig("dirichlet"), pcg_cfg=PcgConfig(tol=1e-10))
    ref = direct_solve(m)
    d = compare_fetidp(m, ref, res.solution)
    assert d["velocity"] <= 1e-8 and d["pressure"] <= 1e-7
    # discrete divergence of the FETI-DP velocity
    G = ref.system
    u = res.solution.u[G.free]
    assert np.linalg.norm(G.B @ u) <= 1e-8 * np.linalg.norm(u)


def test_comparison_deterministic():
    m = build_mesh(2, (2, 2), 2)
    a = solve(m, pcg_cfg=PcgConfig(tol=1e-10)).solution
    b = solve(m, pcg_cfg=PcgConfig(tol=1e-10)).solution
    ref = direct_solve(m)
    d1, d2 = compare_fetidp(m, ref, a), compare_fetidp(m, ref, b)
    assert d1 == d2
    assert np.array_equal(a.u, b.u)


def test_infsup_positive_and_stable():
    betas = [estimate_infsup(build_mesh(2, (2, 2), n)) for n in (2, 4, 8)]
    assert min(betas) > 0
    for a, b in zip(betas, betas[1:]):
        assert abs(a - b) <= 0.1 * a
    assert estimate_infsup(build_mesh(3, (2, 2, 2), 2)) > 0


def test_mass_bounds():
    c1, C1 = mass_spectral_bounds(build_mesh(2, (2, 2), 4))
    c2, C2 = mass_spectral_bounds(build_mesh(2, (2, 2), 8))
    assert 0 < c1 <= C1 and 0 < c2 <= C2
    assert abs(c2 / c1 - 1) <= 0.1 and abs(C2 / C1 - 1) <= 0.1
    c3, C3 = mass_spectral_bounds(build_mesh(3, (2, 2, 2), 2))
    assert 0 < c3 <= C3


def test_mass_trace_quadrature():
    m = build_mesh(2, (2, 3), 2)
    Z = fem.pressure_mass(m).toarray()
    # int phi_i^2 for a Q1 hat function: (h/3 per interior side pair) per axis, halved at the ends
    per_axis = []
    for n, h in zip(m.n_elem_axis, m.h_axis):
        w = np.full(n + 1, 2 * h / 3)
        w[[0, -1]] = h / 3
        per_axis.append(w)
    trace = np.multiply.outer(*per_axis).sum()
    assert np.linalg.eigvalsh(Z).sum() == pytest.approx(trace, rel=1e-12)
    assert np.trace(Z) == pytest.approx(trace, rel=1e-12)


def test_report_json_roundtrip():
    m = build_mesh(2, (2, 2), 2)
    res = solve(m, pcg_cfg=PcgConfig(tol=1e-10))
    rep = verify(m, fetidp=res.solution)
    assert rep.velocity_discrepancy <= 1e-8 and rep.infsup > 0
    back = VerificationReport.from_json(rep.to_json())
    assert back == rep
    for v in (rep.velocity_max_error, rep.velocity_h1_error, rep.pressure_l2_error):
        assert v >= 0


def test_dense_limit():
    with pytest.raises(ValueError):
        estimate_infsup(build_mesh(2, (4, 4), 8))
