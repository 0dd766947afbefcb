import numpy as np
import pytest
import scipy.linalg

from stokes_fetidp import build_mesh, classify_dofs
from stokes_fetidp.dd_system import ReducedSystem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_cache = {}


def reduced(dim, subs, ratio):
    """Session-cached reduced systems for small meshes."""
    key = (dim, tuple(subs), ratio)
    if key not in _cache:
        _cache[key] = ReducedSystem(classify_dofs(build_mesh(dim, subs, ratio)))
    return _cache[key]


@pytest.fixture(params=[(2, (2, 2), 2), (2, (3, 3), 3), (3, (2, 2, 2), 2)], ids=["2d-2x2", "2d-3x3", "3d-2x2x2"])
def tiny(request):
    return reduced(*request.param)


@pytest.fixture
def sys2d():
    return reduced(2, (2, 2), 2)


@pytest.fixture
def sys3d():
    return reduced(3, (2, 2, 2), 2)


def random_V0(sys, rng):
    """Random ``(x_r, u_P)`` whose velocity meets the subdomain interior divergence rows."""
    x_r = np.zeros(sys.n_r)
    u_P = rng.standard_normal(sys.partition.n_primal)
    for i, s in enumerate(sys.sub):
        bl = s.blocks
        sl = sys.r_slice(i)
        loc = np.zeros(s.n_r)
        w_D = rng.standard_normal(s.n_D)
        w_P = u_P[bl.dofs.primal_global]
        rhs = -(bl.B_ID @ w_D + bl.B_IP @ w_P)
        BII = bl.B_II.toarray()
        # interior velocity: random part in ker(B_II) plus the minimum-norm particular solution
        part = np.linalg.lstsq(BII, rhs, rcond=None)[0]
        N = scipy.linalg.null_space(BII)
        loc[: s.n_I] = part + N @ rng.standard_normal(N.shape[1])
        loc[s.n_I : s.n_I + s.n_pI] = rng.standard_normal(s.n_pI)
        loc[s.sl_D] = w_D
        x_r[sl] = loc
    return x_r, u_P


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
