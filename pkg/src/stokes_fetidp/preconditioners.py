"""Block-diagonal preconditioners for the reduced system and the jump operators.

Both preconditioners approximate the pressure block by ``alpha (h/2)^-dim``
times the identity, with ``h/2`` the velocity node spacing.  The multiplier block is ``B_D A_DeltaDelta B_D^T``
(lumped) or ``B_D H_Delta B_D^T`` with the discrete harmonic extension
Schur complement ``H_Delta`` (Dirichlet).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dd_system import ReducedSystem, _matrix_key
from .sparse_core import DirectFactor, factor_spd

KINDS = ("lumped", "dirichlet", "identity")
SPACINGS = ("node", "element")


@dataclass(frozen=True)
class PrecondConfig:
    kind: str = "dirichlet"
    alpha: float = 1.0
    spacing: str = "node"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown preconditioner {self.kind!r}; expected one of {KINDS}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.spacing not in SPACINGS:
            raise ValueError(f"unknown spacing {self.spacing!r}; expected one of {SPACINGS}")


def pressure_scale(sys: ReducedSystem, alpha: float, spacing: str = "node") -> float:
    """``alpha * s^-dim`` with ``s`` the velocity node spacing ``h/2`` or the element width ``h``.

    Unequal axes use the product of the per-axis spacings.
    """
    if spacing not in SPACINGS:
        raise ValueError(f"unknown spacing {spacing!r}")
    vol = sys.mesh.elem_volume
    if spacing == "node":
        vol /= 2.0**sys.mesh.dim
    return alpha / vol


@dataclass
class HarmonicExtension:
    """Per-subdomain velocity-only interior factors and couplings."""

    factors: list[DirectFactor]
    A_ID: list[sp.csr_matrix]
    A_DD: list[sp.csr_matrix]
    offsets: np.ndarray

    def extend(self, i: int, w: np.ndarray) -> np.ndarray:
        """Interior values of the discrete harmonic extension of ``w`` (primal part zero)."""
        return -self.factors[i].solve(self.A_ID[i] @ w)

    def apply(self, w: np.ndarray) -> np.ndarray:
        """``H_Delta w`` over the concatenated Delta unknowns of all subdomains."""
        out = np.empty_like(w)
        for i in range(len(self.factors)):
            sl = slice(int(self.offsets[i]), int(self.offsets[i + 1]))
            wi = w[sl]
            u_I = self.extend(i, wi)
            out[sl] = self.A_ID[i].T @ u_I + self.A_DD[i] @ wi
        return out

    def dense(self, i: int) -> np.ndarray:
        """Explicit ``H_Delta^(i)``; small subdomains only."""
        AID = self.A_ID[i].toarray()
        return self.A_DD[i].toarray() - AID.T @ self.factors[i].solve(AID)


def build_harmonic_extension(sys: ReducedSystem) -> HarmonicExtension:
    cache: dict[str, DirectFactor] = {}
    factors = []
    for bl in sys.blocks:
        key = _matrix_key(bl.A_II)
        if key not in cache:
            cache[key] = factor_spd(bl.A_II)
        factors.append(cache[key])
    return HarmonicExtension(
        factors=factors,
        A_ID=[bl.A_ID.tocsr() for bl in sys.blocks],
        A_DD=[bl.A_DD.tocsr() for bl in sys.blocks],
        offsets=sys.jump.delta_offsets,
    )


class Preconditioner:
    """Symmetric block-diagonal map on ``x = (p_Gamma, lambda)``."""

    kind = "identity"

    def __init__(self, sys: ReducedSystem, alpha: float = 1.0, spacing: str = "node"):
        self.sys = sys
        self.alpha = alpha
        self.p_scale = pressure_scale(sys, alpha, spacing)

    def apply_lambda(self, r_lam: np.ndarray) -> np.ndarray:
        return r_lam.copy()

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r_p, r_lam = self.sys.split_x(np.asarray(r, dtype=float))
        return np.concatenate([self.p_scale * r_p, self.apply_lambda(r_lam)])


class IdentityPreconditioner(Preconditioner):
    def __call__(self, r: np.ndarray) -> np.ndarray:
        return np.array(r, dtype=float, copy=True)


class LumpedPreconditioner(Preconditioner):
    kind = "lumped"

    def __init__(self, sys: ReducedSystem, alpha: float = 1.0, spacing: str = "node"):
        super().__init__(sys, alpha, spacing)
        A_DD = sp.block_diag([bl.A_DD for bl in sys.blocks], format="csr")
        BD = sys.jump.BD
        self.M_lambda = (BD @ A_DD @ BD.T).tocsr()

    def apply_lambda(self, r_lam):
        return self.M_lambda @ r_lam


class DirichletPreconditioner(Preconditioner):
    kind = "dirichlet"

    def __init__(
        self,
        sys: ReducedSystem,
        alpha: float = 1.0,
        hext: HarmonicExtension | None = None,
        spacing: str = "node",
    ):
        super().__init__(sys, alpha, spacing)
        self.hext = hext if hext is not None else build_harmonic_extension(sys)

    def apply_lambda(self, r_lam):
        BD = self.sys.jump.BD
        return BD @ self.hext.apply(BD.T @ r_lam)


def make_preconditioner(sys: ReducedSystem, cfg: PrecondConfig) -> Preconditioner:
    if cfg.kind == "lumped":
        return LumpedPreconditioner(sys, cfg.alpha, spacing=cfg.spacing)
    if cfg.kind == "dirichlet":
        return DirichletPreconditioner(sys, cfg.alpha, spacing=cfg.spacing)
    return IdentityPreconditioner(sys, cfg.alpha, spacing=cfg.spacing)


def apply_lumped(sys: ReducedSystem, r: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return LumpedPreconditioner(sys, alpha)(r)


def apply_dirichlet(sys: ReducedSystem, r: np.ndarray, alpha: float = 1.0, hext: HarmonicExtension | None = None):
    return DirichletPreconditioner(sys, alpha, hext)(r)


# ---------------------------------------------------------------------------
# jump operators on the partially assembled space
#
# A vector v of Vtilde is stored as (x_r, u_Pi) with x_r the concatenated
# subdomain (u_I, p_I, u_Delta) blocks, exactly as in ReducedSystem.


def _dual_part(sys: ReducedSystem, x_r: np.ndarray) -> np.ndarray:
    return x_r[sys.delta_in_r]


def jump_PDL(sys: ReducedSystem, x_r: np.ndarray, u_P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dual jump ``B_D^T B w_Delta``, extended by zero."""
    jump = sys.jump
    w = jump.BD.T @ (jump.B @ _dual_part(sys, x_r))
    out = np.zeros_like(x_r)
    out[sys.delta_in_r] = w
    return out, np.zeros_like(u_P)


def jump_PDD(
    sys: ReducedSystem, hext: HarmonicExtension, x_r: np.ndarray, u_P: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dual jump extended discrete-harmonically into the subdomain interiors."""
    out, zP = jump_PDL(sys, x_r, u_P)
    for i, s in enumerate(sys.sub):
        sl = sys.r_slice(i)
        loc = out[sl]
        loc[: s.n_I] = hext.extend(i, loc[s.sl_D])
        out[sl] = loc
    return out, zP


def energy(sys: ReducedSystem, x_r: np.ndarray, u_P: np.ndarray) -> float:
    """``<v, v>_Atilde``."""
    a_r, a_P = sys.apply_Atilde(x_r, u_P)
    return float(x_r @ a_r + u_P @ a_P)
