"""Preconditioned conjugate gradients with Lanczos eigenvalue estimates."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

Operator = Callable[[np.ndarray], np.ndarray]


class BreakdownError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PcgConfig:
    tol: float = 1e-6
    max_iters: int = 500
    record_lanczos: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be non-negative, got {self.max_iters}")


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residuals: list[float] = field(default_factory=list)
    diag: np.ndarray = field(default_factory=lambda: np.zeros(0))
    offdiag: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_min: float = float("nan")
    lambda_max: float = float("nan")

    @property
    def tridiagonal(self) -> np.ndarray:
        n = self.diag.size
        T = np.diag(self.diag)
        if n > 1:
            T += np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)
        return T

    def write_residuals(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for k, r in enumerate(self.residuals):
                w.writerow([k, repr(r)])


def lanczos_tridiagonal(alphas, betas) -> tuple[np.ndarray, np.ndarray]:
    """Lanczos matrix of PCG from its step lengths and direction-update coefficients.

    With step lengths ``a_k`` and updates ``b_k`` (``p_{k+1} = z_{k+1} + b_k p_k``)
    the diagonal is ``1/a_k + b_{k-1}/a_{k-1}`` and the off-diagonal
    ``sqrt(b_k)/a_k``.
    """
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)
    n = a.size
    diag = 1.0 / a
    if n > 1:
        diag[1:] += b[: n - 1] / a[: n - 1]
    off = np.sqrt(b[: n - 1]) / a[: n - 1]
    return diag, off


def lanczos_eigs(diag, offdiag=None) -> tuple[float, float]:
    """Extreme eigenvalues of a symmetric tridiagonal matrix.

    Accepts either ``(diag, offdiag)`` or a single dense tridiagonal matrix.
    """
    d = np.asarray(diag, dtype=float)
    if d.ndim == 2:
        offdiag = np.diag(d, 1)
        d = np.diag(d).copy()
    if d.size == 0:
        raise ValueError("empty tridiagonal matrix")
    e = np.zeros(0) if offdiag is None else np.asarray(offdiag, dtype=float)
    if d.size == 1:
        return float(d[0]), float(d[0])
    ev = scipy.linalg.eigvalsh_tridiagonal(d, e)
    return float(ev[0]), float(ev[-1])


def estimate_condition(report: SolveReport | tuple[float, float]) -> float:
    lo, hi = (report.lambda_min, report.lambda_max) if isinstance(report, SolveReport) else report
    if not lo > 0:
        raise ValueError(f"minimum eigenvalue estimate must be positive, got {lo}")
    return hi / lo


def pcg(
    applyA: Operator,
    applyM: Operator | None,
    b: np.ndarray,
    cfg: PcgConfig | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A x = b`` from a zero initial guess.

    Stops when the Euclidean norm of the unpreconditioned residual drops
    below ``tol * ||b||``.  Hitting ``max_iters`` returns with
    ``converged=False``; a non-positive curvature ``<p, A p>`` or
    ``<r, M r>`` raises :class:`BreakdownError`.
    """
    cfg = cfg or PcgConfig()
    if applyM is None:
        applyM = lambda r: r.copy()  # noqa: E731
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    residuals = [bnorm]
    if bnorm == 0.0:
        return x, SolveReport(0, True, residuals)

    alphas, betas = [], []
    z = applyM(r)
    rz = float(r @ z)
    if not rz > 0:
        raise BreakdownError(f"preconditioner not positive on residual: <r, Mr> = {rz:.3e}")
    p = z.copy()
    converged = False
    k = 0
    while k < cfg.max_iters:
        Ap = applyA(p)
        pAp = float(p @ Ap)
        if not pAp > 0:
            raise BreakdownError(f"non-positive curvature <p, Ap> = {pAp:.3e} at iteration {k}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        k += 1
        alphas.append(alpha)
        rnorm = float(np.linalg.norm(r))
        residuals.append(rnorm)
        if callback is not None:
            callback(k, x)
        if rnorm <= cfg.tol * bnorm:
            converged = True
            break
        z = applyM(r)
        rz_new = float(r @ z)
        if not rz_new > 0:
            raise BreakdownError(f"preconditioner not positive on residual: <r, Mr> = {rz_new:.3e}")
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p

    report = SolveReport(k, converged, residuals)
    if cfg.record_lanczos and alphas:
        report.diag, report.offdiag = lanczos_tridiagonal(alphas, betas)
        report.lambda_min, report.lambda_max = lanczos_eigs(report.diag, report.offdiag)
    return x, report
