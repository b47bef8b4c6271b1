"""Classical reconstructions: zero-filled, CG-SENSE, PGD and TV-regularized ADMM."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from config import ReconConfig, config
from .signal_model import (
    ForwardModel,
    TemporalDFT,
    UnitaryTransform,
    apply_A,
    apply_A_adjoint,
    normal,
    soft_threshold,
    tv_diff,
)
from .tensor_core import inner, norm
from .validation import ConfigValidator, InvalidArgumentError

logger = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]
# called as callback(iteration, x, value) where value is a residual or objective
IterationCallback = Callable[[int, np.ndarray, float], None]


@dataclass
class SolverResult:
    x: np.ndarray
    residuals: List[float] = field(default_factory=list)
    iterations: int = 0


def conjugate_gradient(
    op: Operator,
    rhs: np.ndarray,
    x0: Optional[np.ndarray] = None,
    iters: int = 10,
    tol: float = 1e-5,
) -> SolverResult:
    """Solve ``op(x) = rhs`` for a Hermitian positive semi-definite ``op``.

    Stops when ``||rhs - op(x)|| <= tol * ||rhs||`` or after ``iters`` steps.
    """
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - op(x) if x0 is not None else rhs.copy()
    p = r.copy()
    rs_old = inner(r, r).real
    rhs_norm = norm(rhs)
    result = SolverResult(x=x, residuals=[np.sqrt(rs_old)])
    if rhs_norm == 0 or np.sqrt(rs_old) <= tol * rhs_norm:
        return result

    for iteration in range(1, iters + 1):
        q = op(p)
        curvature = inner(p, q).real
        if curvature <= 0:
            break
        alpha = rs_old / curvature
        x += alpha * p
        r -= alpha * q
        rs_new = inner(r, r).real
        result.residuals.append(float(np.sqrt(rs_new)))
        result.iterations = iteration
        if np.sqrt(rs_new) <= tol * rhs_norm:
            break
        p = r + (rs_new / rs_old) * p
        rs_old = rs_new
    result.x = x
    return result


def conjugate_residual(
    op: Operator,
    rhs: np.ndarray,
    x0: Optional[np.ndarray] = None,
    iters: int = 30,
    tol: float = 1e-6,
    callback: Optional[IterationCallback] = None,
) -> SolverResult:
    """Conjugate-residual variant: minimizes ``||rhs - op(x)||`` over the Krylov space.

    The residual norm is non-increasing from one iteration to the next.
    """
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - op(x) if x0 is not None else rhs.copy()
    ar = op(r)
    p, ap = r.copy(), ar.copy()
    r_ar = inner(r, ar).real
    rhs_norm = norm(rhs)
    result = SolverResult(x=x, residuals=[norm(r)])
    if rhs_norm == 0 or result.residuals[0] <= tol * rhs_norm:
        return result

    for iteration in range(1, iters + 1):
        ap_norm = inner(ap, ap).real
        if ap_norm <= 0 or r_ar <= 0:
            break
        alpha = r_ar / ap_norm
        x += alpha * p
        r -= alpha * ap
        residual = norm(r)
        result.residuals.append(residual)
        result.iterations = iteration
        if callback is not None:
            callback(iteration, x, residual)
        if residual <= tol * rhs_norm:
            break
        ar = op(r)
        r_ar_new = inner(r, ar).real
        beta = r_ar_new / r_ar
        r_ar = r_ar_new
        p = r + beta * p
        ap = ar + beta * ap
    result.x = x
    return result


def recon_zero_filled(y: np.ndarray, model: ForwardModel) -> np.ndarray:
    return apply_A_adjoint(y, model)


def recon_cg(
    y: np.ndarray,
    model: ForwardModel,
    iters: int = 30,
    tol: float = 1e-6,
    callback: Optional[IterationCallback] = None,
) -> np.ndarray:
    """Least-squares solve of ``A^H A x = A^H y``; the callback receives the normal-equation residual."""
    rhs = apply_A_adjoint(y, model)
    result = conjugate_residual(lambda v: normal(v, model), rhs, iters=iters, tol=tol, callback=callback)
    logger.info(
        "CG: %d iterations, relative residual %.3e",
        result.iterations, result.residuals[-1] / max(norm(rhs), 1e-30),
    )
    return result.x


def pgd_objective(
    x: np.ndarray,
    y: np.ndarray,
    model: ForwardModel,
    lam: float,
    transform: Optional[UnitaryTransform] = None,
) -> float:
    """``1/2 ||y - A x||^2 + lam * sum_m ||Psi x_m||_1``."""
    transform = transform or TemporalDFT()
    data = 0.5 * norm(y - apply_A(x, model)) ** 2
    return data + lam * float(np.sum(np.abs(transform.forward(x))))


def recon_pgd(
    y: np.ndarray,
    model: ForwardModel,
    lam: float,
    step: float = 0.5,
    iters: int = 100,
    transform: Optional[UnitaryTransform] = None,
    x0: Optional[np.ndarray] = None,
    callback: Optional[IterationCallback] = None,
) -> np.ndarray:
    """Proximal gradient descent ``x <- prox(x + 2t A^H (y - A x))``.

    The prox is ``Psi^H soft(Psi v, 2 t lam)``, exact for a unitary ``Psi``.
    The callback receives the objective after each iteration.
    """
    transform = transform or TemporalDFT()
    if not transform.unitary:
        raise InvalidArgumentError(
            f"{type(transform).__name__} is not unitary; the soft-threshold prox does not apply"
        )
    if not 0.0 < step <= 1.0:
        raise InvalidArgumentError(f"PGD step must lie in (0, 1] (got {step})")
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be non-negative (got {lam})")

    x = apply_A_adjoint(y, model) if x0 is None else x0.copy()
    for iteration in range(1, iters + 1):
        v = x + 2.0 * step * apply_A_adjoint(y - apply_A(x, model), model)
        x = transform.adjoint(soft_threshold(transform.forward(v), 2.0 * step * lam)) if lam > 0 else v
        if callback is not None:
            callback(iteration, x, pgd_objective(x, y, model, lam, transform))
    logger.info("PGD: %d iterations, lambda %.3g, step %.3g", iters, lam, step)
    return x


def _active_axes(lambda_spatial: float, lambda_temporal: float) -> Dict[str, float]:
    axes: Dict[str, float] = {}
    if lambda_spatial > 0:
        axes["x"] = lambda_spatial
        axes["y"] = lambda_spatial
    if lambda_temporal > 0:
        axes["t"] = lambda_temporal
    return axes


def recon_l1_espirit(
    y: np.ndarray,
    model: ForwardModel,
    lambda_spatial: float = 0.002,
    lambda_temporal: float = 0.01,
    iters: int = 200,
    rho: float = 0.1,
    tol: float = 1e-6,
    cg_iters: int = 10,
    cg_tol: float = 1e-5,
    callback: Optional[IterationCallback] = None,
) -> np.ndarray:
    """ADMM for ``1/2 ||y - Ax||^2 + lam_s (||D_x x||_1 + ||D_y x||_1) + lam_t ||D_t x||_1``.

    One split variable per difference axis; each map set is regularized
    independently. The callback receives the primal residual ``||Dx - z||``.
    """
    if lambda_spatial < 0 or lambda_temporal < 0:
        raise InvalidArgumentError(
            f"TV weights must be non-negative (got {lambda_spatial}, {lambda_temporal})"
        )
    if rho <= 0:
        raise InvalidArgumentError(f"ADMM rho must be positive (got {rho})")
    axes = _active_axes(lambda_spatial, lambda_temporal)
    if not axes:
        return recon_cg(y, model, iters=max(iters, 30), tol=tol)

    aty = apply_A_adjoint(y, model)
    aty_norm = max(norm(aty), 1e-30)
    x = aty.copy()
    z = {a: tv_diff(x, a) for a in axes}
    u = {a: np.zeros_like(x) for a in axes}
    iteration = 0

    def system(v: np.ndarray) -> np.ndarray:
        out = normal(v, model)
        for a in axes:
            out = out + rho * tv_diff(tv_diff(v, a), a, "adjoint")
        return out

    for iteration in range(1, iters + 1):
        rhs = aty.copy()
        for a in axes:
            rhs += rho * tv_diff(z[a] - u[a], a, "adjoint")
        x = conjugate_gradient(system, rhs, x0=x, iters=cg_iters, tol=cg_tol).x

        primal_sq = 0.0
        dual = np.zeros_like(x)
        for a, lam in axes.items():
            dx = tv_diff(x, a)
            z_old = z[a]
            z[a] = soft_threshold(dx + u[a], lam / rho)
            u[a] = u[a] + dx - z[a]
            primal_sq += norm(dx - z[a]) ** 2
            dual += tv_diff(z[a] - z_old, a, "adjoint")
        primal = float(np.sqrt(primal_sq))
        dual_norm = rho * norm(dual)
        if callback is not None:
            callback(iteration, x, primal)
        logger.debug("ADMM %d: primal %.3e dual %.3e", iteration, primal, dual_norm)
        if primal <= tol * max(norm(x), 1e-30) and dual_norm <= tol * aty_norm:
            break
    logger.info(
        "l1-ESPIRiT: %d ADMM iterations, lambda_s %.3g, lambda_t %.3g",
        iteration, lambda_spatial, lambda_temporal,
    )
    return x


def reconstruct(y: np.ndarray, model: ForwardModel, cfg: Optional[ReconConfig] = None) -> np.ndarray:
    """Run the method named by ``cfg.method``."""
    cfg = cfg or config.recon
    ConfigValidator.validate_recon(cfg).raise_if_invalid("reconstruction config")
    if cfg.method == "zero-filled":
        return recon_zero_filled(y, model)
    if cfg.method == "cg":
        return recon_cg(y, model, iters=cfg.iters, tol=cfg.tol)
    if cfg.method == "pgd":
        return recon_pgd(y, model, lam=cfg.lambda_pgd, step=cfg.step, iters=cfg.iters)
    return recon_l1_espirit(
        y,
        model,
        lambda_spatial=cfg.lambda_spatial,
        lambda_temporal=cfg.lambda_temporal,
        iters=cfg.iters,
        rho=cfg.admm_rho,
        tol=cfg.tol,
        cg_iters=cfg.cg_inner_iters,
        cg_tol=cfg.cg_inner_tol,
    )
