"""The extreme curvature direction ``v_z = (v_minus, v_plus)``.

``v_minus`` follows the most negative eigenvector of the x-block Hessian,
``v_plus`` the most positive eigenvector of the y-block Hessian, each
scaled by ``|lambda| / (2 rho)`` and oriented against the descent (resp.
along the ascent) direction of the gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problems import Problem, as_point, hessian_blocks
from .spectral import EigenPair, PowerIterConfig, dense_extreme_eig, hvp, power_iteration_extreme

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtremeCurvature:
    v_minus: np.ndarray
    v_plus: np.ndarray
    lambda_x: float
    lambda_y: float
    source: str  # "dense" | "power" | "none"

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.v_minus, self.v_plus])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def is_zero(self) -> bool:
        return not (np.any(self.v_minus) or np.any(self.v_plus))


def sgn(a: float) -> float:
    # sgn(0) := +1
    return -1.0 if a < 0 else 1.0


def assemble(lambda_x, v_x, grad_x, rho_x, lambda_y, v_y, grad_y, rho_y):
    """Combine extreme eigenpairs and the gradient into ``(v_minus, v_plus)``."""
    v_minus = np.zeros_like(grad_x, dtype=float)
    v_plus = np.zeros_like(grad_y, dtype=float)
    if lambda_x < 0:
        v_minus = (lambda_x / (2.0 * rho_x)) * sgn(float(v_x @ grad_x)) * v_x
    if lambda_y > 0:
        v_plus = (lambda_y / (2.0 * rho_y)) * sgn(float(v_y @ grad_y)) * v_y
    return v_minus, v_plus


def _power_pairs(problem, z, cfg):
    c = problem.constants
    px = power_iteration_extreme(lambda v: hvp(problem, "x", z, v), problem.k, "min", cfg, L=c.L_x)
    py = power_iteration_extreme(lambda v: hvp(problem, "y", z, v), problem.d, "max", cfg, L=c.L_y)
    return px, py


def extreme_curvature(
    problem: Problem,
    z,
    method: str = "dense",
    cfg: Optional[PowerIterConfig] = None,
    grad: Optional[np.ndarray] = None,
) -> ExtremeCurvature:
    """Extreme curvature direction at ``z``.

    ``grad`` may pass a precomputed gradient (possibly perturbed) to orient
    the eigenvectors; by default the exact gradient at ``z`` is used.
    """
    z = as_point(problem, z)
    if grad is None:
        grad = problem.grad(z)
    gx, gy = problem.split(np.asarray(grad, float))
    c = problem.constants

    if method == "dense":
        hxx, hyy, _ = hessian_blocks(problem, z, check_domain=False)
        px: EigenPair = dense_extreme_eig(hxx, "min")
        py: EigenPair = dense_extreme_eig(hyy, "max")
    elif method == "power":
        cfg = cfg or PowerIterConfig()
        px, py = _power_pairs(problem, z, cfg)
        bad = [p for p in (px, py) if p.residual > 10.0 * cfg.tol]
        if bad:
            logger.warning(
                "power iteration did not converge at z=%s (residual %.3g); using zero curvature",
                z, max(p.residual for p in bad),
            )
            return ExtremeCurvature(np.zeros(problem.k), np.zeros(problem.d),
                                    px.eigenvalue, py.eigenvalue, "none")
    else:
        raise ValueError(f"unknown curvature method {method!r}")

    v_minus, v_plus = assemble(px.eigenvalue, px.eigenvector, gx, c.rho_x,
                               py.eigenvalue, py.eigenvector, gy, c.rho_y)
    return ExtremeCurvature(v_minus, v_plus, px.eigenvalue, py.eigenvalue, method)
