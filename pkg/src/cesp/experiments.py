"""Paired GDA/CESP runs on the robust-optimisation problem."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .curvature import extreme_curvature
from .dynamics import OptimizerConfig, run_trajectory
from .problems import Problem, robust_mlp_problem

ROBUST_DEFAULTS = dict(eta=0.05, max_iters=20_000, grad_tol=1e-4, spectrum_stride=1000)
INIT_SCALE = 0.1


@dataclass(frozen=True)
class RobustOutcome:
    seed: int
    method: str
    status: str
    iterations: int
    grad_norm_sq: float
    lambda_min_x: float


def robust_start(problem: Problem, seed: int, init_scale: float = INIT_SCALE) -> np.ndarray:
    """Small Gaussian network weights and uniform sample weights."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    theta = init_scale * rng.standard_normal(problem.k)
    return np.concatenate([theta, np.full(problem.d, 1.0 / problem.d)])


def run_robust_seed(
    seed: int,
    problem_params: dict | None = None,
    cfg: OptimizerConfig | None = None,
    methods=("gda", "cesp"),
    init_scale: float = INIT_SCALE,
) -> list[RobustOutcome]:
    """Run each method from the same dataset and start point for one seed."""
    problem = robust_mlp_problem(seed=seed, **(problem_params or {}))
    cfg = cfg or OptimizerConfig(**ROBUST_DEFAULTS)
    z0 = robust_start(problem, seed, init_scale)
    out = []
    for m in methods:
        with warnings.catch_warnings():
            # the robust problem's declared L is a loose bound
            warnings.simplefilter("ignore", RuntimeWarning)
            rec = run_trajectory(problem, z0, cfg.replace(method=m, seed=seed))
        lam = rec.lambda_x[-1]
        if not np.isfinite(lam):
            lam = extreme_curvature(problem, rec.final_z).lambda_x
        out.append(RobustOutcome(seed, m, rec.status, rec.iterations,
                                 float(rec.grad_norm_sq[-1]), float(lam)))
    return out


def success_fraction(outcomes, method: str, grad_tol: float = 1e-4, lam_tol: float = -1e-3):
    """Fraction of runs below ``grad_tol`` whose final ``lambda_min`` exceeds ``lam_tol``.

    Returns ``(fraction, n_converged)``; the fraction is NaN when no run converged.
    """
    conv = [o for o in outcomes if o.method == method and o.grad_norm_sq < grad_tol]
    if not conv:
        return float("nan"), 0
    return sum(o.lambda_min_x > lam_tol for o in conv) / len(conv), len(conv)
