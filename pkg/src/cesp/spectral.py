"""Extreme eigenpairs of symmetric operators, dense or matrix-free."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .problems import EPS, Problem, as_point, hessian_blocks

SIGN_THRESHOLD = 1e-12


@dataclass(frozen=True)
class EigenPair:
    eigenvalue: float
    eigenvector: np.ndarray
    residual: float
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class PowerIterConfig:
    """Settings for shifted power iteration.

    ``beta`` is the shift ``I -/+ beta H``; ``None`` means ``1/L`` of the
    block being probed.  ``max_iters=None`` derives the budget from
    ``gamma_target`` and ``delta`` (see :func:`iteration_budget`).
    """

    beta: Optional[float] = None
    max_iters: Optional[int] = None
    tol: float = 1e-8
    seed: int = 0
    delta: float = 0.1
    gamma_target: float = 1e-2

    def __post_init__(self):
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


def canonicalize(v: np.ndarray) -> np.ndarray:
    """Unit-normalise and flip so the first significant entry is positive."""
    v = np.asarray(v, float)
    v = v / np.linalg.norm(v)
    idx = np.flatnonzero(np.abs(v) > SIGN_THRESHOLD)
    if idx.size and v[idx[0]] < 0:
        v = -v
    return v


def iteration_budget(L: float, gamma: float, dim: int, delta: float) -> int:
    """``ceil((L / gamma) * log(dim / delta^2))`` power steps."""
    return max(1, math.ceil((L / gamma) * math.log(dim / delta**2)))


def dense_extreme_eig(M, which: str = "min") -> EigenPair:
    M = np.atleast_2d(np.asarray(M, float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.shape[0] > 512:
        raise ValueError("dense eigensolver limited to dimension 512")
    if np.max(np.abs(M - M.T), initial=0.0) >= 1e-8:
        raise ValueError("matrix is not symmetric")
    if which not in ("min", "max"):
        raise ValueError("which must be 'min' or 'max'")
    if M.shape == (1, 1):
        return EigenPair(float(M[0, 0]), np.ones(1), 0.0)
    if not np.any(M - np.diag(np.diagonal(M))):
        # diagonal: first extreme entry, unit basis vector
        diag = np.diagonal(M)
        i = int(np.argmin(diag) if which == "min" else np.argmax(diag))
        v = np.zeros(M.shape[0])
        v[i] = 1.0
        return EigenPair(float(diag[i]), v, 0.0)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    i = 0 if which == "min" else -1
    v = canonicalize(V[:, i])
    lam = float(v @ M @ v)
    return EigenPair(lam, v, float(np.linalg.norm(M @ v - lam * v)))


def hvp(problem: Problem, block: str, z, v) -> np.ndarray:
    """Hessian-vector product for the ``"x"`` or ``"y"`` diagonal block."""
    z = as_point(problem, z)
    v = np.asarray(v, float).reshape(-1)
    size = problem.k if block == "x" else problem.d
    if block not in ("x", "y"):
        raise ValueError("block must be 'x' or 'y'")
    if v.shape != (size,):
        raise ValueError(f"vector must have length {size}")
    vnorm = np.linalg.norm(v)
    if vnorm == 0:
        raise ValueError("zero direction")
    if problem.hessian is not None:
        hxx, hyy, _ = hessian_blocks(problem, z, check_domain=False)
        return (hxx if block == "x" else hyy) @ v
    h = math.sqrt(EPS) * (1.0 + np.linalg.norm(z)) / vnorm
    dz = np.zeros(problem.n)
    sl = slice(0, problem.k) if block == "x" else slice(problem.k, None)
    dz[sl] = h * v
    gp = problem.grad(z + dz)[sl]
    gm = problem.grad(z - dz)[sl]
    return (gp - gm) / (2.0 * h)


def power_iteration_extreme(
    apply_H: Callable[[np.ndarray], np.ndarray],
    dim: int,
    which: str,
    cfg: PowerIterConfig,
    L: Optional[float] = None,
) -> EigenPair:
    """Extreme eigenpair of a symmetric operator via shifted power steps.

    For ``which="min"`` iterates ``v <- (I - beta H) v``, for ``"max"``
    ``v <- (I + beta H) v``, normalising each step from a seeded random start.
    ``beta`` must keep the shifted operator positive semidefinite, which
    holds for ``beta <= 1/L`` with ``L`` a bound on ``|H|``.  A pair that
    exhausts its budget is returned with ``converged=False``.
    """
    if which not in ("min", "max"):
        raise ValueError("which must be 'min' or 'max'")
    beta = cfg.beta
    if beta is None:
        if L is None:
            raise ValueError("need cfg.beta or a Lipschitz bound L")
        beta = 1.0 / L
    max_iters = cfg.max_iters
    if max_iters is None:
        max_iters = iteration_budget(1.0 / beta, cfg.gamma_target, dim, cfg.delta)
    sign = -1.0 if which == "min" else 1.0

    rng = np.random.default_rng(cfg.seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    Hv = apply_H(v)
    lam = float(v @ Hv)
    residual = float(np.linalg.norm(Hv - lam * v))
    it = 0
    while residual >= cfg.tol and it < max_iters:
        w = v + sign * beta * Hv
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        Hv = apply_H(v)
        lam = float(v @ Hv)
        residual = float(np.linalg.norm(Hv - lam * v))
        it += 1
    v_c = canonicalize(v)
    return EigenPair(lam, v_c, residual, residual < cfg.tol, it)
