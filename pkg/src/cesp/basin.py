"""Basins of attraction on a 2-D grid of starting points."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .analysis import GridSpec
from .dynamics import OptimizerConfig, check_step_size, run_trajectory
from .problems import Problem

UNRESOLVED = -1


@dataclass
class BasinRaster:
    grid: GridSpec
    labels: np.ndarray  # (nx, ny), x index first
    attractors: list
    match_radius: float
    final_z: np.ndarray  # (nx * ny, 2), row-major like GridSpec.centers
    unresolved_id: int = UNRESOLVED

    def count(self, label: int) -> int:
        return int(np.sum(self.labels == label))

    def label_at(self, x: float, y: float) -> int:
        """Label of the cell whose centre is nearest to ``(x, y)``."""
        xs, ys = self.grid.axes()
        return int(self.labels[np.argmin(np.abs(xs - x)), np.argmin(np.abs(ys - y))])


def cell_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _label(final_z, attractors, match_radius):
    labels = np.full(len(final_z), UNRESOLVED, dtype=np.int64)
    finite = np.all(np.isfinite(final_z), axis=1)
    for aid in range(len(attractors) - 1, -1, -1):
        near = finite & (np.linalg.norm(final_z - attractors[aid], axis=1) <= match_radius)
        labels[near] = aid
    return labels


def _vectorizable(problem: Problem, cfg: OptimizerConfig) -> bool:
    return (problem.batched and problem.hessian is not None and problem.k == 1 and problem.d == 1
            and cfg.noise_sigma == 0 and cfg.method in ("gda", "cesp")
            and cfg.curvature_method == "dense")


def _run_batch(problem: Problem, Z: np.ndarray, cfg: OptimizerConfig) -> np.ndarray:
    """Lock-step GDA/CESP for scalar-block problems.

    Performs the same floating-point operations, in the same order, as
    :func:`run_trajectory` on each row of ``Z``.
    """
    Z = Z.copy()
    active = np.arange(len(Z))
    c = problem.constants
    eta = cfg.eta
    for t in range(cfg.max_iters + 1):
        if active.size == 0:
            break
        z = Z[active]
        bad = ~np.all(np.isfinite(z), axis=1) | (np.sqrt(np.sum(z * z, axis=1)) > cfg.divergence_radius)
        g = problem.grad(z)
        gn = g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1]
        converged = gn < cfg.grad_tol
        if cfg.method == "cesp":
            hxx, hyy, _ = problem.hessian(z)
            lx, ly = hxx[:, 0, 0], hyy[:, 0, 0]
            sx = np.where(g[:, 0] < 0, -1.0, 1.0)
            sy = np.where(g[:, 1] < 0, -1.0, 1.0)
            vx = np.where(lx < 0, (lx / (2.0 * c.rho_x)) * sx, 0.0)
            vy = np.where(ly > 0, (ly / (2.0 * c.rho_y)) * sy, 0.0)
            zero = (vx == 0) & (vy == 0)
            converged &= zero
        diverged = bad | ~np.isfinite(gn)
        Z[active[diverged]] = np.nan
        stop = diverged | converged
        if t == cfg.max_iters:
            break
        go = ~stop
        z, g = z[go], g[go]
        update = eta * np.column_stack([-g[:, 0], g[:, 1]])
        if cfg.method == "cesp":
            v = np.column_stack([vx[go], vy[go]])
            zero = zero[go]
            z_new = np.where(zero[:, None], z + update, (z + v) + update)
        else:
            z_new = z + update
        active = active[go]
        Z[active] = z_new
    return Z


def basin_raster(
    problem: Problem,
    cfg: OptimizerConfig,
    grid: GridSpec,
    attractors,
    match_radius: float = 1e-2,
    vectorize: bool = True,
) -> BasinRaster:
    """Run the optimiser from every cell centre and label the attractor reached.

    Cells whose terminal iterate is not within ``match_radius`` of any
    attractor (including divergent runs) get :data:`UNRESOLVED`.
    """
    if problem.n != 2:
        raise ValueError("basin rasters need a two-dimensional problem")
    att = np.array([np.asarray(a, float).reshape(2) for a in attractors])
    for i in range(len(att)):
        for j in range(i + 1, len(att)):
            if np.linalg.norm(att[i] - att[j]) <= 2 * match_radius:
                raise ValueError("attractors must be more than 2*match_radius apart")
    centers = grid.centers()
    check_step_size(problem, cfg)
    if vectorize and _vectorizable(problem, cfg):
        final = _run_batch(problem, centers, cfg)
    else:
        final = np.empty_like(centers)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # already reported once
            for i, z0 in enumerate(centers):
                rec = run_trajectory(problem, z0, cfg.replace(seed=cell_seed(cfg.seed, i)))
                final[i] = rec.final_z if rec.status != "diverged" else np.nan
    labels = _label(final, att, match_radius).reshape(grid.nx, grid.ny)
    return BasinRaster(grid, labels, [tuple(map(float, a)) for a in att], match_radius, final)
