"""Stationary-point classification, stability and escape checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curvature import extreme_curvature
from .dynamics import OptimizerConfig, OptimizerState, cesp_step, gda_step
from .problems import Problem, as_point, hessian_blocks
from .spectral import dense_extreme_eig

VERDICTS = (
    "locally_optimal_saddle",
    "stable_undesired",
    "unstable_stationary",
    "not_stationary",
    "degenerate",
)
DEFAULT_TOL = 1e-6


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class StationaryPointReport:
    z: np.ndarray
    grad_norm: float
    lambda_x_min: float
    lambda_y_max: float
    jacobian_eigs: np.ndarray
    verdict: str
    margins: tuple

    def to_dict(self) -> dict:
        return {
            "z": [float(v) for v in self.z],
            "grad_norm": self.grad_norm,
            "lambda_x_min": self.lambda_x_min,
            "lambda_y_max": self.lambda_y_max,
            "jacobian_eigs": [[float(e.real), float(e.imag)] for e in self.jacobian_eigs],
            "verdict": self.verdict,
            "margins": {"mu_x": self.margins[0], "mu_y": self.margins[1]},
        }


@dataclass(frozen=True)
class EscapeCheckResult:
    gamma: float
    z0: np.ndarray
    z1: np.ndarray
    escaped: bool


def dynamics_jacobian(problem: Problem, z) -> np.ndarray:
    """``[[-H_xx, -H_xy], [H_xy^T, H_yy]]``, the linearised GDA vector field."""
    hxx, hyy, hxy = hessian_blocks(problem, z, check_domain=False)
    return np.block([[-hxx, -hxy], [hxy.T, hyy]])


def full_hessian(problem: Problem, z) -> np.ndarray:
    hxx, hyy, hxy = hessian_blocks(problem, z, check_domain=False)
    return np.block([[hxx, hxy], [hxy.T, hyy]])


def eigvals_2x2(M) -> np.ndarray:
    """Closed-form eigenvalues of a real 2x2 matrix from trace and determinant."""
    (a, b), (c, d) = np.asarray(M, float)
    tr, det = a + d, a * d - b * c
    disc = complex(tr * tr / 4.0 - det)
    root = disc ** 0.5
    return np.array([tr / 2.0 - root, tr / 2.0 + root])


def charpoly_eigvals(M) -> np.ndarray:
    """Roots of the characteristic polynomial (small matrices only)."""
    M = np.asarray(M, float)
    if M.shape[0] > 3:
        raise ValueError("characteristic-polynomial route limited to dim <= 3")
    return np.roots(np.poly(M))


def general_eigvals(M) -> np.ndarray:
    M = np.asarray(M, float)
    if M.shape == (2, 2):
        return eigvals_2x2(M)
    return np.linalg.eigvals(M)


def classify_point(problem: Problem, z, tol: float = DEFAULT_TOL) -> StationaryPointReport:
    """Classify ``z`` for the GDA dynamics.

    Verdicts, checked in order: ``not_stationary`` if ``|grad f| >= tol``;
    ``degenerate`` if an extreme block eigenvalue or the real part of a
    Jacobian eigenvalue lies within ``tol`` of zero;
    ``locally_optimal_saddle`` if ``H_xx`` is positive and ``H_yy`` negative
    definite; ``stable_undesired`` if all Jacobian eigenvalues have negative
    real part; ``unstable_stationary`` otherwise.
    """
    z = as_point(problem, z)
    g = problem.grad(z)
    grad_norm = float(np.linalg.norm(g))
    hxx, hyy, hxy = hessian_blocks(problem, z, check_domain=False)
    lx = dense_extreme_eig(hxx, "min").eigenvalue
    ly = dense_extreme_eig(hyy, "max").eigenvalue
    J = np.block([[-hxx, -hxy], [hxy.T, hyy]])
    eigs = general_eigvals(J)
    re = np.real(eigs)

    if grad_norm >= tol:
        verdict = "not_stationary"
    elif abs(lx) <= tol or abs(ly) <= tol or np.any(np.abs(re) <= tol):
        verdict = "degenerate"
    elif lx > tol and ly < -tol:
        verdict = "locally_optimal_saddle"
    elif np.all(re < -tol):
        verdict = "stable_undesired"
    else:
        verdict = "unstable_stationary"
    return StationaryPointReport(z, grad_norm, lx, ly, eigs, verdict, (lx, -ly))


def transformed_stability_check(problem: Problem, z, transform, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``diag(a, b) J(z)`` has only eigenvalues with real part < -tol."""
    a, b = (np.atleast_1d(np.asarray(t, float)) for t in transform)
    if a.shape != (problem.k,) or b.shape != (problem.d,):
        raise ValueError("transform blocks must match (k, d)")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("transform entries must be > 0")
    J = dynamics_jacobian(problem, z)
    AJ = np.concatenate([a, b])[:, None] * J
    return bool(np.all(np.real(general_eigvals(AJ)) < -tol))


def sample_ball(rng: np.random.Generator, center, radius: float, n: int) -> np.ndarray:
    """``n`` points uniform in the Euclidean ball around ``center``."""
    center = np.asarray(center, float)
    dim = center.size
    u = rng.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return center + r * u


def sample_neighbourhood(problem: Problem, z_star, gamma: float, n: int, seed: int) -> np.ndarray:
    """Points with ``|x - x*| <= gamma`` and ``|y - y*| <= gamma``, uniform per block."""
    z_star = as_point(problem, z_star)
    rng = np.random.default_rng(seed)
    xs = sample_ball(rng, z_star[: problem.k], gamma, n)
    ys = sample_ball(rng, z_star[problem.k :], gamma, n)
    return np.hstack([xs, ys])


def escape_radius(problem: Problem, z_star) -> float:
    """Radius ``lam (sqrt(2) - 2/sqrt(3))`` under which one CESP step leaves the ball.

    ``lam = (|lambda_x^-| / rho_x + lambda_y^+ / rho_y) / 4`` collects the
    extreme curvature at ``z_star``.
    """
    curv = extreme_curvature(problem, z_star)
    c = problem.constants
    lam = 0.25 * (abs(min(curv.lambda_x, 0.0)) / c.rho_x + max(curv.lambda_y, 0.0) / c.rho_y)
    return lam * (math.sqrt(2.0) - 2.0 / math.sqrt(3.0))


def escape_check(
    problem: Problem,
    z_star,
    gamma: float,
    n_probes: int,
    cfg: OptimizerConfig,
    probes: Optional[np.ndarray] = None,
    stationary_tol: float = DEFAULT_TOL,
) -> list[EscapeCheckResult]:
    """Apply one CESP step from points near an undesired stationary point.

    Probes are drawn uniformly from the ``gamma``-ball (seed ``cfg.seed``)
    unless given explicitly.
    """
    z_star = as_point(problem, z_star)
    gn = float(np.linalg.norm(problem.grad(z_star)))
    if gn >= stationary_tol:
        raise PreconditionError(f"z_star is not stationary (|grad| = {gn:.3g})")
    if extreme_curvature(problem, z_star, cfg.curvature_method, cfg.power_cfg).is_zero():
        raise PreconditionError("z_star has no extreme curvature (locally optimal saddle?)")
    if probes is None:
        probes = sample_ball(np.random.default_rng(cfg.seed), z_star, gamma, n_probes)
    step_cfg = cfg.replace(method="cesp")
    out = []
    for i, z0 in enumerate(np.atleast_2d(probes)):
        state = OptimizerState.initial(problem, z0, seed=cfg.seed + i)
        z1 = cesp_step(problem, state, step_cfg).z
        out.append(EscapeCheckResult(gamma, z0, z1, bool(np.linalg.norm(z1 - z_star) >= gamma)))
    return out


def lemma4_radius(problem: Problem, z_star, tol: float = DEFAULT_TOL) -> float:
    """``min(mu_x / (sqrt(2) rho_x), mu_y / (sqrt(2) rho_y))`` at a locally optimal saddle.

    Inside this neighbourhood the extreme curvature vanishes, so CESP acts as
    GDA.
    """
    rep = classify_point(problem, z_star, tol)
    if rep.verdict != "locally_optimal_saddle":
        raise PreconditionError(f"z_star is {rep.verdict}, not a locally optimal saddle")
    mu_x, mu_y = rep.margins
    c = problem.constants
    return min(mu_x / (math.sqrt(2.0) * c.rho_x), mu_y / (math.sqrt(2.0) * c.rho_y))


# --------------------------------------------------------------------------
# grid scan


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    @classmethod
    def square(cls, lo: float, hi: float, n: int) -> "GridSpec":
        return cls(lo, hi, lo, hi, n, n)

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """``lo:hi:n`` (square) or ``xlo:xhi:nx,ylo:yhi:ny``."""
        parts = text.split(",")
        axes = []
        for p in parts:
            lo, hi, n = p.split(":")
            axes.append((float(lo), float(hi), int(n)))
        if len(axes) == 1:
            axes = axes * 2
        if len(axes) != 2:
            raise ValueError(f"bad grid spec {text!r}")
        (x0, x1, nx), (y0, y1, ny) = axes
        if nx < 1 or ny < 1 or not (x1 >= x0 and y1 >= y0):
            raise ValueError(f"bad grid spec {text!r}")
        return cls(x0, x1, y0, y1, nx, ny)

    def axes(self):
        return np.linspace(self.x_min, self.x_max, self.nx), np.linspace(self.y_min, self.y_max, self.ny)

    def spacing(self):
        hx = (self.x_max - self.x_min) / (self.nx - 1) if self.nx > 1 else 1.0
        hy = (self.y_max - self.y_min) / (self.ny - 1) if self.ny > 1 else 1.0
        return hx, hy

    def centers(self) -> np.ndarray:
        """Cell centres in row-major order (x varies slowest)."""
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min,
                "y_max": self.y_max, "nx": self.nx, "ny": self.ny}


def refine_stationary(problem: Problem, z, max_iter: int = 50, gtol: float = 1e-13) -> Optional[np.ndarray]:
    """Newton iteration on ``grad f = 0``; ``None`` if it fails to converge."""
    z = np.asarray(z, float).copy()
    for _ in range(max_iter):
        g = problem.grad(z)
        if np.linalg.norm(g) < gtol:
            return z
        try:
            dz = np.linalg.solve(full_hessian(problem, z), g)
        except np.linalg.LinAlgError:
            return None
        z = z - dz
        if not np.all(np.isfinite(z)):
            return None
    g = problem.grad(z)
    return z if np.linalg.norm(g) < 1e3 * gtol else None


@dataclass
class ScanReport:
    grid: GridSpec
    centers: np.ndarray
    points: np.ndarray
    refined: np.ndarray
    cesp_disp: np.ndarray
    gda_disp: np.ndarray
    verdicts: np.ndarray
    disp_tol: float

    @property
    def cesp_fixed(self) -> set:
        return set(np.flatnonzero(self.cesp_disp < self.disp_tol).tolist())

    @property
    def gda_stationary(self) -> set:
        return set(np.flatnonzero(self.gda_disp < self.disp_tol).tolist())

    def cells_with(self, verdict: str) -> set:
        return set(np.flatnonzero(self.verdicts == verdict).tolist())

    @property
    def optimal(self) -> set:
        return self.cells_with("locally_optimal_saddle")

    @property
    def equivalence_holds(self) -> bool:
        return self.cesp_fixed == self.optimal

    @property
    def venn_gap(self) -> set:
        """GDA-stable cells that are not locally optimal saddles."""
        return self.cells_with("stable_undesired") & self.gda_stationary

    def summary(self) -> dict:
        def pts(cells):
            return [[float(v) for v in self.points[i]] for i in sorted(cells)]

        return {
            "grid": self.grid.to_dict(),
            "disp_tol": self.disp_tol,
            "equivalence_holds": self.equivalence_holds,
            "cesp_fixed": pts(self.cesp_fixed),
            "locally_optimal": pts(self.optimal),
            "gda_stationary": pts(self.gda_stationary),
            "gda_stable_not_optimal": pts(self.venn_gap),
        }


def stationarity_equivalence_scan(
    problem: Problem,
    grid: GridSpec,
    tol: float = DEFAULT_TOL,
    eta: float = 1e-3,
    disp_tol: float = 1e-9,
) -> ScanReport:
    """Compare CESP fixed points with locally optimal saddles cell by cell.

    Each cell is represented by the stationary point Newton finds inside it
    when there is one, otherwise by its centre.  At that point we record the
    CESP and GDA one-step displacements and the :func:`classify_point`
    verdict.
    """
    if problem.n != 2:
        raise ValueError("grid scans need a two-dimensional problem")
    hx, hy = grid.spacing()
    centers = grid.centers()
    n = len(centers)
    points = centers.copy()
    refined = np.zeros(n, dtype=bool)
    cesp_disp = np.empty(n)
    gda_disp = np.empty(n)
    verdicts = np.empty(n, dtype=object)
    cfg = OptimizerConfig(method="cesp", eta=eta)
    for i, c in enumerate(centers):
        r = refine_stationary(problem, c)
        if r is not None and -0.5 * hx <= r[0] - c[0] < 0.5 * hx and -0.5 * hy <= r[1] - c[1] < 0.5 * hy:
            points[i] = r
            refined[i] = True
        z = points[i]
        cesp_disp[i] = np.linalg.norm(cesp_step(problem, OptimizerState.initial(problem, z), cfg).z - z)
        gda_disp[i] = np.linalg.norm(gda_step(problem, OptimizerState.initial(problem, z), cfg).z - z)
        verdicts[i] = classify_point(problem, z, tol).verdict
    return ScanReport(grid, centers, points, refined, cesp_disp, gda_disp,
                      verdicts.astype(str), disp_tol)
