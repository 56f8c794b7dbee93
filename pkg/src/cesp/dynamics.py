"""Simultaneous gradient descent/ascent, CESP and their Adagrad variants."""

from __future__ import annotations

import copy
import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .curvature import ExtremeCurvature, extreme_curvature
from .problems import Problem, SmoothnessConstants, as_point
from .spectral import PowerIterConfig

METHODS = ("gda", "cesp", "adagrad", "adagrad-cesp")
CURVATURE_METHODS = ("cesp", "adagrad-cesp")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "gda"
    eta: float = 1e-3
    max_iters: int = 50_000
    grad_tol: float = 1e-8
    noise_sigma: float = 0.0
    curvature_method: str = "dense"
    power_cfg: PowerIterConfig = field(default_factory=PowerIterConfig)
    epsilon_adagrad: float = 1e-8
    seed: int = 0
    spectrum_stride: int = 10
    divergence_radius: float = 1e6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.curvature_method not in ("dense", "power"):
            raise ValueError("curvature_method must be 'dense' or 'power'")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.epsilon_adagrad > 0:
            raise ValueError("epsilon_adagrad must be > 0")
        if self.spectrum_stride < 1:
            raise ValueError("spectrum_stride must be >= 1")

    def replace(self, **changes) -> "OptimizerConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class OptimizerState:
    z: np.ndarray
    t: int
    accum_x: np.ndarray
    accum_y: np.ndarray
    rng: np.random.Generator

    @classmethod
    def initial(cls, problem: Problem, z0, seed: int = 0) -> "OptimizerState":
        return cls(
            z=as_point(problem, z0).copy(),
            t=0,
            accum_x=np.zeros(problem.k),
            accum_y=np.zeros(problem.d),
            rng=np.random.default_rng(seed),
        )

    def copy(self) -> "OptimizerState":
        return copy.deepcopy(self)


def gda_step_bound(c: SmoothnessConstants) -> float:
    """Largest admissible GDA step, ``min(1/L_x, 1/L_y, 1/(sqrt(2) L_z))``."""
    return min(1.0 / c.L_x, 1.0 / c.L_y, 1.0 / (math.sqrt(2.0) * c.L_z))


def decrease_step_bound(c: SmoothnessConstants) -> float:
    """Step size under which every CESP step decreases f in x and increases it in y."""

    def one(L, rho, ell):
        return (math.sqrt(9.0 * L * L + 48.0 * rho * ell) - 3.0 * L) / (8.0 * rho * ell)

    return min(one(c.L_x, c.rho_x, c.ell_x), one(c.L_y, c.rho_y, c.ell_y))


def _gradients(problem, state, cfg, grad=None):
    g = problem.grad(state.z) if grad is None else grad
    if cfg.noise_sigma > 0:
        return g, g + cfg.noise_sigma * state.rng.standard_normal(g.shape)
    return g, g


def _ascent_direction(problem, g):
    d = g.copy()
    d[: problem.k] *= -1.0
    return d


def _curvature(problem, state, cfg, g_exact):
    pcfg = cfg.power_cfg
    if cfg.curvature_method == "power":
        # distinct but reproducible start vector at every iteration
        seed = np.random.SeedSequence([pcfg.seed, state.t]).generate_state(1)[0]
        pcfg = dataclasses.replace(pcfg, seed=int(seed))
    return extreme_curvature(problem, state.z, cfg.curvature_method, pcfg, grad=g_exact)


def _apply(state, z_new):
    state.z = z_new
    state.t += 1
    return state


def _gda(problem, state, cfg, grad=None):
    _, g = _gradients(problem, state, cfg, grad)
    return _apply(state, state.z + cfg.eta * _ascent_direction(problem, g)), None


def _cesp(problem, state, cfg, grad=None, curv=None):
    g_exact, g = _gradients(problem, state, cfg, grad)
    if curv is None:
        curv = _curvature(problem, state, cfg, g_exact)
    update = cfg.eta * _ascent_direction(problem, g)
    if curv.is_zero():
        z_new = state.z + update
    else:
        z_new = state.z + curv.vector + update
    return _apply(state, z_new), curv


def adagrad_transform(state: OptimizerState, grad_x, grad_y, epsilon: float = 1e-8):
    """Accumulate squared gradients and return the diagonal preconditioner.

    Mutates ``state.accum_x``/``state.accum_y``.
    """
    state.accum_x = state.accum_x + np.square(grad_x)
    state.accum_y = state.accum_y + np.square(grad_y)
    return 1.0 / np.sqrt(state.accum_x + epsilon), 1.0 / np.sqrt(state.accum_y + epsilon)


def _transformed(problem, state, cfg, grad=None, curv=None):
    g_exact, g = _gradients(problem, state, cfg, grad)
    gx, gy = problem.split(g)
    a, b = adagrad_transform(state, gx, gy, cfg.epsilon_adagrad)
    update = cfg.eta * np.concatenate([a, b]) * _ascent_direction(problem, g)
    if cfg.method == "adagrad":
        return _apply(state, state.z + update), None
    if curv is None:
        curv = _curvature(problem, state, cfg, g_exact)
    z_new = state.z + update if curv.is_zero() else state.z + curv.vector + update
    return _apply(state, z_new), curv


def gda_step(problem: Problem, state: OptimizerState, cfg: OptimizerConfig) -> OptimizerState:
    """One simultaneous step ``z + eta (-grad_x f, grad_y f)``; mutates ``state``."""
    return _gda(problem, state, cfg)[0]


def cesp_step(problem: Problem, state: OptimizerState, cfg: OptimizerConfig) -> OptimizerState:
    """GDA step plus the extreme curvature direction at the current point."""
    return _cesp(problem, state, cfg)[0]


def transformed_cesp_step(problem: Problem, state: OptimizerState, cfg: OptimizerConfig) -> OptimizerState:
    """Adagrad-preconditioned step, with curvature unless ``cfg.method == "adagrad"``."""
    return _transformed(problem, state, cfg)[0]


_STEPPERS = {"gda": _gda, "cesp": _cesp, "adagrad": _transformed, "adagrad-cesp": _transformed}


def step(problem, state, cfg, grad=None, curv=None):
    """Dispatch on ``cfg.method``; returns ``(state, curvature or None)``."""
    fn = _STEPPERS[cfg.method]
    if fn is _gda:
        return fn(problem, state, cfg, grad)
    return fn(problem, state, cfg, grad, curv)


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    z: np.ndarray
    f: np.ndarray
    grad_norm_sq: np.ndarray
    lambda_x: np.ndarray
    lambda_y: np.ndarray
    curv_norm: np.ndarray
    status: str
    k: int

    @property
    def final_z(self) -> np.ndarray:
        return self.z[-1]

    @property
    def iterations(self) -> int:
        return int(self.t[-1])

    def __len__(self):
        return len(self.t)


def check_step_size(problem: Problem, cfg: OptimizerConfig, stacklevel: int = 3) -> None:
    """Warn when a gda/cesp step size breaks the stability bound."""
    bound = gda_step_bound(problem.constants)
    if cfg.method in ("gda", "cesp") and cfg.eta >= bound:
        warnings.warn(f"eta={cfg.eta} violates the step-size bound {bound:.4g} for {problem.name!r}",
                      RuntimeWarning, stacklevel=stacklevel)


def run_trajectory(problem: Problem, z0, cfg: OptimizerConfig) -> TrajectoryRecord:
    """Iterate the configured stepper from ``z0``.

    Row ``t`` describes ``z_t``.  Stops when ``|grad f|^2 < grad_tol``
    (converged; curvature methods also need a zero curvature step), after
    ``max_iters`` steps, or once ``|z|`` exceeds ``divergence_radius`` or
    turns non-finite (diverged).  Spectra are logged
    every ``spectrum_stride`` rows and on the last row; curvature-based
    methods log them on every row.
    """
    state = OptimizerState.initial(problem, z0, cfg.seed)
    check_step_size(problem, cfg)
    uses_curv = cfg.method in CURVATURE_METHODS
    ts, zs, fs, gns, lxs, lys, vns = [], [], [], [], [], [], []
    nan = float("nan")
    status = "max_iters"
    while True:
        z = state.z
        if not np.all(np.isfinite(z)) or np.linalg.norm(z) > cfg.divergence_radius:
            ts.append(state.t); zs.append(z); fs.append(nan); gns.append(nan)
            lxs.append(nan); lys.append(nan); vns.append(nan)
            status = "diverged"
            break
        g = problem.grad(z)
        gn = float(g @ g)
        curv: Optional[ExtremeCurvature] = None
        if uses_curv:
            curv = _curvature(problem, state, cfg, g)
        # a curvature method has only converged at its own fixed points
        converged = gn < cfg.grad_tol and (curv is None or curv.is_zero())
        done = converged or state.t >= cfg.max_iters or not math.isfinite(gn)
        if curv is None and (done or state.t % cfg.spectrum_stride == 0):
            curv = _curvature(problem, state, cfg, g)
        ts.append(state.t)
        zs.append(z)
        fs.append(float(problem.value(z)))
        gns.append(gn)
        if curv is None:
            lxs.append(nan); lys.append(nan); vns.append(nan)
        else:
            lxs.append(curv.lambda_x); lys.append(curv.lambda_y); vns.append(curv.norm)
        if not math.isfinite(gn):
            status = "diverged"
            break
        if converged:
            status = "converged"
            break
        if state.t >= cfg.max_iters:
            break
        state, _ = step(problem, state, cfg, grad=g, curv=curv if uses_curv else None)
    return TrajectoryRecord(
        t=np.asarray(ts, dtype=np.int64),
        z=np.asarray(zs, dtype=float).reshape(len(ts), problem.n),
        f=np.asarray(fs),
        grad_norm_sq=np.asarray(gns),
        lambda_x=np.asarray(lxs),
        lambda_y=np.asarray(lys),
        curv_norm=np.asarray(vns),
        status=status,
        k=problem.k,
    )
