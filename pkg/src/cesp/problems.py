"""Two-block saddle objectives ``min_x max_y f(x, y)``.

A point is stored as one flat float array ``z = concat(x, y)`` of length
``k + d``; :meth:`Problem.split` recovers the blocks.  The toy and quadratic
problems accept stacked points of shape ``(..., k + d)`` so that grid scans
can be vectorised.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

EPS = np.finfo(float).eps
FD_STEP = EPS ** (1.0 / 3.0)


class ProblemError(Exception):
    pass


class DomainError(ProblemError, ValueError):
    """Point outside the box on which the problem constants are declared."""


class EvaluationError(ProblemError, FloatingPointError):
    """Evaluator produced NaN."""


@dataclass(frozen=True)
class SmoothnessConstants:
    """Lipschitz and gradient bounds, valid over the owning problem's box.

    ``L_*`` bound gradient variation, ``rho_*`` Hessian variation and
    ``ell_*`` gradient norms.
    """

    L_x: float
    L_y: float
    L_z: float
    rho_x: float
    rho_y: float
    rho_z: float
    ell_x: float
    ell_y: float
    ell_z: float

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be finite and > 0, got {v}")
        if self.L_x > self.L_z or self.L_y > self.L_z:
            raise ValueError("block Lipschitz constants cannot exceed L_z")

    def replace(self, **changes) -> "SmoothnessConstants":
        return dataclasses.replace(self, **changes)


HessianBlocks = tuple  # (H_xx, H_yy, H_xy)


@dataclass(frozen=True)
class Problem:
    name: str
    k: int
    d: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    constants: SmoothnessConstants
    domain_box: np.ndarray
    hessian: Optional[Callable[[np.ndarray], HessianBlocks]] = None
    # problem-specific approximation used when no analytic Hessian exists
    hessian_approx: Optional[Callable[[np.ndarray], HessianBlocks]] = None
    batched: bool = False
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.k + self.d

    def split(self, z):
        return z[..., : self.k], z[..., self.k :]

    def join(self, x, y) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))])

    def contains(self, z) -> bool:
        z = np.asarray(z, float)
        return bool(np.all(z >= self.domain_box[:, 0]) and np.all(z <= self.domain_box[:, 1]))

    def with_constants(self, **changes) -> "Problem":
        return dataclasses.replace(self, constants=self.constants.replace(**changes))


def as_point(problem: Problem, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape != (problem.n,):
        raise ValueError(f"expected a point of length {problem.n}, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("point has non-finite components")
    return z


def _checked(problem: Problem, z, check_domain: bool) -> np.ndarray:
    z = as_point(problem, z)
    if check_domain and not problem.contains(z):
        raise DomainError(f"{z} outside the domain box of {problem.name!r}")
    return z


def _no_nan(out, what):
    if np.any(np.isnan(out)):
        raise EvaluationError(f"{what} returned NaN")
    return out


def evaluate(problem: Problem, z, check_domain: bool = True) -> float:
    z = _checked(problem, z, check_domain)
    return float(_no_nan(problem.value(z), "value"))


def gradient(problem: Problem, z, check_domain: bool = True):
    """Return ``(grad_x, grad_y)``."""
    z = _checked(problem, z, check_domain)
    g = _no_nan(np.asarray(problem.grad(z), float), "gradient")
    return problem.split(g)


def fd_hessian(problem: Problem, z: np.ndarray) -> np.ndarray:
    """Full Hessian from central differences of the gradient, symmetrised."""
    n = problem.n
    H = np.empty((n, n))
    for i in range(n):
        h = FD_STEP * (1.0 + abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        H[:, i] = (problem.grad(zp) - problem.grad(zm)) / (zp[i] - zm[i])
    return 0.5 * (H + H.T)


def hessian_blocks(problem: Problem, z, check_domain: bool = True):
    """Return ``(H_xx, H_yy, H_xy)`` at ``z``.

    Square blocks are symmetric.  Falls back to finite differences of the
    gradient when the problem has no analytic Hessian.
    """
    z = _checked(problem, z, check_domain)
    if problem.hessian is not None:
        blocks = problem.hessian(z)
    elif problem.hessian_approx is not None:
        blocks = problem.hessian_approx(z)
    else:
        H = fd_hessian(problem, z)
        k = problem.k
        blocks = (H[:k, :k], H[k:, k:], H[:k, k:])
    hxx, hyy, hxy = (np.atleast_2d(np.asarray(b, float)) for b in blocks)
    hxy = hxy.reshape(problem.k, problem.d)
    for b in (hxx, hyy, hxy):
        _no_nan(b, "hessian")
    return 0.5 * (hxx + hxx.T), 0.5 * (hyy + hyy.T), hxy


def fd_gradient(problem: Problem, z) -> np.ndarray:
    """Central-difference gradient of the value evaluator (test oracle)."""
    z = as_point(problem, z)
    g = np.empty_like(z)
    for i in range(z.size):
        h = FD_STEP * (1.0 + abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (problem.value(zp) - problem.value(zm)) / (zp[i] - zm[i])
    return g


def random_interior_points(problem: Problem, n: int, seed: int, shrink: float = 0.9) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = problem.domain_box[:, 0], problem.domain_box[:, 1]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * shrink
    return mid + half * rng.uniform(-1.0, 1.0, size=(n, problem.n))


# --------------------------------------------------------------------------
# toy problem


def _toy_value(z):
    x, y = z[..., 0], z[..., 1]
    y2 = y * y
    return 2.0 * x * x + y2 + 4.0 * x * y + (4.0 / 3.0) * y2 * y - 0.25 * y2 * y2


def _toy_grad(z):
    x, y = z[..., 0], z[..., 1]
    y2 = y * y
    gx = 4.0 * x + 4.0 * y
    gy = 2.0 * y + 4.0 * x + 4.0 * y2 - y2 * y
    return np.stack([gx, gy], axis=-1)


def _toy_hessian(z):
    y = z[..., 1]
    ones = np.ones_like(y)
    hyy = 2.0 + 8.0 * y - 3.0 * y * y
    return (4.0 * ones)[..., None, None], hyy[..., None, None], (4.0 * ones)[..., None, None]


TOY_BOX = 6.0
TOY_CRITICAL_POINTS = {
    "z0": (0.0, 0.0),
    "z1": (-2.0 - math.sqrt(2.0), 2.0 + math.sqrt(2.0)),
    "z2": (-2.0 + math.sqrt(2.0), 2.0 - math.sqrt(2.0)),
}


def toy_constants() -> SmoothnessConstants:
    """Constants of the toy objective over ``[-6, 6]^2``.

    The Hessian is ``[[4, 4], [4, h(y)]]`` with ``h(y) = 2 + 8y - 3y^2``,
    ranging over ``[-154, 22/3]`` on the box.

    * ``L_x = |(4, 4)| = 4 sqrt(2)``; ``L_y = |(4, -154)|``; ``L_z`` is the
      spectral norm of the Hessian at ``y = -6``.
    * ``rho_y = rho_z = max |h'(y)| = 8 + 36 = 44``.  The x-block Hessian is
      constant, so any positive value is valid for ``rho_x``; we use
      ``rho_z`` since it bounds every block.
    * ``ell_x = max |4x + 4y| = 48``; ``ell_y = ell_z = 372``, attained at
      ``(6, -6)`` where the gradient is ``(0, 372)``.
    """
    return SmoothnessConstants(
        L_x=4.0 * math.sqrt(2.0),
        L_y=math.hypot(4.0, 154.0),
        L_z=0.5 * (150.0 + math.sqrt(158.0**2 + 64.0)),
        rho_x=44.0,
        rho_y=44.0,
        rho_z=44.0,
        ell_x=48.0,
        ell_y=372.0,
        ell_z=372.0,
    )


def toy_problem(rho_x: Optional[float] = None, rho_y: Optional[float] = None) -> Problem:
    """``f(x, y) = 2x^2 + y^2 + 4xy + (4/3)y^3 - (1/4)y^4`` on ``[-6, 6]^2``.

    ``rho_x``/``rho_y`` override the declared Hessian-Lipschitz constants,
    which also set the length of the curvature step.
    """
    c = toy_constants()
    changes = {k: v for k, v in (("rho_x", rho_x), ("rho_y", rho_y)) if v is not None}
    if changes:
        c = c.replace(**changes)
    return Problem(
        name="toy",
        k=1,
        d=1,
        value=_toy_value,
        grad=_toy_grad,
        hessian=_toy_hessian,
        constants=c,
        domain_box=np.array([[-TOY_BOX, TOY_BOX]] * 2),
        batched=True,
        params={"rho_x": c.rho_x, "rho_y": c.rho_y},
    )


# --------------------------------------------------------------------------
# quadratic saddle


def _require_spd(M, name):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError(f"{name} must be positive definite")


def quadratic_saddle(A, B, C, rho: float = 1.0, radius: float = 10.0) -> Problem:
    """``f(x, y) = x'Ax/2 - y'By/2 + x'Cy`` with a unique optimal saddle at 0.

    The Hessian is constant, so the true Hessian-Lipschitz constant is zero;
    ``rho`` is a positive stand-in.  Constants are declared on
    ``[-radius, radius]^(k+d)``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    _require_spd(A, "A")
    _require_spd(B, "B")
    k, d = A.shape[0], B.shape[0]
    C = np.atleast_2d(np.asarray(C, float))
    if C.shape != (k, d):
        raise ValueError(f"C must have shape ({k}, {d}), got {C.shape}")

    def value(z):
        x, y = z[..., :k], z[..., k:]
        return (0.5 * np.einsum("...i,ij,...j", x, A, x)
                - 0.5 * np.einsum("...i,ij,...j", y, B, y)
                + np.einsum("...i,ij,...j", x, C, y))

    def grad(z):
        x, y = z[..., :k], z[..., k:]
        return np.concatenate([x @ A.T + y @ C.T, x @ C - y @ B.T], axis=-1)

    def hessian(z):
        shape = z.shape[:-1]
        return (np.broadcast_to(A, shape + A.shape).copy(),
                np.broadcast_to(-B, shape + B.shape).copy(),
                np.broadcast_to(C, shape + C.shape).copy())

    H = np.block([[A, C], [C.T, -B]])
    L_x = np.linalg.norm(H[:k], 2)
    L_y = np.linalg.norm(H[k:], 2)
    L_z = max(np.linalg.norm(H, 2), L_x, L_y)
    zmax = radius * math.sqrt(k + d)
    consts = SmoothnessConstants(
        L_x=L_x, L_y=L_y, L_z=L_z, rho_x=rho, rho_y=rho, rho_z=rho,
        ell_x=L_x * zmax, ell_y=L_y * zmax, ell_z=L_z * zmax,
    )
    return Problem(
        name="quad",
        k=k,
        d=d,
        value=value,
        grad=grad,
        hessian=hessian,
        constants=consts,
        domain_box=np.array([[-radius, radius]] * (k + d)),
        batched=True,
        params={"A": A.tolist(), "B": B.tolist(), "C": C.tolist(), "rho": rho},
    )


# --------------------------------------------------------------------------
# robust optimisation of a small sigmoid MLP


def make_blobs(seed: int, n_samples: int, n_features: int, separation: float = 1.0):
    """Two overlapping unit-variance Gaussian blobs, labels balanced."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % 2
    rng.shuffle(labels)
    centers = np.zeros((2, n_features))
    centers[0, 0], centers[1, 0] = -separation, separation
    X = centers[labels] + rng.standard_normal((n_samples, n_features))
    return X, labels.astype(float)


class MLPLoss:
    """Per-sample cross-entropy of a 1-hidden-layer sigmoid network.

    Parameter layout: ``W1`` (hidden x features, row-major), ``b1``, ``w2``,
    ``b2``.
    """

    def __init__(self, X, labels, n_hidden):
        self.X = np.asarray(X, float)
        self.t = np.asarray(labels, float)
        if np.all(self.t == self.t[0]):
            raise ValueError("degenerate dataset: all labels equal")
        self.n_samples, self.n_features = self.X.shape
        self.n_hidden = n_hidden
        self.dim = n_hidden * self.n_features + 2 * n_hidden + 1

    def unpack(self, thetas):
        """Split a ``(m, dim)`` stack of parameter vectors."""
        h, f = self.n_hidden, self.n_features
        m = thetas.shape[0]
        W1 = thetas[:, : h * f].reshape(m, h, f)
        b1 = thetas[:, h * f : h * f + h]
        w2 = thetas[:, h * f + h : h * f + 2 * h]
        return W1, b1, w2, thetas[:, -1]

    def cross_entropy(self, theta) -> np.ndarray:
        return self.batch_grad(np.asarray(theta, float)[None, :], np.zeros(self.n_samples))[1][0]

    def batch_grad(self, thetas, weights):
        """Gradients of ``sum_i w_i CE_i`` for a stack of parameter vectors.

        Returns ``(grads (m, dim), CE (m, n_samples))``.
        """
        W1, b1, w2, b2 = self.unpack(thetas)
        hidden = _sigmoid(self.X @ W1.transpose(0, 2, 1) + b1[:, None, :])  # (m, n, h)
        s = (hidden @ w2[:, :, None])[..., 0] + b2[:, None]
        # -[t log sigma(s) + (1-t) log(1 - sigma(s))]
        ce = self.t * np.logaddexp(0.0, -s) + (1.0 - self.t) * np.logaddexp(0.0, s)
        r = weights * (_sigmoid(s) - self.t)
        g_w2 = (r[:, None, :] @ hidden)[:, 0, :]
        g_b2 = r.sum(axis=1)
        delta = r[:, :, None] * w2[:, None, :] * hidden * (1.0 - hidden)
        g_W1 = delta.transpose(0, 2, 1) @ self.X
        g_b1 = delta.sum(axis=1)
        m = thetas.shape[0]
        grads = np.concatenate([g_W1.reshape(m, -1), g_b1, g_w2, g_b2[:, None]], axis=1)
        return grads, ce


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def robust_mlp_problem(
    seed: int = 0,
    n_samples: int = 40,
    n_features: int = 2,
    n_hidden: int = 4,
    lambda_reg: float = 1.0,
    rho_x: float = 1.0,
    separation: float = 1.0,
    radius: float = 100.0,
) -> Problem:
    """Distributionally robust training of a sigmoid MLP on synthetic blobs.

    ``f(theta, p) = sum_i p_i CE_i(theta) - lambda_reg * sum_i (p_i - 1/n)^2``,
    minimised over the network parameters and maximised over the sample
    weights ``p``.

    The Hessian-Lipschitz constants are not known in closed form; ``rho_x``
    sets the x-block value (and hence the curvature step length) and the
    y-block value is nominal because the p-block Hessian is constant.  The
    remaining constants are loose bounds documented in the README.
    """
    if n_samples < 4:
        raise ValueError("n_samples must be >= 4")
    if n_hidden < 1:
        raise ValueError("n_hidden must be >= 1")
    if not lambda_reg > 0:
        raise ValueError("lambda_reg must be > 0")
    X, labels = make_blobs(seed, n_samples, n_features, separation)
    net = MLPLoss(X, labels, n_hidden)
    k, d = net.dim, n_samples
    uniform = 1.0 / n_samples

    def value(z):
        theta, p = z[:k], z[k:]
        return float(p @ net.cross_entropy(theta) - lambda_reg * np.sum((p - uniform) ** 2))

    def grad(z):
        theta, p = z[:k], z[k:]
        g_theta, ce = net.batch_grad(theta[None, :], p)
        return np.concatenate([g_theta[0], ce[0] - 2.0 * lambda_reg * (p - uniform)])

    def hessian_approx(z):
        # central differences of the gradient along theta only, all
        # perturbations in one batch; the p-block is exact
        theta, p = z[:k], z[k:]
        h = FD_STEP * (1.0 + np.abs(theta))
        plus = theta + np.diag(h)
        minus = theta - np.diag(h)
        g, ce = net.batch_grad(np.vstack([plus, minus]), p)
        width = (plus - minus).diagonal()
        hxx = (g[:k] - g[k:]).T / width
        hyx = (ce[:k] - ce[k:]).T / width
        return hxx, -2.0 * lambda_reg * np.eye(d), hyx.T

    # Loose bounds over the box; only rho_x enters the algorithms.
    L = 1.0 + radius**2 * n_samples
    consts = SmoothnessConstants(
        L_x=L, L_y=2.0 * lambda_reg + L, L_z=2.0 * lambda_reg + 2.0 * L,
        rho_x=rho_x, rho_y=1.0, rho_z=max(rho_x, 1.0),
        ell_x=L * radius, ell_y=L * radius, ell_z=2.0 * L * radius,
    )
    return Problem(
        name="robust-mlp",
        k=k,
        d=d,
        value=value,
        grad=grad,
        hessian_approx=hessian_approx,
        constants=consts,
        domain_box=np.array([[-radius, radius]] * (k + d)),
        params={
            "seed": seed, "n_samples": n_samples, "n_features": n_features,
            "n_hidden": n_hidden, "lambda_reg": lambda_reg, "rho_x": rho_x,
            "separation": separation, "radius": radius,
        },
    )
