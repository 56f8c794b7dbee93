import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cesp.problems import quadratic_saddle, robust_mlp_problem, toy_problem
from cesp.spectral import (
    EigenPair,
    PowerIterConfig,
    canonicalize,
    dense_extreme_eig,
    hvp,
    iteration_budget,
    power_iteration_extreme,
)

from conftest import SQ2, Z0, Z1


def random_symmetric(rng, dim, min_gap=1e-2):
    """Random symmetric matrix whose extreme eigenvalues are separated by ``min_gap``."""
    while True:
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        w = np.sort(rng.uniform(-3, 3, dim))
        if dim == 1 or (w[1] - w[0] > min_gap and w[-1] - w[-2] > min_gap):
            return (Q * w) @ Q.T, w


def test_dense_scaled_identity():
    p = dense_extreme_eig(3 * np.eye(2), "max")
    assert p.eigenvalue == pytest.approx(3.0)
    assert np.linalg.norm(p.eigenvector) == pytest.approx(1.0, abs=1e-10)
    assert p.eigenvector[np.flatnonzero(np.abs(p.eigenvector) > 1e-12)[0]] > 0


def test_dense_toy_origin_hessian():
    p = dense_extreme_eig([[4.0, 4.0], [4.0, 2.0]], "min")
    assert p.eigenvalue == pytest.approx(3 - math.sqrt(17), abs=1e-12)
    assert p.residual < 1e-10


def test_dense_diagonal():
    p = dense_extreme_eig(np.diag([-1.0, -3.0]), "min")
    assert p.eigenvalue == -3.0
    np.testing.assert_array_equal(p.eigenvector, [0.0, 1.0])


def test_dense_rejects_nonsymmetric_and_large():
    with pytest.raises(ValueError):
        dense_extreme_eig([[1.0, 2.0], [0.0, 1.0]], "min")
    with pytest.raises(ValueError):
        dense_extreme_eig(np.eye(513), "min")
    with pytest.raises(ValueError):
        dense_extreme_eig(np.eye(2), "middle")


def test_dense_min_is_below_rayleigh_quotients():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M, _ = random_symmetric(rng, 6, 0)
        lo = dense_extreme_eig(M, "min").eigenvalue
        hi = dense_extreme_eig(M, "max").eigenvalue
        for _ in range(10):
            u = rng.standard_normal(6)
            u /= np.linalg.norm(u)
            assert lo <= u @ M @ u + 1e-12
            assert hi >= u @ M @ u - 1e-12


def test_dense_residual_small_on_random_matrices():
    rng = np.random.default_rng(1)
    for dim in (1, 2, 5, 32):
        M, w = random_symmetric(rng, dim, 0)
        p = dense_extreme_eig(M, "max")
        assert p.residual < 1e-10
        assert p.eigenvalue == pytest.approx(w[-1], abs=1e-10)


def test_canonicalize():
    np.testing.assert_allclose(canonicalize([0.0, -3.0, 4.0]), [0.0, 0.6, -0.8])
    np.testing.assert_allclose(canonicalize([1e-13, -1.0]), [-1e-13, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_canonicalize_is_sign_invariant(v):
    v = np.array(v)
    np.testing.assert_allclose(canonicalize(v), canonicalize(-v))
    assert np.linalg.norm(canonicalize(v)) == pytest.approx(1.0, abs=1e-12)


# hvp -------------------------------------------------------------------------


def test_hvp_examples():
    toy = toy_problem()
    for z in (Z0, Z1, [1.5, -2.5]):
        np.testing.assert_allclose(hvp(toy, "x", z, [1.0]), [4.0])
    np.testing.assert_allclose(hvp(toy, "y", Z0, [1.0]), [2.0])
    q = quadratic_saddle([[2.0]], [[1.0]], [[0.0]])
    np.testing.assert_allclose(hvp(q, "x", [0.3, 0.1], [5.0]), [10.0])


def test_hvp_errors():
    toy = toy_problem()
    with pytest.raises(ValueError):
        hvp(toy, "x", Z0, [0.0])
    with pytest.raises(ValueError):
        hvp(toy, "x", Z0, [1.0, 2.0])
    with pytest.raises(ValueError):
        hvp(toy, "w", Z0, [1.0])


def test_hvp_finite_difference_path():
    p = robust_mlp_problem(seed=1, n_samples=8)
    rng = np.random.default_rng(2)
    z = np.r_[rng.standard_normal(p.k), np.full(p.d, 1 / p.d)]
    from cesp.problems import fd_hessian

    H = fd_hessian(p, z)
    for _ in range(3):
        v = rng.standard_normal(p.k)
        np.testing.assert_allclose(hvp(p, "x", z, v), H[: p.k, : p.k] @ v, rtol=1e-4, atol=1e-5)
    v = rng.standard_normal(p.d)
    np.testing.assert_allclose(hvp(p, "y", z, v), -2.0 * v, rtol=1e-5, atol=1e-6)


# power iteration -------------------------------------------------------------


def test_power_diagonal():
    H = np.diag([-1.0, -3.0])
    p = power_iteration_extreme(lambda v: H @ v, 2, "min", PowerIterConfig(beta=0.25, max_iters=10_000))
    assert p.eigenvalue == pytest.approx(-3.0, abs=1e-4)
    assert abs(p.eigenvector @ [0.0, 1.0]) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("which", ["min", "max"])
def test_power_scaled_identity_converges_immediately(which):
    p = power_iteration_extreme(lambda v: 2.5 * v, 4, which, PowerIterConfig(beta=0.1))
    assert p.eigenvalue == pytest.approx(2.5)
    assert p.residual < 1e-12
    assert p.iterations <= 1


def test_power_toy_y_block_at_z1():
    toy = toy_problem()
    p = power_iteration_extreme(lambda v: hvp(toy, "y", Z1, v), 1, "max", PowerIterConfig(),
                                L=toy.constants.L_y)
    assert p.eigenvalue == pytest.approx(-4 * SQ2, abs=1e-12)


def test_power_beta_defaults_to_inverse_lipschitz():
    with pytest.raises(ValueError):
        power_iteration_extreme(lambda v: v, 2, "min", PowerIterConfig())


def test_power_reports_nonconvergence():
    H = np.diag([-1.0, -1.001, 2.0])
    p = power_iteration_extreme(lambda v: H @ v, 3, "min", PowerIterConfig(beta=0.1, max_iters=3))
    assert not p.converged
    assert p.residual > 1e-8
    assert p.iterations == 3


def test_power_matches_dense_oracle():
    rng = np.random.default_rng(2024)
    for trial in range(30):
        dim = int(rng.integers(2, 17))
        M, w = random_symmetric(rng, dim)
        L = np.abs(w).max()
        for which in ("min", "max"):
            cfg = PowerIterConfig(seed=trial, max_iters=200_000, tol=1e-9)
            p = power_iteration_extreme(lambda v: M @ v, dim, which, cfg, L=L)
            d = dense_extreme_eig(M, which)
            assert abs(p.eigenvalue - d.eigenvalue) < 1e-3
            assert abs(p.eigenvector @ d.eigenvector) > 0.999
            # canonical signs agree
            assert p.eigenvector @ d.eigenvector > 0


def test_power_is_seeded():
    rng = np.random.default_rng(3)
    M, w = random_symmetric(rng, 8)
    cfg = PowerIterConfig(seed=5, max_iters=50)
    a = power_iteration_extreme(lambda v: M @ v, 8, "min", cfg, L=3)
    b = power_iteration_extreme(lambda v: M @ v, 8, "min", cfg, L=3)
    np.testing.assert_array_equal(a.eigenvector, b.eigenvector)
    assert a.eigenvalue == b.eigenvalue


def test_iteration_budget():
    assert iteration_budget(2.0, 0.5, 4, 0.1) == math.ceil(4 * math.log(400))
    assert iteration_budget(1.0, 1e9, 1, 0.5) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        PowerIterConfig(beta=0)
    with pytest.raises(ValueError):
        PowerIterConfig(delta=1.0)
    with pytest.raises(ValueError):
        PowerIterConfig(tol=0)


def test_eigenpair_is_frozen():
    p = EigenPair(1.0, np.ones(1), 0.0)
    with pytest.raises(Exception):
        p.eigenvalue = 2.0
