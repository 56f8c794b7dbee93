import math

import numpy as np
import pytest

from cesp.curvature import extreme_curvature
from cesp.dynamics import (
    OptimizerConfig,
    OptimizerState,
    adagrad_transform,
    cesp_step,
    decrease_step_bound,
    gda_step,
    gda_step_bound,
    run_trajectory,
    step,
    transformed_cesp_step,
)
from cesp.problems import quadratic_saddle, toy_problem

from conftest import Z0, Z1, Z2


def one_step(stepper, problem, z, **cfg):
    state = OptimizerState.initial(problem, z, cfg.get("seed", 0))
    return stepper(problem, state, OptimizerConfig(**cfg)).z


@pytest.fixture
def quad11():
    return quadratic_saddle([[1.0]], [[1.0]], [[0.0]])


# single steps -----------------------------------------------------------------


def test_gda_step_by_hand(toy):
    np.testing.assert_allclose(one_step(gda_step, toy, [-3.0, -1.0], eta=1e-3), [-2.984, -1.009], atol=1e-15)


@pytest.mark.parametrize("z", [Z0, Z1, Z2])
def test_gda_fixed_at_stationary_points(toy, z):
    np.testing.assert_allclose(one_step(gda_step, toy, z, eta=1e-3), z, atol=1e-15)


def test_gda_step_quadratic(quad11):
    np.testing.assert_array_equal(one_step(gda_step, quad11, [1.0, 1.0], eta=0.5), [0.5, 0.5])


def test_cesp_step_at_origin(toy_rho1):
    np.testing.assert_array_equal(one_step(cesp_step, toy_rho1, Z0, method="cesp", eta=1e-3), [0.0, 1.0])


@pytest.mark.parametrize("eta", [1e-4, 1e-3, 0.05])
def test_cesp_fixed_at_z1(toy_rho1, eta):
    np.testing.assert_allclose(one_step(cesp_step, toy_rho1, Z1, method="cesp", eta=eta), Z1, atol=1e-14)


def test_cesp_equals_gda_bitwise_on_quadratics():
    rng = np.random.default_rng(0)
    for _ in range(10):
        A = rng.standard_normal((2, 2))
        q = quadratic_saddle(A @ A.T + np.eye(2), [[2.0]], rng.standard_normal((2, 1)))
        z = rng.uniform(-3, 3, 3)
        a = one_step(cesp_step, q, z, method="cesp", eta=0.01, noise_sigma=0.1, seed=4)
        b = one_step(gda_step, q, z, method="gda", eta=0.01, noise_sigma=0.1, seed=4)
        np.testing.assert_array_equal(a, b)


def test_cesp_noise_only_on_gradient(toy_rho1):
    # at a stationary point the curvature step is unaffected by gradient noise
    z = one_step(cesp_step, toy_rho1, Z0, method="cesp", eta=1e-3, noise_sigma=0.5, seed=3)
    state = OptimizerState.initial(toy_rho1, Z0, 3)
    noise = 0.5 * state.rng.standard_normal(2)
    np.testing.assert_allclose(z, [0.0, 1.0] + 1e-3 * np.array([-noise[0], noise[1]]), atol=1e-15)


def test_gda_noise_is_gaussian_per_component(toy):
    z = np.array([1.0, -1.0])
    g = toy.grad(z)
    steps = np.array([one_step(gda_step, toy, z, eta=1.0, noise_sigma=0.1, seed=s) for s in range(2000)])
    noise = (steps - z) * np.array([-1.0, 1.0]) - g
    assert np.abs(noise.mean(axis=0)).max() < 0.01
    np.testing.assert_allclose(noise.std(axis=0), 0.1, rtol=0.1)


# adagrad ----------------------------------------------------------------------


def test_adagrad_transform_examples(quad11):
    s = OptimizerState.initial(quad11, [0.0, 0.0])
    a, _ = adagrad_transform(s, np.array([2.0]), np.array([0.0]), 1e-8)
    assert a[0] == pytest.approx(0.5)
    s = OptimizerState.initial(quad11, [0.0, 0.0])
    a, b = adagrad_transform(s, np.zeros(1), np.zeros(1), 1e-4)
    assert a[0] == pytest.approx(100.0) and b[0] == pytest.approx(100.0)
    s = OptimizerState.initial(quad11, [0.0, 0.0])
    adagrad_transform(s, np.array([3.0]), np.zeros(1))
    a, _ = adagrad_transform(s, np.array([4.0]), np.zeros(1))
    assert a[0] == pytest.approx(0.2)


def test_transformed_step_at_saddle_is_fixed(quad11, toy_rho1):
    z = one_step(transformed_cesp_step, quad11, [0.0, 0.0], method="adagrad-cesp", eta=0.1)
    np.testing.assert_array_equal(z, [0.0, 0.0])
    z = one_step(transformed_cesp_step, toy_rho1, Z1, method="adagrad-cesp", eta=0.1)
    np.testing.assert_allclose(z, Z1, atol=1e-6)


def test_transformed_step_at_origin_matches_cesp(toy_rho1):
    a = one_step(transformed_cesp_step, toy_rho1, Z0, method="adagrad-cesp", eta=1e-3)
    b = one_step(cesp_step, toy_rho1, Z0, method="cesp", eta=1e-3)
    np.testing.assert_array_equal(a, b)


def test_transformed_first_step_quadratic(quad11):
    z = one_step(transformed_cesp_step, quad11, [1.0, 0.0], method="adagrad", eta=0.1)
    assert z[0] == pytest.approx(0.9, abs=1e-9)
    z = one_step(transformed_cesp_step, quad11, [1.0, 0.0], method="adagrad-cesp", eta=0.1)
    assert z[0] == pytest.approx(0.9, abs=1e-9)


def test_adagrad_accumulators_monotone_and_transform_positive(toy):
    cfg = OptimizerConfig(method="adagrad-cesp", eta=0.05, noise_sigma=0.1, seed=1)
    state = OptimizerState.initial(toy, [-1.0, 0.5], cfg.seed)
    prev_x, prev_y = state.accum_x.copy(), state.accum_y.copy()
    for _ in range(300):
        g = toy.grad(state.z)
        snapshot = state.copy()
        a, b = adagrad_transform(snapshot, *toy.split(g), cfg.epsilon_adagrad)
        assert np.all(a > 0) and np.all(b > 0)
        state, _ = step(toy, state, cfg)
        assert np.all(state.accum_x >= prev_x) and np.all(state.accum_y >= prev_y)
        prev_x, prev_y = state.accum_x.copy(), state.accum_y.copy()


# bounds -----------------------------------------------------------------------


def test_step_bounds_for_toy(toy):
    c = toy.constants
    assert gda_step_bound(c) == pytest.approx(1 / (math.sqrt(2) * c.L_z))
    eta = decrease_step_bound(c)
    assert 0 < eta < 1
    # the bound is the positive root of 4 rho ell eta^2 + 3 L eta = 3 for the binding block
    L, rho, ell = c.L_y, c.rho_y, c.ell_y
    assert 4 * rho * ell * eta**2 + 3 * L * eta == pytest.approx(3.0)


def test_runner_warns_on_large_step(quad11):
    with pytest.warns(RuntimeWarning):
        run_trajectory(quad11, [1.0, 1.0], OptimizerConfig(eta=2.0, max_iters=2))


# trajectories -----------------------------------------------------------------


def test_gda_from_standard_start_reaches_origin(toy):
    rec = run_trajectory(toy, [-3.0, -1.0], OptimizerConfig(method="gda", eta=1e-3))
    assert rec.status == "converged"
    assert np.linalg.norm(rec.final_z - Z0) < 1e-2
    assert rec.iterations <= 50_000


def test_cesp_from_standard_start_reaches_z1(toy_rho1):
    rec = run_trajectory(toy_rho1, [-3.0, -1.0], OptimizerConfig(method="cesp", eta=1e-3))
    assert rec.status == "converged"
    assert np.linalg.norm(rec.final_z - Z1) < 1e-2


@pytest.mark.parametrize("seed", [0, 7, 42])
def test_noisy_gda_still_reaches_origin(toy, seed):
    rec = run_trajectory(toy, [-3.0, -1.0], OptimizerConfig(eta=1e-3, noise_sigma=0.01, seed=seed))
    assert np.linalg.norm(rec.final_z - Z0) < 5e-2


def test_record_layout(toy):
    rec = run_trajectory(toy, [-3.0, -1.0], OptimizerConfig(eta=1e-3, max_iters=25))
    assert rec.status == "max_iters"
    assert len(rec) == 26 and rec.iterations == 25
    assert np.all(np.diff(rec.t) == 1)
    logged = np.isfinite(rec.lambda_x)
    np.testing.assert_array_equal(np.flatnonzero(logged), [0, 10, 20, 25])
    np.testing.assert_array_equal(rec.z[0], [-3.0, -1.0])
    assert rec.f[0] == pytest.approx(toy.value(np.array([-3.0, -1.0])))


def test_cesp_logs_spectrum_every_row(toy):
    rec = run_trajectory(toy, [-3.0, -1.0], OptimizerConfig(method="cesp", eta=1e-3, max_iters=25))
    assert np.all(np.isfinite(rec.lambda_y))


def test_cesp_does_not_stop_at_undesired_stationary_start(toy_rho1):
    rec = run_trajectory(toy_rho1, Z0, OptimizerConfig(method="cesp", eta=1e-3))
    assert rec.status == "converged"
    assert np.linalg.norm(rec.final_z - Z1) < 1e-2


def test_divergence_detected(quad11):
    with pytest.warns(RuntimeWarning):
        rec = run_trajectory(quad11, [1.0, 1.0], OptimizerConfig(eta=3.0, max_iters=1000))
    assert rec.status == "diverged"
    assert np.isnan(rec.f[-1])
    assert np.linalg.norm(rec.z[-1]) > 1e6


def test_trajectories_deterministic(toy):
    cfg = OptimizerConfig(method="adagrad-cesp", eta=0.01, noise_sigma=0.05, seed=9, max_iters=400)
    a = run_trajectory(toy, [-1.0, 1.0], cfg)
    b = run_trajectory(toy, [-1.0, 1.0], cfg)
    for name in ("t", "z", "f", "grad_norm_sq", "lambda_x", "lambda_y", "curv_norm"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_cesp_and_gda_trajectories_identical_on_quadratic():
    q = quadratic_saddle([[2.0, 0.3], [0.3, 1.0]], [[1.5]], [[0.5], [-1.0]])
    a = run_trajectory(q, [1.0, -2.0, 0.5], OptimizerConfig(method="cesp", eta=0.05, noise_sigma=0.01, seed=2, max_iters=300))
    b = run_trajectory(q, [1.0, -2.0, 0.5], OptimizerConfig(method="gda", eta=0.05, noise_sigma=0.01, seed=2, max_iters=300))
    np.testing.assert_array_equal(a.z, b.z)


def test_power_curvature_trajectory_matches_dense(toy_rho1):
    cfg = OptimizerConfig(method="cesp", eta=1e-3, max_iters=300)
    a = run_trajectory(toy_rho1, [-3.0, -1.0], cfg)
    b = run_trajectory(toy_rho1, [-3.0, -1.0], cfg.replace(curvature_method="power"))
    np.testing.assert_allclose(a.z, b.z, atol=1e-9)


def test_decrease_and_increase_per_step():
    toy = toy_problem()
    c = toy.constants
    cfg = OptimizerConfig(method="cesp", eta=decrease_step_bound(c))
    state = OptimizerState.initial(toy, [-3.0, -1.0])
    for _ in range(300):
        z = state.z.copy()
        gx, gy = toy.split(toy.grad(z))
        curv = extreme_curvature(toy, z)
        state, _ = step(toy, state, cfg)
        x1, y1 = toy.split(state.z)
        x0, y0 = toy.split(z)
        f0 = toy.value(z)
        lx, ly = min(curv.lambda_x, 0.0), max(curv.lambda_y, 0.0)
        assert toy.value(np.r_[x1, y0]) <= f0 - cfg.eta / 2 * gx @ gx + lx**3 / (24 * c.rho_x**2) + 1e-8
        assert toy.value(np.r_[x0, y1]) >= f0 + cfg.eta / 2 * gy @ gy + ly**3 / (24 * c.rho_y**2) - 1e-8


def test_config_validation():
    for bad in (dict(method="sgd"), dict(eta=0), dict(grad_tol=0), dict(noise_sigma=-1),
                dict(curvature_method="lanczos"), dict(spectrum_stride=0), dict(max_iters=-1)):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)
