import numpy as np
import pytest

from cesp.analysis import GridSpec, classify_point
from cesp.basin import UNRESOLVED, basin_raster, cell_seed
from cesp.dynamics import OptimizerConfig
from cesp.problems import quadratic_saddle, robust_mlp_problem, toy_problem

from conftest import Z0, Z1, Z2

ATTRACTORS = [Z0, Z1, Z2]
GRID9 = GridSpec.square(-4, 4, 9)


@pytest.fixture(scope="module")
def toy():
    return toy_problem()


def test_standard_start_cell_labels(toy):
    gda = basin_raster(toy, OptimizerConfig(method="gda", eta=1e-3), GRID9, ATTRACTORS)
    cesp = basin_raster(toy, OptimizerConfig(method="cesp", eta=1e-3), GRID9, ATTRACTORS)
    assert gda.label_at(-3, -1) == 0
    assert cesp.label_at(-3, -1) == 1
    assert gda.labels.shape == (9, 9)


def test_cesp_full_raster_never_reaches_undesired_points(toy):
    r = basin_raster(toy, OptimizerConfig(method="cesp", eta=1e-3, max_iters=200_000),
                     GridSpec.square(-4, 4, 161), ATTRACTORS)
    assert r.count(0) == 0 and r.count(2) == 0
    assert r.count(1) + r.count(UNRESOLVED) == 161 * 161
    for label in set(np.unique(r.labels)) - {UNRESOLVED}:
        assert classify_point(toy, r.attractors[label]).verdict == "locally_optimal_saddle"


@pytest.mark.parametrize("method", ["gda", "cesp"])
def test_vectorised_path_matches_per_cell_runs(toy, method):
    cfg = OptimizerConfig(method=method, eta=1e-3)
    grid = GridSpec.square(-4, 4, 5)
    a = basin_raster(toy, cfg, grid, ATTRACTORS, vectorize=True)
    b = basin_raster(toy, cfg, grid, ATTRACTORS, vectorize=False)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.final_z, b.final_z)


def test_noisy_raster_is_deterministic(toy):
    cfg = OptimizerConfig(method="gda", eta=1e-3, noise_sigma=0.01, seed=5, max_iters=2000)
    grid = GridSpec.square(-4, 4, 3)
    a = basin_raster(toy, cfg, grid, ATTRACTORS)
    b = basin_raster(toy, cfg, grid, ATTRACTORS)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.final_z, b.final_z)


def test_cell_seeds_differ():
    seeds = {cell_seed(0, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert cell_seed(1, 0) != cell_seed(0, 0)


def test_unresolved_cells(toy):
    r = basin_raster(toy, OptimizerConfig(eta=1e-3, max_iters=5), GridSpec.square(-4, 4, 3), ATTRACTORS)
    assert r.count(UNRESOLVED) == 8  # only the origin cell starts at an attractor
    assert r.label_at(0, 0) == 0


def test_divergent_cells_unresolved():
    q = quadratic_saddle([[1.0]], [[1.0]], [[0.0]])
    with pytest.warns(RuntimeWarning):
        r = basin_raster(q, OptimizerConfig(eta=3.0, max_iters=500), GridSpec.square(-1, 1, 3), [[0.0, 0.0]])
    assert r.count(UNRESOLVED) == 8
    assert np.all(np.isnan(np.delete(r.final_z, 4, axis=0)))


def test_argument_validation(toy):
    with pytest.raises(ValueError):
        basin_raster(toy, OptimizerConfig(), GRID9, [Z0, Z0 + 0.01], match_radius=0.01)
    p = robust_mlp_problem(seed=0, n_samples=4, n_hidden=1)
    with pytest.raises(ValueError):
        basin_raster(p, OptimizerConfig(), GRID9, [np.zeros(p.n)])
