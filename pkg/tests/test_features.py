import numpy as np
import pytest

from pacc.features import FeatureBasis, default_basis, feature_matrix, featurize
from pacc.mdp import StateGrid


def test_peak_activation_at_center(grid):
    basis = default_basis(grid)
    # cell exactly at a feature center -> that entry is 1.0
    cell = grid.cell(grid.v_bin(9.0), grid.g_bin(36.0))
    assert grid.cell_center(cell) == (9.0, 36.0)
    phi = featurize(cell, basis, grid)
    k = basis.centers_v.index(9.0) * len(basis.centers_g) + basis.centers_g.index(36.0)
    assert phi[k] == 1.0
    assert phi.max() == 1.0


def test_far_cells_below_dead_zone_threshold():
    basis = FeatureBasis(centers_v=(0.0,), centers_g=(0.0, 10.0), sigma_v=1.0,
                         sigma_g=1.0)
    act = basis.activations(10.0, 50.0)  # >= 6 sigma away from every center
    assert np.all(act < 1e-6)


def test_dead_zone_rejected_by_matrix_builder(grid):
    sparse = FeatureBasis(centers_v=(0.0,), centers_g=(0.0, 10.0), sigma_v=1.0,
                          sigma_g=1.0)
    with pytest.raises(ValueError):
        feature_matrix(sparse, grid)


def test_mirror_symmetry(grid):
    basis = default_basis(grid)
    k = basis.centers_v.index(15.0) * len(basis.centers_g) + basis.centers_g.index(60.0)
    left = basis.activations(13.0, 60.0)[k]
    right = basis.activations(17.0, 60.0)[k]
    assert left == pytest.approx(right, rel=1e-12)
    below = basis.activations(15.0, 52.0)[k]
    above = basis.activations(15.0, 68.0)[k]
    assert below == pytest.approx(above, rel=1e-12)


def test_matrix_rows_match_featurize(grid):
    basis = default_basis(grid)
    phi = feature_matrix(basis, grid)
    rng = np.random.default_rng(0)
    for cell in rng.integers(0, grid.n_cells, 20):
        np.testing.assert_allclose(phi[cell], featurize(int(cell), basis, grid))


def test_needs_two_features():
    with pytest.raises(ValueError):
        FeatureBasis(centers_v=(0.0,), centers_g=(0.0,), sigma_v=1.0, sigma_g=1.0)
