"""Gaussian RBF feature basis over the (speed, gap) grid.

Unit-height isotropic-per-axis RBFs on a coarse sub-grid of centers; the
reward is a linear combination of these activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import StateGrid


@dataclass(frozen=True)
class FeatureBasis:
    centers_v: tuple
    centers_g: tuple
    sigma_v: float
    sigma_g: float

    def __post_init__(self):
        if self.n_features < 2:
            raise ValueError("need at least 2 features")
        if self.sigma_v <= 0 or self.sigma_g <= 0:
            raise ValueError("feature widths must be positive")

    @property
    def n_features(self) -> int:
        return len(self.centers_v) * len(self.centers_g)

    def activations(self, v, g) -> np.ndarray:
        """Feature vector(s) at (v, g); shape broadcast(v, g).shape + (n_features,)."""
        v = np.asarray(v, dtype=float)[..., None]
        g = np.asarray(g, dtype=float)[..., None]
        cv = np.asarray(self.centers_v)
        cg = np.asarray(self.centers_g)
        av = np.exp(-((v - cv) ** 2) / (2.0 * self.sigma_v**2))
        ag = np.exp(-((g - cg) ** 2) / (2.0 * self.sigma_g**2))
        return (av[..., :, None] * ag[..., None, :]).reshape(*av.shape[:-1], -1)


def default_basis(grid: StateGrid, v_spacing: float = 2.0, g_spacing: float = 3.0,
                  sigma_v: float = 1.2, sigma_g: float = 2.5) -> FeatureBasis:
    """Centers every v_spacing x g_spacing across the grid.

    Widths sit below the spacing: wider kernels smear the reward ridge across
    speed columns enough to corrupt the per-speed gap argmax.
    """
    cv = np.arange(grid.v_min, grid.v_max + 1e-9, v_spacing)
    cg = np.arange(grid.g_min, grid.g_max + 1e-9, g_spacing)
    return FeatureBasis(tuple(cv), tuple(cg), sigma_v, sigma_g)


def featurize(cell: int, basis: FeatureBasis, grid: StateGrid) -> np.ndarray:
    """RBF activations at the cell center."""
    v, g = grid.cell_center(cell)
    return basis.activations(v, g)


def feature_matrix(basis: FeatureBasis, grid: StateGrid) -> np.ndarray:
    """(n_cells, n_features) activations at every cell center.

    Raises if any cell is in a dead zone (all activations <= 1e-6).
    """
    vv, gg = np.meshgrid(grid.v_centers(), grid.g_centers(), indexing="ij")
    phi = basis.activations(vv.ravel(), gg.ravel())
    if np.max(phi, axis=1).min() <= 1e-6:
        raise ValueError("feature basis leaves dead zones on this grid")
    return phi
