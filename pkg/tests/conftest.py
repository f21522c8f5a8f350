import hypothesis
import numpy as np
import pytest

from pacc.mdp import ActionSet, NoiseSpec, StateGrid

hypothesis.settings.register_profile("fast", max_examples=25, deadline=None)
hypothesis.settings.load_profile("fast")


@pytest.fixture
def grid():
    return StateGrid()


@pytest.fixture
def small_grid():
    return StateGrid(v_min=0, v_max=4, v_step=1, g_min=0, g_max=8, g_step=2)


@pytest.fixture
def actions():
    return ActionSet()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
