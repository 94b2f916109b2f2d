from __future__ import annotations

import numpy as np
import pytest

from polaronsim.condensate import MeanFieldState, coherent_impurity, ground_state_bath, prepare_state, propagate
from polaronsim.fewbody import ModeBasis
from polaronsim.grid import Grid1D
from polaronsim.mixture import MixtureParams
from polaronsim.quasiparticle import FrohlichParams, bec_scales


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="Also run the full-size physics acceptance runs.")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-grid acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def small_grid() -> Grid1D:
    return Grid1D(-20.0, 20.0, 256)


@pytest.fixture(scope="session")
def small_params() -> MixtureParams:
    return MixtureParams(n_bath=10, omega=0.5, g_bb=1.0, g_bi_post=0.5, u0=-0.87)


@pytest.fixture(scope="session")
def small_state(small_params, small_grid):
    return prepare_state(small_params, small_grid, tolerance=1e-9)


@pytest.fixture(scope="session")
def ci_grid() -> Grid1D:
    return Grid1D(-20.0, 20.0, 200)


@pytest.fixture(scope="session")
def ci_params() -> MixtureParams:
    return MixtureParams(n_bath=2, omega=0.5, g_bb=1.0, g_bi_post=0.5, u0=-0.1)


@pytest.fixture(scope="session")
def ci_basis(ci_grid, ci_params) -> ModeBasis:
    return ModeBasis.harmonic(ci_grid, ci_params, 3, 4)


@pytest.fixture(scope="session")
def reference_ground():
    """
    N_B = 100 bath ground state on the full (-80, 80, 1000) grid.
    """
    return ground_state_bath(MixtureParams(), Grid1D(-80.0, 80.0, 1000))


@pytest.fixture(scope="session")
def reference_quench(reference_ground):
    """
    Full-grid mean-field quench to t = 150 with u0 = -u_c/2, sampled every
    0.5; one propagation per coupling, shared by every test that asks.
    """
    runs = {}

    def run(g_bi: float):
        if g_bi not in runs:
            grid = reference_ground.grid
            n0 = float(np.interp(0.0, grid.x, 100 * reference_ground.density))
            _, u_c = bec_scales(FrohlichParams(n0))
            params = MixtureParams(g_bi_post=g_bi, u0=-0.5 * u_c)
            state = MeanFieldState(reference_ground, coherent_impurity(params, grid), params)
            runs[g_bi] = propagate(state, dt=1e-3, t_final=150.0, sample_every=500)
        return runs[g_bi]

    return run
