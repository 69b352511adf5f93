import json

import numpy as np
import pytest

from app import create_app
from config import TestingConfig
from models.density import FactorGrid, Kernels, prior_density
from models.dp import StateGrids, control_fractions, wealth_grid
from models.market import ModelParams, irra_utilities
from models.quantizer import ReturnNodeSet, build_initial_codebook

TINY_RUN = {
    'model': {'T': 3},
    'grids': {
        'factor': {'lo': -1.5, 'hi': 1.5, 'step': 0.1},
        'wealth': {'lo': 0.0, 'hi': 8.0, 'step': 1.0},
        'control_step': 0.25,
    },
    'quantizer': {
        'means': [-0.5, 0.0, 0.5],
        'stds': [0.2, 0.4],
        'schedule': {'iterations': 30},
        'prune_trials': 50,
    },
    'sim': {'n_paths': 20, 'bins': 8},
    'bounds': {'fmax_samples': 2000, 'In_max': 6},
}


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def short_params():
    return ModelParams(T=3)


@pytest.fixture
def grid():
    return FactorGrid.uniform(-1.5, 1.5, 0.05)


@pytest.fixture
def coarse_grid():
    return FactorGrid.uniform(-1.5, 1.5, 0.1)


@pytest.fixture
def kernels(params, grid):
    return Kernels(params, grid)


@pytest.fixture
def coarse_kernels(short_params, coarse_grid):
    return Kernels(short_params, coarse_grid)


@pytest.fixture
def prior(grid):
    return prior_density(grid)


@pytest.fixture
def utilities():
    return irra_utilities()


@pytest.fixture
def return_nodes(params):
    return ReturnNodeSet.equispaced(params.phi)


@pytest.fixture
def small_codebook(coarse_grid):
    return build_initial_codebook([-0.5, 0.0, 0.5], [0.2, 0.4], coarse_grid)


@pytest.fixture
def small_grids(small_codebook, return_nodes):
    fractions = control_fractions(0.25)
    return StateGrids(wealth_grid(0.0, 8.0, 1.0), small_codebook, return_nodes, fractions, fractions)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / 'tiny.json'
    path.write_text(json.dumps(TINY_RUN))
    return path


@pytest.fixture
def app(tmp_path):
    class RunTestingConfig(TestingConfig):
        OUTPUT_DIR = str(tmp_path / 'default-run')

    return create_app(RunTestingConfig)


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
