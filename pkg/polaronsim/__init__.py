"""
Quench dynamics of a single impurity in a harmonically trapped 1D Bose gas:
mean-field and exact few-body solvers, observables, quasiparticle fits and
simulated single-shot imaging.
"""

from .config import ExperimentConfig, parse_config
from .errors import ConfigError, SimulationError
from .grid import Grid1D, build_grid
from .mixture import MixtureParams

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Grid1D",
    "MixtureParams",
    "SimulationError",
    "build_grid",
    "parse_config",
]

__version__ = "0.1.0"
