from __future__ import annotations


class SimulationError(RuntimeError):
    """
    Base class for failures inside a solver, sampler or fit.
    """


class ConvergenceError(SimulationError):
    pass


class StepInstabilityError(SimulationError):
    pass


class DimensionOverflowError(SimulationError):
    pass


class SamplingStallError(SimulationError):
    pass


class ProjectionError(SimulationError):
    """
    Initial state does not fit the truncated mode basis.
    """


class FitConvergenceError(SimulationError):
    pass


class QuadratureError(SimulationError):
    pass


class ConfigError(ValueError):
    """
    Invalid experiment configuration; `key` names the offending entry.
    """

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key
