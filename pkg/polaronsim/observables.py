"""
Diagnostics computed from solver snapshots of either kind: one-body densities,
impurity mean position and momentum, species energy components, effective
potentials and their eigenstates, the density decomposition fit and the
dominant oscillation frequency of a trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import eigh
from scipy.optimize import curve_fit

from .condensate import MeanFieldState, trap_potential
from .fewbody import (
    CIHamiltonian,
    CorrelatedState,
    bath_one_body_matrix,
    energy_expectation,
    impurity_one_body_matrix,
)
from .grid import Grid1D, integrate, kinetic_energy, kinetic_matrix, momentum_expectation
from .mixture import MixtureParams

logger = logging.getLogger(__name__)

State = Union[MeanFieldState, CorrelatedState]

SPECIES = ("bath", "impurity")
POTENTIAL_KINDS = ("time-averaged-repulsive", "instantaneous-bath", "instantaneous-impurity")
MIN_AVERAGING_TIME = 100.0
MAX_EIGENSTATES = 20


@dataclass(frozen=True, eq=False)
class TimeSeries:
    times:  np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values)
        if len(times) != len(values):
            raise ValueError(f"time series has {len(times)} times but {len(values)} values")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time series times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) else 0.0


@dataclass(frozen=True, eq=False)
class EffectivePotential:
    grid:   Grid1D
    values: np.ndarray
    kind:   str

    def __post_init__(self) -> None:
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.kind} potential has non-finite values")


class EnergyComponents(NamedTuple):
    bath:     float
    impurity: float
    coupling: float

    @property
    def total(self) -> float:
        return self.bath + self.impurity + self.coupling


class DecompositionFit(NamedTuple):
    amplitude:         float
    residual:          float
    residual_at_zero:  float


def _check_species(species: str) -> None:
    if species not in SPECIES:
        raise ValueError(f"unknown species {species!r}, expected one of {SPECIES}")


def _grid_of(state: State) -> Grid1D:
    return state.grid if isinstance(state, MeanFieldState) else state.basis.grid


def one_body_density(state: State, species: str) -> np.ndarray:
    """
    Diagonal of the species one-body density matrix on the grid; integrates
    to the species particle number.
    """
    _check_species(species)
    if isinstance(state, MeanFieldState):
        if species == "bath":
            return state.params.n_bath * state.bath.density
        return state.params.n_imp * state.impurity.density
    if species == "bath":
        rho, modes = bath_one_body_matrix(state), state.basis.bath_modes
    else:
        rho, modes = impurity_one_body_matrix(state), state.basis.imp_modes
    return np.real(np.einsum("ij,ix,jx->x", rho, modes, modes))


def mean_position(state: State) -> float:
    grid = _grid_of(state)
    rho = one_body_density(state, "impurity")
    return integrate(grid.x * rho, grid) / integrate(rho, grid)


def mean_momentum(state: State) -> float:
    if isinstance(state, MeanFieldState):
        return momentum_expectation(state.impurity.values, state.grid)
    rho = impurity_one_body_matrix(state)
    return float(np.real(np.sum(rho * state.basis.imp_momentum)))


def _mean_field_components(state: MeanFieldState) -> Tuple[float, float, float]:
    p, grid = state.params, state.grid
    rho_b, rho_i = state.bath.density, state.impurity.density
    bath = p.n_bath * (kinetic_energy(state.bath.values, grid, p.mass_bath)
                       + integrate(trap_potential(grid, p.mass_bath, p.omega) * rho_b, grid))
    bath += 0.5 * p.g_bb * p.n_bath * (p.n_bath - 1) * integrate(rho_b ** 2, grid)
    impurity = (kinetic_energy(state.impurity.values, grid, p.mass_imp)
                + integrate(trap_potential(grid, p.mass_imp, p.omega) * rho_i, grid))
    coupling = p.g_bi_post * p.n_bath * p.n_imp * integrate(rho_b * rho_i, grid)
    return bath, impurity, coupling


def energy_components(
    state:       State,
    reference:   Optional[State],
    hamiltonian: Optional[CIHamiltonian] = None,
) -> EnergyComponents:
    """
    (E_B, E_I, E_BI) under the post-quench Hamiltonian; E_B has the value of
    `reference` (the t = 0 state) subtracted. Correlated states need the
    Hamiltonian whose parts define the components.
    """
    if reference is None:
        raise ValueError("missing-reference: bath energy needs the t = 0 state")
    if isinstance(state, MeanFieldState):
        bath, impurity, coupling = _mean_field_components(state)
        bath_zero = _mean_field_components(reference)[0]
    else:
        if hamiltonian is None:
            raise ValueError("correlated energy components need the CI Hamiltonian")
        parts = hamiltonian.parts
        bath = energy_expectation(state, parts.bath)
        bath_zero = energy_expectation(reference, parts.bath)
        impurity = energy_expectation(state, parts.impurity)
        coupling = hamiltonian.g_bi * energy_expectation(state, parts.coupling)
    return EnergyComponents(bath - bath_zero, impurity, coupling)


def time_averaged_effective_potential(
    density_series: TimeSeries,
    grid:           Grid1D,
    params:         MixtureParams,
    averaging_time: float = 150.0,
) -> EffectivePotential:
    """
    Bare impurity trap plus g_BI times the trapezoidal time average of the
    bath density over [t_0, t_0 + averaging_time].
    """
    if averaging_time <= 0:
        raise ValueError(f"averaging time must be positive, got {averaging_time}")
    if density_series.duration < averaging_time * (1 - 1e-9):
        raise ValueError(
            f"density series covers {density_series.duration:.6g}, shorter than the averaging time {averaging_time}"
        )
    if averaging_time < MIN_AVERAGING_TIME:
        logger.warning("time average over T=%g < %g may keep transient distortions", averaging_time,
                       MIN_AVERAGING_TIME)
    start = density_series.times[0]
    window = density_series.times <= start + averaging_time * (1 + 1e-12)
    times = density_series.times[window]
    densities = np.asarray(density_series.values[window], dtype=float)
    if len(times) == 1:
        average = densities[0]
    else:
        average = trapezoid(densities, times, axis=0) / (times[-1] - times[0])
    values = trap_potential(grid, params.mass_imp, params.omega) + params.g_bi_post * average
    return EffectivePotential(grid, values, "time-averaged-repulsive")


def instantaneous_effective_potentials(
    state: State, params: MixtureParams
) -> Tuple[EffectivePotential, EffectivePotential]:
    """
    V_B = V - |g_BI| rho_I and V_I = V - |g_BI| rho_B at the state's time.
    """
    grid = _grid_of(state)
    g = abs(params.g_bi_post)
    bath = trap_potential(grid, params.mass_bath, params.omega) - g * one_body_density(state, "impurity")
    impurity = trap_potential(grid, params.mass_imp, params.omega) - g * one_body_density(state, "bath")
    return EffectivePotential(grid, bath, "instantaneous-bath"), EffectivePotential(grid, impurity,
                                                                                     "instantaneous-impurity")


def density_decomposition_fit(
    bath_density:         np.ndarray,
    initial_bath_density: np.ndarray,
    impurity_density:     np.ndarray,
    grid:                 Grid1D,
    n_bath:               int,
) -> DecompositionFit:
    """
    Least-squares A in rho_B(t) ~ (1 - A) rho_B(0) + A N_B rho_I(t), clipped to [0, 1].
    """
    bath = np.asarray(bath_density, dtype=float)
    initial = np.asarray(initial_bath_density, dtype=float)
    impurity = np.asarray(impurity_density, dtype=float)
    if not bath.shape == initial.shape == impurity.shape == (grid.n_points,):
        raise ValueError("densities must share the grid")
    impurity = impurity / integrate(impurity, grid)
    target = bath - initial
    direction = n_bath * impurity - initial
    denominator = float(np.dot(direction, direction))
    amplitude = 0.0 if denominator == 0.0 else float(np.clip(np.dot(direction, target) / denominator, 0.0, 1.0))
    residual = float(np.sqrt(integrate((target - amplitude * direction) ** 2, grid)))
    residual_at_zero = float(np.sqrt(integrate(target ** 2, grid)))
    return DecompositionFit(amplitude, residual, residual_at_zero)


def effective_potential_eigenstates(
    potential: EffectivePotential, mass: float, n_states: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lowest `n_states` eigenpairs of -(1/2m) d^2/dx^2 + V(x) on the grid.
    Wavefunctions are rows normalised so that sum |psi|^2 * spacing = 1.
    """
    if not 1 <= n_states <= MAX_EIGENSTATES:
        raise ValueError(f"n_states must lie in [1, {MAX_EIGENSTATES}], got {n_states}")
    grid = potential.grid
    hamiltonian = kinetic_matrix(grid, mass) + np.diag(potential.values)
    energies, vectors = eigh(hamiltonian, subset_by_index=[0, n_states - 1])
    wavefunctions = vectors.T / np.sqrt(grid.spacing)
    # fix sign so each state starts positive at its first significant lobe
    for row in wavefunctions:
        lead = np.argmax(np.abs(row) > 1e-3 * np.max(np.abs(row)))
        if row[lead] < 0:
            row *= -1
    return energies, wavefunctions


def peak_density(density: np.ndarray) -> float:
    return float(np.max(density))


def thomas_fermi_radius(density: np.ndarray, grid: Grid1D, fraction: float = 0.01) -> float:
    """
    Half distance between the outermost points where the density falls to
    `fraction` of its peak, linearly interpolated between grid points.
    """
    density = np.asarray(density, dtype=float)
    threshold = fraction * np.max(density)
    inside = np.flatnonzero(density >= threshold)
    left, right = inside[0], inside[-1]
    x = grid.x

    def crossing(i: int, j: int) -> float:
        if not 0 <= j < grid.n_points:
            return x[i]
        return x[i] + (threshold - density[i]) * (x[j] - x[i]) / (density[j] - density[i])

    return 0.5 * (crossing(right, right + 1) - crossing(left, left - 1))


def _sinusoid(t: np.ndarray, omega: float, a: float, b: float, c: float) -> np.ndarray:
    return a * np.cos(omega * t) + b * np.sin(omega * t) + c


def dominant_frequency(series: TimeSeries, pad_factor: int = 8) -> float:
    """
    Angular frequency of the strongest oscillation: Hann-windowed DFT of the
    mean-subtracted series with quadratic peak interpolation, refined by a
    least-squares sinusoid fit started from the spectral estimate.
    """
    times = series.times
    values = np.asarray(series.values, dtype=float)
    if len(times) < 4:
        raise ValueError("need at least 4 samples for a frequency estimate")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-6):
        raise ValueError("dominant_frequency needs uniformly sampled times")
    dt = steps[0]
    signal = (values - values.mean()) * np.hanning(len(values))
    n_fft = pad_factor * len(values)
    power = np.abs(np.fft.rfft(signal, n=n_fft)) ** 2
    k = int(np.argmax(power[1:])) + 1
    shift = 0.0
    if 1 <= k < len(power) - 1:
        a, b, c = power[k - 1], power[k], power[k + 1]
        denominator = a - 2 * b + c
        if denominator != 0:
            shift = 0.5 * (a - c) / denominator
    estimate = 2 * np.pi * (k + shift) / (n_fft * dt)

    t = times - times[0]
    try:
        popt, _ = curve_fit(_sinusoid, t, values, p0=[estimate, values.std(), values.std(), values.mean()],
                            maxfev=5000)
    except RuntimeError:
        logger.debug("sinusoid refinement failed; keeping spectral estimate %.6g", estimate)
        return float(estimate)
    refined = abs(popt[0])
    if abs(refined - estimate) > 0.5 * estimate:
        return float(estimate)
    return float(refined)
