"""
Mean-field (one orbital per species) solver for the bath-impurity mixture:
imaginary-time bath ground state, coherent impurity, and Strang split-step
real-time propagation of the coupled Gross-Pitaevskii equations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConvergenceError, StepInstabilityError
from .grid import ComplexField, Grid1D, integrate, kinetic_energy, kinetic_multiplier
from .mixture import MixtureParams

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_T_FINAL = 150.0
MAX_STEP_NORM_DRIFT = 1e-6


@dataclass(frozen=True)
class MeanFieldState:
    bath:     ComplexField
    impurity: ComplexField
    params:   MixtureParams
    time:     float = 0.0

    def __post_init__(self) -> None:
        if self.bath.grid != self.impurity.grid:
            raise ValueError("bath and impurity orbitals live on different grids")

    @property
    def grid(self) -> Grid1D:
        return self.bath.grid


class ThomasFermi(NamedTuple):
    mu:      float
    radius:  float
    density: np.ndarray


def trap_potential(grid: Grid1D, mass: float, omega: float) -> np.ndarray:
    return 0.5 * mass * omega ** 2 * grid.x ** 2


def thomas_fermi_profile(params: MixtureParams, grid: Grid1D) -> ThomasFermi:
    """
    Analytic Thomas-Fermi bath: mu = (3 N g omega sqrt(m) / 4 sqrt(2))^(2/3),
    n(x) = max(0, (mu - V(x)) / g), integrating to N.
    """
    n, g, m, w = params.n_bath, params.g_bb, params.mass_bath, params.omega
    if g <= 0:
        raise ValueError(f"Thomas-Fermi profile needs g_bb > 0, got {g}")
    mu = (3.0 * n * g * w * np.sqrt(m) / (4.0 * np.sqrt(2.0))) ** (2.0 / 3.0)
    radius = np.sqrt(2.0 * mu / (m * w ** 2))
    density = np.clip(mu - trap_potential(grid, m, w), 0.0, None) / g
    return ThomasFermi(float(mu), float(radius), density)


def _harmonic_orbital(grid: Grid1D, mass: float, omega: float, center: float = 0.0) -> np.ndarray:
    return (mass * omega / np.pi) ** 0.25 * np.exp(-0.5 * mass * omega * (grid.x - center) ** 2)


def _initial_guess(params: MixtureParams, grid: Grid1D) -> np.ndarray:
    if params.g_bb * (params.n_bath - 1) <= 0:
        guess = _harmonic_orbital(grid, params.mass_bath, params.omega).astype(complex)
    else:
        tf = thomas_fermi_profile(params, grid)
        guess = np.sqrt(tf.density / params.n_bath).astype(complex)
        # heat-kernel smoothing of the sqrt edge
        guess = grid.apply_multiplier(guess, kinetic_multiplier(grid, params.mass_bath, -0.5))
    return guess / np.sqrt(integrate(np.abs(guess) ** 2, grid))


def gp_energy(phi: np.ndarray, params: MixtureParams, grid: Grid1D) -> float:
    """
    Per-particle Gross-Pitaevskii functional of a unit-norm bath orbital.
    """
    rho = np.abs(phi) ** 2
    potential = trap_potential(grid, params.mass_bath, params.omega)
    interaction = 0.5 * params.g_bb * (params.n_bath - 1) * rho ** 2
    return kinetic_energy(phi, grid, params.mass_bath) + integrate(potential * rho + interaction, grid)


def ground_state_bath(
    params:    MixtureParams,
    grid:      Grid1D,
    tolerance: float = 1e-10,
    imag_dt:   float = 0.01,
    max_steps: int = 10 ** 6,
    refine:    Sequence[float] = (1.0, 0.1),
    check_every: int = 20,
) -> ComplexField:
    """
    Imaginary-time split-step relaxation with renormalisation after every step.
    Runs one stage per entry of `refine` (dtau = imag_dt * factor); each stage
    stops once the relative energy change per unit imaginary time drops below
    `tolerance`.
    """
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    potential = trap_potential(grid, params.mass_bath, params.omega)
    g_eff = params.g_bb * (params.n_bath - 1)
    phi = _initial_guess(params, grid)
    steps = 0
    energy = gp_energy(phi, params, grid)

    for factor in refine:
        dtau = imag_dt * factor
        half = kinetic_multiplier(grid, params.mass_bath, -0.5 * dtau)
        while True:
            for _ in range(check_every):
                phi = grid.apply_multiplier(phi, half)
                phi = phi * np.exp(-dtau * (potential + g_eff * np.abs(phi) ** 2))
                phi = grid.apply_multiplier(phi, half)
                phi = phi / np.sqrt(integrate(np.abs(phi) ** 2, grid))
            steps += check_every
            previous, energy = energy, gp_energy(phi, params, grid)
            rate = abs(energy - previous) / (check_every * dtau * max(abs(energy), 1e-300))
            if rate < tolerance:
                break
            if steps >= max_steps:
                raise ConvergenceError(
                    f"no-convergence: imaginary-time relaxation exceeded {max_steps} steps "
                    f"(energy {energy:.12g}, rate {rate:.3g})"
                )
        logger.debug("imaginary-time stage dtau=%g converged after %d steps, E=%.12g", dtau, steps, energy)

    logger.info("bath ground state: E/N=%.10g after %d imaginary-time steps", energy, steps)
    return ComplexField(grid, phi)


def coherent_impurity(params: MixtureParams, grid: Grid1D) -> ComplexField:
    """
    Coherent state (m w / pi)^(1/4) exp(-m w (x - x0)^2 / 2 + i k0 (x - x0)),
    renormalised on the discrete grid.
    """
    if not grid.contains(params.x0):
        raise ValueError(f"x0={params.x0} lies outside the grid [{grid.x_min}, {grid.x_max}]")
    shift = grid.x - params.x0
    phi = _harmonic_orbital(grid, params.mass_imp, params.omega, params.x0) * np.exp(1j * params.k0 * shift)
    captured = integrate(np.abs(phi) ** 2, grid)
    if captured < 0.999:
        logger.warning("coherent impurity only %.4f inside the box; renormalising", captured)
    return ComplexField(grid, phi / np.sqrt(captured))


def prepare_state(params: MixtureParams, grid: Grid1D, **ground_kwargs) -> MeanFieldState:
    """
    Pre-quench product state: bath ground state (g_BI = 0) and coherent impurity.
    """
    return MeanFieldState(ground_state_bath(params, grid, **ground_kwargs), coherent_impurity(params, grid), params)


def mean_field_energy(state: MeanFieldState, stage: str = "post") -> float:
    """
    Total mean-field energy under the pre- or post-quench Hamiltonian.
    """
    p, grid = state.params, state.grid
    phi_b, phi_i = state.bath.values, state.impurity.values
    rho_b, rho_i = np.abs(phi_b) ** 2, np.abs(phi_i) ** 2
    bath = p.n_bath * (kinetic_energy(phi_b, grid, p.mass_bath)
                       + integrate(trap_potential(grid, p.mass_bath, p.omega) * rho_b, grid))
    bath += 0.5 * p.g_bb * p.n_bath * (p.n_bath - 1) * integrate(rho_b ** 2, grid)
    impurity = kinetic_energy(phi_i, grid, p.mass_imp) + integrate(trap_potential(grid, p.mass_imp, p.omega) * rho_i, grid)
    coupling = p.coupling(stage) * p.n_bath * p.n_imp * integrate(rho_b * rho_i, grid)
    return bath + impurity + coupling


def propagate(
    state:        MeanFieldState,
    dt:           float = DEFAULT_DT,
    t_final:      float = DEFAULT_T_FINAL,
    sample_every: int = 100,
    on_sample:    Optional[Callable[[MeanFieldState], None]] = None,
) -> List[MeanFieldState]:
    """
    Post-quench real-time evolution by Strang splitting (half kinetic, full
    potential, half kinetic). Adjacent half kinetic steps between samples are
    fused. Returns snapshots at t = 0 and every `sample_every` steps, always
    including the final time.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if sample_every < 1:
        raise ValueError(f"sample_every must be at least 1, got {sample_every}")
    p, grid = state.params, state.grid
    n_steps = int(round(t_final / dt))
    g_bi = p.g_bi_post

    trap_b = trap_potential(grid, p.mass_bath, p.omega)
    trap_i = trap_potential(grid, p.mass_imp, p.omega)
    half_b = kinetic_multiplier(grid, p.mass_bath, -0.5j * dt)
    half_i = kinetic_multiplier(grid, p.mass_imp, -0.5j * dt)
    full_b, full_i = half_b ** 2, half_i ** 2

    phi_b = np.array(state.bath.values, dtype=complex)
    phi_i = np.array(state.impurity.values, dtype=complex)
    norm_b = integrate(np.abs(phi_b) ** 2, grid)
    norm_i = integrate(np.abs(phi_i) ** 2, grid)

    snapshots = [state]
    if on_sample:
        on_sample(state)
    phi_b = grid.apply_multiplier(phi_b, half_b)
    phi_i = grid.apply_multiplier(phi_i, half_i)
    report_every = max(1, n_steps // 10)

    for step in range(1, n_steps + 1):
        rho_b = np.abs(phi_b) ** 2
        rho_i = np.abs(phi_i) ** 2
        phi_b = phi_b * np.exp(-1j * dt * (trap_b + p.g_bb * (p.n_bath - 1) * rho_b + g_bi * p.n_imp * rho_i))
        phi_i = phi_i * np.exp(-1j * dt * (trap_i + g_bi * p.n_bath * rho_b))

        sample = step % sample_every == 0 or step == n_steps
        phi_b = grid.apply_multiplier(phi_b, half_b if sample else full_b)
        phi_i = grid.apply_multiplier(phi_i, half_i if sample else full_i)

        new_b = integrate(np.abs(phi_b) ** 2, grid)
        new_i = integrate(np.abs(phi_i) ** 2, grid)
        if abs(new_b - norm_b) > MAX_STEP_NORM_DRIFT or abs(new_i - norm_i) > MAX_STEP_NORM_DRIFT:
            raise StepInstabilityError(
                f"step-instability at t={state.time + step * dt:.6g}: norm drift "
                f"{new_b - norm_b:.3g} (bath), {new_i - norm_i:.3g} (impurity); reduce dt={dt}"
            )
        norm_b, norm_i = new_b, new_i

        if sample:
            snapshot = MeanFieldState(
                ComplexField(grid, phi_b.copy()),
                ComplexField(grid, phi_i.copy()),
                p,
                state.time + step * dt,
            )
            snapshots.append(snapshot)
            if on_sample:
                on_sample(snapshot)
            if step < n_steps:
                phi_b = grid.apply_multiplier(phi_b, half_b)
                phi_i = grid.apply_multiplier(phi_i, half_i)
        if step % report_every == 0:
            logger.debug("propagate: step %d/%d (t=%.3f)", step, n_steps, state.time + step * dt)

    logger.info("propagated %d steps to t=%.4g (g_BI=%g), %d snapshots", n_steps, state.time + n_steps * dt,
                g_bi, len(snapshots))
    return snapshots
