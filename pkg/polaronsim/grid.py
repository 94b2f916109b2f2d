"""
Hard-wall spatial grid with a sine-basis (type-I DST) spectral representation.

Coefficients are expansion amplitudes in the orthonormal box eigenfunctions
s_n(x) = sqrt(2/L) sin(k_n (x - x_min)), k_n = pi n / L, so that
sum |values|^2 * spacing == sum |coefficients|^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import NDArray
from scipy import fft as sfft

MIN_POINTS = 8

ArrayC = NDArray[np.complex128]
ArrayR = NDArray[np.float64]


def _dst1(values: np.ndarray) -> np.ndarray:
    # DST-I with norm="ortho" is orthogonal and its own inverse.
    if np.iscomplexobj(values):
        return (sfft.dst(values.real, type=1, norm="ortho", axis=-1)
                + 1j * sfft.dst(values.imag, type=1, norm="ortho", axis=-1))
    return sfft.dst(values, type=1, norm="ortho", axis=-1)


@dataclass(frozen=True)
class Grid1D:
    x_min:    float
    x_max:    float
    n_points: int

    def __post_init__(self) -> None:
        if not self.x_min < self.x_max:
            raise ValueError(f"invalid-extent: x_min={self.x_min} must be below x_max={self.x_max}")
        if self.n_points < MIN_POINTS:
            raise ValueError(f"invalid-count: n_points={self.n_points} must be at least {MIN_POINTS}")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def spacing(self) -> float:
        return self.length / (self.n_points + 1)

    @cached_property
    def x(self) -> ArrayR:
        j = np.arange(1, self.n_points + 1)
        return self.x_min + j * self.spacing

    @cached_property
    def wavenumbers(self) -> ArrayR:
        return np.pi * np.arange(1, self.n_points + 1) / self.length

    @cached_property
    def derivative_matrix(self) -> ArrayR:
        """
        D_mn = <s_m | d/dx | s_n>, nonzero only for m + n odd. Real antisymmetric.
        """
        k = self.wavenumbers
        n = np.arange(1, self.n_points + 1)
        odd = ((n[:, None] + n[None, :]) % 2) == 1
        denom = np.where(odd, k[:, None] ** 2 - k[None, :] ** 2, 1.0)
        return np.where(odd, 4.0 / self.length * np.outer(k, k) / denom, 0.0)

    def forward(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[-1] != self.n_points:
            raise ValueError(f"size mismatch: expected {self.n_points} samples, got {values.shape[-1]}")
        return np.sqrt(self.spacing) * _dst1(values)

    def inverse(self, coefficients: np.ndarray) -> np.ndarray:
        coefficients = np.asarray(coefficients)
        if coefficients.shape[-1] != self.n_points:
            raise ValueError(
                f"size mismatch: expected {self.n_points} coefficients, got {coefficients.shape[-1]}"
            )
        return _dst1(coefficients) / np.sqrt(self.spacing)

    def apply_multiplier(self, values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
        """
        Multiply in the sine basis and return to the grid.
        """
        return self.inverse(multiplier * self.forward(values))

    def contains(self, x: float) -> bool:
        return self.x_min < x < self.x_max


@dataclass(frozen=True)
class ComplexField:
    grid:   Grid1D
    values: ArrayC

    def __post_init__(self) -> None:
        if np.shape(self.values) != (self.grid.n_points,):
            raise ValueError(
                f"size mismatch: field has shape {np.shape(self.values)}, grid has {self.grid.n_points} points"
            )

    @property
    def density(self) -> ArrayR:
        return np.abs(self.values) ** 2

    @property
    def norm(self) -> float:
        return integrate(self.density, self.grid)

    def normalized(self) -> "ComplexField":
        return ComplexField(self.grid, self.values / np.sqrt(self.norm))


def build_grid(x_min: float, x_max: float, n_points: int) -> Grid1D:
    return Grid1D(float(x_min), float(x_max), int(n_points))


def sine_transform(field: ComplexField) -> ArrayC:
    return field.grid.forward(field.values)


def inverse_sine_transform(coefficients: np.ndarray, grid: Grid1D) -> ComplexField:
    return ComplexField(grid, np.asarray(grid.inverse(coefficients), dtype=complex))


def kinetic_multiplier(grid: Grid1D, mass: float, factor: complex) -> np.ndarray:
    """
    exp(factor * k^2 / 2m) on the sine wavenumbers.
    """
    if mass <= 0:
        raise ValueError(f"non-positive mass: {mass}")
    return np.exp(factor * grid.wavenumbers ** 2 / (2.0 * mass))


def apply_kinetic(field: ComplexField, mass: float, factor: complex) -> ComplexField:
    multiplier = kinetic_multiplier(field.grid, mass, factor)
    values = field.grid.apply_multiplier(np.asarray(field.values, dtype=complex), multiplier)
    return ComplexField(field.grid, values)


def integrate(samples: np.ndarray, grid: Grid1D) -> float:
    """
    Riemann sum at the grid spacing; boundary values vanish on the walls.
    """
    samples = np.asarray(samples)
    if samples.shape[-1] != grid.n_points:
        raise ValueError(f"size mismatch: expected {grid.n_points} samples, got {samples.shape[-1]}")
    total = np.sum(samples, axis=-1) * grid.spacing
    return float(total) if samples.ndim == 1 else total


def kinetic_energy(values: np.ndarray, grid: Grid1D, mass: float) -> float:
    coefficients = grid.forward(values)
    return float(np.sum(np.abs(coefficients) ** 2 * grid.wavenumbers ** 2) / (2.0 * mass))


def momentum_expectation(values: np.ndarray, grid: Grid1D) -> float:
    """
    <-i d/dx> evaluated exactly in the sine basis.
    """
    c = grid.forward(np.asarray(values, dtype=complex))
    return float(np.real(-1j * np.vdot(c, grid.derivative_matrix @ c)))


def momentum_matrix(modes: np.ndarray, grid: Grid1D) -> ArrayC:
    """
    P_ab = <m_a | -i d/dx | m_b> for a stack of modes shaped (d, n_points).
    """
    c = grid.forward(np.asarray(modes, dtype=complex))
    return -1j * (c.conj() @ grid.derivative_matrix @ c.T)


def kinetic_matrix(grid: Grid1D, mass: float) -> ArrayR:
    """
    Dense sine-DVR kinetic operator -(1/2m) d^2/dx^2 in the grid representation.
    """
    if mass <= 0:
        raise ValueError(f"non-positive mass: {mass}")
    n = grid.n_points
    j = np.arange(1, n + 1)
    s = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(j, j) / (n + 1))
    return (s * (grid.wavenumbers ** 2 / (2.0 * mass))) @ s
