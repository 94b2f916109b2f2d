"""
In-situ single-shot absorption imaging of a simulated mixture.

Each shot draws particle positions one at a time from the current one-body
density (rejection sampling), projects the many-body state onto the drawn
position, and finally renders all positions through a Gaussian point
spread function. Shots are keyed by (seed, shot index) and run in parallel.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .condensate import MeanFieldState
from .errors import SamplingStallError
from .fewbody import CorrelatedState, FockSpace
from .grid import Grid1D, integrate

logger = logging.getLogger(__name__)

State = Union[MeanFieldState, CorrelatedState]

MAX_STALLED_PROPOSALS = 10 ** 6
ORDERS = ("bath-first", "impurity-first")
SPECIES = ("bath", "impurity")


@dataclass(frozen=True)
class PointSpreadFunction:
    width: float = 1.0

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError(f"PSF width must be positive, got {self.width}")

    def kernel(self, points: np.ndarray, centers: np.ndarray) -> np.ndarray:
        offsets = np.subtract.outer(np.asarray(points), np.asarray(centers))
        return np.exp(-0.5 * (offsets / self.width) ** 2) / (np.sqrt(2.0 * np.pi) * self.width)

    def render(self, grid: Grid1D, positions: np.ndarray) -> np.ndarray:
        positions = np.atleast_1d(np.asarray(positions, dtype=float))
        if positions.size == 0:
            return np.zeros(grid.n_points)
        return self.kernel(grid.x, positions).sum(axis=1)


@dataclass(frozen=True, eq=False)
class ShotImage:
    grid:      Grid1D
    intensity: np.ndarray
    species:   str
    seed:      int
    positions: np.ndarray
    psf_width: float = 1.0

    def __post_init__(self) -> None:
        if self.species not in SPECIES:
            raise ValueError(f"unknown species {self.species!r}")
        if np.any(self.intensity < 0):
            raise ValueError("image intensity must be non-negative")

    @property
    def centroid(self) -> float:
        """
        Image centre of mass, the per-shot impurity position X_k.
        """
        weight = integrate(self.intensity, self.grid)
        return integrate(self.grid.x * self.intensity, self.grid) / weight


@dataclass(frozen=True, eq=False)
class Shot:
    index:    int
    bath:     ShotImage
    impurity: ShotImage

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate([self.bath.positions, self.impurity.positions])


@dataclass(frozen=True)
class OrderingReport:
    n_shots:        int
    l1_difference:  float
    standard_error: float
    consistent:     Optional[bool]  # None when statistics are insufficient


def shot_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


def _padded(grid: Grid1D, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    xs = np.concatenate([[grid.x_min], grid.x, [grid.x_max]])
    ys = np.concatenate([[0.0], values, [0.0]])
    return xs, ys


def _evaluate(grid: Grid1D, values: np.ndarray, x: float) -> np.ndarray:
    """
    Linear interpolation of one or several grid functions at x, zero on the walls.
    """
    values = np.atleast_2d(values)
    out = np.empty(len(values))
    for i, row in enumerate(values):
        xs, ys = _padded(grid, row)
        out[i] = np.interp(x, xs, ys)
    return out


def sample_positions(
    density:       np.ndarray,
    grid:          Grid1D,
    count:         int,
    rng:           np.random.Generator,
    max_proposals: int = MAX_STALLED_PROPOSALS,
) -> np.ndarray:
    """
    Rejection sampling from a non-negative grid density: a uniform proposal
    x' over the box is kept when rho(x') > z, z uniform on [0, max rho].
    """
    density = np.clip(np.asarray(density, dtype=float), 0.0, None)
    peak = float(np.max(density)) if density.size else 0.0
    if peak <= 0.0 or not np.isfinite(peak):
        raise SamplingStallError("rejection sampling stalled: density has no positive finite maximum")
    xs, ys = _padded(grid, density)
    accepted: List[np.ndarray] = []
    needed = count
    stalled = 0
    batch = max(64, 4 * count)
    while needed > 0:
        proposals = rng.uniform(grid.x_min, grid.x_max, size=batch)
        levels = rng.uniform(0.0, peak, size=batch)
        hits = proposals[np.interp(proposals, xs, ys) > levels]
        if hits.size == 0:
            stalled += batch
            if stalled >= max_proposals:
                raise SamplingStallError(f"rejection sampling stalled after {stalled} proposals")
            continue
        stalled = 0
        take = hits[:needed]
        accepted.append(take)
        needed -= take.size
    return np.concatenate(accepted) if accepted else np.zeros(0)


def _bath_density(fock: FockSpace, amplitudes: np.ndarray, modes: np.ndarray) -> np.ndarray:
    lowered = [op @ amplitudes for op in fock.lowering]
    d = len(modes)
    rho = np.array([[np.vdot(lowered[i], lowered[j]) for j in range(d)] for i in range(d)])
    return np.real(np.einsum("ij,ix,jx->x", rho, modes, modes))


def _impurity_density(amplitudes: np.ndarray, modes: np.ndarray) -> np.ndarray:
    rho = amplitudes.conj().T @ amplitudes
    return np.real(np.einsum("ab,ax,bx->x", rho, modes, modes))


def _normalize(amplitudes: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(amplitudes)
    if not norm > 0:
        raise SamplingStallError("projected state vanished after a position draw")
    return amplitudes / norm


def _sample_correlated(state: CorrelatedState, rng: np.random.Generator, order: str) -> Tuple[np.ndarray, float]:
    grid = state.basis.grid
    bath_modes, imp_modes = state.basis.bath_modes, state.basis.imp_modes
    fock = state.fock
    amplitudes = state.amplitudes / np.linalg.norm(state.amplitudes)
    bath_positions: List[float] = []
    impurity_position = None

    if order == "impurity-first":
        impurity_position = float(sample_positions(_impurity_density(amplitudes, imp_modes), grid, 1, rng)[0])
        weights = _evaluate(grid, imp_modes, impurity_position)
        amplitudes = _normalize((amplitudes @ weights)[:, None])

    while fock.n_particles > 0:
        x = float(sample_positions(_bath_density(fock, amplitudes, bath_modes), grid, 1, rng)[0])
        weights = _evaluate(grid, bath_modes, x)
        projected = sum(w * (op @ amplitudes) for w, op in zip(weights, fock.lowering))
        amplitudes = _normalize(projected)
        fock = fock.lowered
        bath_positions.append(x)

    if impurity_position is None:
        impurity_position = float(sample_positions(_impurity_density(amplitudes, imp_modes), grid, 1, rng)[0])
    return np.array(bath_positions), impurity_position


def sample_shot(
    state: State,
    psf:   PointSpreadFunction,
    seed:  int,
    index: int = 0,
    order: str = "bath-first",
) -> Shot:
    """
    One simulated absorption picture of both species. Mean-field states
    factorise, so bath positions are independent draws from rho_B / N_B;
    correlated states are projected after every draw.
    """
    if order not in ORDERS:
        raise ValueError(f"unknown imaging order {order!r}, expected one of {ORDERS}")
    rng = shot_rng(seed, index, ORDERS.index(order))
    if isinstance(state, MeanFieldState):
        grid = state.grid
        bath = sample_positions(state.bath.density, grid, state.params.n_bath, rng)
        impurity = float(sample_positions(state.impurity.density, grid, 1, rng)[0])
    else:
        grid = state.basis.grid
        bath, impurity = _sample_correlated(state, rng, order)
    imp_positions = np.array([impurity])
    return Shot(
        index,
        ShotImage(grid, psf.render(grid, bath), "bath", seed, bath, psf.width),
        ShotImage(grid, psf.render(grid, imp_positions), "impurity", seed, imp_positions, psf.width),
    )


def generate_shots(
    state:   State,
    psf:     PointSpreadFunction,
    seed:    int,
    n_shots: int,
    threads: int = 1,
    order:   str = "bath-first",
) -> List[Shot]:
    if n_shots < 1:
        raise ValueError(f"n_shots must be at least 1, got {n_shots}")
    if threads <= 1:
        shots = [sample_shot(state, psf, seed, i, order) for i in range(n_shots)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            shots = list(pool.map(lambda i: sample_shot(state, psf, seed, i, order), range(n_shots)))
    logger.info("generated %d shots (seed %d, %s, w_PSF=%g)", n_shots, seed, order, psf.width)
    return shots


def average_images(images: Sequence[ShotImage]) -> np.ndarray:
    if not images:
        raise ValueError("cannot average an empty set of shots")
    first = images[0]
    for image in images[1:]:
        if image.species != first.species:
            raise ValueError(f"species mismatch: {image.species} vs {first.species}")
        if image.grid != first.grid:
            raise ValueError("grid mismatch between shots")
    return np.mean([image.intensity for image in images], axis=0)


def expected_average_image(density: np.ndarray, grid: Grid1D, psf: PointSpreadFunction) -> np.ndarray:
    """
    PSF-convolved one-body density, the large-shot-number limit of the average.
    """
    return psf.kernel(grid.x, grid.x) @ np.asarray(density, dtype=float) * grid.spacing


def comoving_average(bath_images: Sequence[ShotImage], impurity_positions: Sequence[float]) -> np.ndarray:
    """
    Mean of bath shots shifted by their same-shot impurity position, as a
    function of the relative coordinate x_r on the image grid.
    """
    if len(bath_images) != len(impurity_positions):
        raise ValueError(
            f"unpaired shots: {len(bath_images)} bath images, {len(impurity_positions)} impurity positions"
        )
    if not bath_images:
        raise ValueError("cannot average an empty set of shots")
    grid = bath_images[0].grid
    shifted = []
    for image, center in zip(bath_images, impurity_positions):
        if image.grid != grid:
            raise ValueError("grid mismatch between shots")
        if image.positions.size:
            shifted.append(PointSpreadFunction(image.psf_width).render(grid, image.positions - center))
        else:
            xs, ys = _padded(grid, image.intensity)
            shifted.append(np.interp(grid.x + center, xs, ys))
    return np.mean(shifted, axis=0)


def comoving_from_shots(shots: Sequence[Shot]) -> np.ndarray:
    return comoving_average([s.bath for s in shots], [s.impurity.centroid for s in shots])


def shuffled_baseline(shots: Sequence[Shot], seed: int) -> np.ndarray:
    """
    Co-moving average with impurity positions permuted across shots, which
    removes same-shot correlations and leaves the product-state expectation.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(len(ORDERS),)))
    positions = np.array([s.impurity.centroid for s in shots])
    return comoving_average([s.bath for s in shots], positions[rng.permutation(len(positions))])


def image_ordering_average_invariance_test(
    state:   CorrelatedState,
    n_shots: int,
    psf:     Optional[PointSpreadFunction] = None,
    seed:    int = 0,
    threads: int = 1,
) -> OrderingReport:
    """
    Compare averaged bath images from bath-first and impurity-first imaging.
    The difference is consistent when its L1 norm stays below three times
    the integrated Monte Carlo standard error.
    """
    if not isinstance(state, CorrelatedState):
        raise ValueError("ordering test needs a correlated state")
    psf = psf or PointSpreadFunction()
    grid = state.basis.grid
    stacks = []
    for order in ORDERS:
        shots = generate_shots(state, psf, seed, n_shots, threads, order)
        stacks.append(np.array([s.bath.intensity for s in shots]))
    difference = stacks[0].mean(axis=0) - stacks[1].mean(axis=0)
    l1 = integrate(np.abs(difference), grid)
    if n_shots < 2:
        logger.info("ordering test with %d shot: insufficient statistics", n_shots)
        return OrderingReport(n_shots, l1, float("nan"), None)
    sigma = np.sqrt(sum(stack.var(axis=0, ddof=1) for stack in stacks) / n_shots)
    error = integrate(sigma, grid)
    return OrderingReport(n_shots, l1, error, bool(l1 < 3.0 * error))
