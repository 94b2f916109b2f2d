"""
Exact two-species configuration interaction at small bath size (N_B <= 4, N_I = 1).

The bath is expanded over bosonic occupation configurations of d_bath fixed
modes, the impurity over d_imp modes; amplitudes form a (bath configs) x
(impurity modes) matrix whose singular values give the Schmidt spectrum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from math import comb
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .condensate import coherent_impurity, trap_potential
from .errors import ConvergenceError, DimensionOverflowError, ProjectionError
from .grid import Grid1D, integrate, momentum_matrix
from .mixture import MixtureParams

logger = logging.getLogger(__name__)

MAX_CI_DIMENSION = 10 ** 6
ORTHONORMALITY_TOLERANCE = 1e-8
DENSE_LIMIT = 64
MIN_STEP_FRACTION = 1e-8


def _compositions(n: int, d: int) -> Iterator[Tuple[int, ...]]:
    if d == 1:
        yield (n,)
        return
    for k in range(n, -1, -1):
        for rest in _compositions(n - k, d - 1):
            yield (k,) + rest


@dataclass(frozen=True)
class FockSpace:
    """
    Bosonic occupation basis: every tuple of d occupations summing to N.
    """
    n_particles: int
    n_modes:     int

    def __post_init__(self) -> None:
        if self.n_particles < 0 or self.n_modes < 1:
            raise ValueError(f"invalid Fock space ({self.n_particles} particles, {self.n_modes} modes)")

    @cached_property
    def configs(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(_compositions(self.n_particles, self.n_modes))

    @cached_property
    def index(self) -> Dict[Tuple[int, ...], int]:
        return {occ: i for i, occ in enumerate(self.configs)}

    @property
    def dimension(self) -> int:
        return comb(self.n_particles + self.n_modes - 1, self.n_modes - 1)

    @cached_property
    def lowered(self) -> "FockSpace":
        return FockSpace(self.n_particles - 1, self.n_modes)

    @cached_property
    def lowering(self) -> Tuple[sp.csr_matrix, ...]:
        """
        b_i as sparse maps from this space (N) to the lowered one (N - 1).
        """
        if self.n_particles == 0:
            raise ValueError("cannot lower the vacuum")
        target = self.lowered.index
        ops = []
        for mode in range(self.n_modes):
            rows, cols, vals = [], [], []
            for col, occ in enumerate(self.configs):
                if occ[mode] == 0:
                    continue
                new = occ[:mode] + (occ[mode] - 1,) + occ[mode + 1:]
                rows.append(target[new])
                cols.append(col)
                vals.append(np.sqrt(occ[mode]))
            ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(target), len(self.configs))))
        return tuple(ops)

    @cached_property
    def hopping(self) -> Tuple[Tuple[sp.csr_matrix, ...], ...]:
        """
        E_ij = b_i^dagger b_j within this space.
        """
        low = self.lowering
        return tuple(tuple((low[i].T @ low[j]).tocsr() for j in range(self.n_modes)) for i in range(self.n_modes))


def harmonic_modes(grid: Grid1D, mass: float, omega: float, count: int) -> np.ndarray:
    """
    Lowest `count` oscillator eigenfunctions sampled on the grid, by the stable
    Hermite-function recurrence.
    """
    xi = np.sqrt(mass * omega) * grid.x
    modes = np.empty((count, grid.n_points))
    modes[0] = (mass * omega / np.pi) ** 0.25 * np.exp(-0.5 * xi ** 2)
    if count > 1:
        modes[1] = np.sqrt(2.0) * xi * modes[0]
    for n in range(1, count - 1):
        modes[n + 1] = np.sqrt(2.0 / (n + 1)) * xi * modes[n] - np.sqrt(n / (n + 1)) * modes[n - 1]
    return modes


def _one_body_matrix(modes: np.ndarray, grid: Grid1D, mass: float, omega: float) -> np.ndarray:
    c = grid.forward(modes)
    kinetic = (c * (grid.wavenumbers ** 2 / (2.0 * mass))) @ c.T
    potential = (modes * trap_potential(grid, mass, omega)) @ modes.T * grid.spacing
    return kinetic + potential


@dataclass(frozen=True, eq=False)
class ModeBasis:
    grid:          Grid1D
    bath_modes:    np.ndarray
    imp_modes:     np.ndarray
    bath_one_body: np.ndarray
    imp_one_body:  np.ndarray

    def __post_init__(self) -> None:
        for name, modes in (("bath", self.bath_modes), ("impurity", self.imp_modes)):
            overlap = modes @ modes.T * self.grid.spacing
            error = np.max(np.abs(overlap - np.eye(len(modes))))
            if error > ORTHONORMALITY_TOLERANCE:
                raise ValueError(f"{name} modes are not orthonormal on the grid (max deviation {error:.3g})")

    @property
    def d_bath(self) -> int:
        return len(self.bath_modes)

    @property
    def d_imp(self) -> int:
        return len(self.imp_modes)

    @classmethod
    def harmonic(cls, grid: Grid1D, params: MixtureParams, d_bath: int, d_imp: int) -> "ModeBasis":
        w = params.omega
        return cls(
            grid,
            harmonic_modes(grid, params.mass_bath, w, d_bath),
            harmonic_modes(grid, params.mass_imp, w, d_imp),
            np.diag((np.arange(d_bath) + 0.5) * w),
            np.diag((np.arange(d_imp) + 0.5) * w),
        )

    @classmethod
    def from_modes(
        cls, grid: Grid1D, bath_modes: np.ndarray, imp_modes: np.ndarray, params: MixtureParams
    ) -> "ModeBasis":
        bath_modes = np.atleast_2d(np.asarray(bath_modes, dtype=float))
        imp_modes = np.atleast_2d(np.asarray(imp_modes, dtype=float))
        return cls(
            grid,
            bath_modes,
            imp_modes,
            _one_body_matrix(bath_modes, grid, params.mass_bath, params.omega),
            _one_body_matrix(imp_modes, grid, params.mass_imp, params.omega),
        )

    @cached_property
    def imp_momentum(self) -> np.ndarray:
        return momentum_matrix(self.imp_modes, self.grid)

    def contact_integrals(self, first: np.ndarray, second: np.ndarray) -> np.ndarray:
        """
        U_ijkl = integral f_i f_j s_k s_l dx by grid quadrature.
        """
        return np.einsum("ix,jx,kx,lx->ijkl", first, first, second, second, optimize=True) * self.grid.spacing


@dataclass(frozen=True, eq=False)
class CorrelatedState:
    basis:      ModeBasis
    fock:       FockSpace
    amplitudes: np.ndarray
    time:       float = 0.0

    def __post_init__(self) -> None:
        expected = (self.fock.dimension, self.basis.d_imp)
        if self.amplitudes.shape != expected:
            raise ValueError(f"amplitude tensor has shape {self.amplitudes.shape}, expected {expected}")

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    def with_vector(self, vector: np.ndarray, time: float) -> "CorrelatedState":
        return CorrelatedState(self.basis, self.fock, vector.reshape(self.amplitudes.shape), time)


@dataclass(frozen=True)
class SchmidtSpectrum:
    lambdas: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.diff(self.lambdas) > 1e-15):
            raise ValueError("Schmidt coefficients must be non-increasing")


@dataclass(frozen=True, eq=False)
class HamiltonianParts:
    bath:     sp.csr_matrix
    impurity: sp.csr_matrix
    coupling: sp.csr_matrix  # interspecies contact term per unit g_BI


@dataclass(frozen=True, eq=False)
class CIHamiltonian:
    matrix: sp.csr_matrix
    parts:  HamiltonianParts
    basis:  ModeBasis
    fock:   FockSpace
    g_bi:   float

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def _bath_hamiltonian(fock: FockSpace, basis: ModeBasis, g_bb: float) -> sp.csr_matrix:
    d = basis.d_bath
    hop = fock.hopping
    h = basis.bath_one_body
    matrix = sp.csr_matrix((fock.dimension, fock.dimension))
    for i in range(d):
        for j in range(d):
            if h[i, j] != 0.0:
                matrix = matrix + h[i, j] * hop[i][j]
    if fock.n_particles < 2 or g_bb == 0.0:
        return matrix
    u = basis.contact_integrals(basis.bath_modes, basis.bath_modes)
    first, second = fock.lowering, fock.lowered.lowering
    # b_k b_l as maps N -> N - 2; b_i^dagger b_j^dagger b_k b_l = (b_j b_i)^T (b_k b_l)
    pairs = [[(second[k] @ first[l]).tocsr() for l in range(d)] for k in range(d)]
    for i in range(d):
        for j in range(d):
            combined = sum(
                (u[i, j, k, l] * pairs[k][l] for k in range(d) for l in range(d) if abs(u[i, j, k, l]) > 1e-14),
                sp.csr_matrix(pairs[0][0].shape),
            )
            matrix = matrix + 0.5 * g_bb * (pairs[j][i].T @ combined)
    return matrix.tocsr()


def bath_hamiltonian(params: MixtureParams, basis: ModeBasis) -> Tuple[sp.csr_matrix, FockSpace]:
    fock = FockSpace(params.n_bath, basis.d_bath)
    return _bath_hamiltonian(fock, basis, params.g_bb), fock


def build_hamiltonian(params: MixtureParams, basis: ModeBasis, stage: str = "post") -> CIHamiltonian:
    """
    Project the two-species contact Hamiltonian onto the CI basis. Amplitude
    index ordering is (bath config, impurity mode), row-major.
    """
    fock = FockSpace(params.n_bath, basis.d_bath)
    dimension = fock.dimension * basis.d_imp
    if dimension > MAX_CI_DIMENSION:
        raise DimensionOverflowError(
            f"dimension-overflow: CI dimension {dimension} exceeds {MAX_CI_DIMENSION} "
            f"(N_B={params.n_bath}, d_bath={basis.d_bath}, d_imp={basis.d_imp})"
        )
    eye_bath = sp.identity(fock.dimension, format="csr")
    eye_imp = sp.identity(basis.d_imp, format="csr")
    bath = sp.kron(_bath_hamiltonian(fock, basis, params.g_bb), eye_imp, format="csr")
    impurity = sp.kron(eye_bath, sp.csr_matrix(basis.imp_one_body), format="csr")

    w = basis.contact_integrals(basis.bath_modes, basis.imp_modes)
    coupling = sp.csr_matrix((dimension, dimension))
    for i in range(basis.d_bath):
        for j in range(basis.d_bath):
            block = w[i, j]
            if np.max(np.abs(block)) > 1e-14:
                coupling = coupling + sp.kron(fock.hopping[i][j], sp.csr_matrix(block), format="csr")
    coupling = coupling.tocsr()

    g_bi = params.coupling(stage)
    parts = HamiltonianParts(bath, impurity, coupling)
    matrix = (bath + impurity + g_bi * coupling).tocsr()
    logger.debug("CI Hamiltonian: dimension %d, %d nonzeros, g_BI=%g", dimension, matrix.nnz, g_bi)
    return CIHamiltonian(matrix, parts, basis, fock, g_bi)


def _lowest_eigenpair(matrix: sp.spmatrix, tolerance: float = 1e-8) -> Tuple[float, np.ndarray]:
    if matrix.shape[0] <= DENSE_LIMIT:
        values, vectors = eigh(matrix.toarray())
        energy, vector = values[0], vectors[:, 0]
    else:
        try:
            values, vectors = eigsh(matrix, k=1, which="SA", tol=1e-12, maxiter=100 * matrix.shape[0])
        except ArpackNoConvergence as exc:
            raise ConvergenceError("eigensolver non-convergence in CI ground state") from exc
        energy, vector = values[0], vectors[:, 0]
    residual = np.linalg.norm(matrix @ vector - energy * vector)
    if residual > tolerance:
        raise ConvergenceError(f"eigensolver non-convergence: residual {residual:.3g}")
    # deterministic global phase
    vector = vector * np.sign(vector[np.argmax(np.abs(vector))])
    return float(energy), vector.astype(complex)


def ground_state(hamiltonian: CIHamiltonian) -> CorrelatedState:
    energy, vector = _lowest_eigenpair(hamiltonian.matrix)
    logger.info("CI ground state: E=%.12g (dimension %d)", energy, hamiltonian.dimension)
    amplitudes = vector.reshape(hamiltonian.fock.dimension, hamiltonian.basis.d_imp)
    return CorrelatedState(hamiltonian.basis, hamiltonian.fock, amplitudes)


def project_impurity(params: MixtureParams, basis: ModeBasis, min_captured: float = 0.999) -> np.ndarray:
    """
    Coefficients of the coherent impurity in the truncated impurity modes.
    """
    phi = coherent_impurity(params, basis.grid).values
    coefficients = basis.imp_modes @ phi * basis.grid.spacing
    captured = float(np.sum(np.abs(coefficients) ** 2))
    if captured < min_captured:
        raise ProjectionError(
            f"coherent impurity captured norm {captured:.5f} < {min_captured} with d_imp={basis.d_imp}; "
            "increase d_imp or lower |u0|, |x0|"
        )
    return coefficients / np.sqrt(captured)


def prepare_quench_state(params: MixtureParams, basis: ModeBasis, min_captured: float = 0.999) -> CorrelatedState:
    """
    Product of the interacting bath ground state (g_BI = 0) and the projected
    coherent impurity.
    """
    matrix, fock = bath_hamiltonian(params, basis)
    energy, bath_vector = _lowest_eigenpair(matrix)
    logger.info("CI bath ground state: E_B=%.12g (%d configurations)", energy, fock.dimension)
    impurity = project_impurity(params, basis, min_captured)
    return CorrelatedState(basis, fock, np.outer(bath_vector, impurity))


def _lanczos_step(matrix: sp.spmatrix, vector: np.ndarray, tau: float, krylov_dim: int) -> Tuple[np.ndarray, float]:
    beta0 = np.linalg.norm(vector)
    basis = np.zeros((krylov_dim, vector.size), dtype=complex)
    basis[0] = vector / beta0
    alphas: List[float] = []
    betas: List[float] = []
    tail = 0.0
    for j in range(krylov_dim):
        w = matrix @ basis[j]
        alpha = float(np.real(np.vdot(basis[j], w)))
        alphas.append(alpha)
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        beta = float(np.linalg.norm(w))
        if beta < 1e-13 * max(1.0, abs(alpha)):
            tail = 0.0
            break
        if j == krylov_dim - 1:
            tail = beta
            break
        betas.append(beta)
        basis[j + 1] = w / beta
    k = len(alphas)
    if k == 1:
        theta, vectors = np.array(alphas), np.ones((1, 1))
    else:
        theta, vectors = eigh_tridiagonal(np.array(alphas), np.array(betas[: k - 1]))
    coefficients = vectors @ (np.exp(-1j * tau * theta) * vectors[0])
    error = tail * abs(coefficients[-1])
    return beta0 * (basis[:k].T @ coefficients), error


def lanczos_expm_multiply(
    matrix:     sp.spmatrix,
    vector:     np.ndarray,
    tau:        float,
    krylov_dim: int = 30,
    tolerance:  float = 1e-12,
) -> np.ndarray:
    """
    exp(-i tau H) v for Hermitian H by short-iterative Lanczos. A substep
    whose Krylov residual estimate exceeds `tolerance` is halved and retried;
    after an accepted substep the step doubles again, up to `tau`.
    """
    krylov_dim = max(1, min(krylov_dim, vector.size))
    min_step = MIN_STEP_FRACTION * abs(tau)
    done, step = 0.0, tau
    while tau - done > 1e-14 * abs(tau):
        step = min(step, tau - done)
        result, error = _lanczos_step(matrix, vector, step, krylov_dim)
        while error > tolerance:
            step *= 0.5
            if step < min_step:
                raise ConvergenceError(
                    f"Lanczos step below {min_step:.3g} with residual estimate {error:.3g} > {tolerance:.3g}"
                )
            result, error = _lanczos_step(matrix, vector, step, krylov_dim)
        vector = result
        done += step
        step = min(2.0 * step, tau)
    return vector


def energy_expectation(state: CorrelatedState, matrix: sp.spmatrix) -> float:
    v = state.vector
    return float(np.real(np.vdot(v, matrix @ v)))


def evolve(
    state:        CorrelatedState,
    hamiltonian:  CIHamiltonian,
    dt:           float,
    t_final:      float,
    sample_every: int = 1,
    krylov_dim:   int = 30,
) -> List[CorrelatedState]:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_steps = int(round(t_final / dt))
    vector = state.vector.astype(complex)
    snapshots = [state]
    for step in range(1, n_steps + 1):
        vector = lanczos_expm_multiply(hamiltonian.matrix, vector, dt, krylov_dim)
        if step % sample_every == 0 or step == n_steps:
            snapshots.append(state.with_vector(vector.copy(), state.time + step * dt))
    logger.info("CI evolution: %d steps of dt=%g (g_BI=%g)", n_steps, dt, hamiltonian.g_bi)
    return snapshots


def schmidt_spectrum(state: CorrelatedState) -> SchmidtSpectrum:
    """
    Squared singular values of the (bath configs) x (impurity modes) tensor,
    padded with zeros to rank d_imp.
    """
    singular = np.linalg.svd(state.amplitudes, compute_uv=False)
    lambdas = np.zeros(state.basis.d_imp)
    lambdas[: len(singular)] = np.sort(singular ** 2)[::-1]
    return SchmidtSpectrum(lambdas)


def vn_entropy(spectrum: SchmidtSpectrum) -> float:
    lam = spectrum.lambdas[spectrum.lambdas > 0]
    return float(-np.sum(lam * np.log(lam)))


def bath_one_body_matrix(state: CorrelatedState) -> np.ndarray:
    """
    rho_ij = <b_i^dagger b_j> in the bath mode basis.
    """
    if state.fock.n_particles == 0:
        return np.zeros((state.basis.d_bath, state.basis.d_bath), dtype=complex)
    lowered = [op @ state.amplitudes for op in state.fock.lowering]
    d = state.basis.d_bath
    return np.array([[np.vdot(lowered[i], lowered[j]) for j in range(d)] for i in range(d)])


def impurity_one_body_matrix(state: CorrelatedState) -> np.ndarray:
    """
    rho_ab = <a^dagger b>, the impurity reduced density matrix.
    """
    return state.amplitudes.conj().T @ state.amplitudes


def natural_populations(state: CorrelatedState, species: str) -> np.ndarray:
    """
    Eigenvalues of the species one-body density matrix divided by its particle
    number, sorted non-increasing. 1 - n_1 measures the species depletion.
    """
    if species == "bath":
        matrix, count = bath_one_body_matrix(state), max(state.fock.n_particles, 1)
    elif species == "impurity":
        matrix, count = impurity_one_body_matrix(state), 1
    else:
        raise ValueError(f"unknown species {species!r}")
    return np.sort(np.linalg.eigvalsh(matrix))[::-1] / count


def depletion(state: CorrelatedState, species: str = "bath") -> float:
    return float(1.0 - natural_populations(state, species)[0])


def rotate_basis(state: CorrelatedState, bath_unitary: np.ndarray, imp_unitary: np.ndarray) -> CorrelatedState:
    """
    Apply independent unitaries on the bath-configuration and impurity-mode indices.
    """
    return CorrelatedState(state.basis, state.fock, bath_unitary @ state.amplitudes @ imp_unitary.T, state.time)


def ci_dimension(n_bath: int, d_bath: int, d_imp: int) -> int:
    return comb(n_bath + d_bath - 1, d_bath - 1) * d_imp


def check_orthonormal(modes: Sequence[np.ndarray], grid: Grid1D) -> float:
    stack = np.asarray(modes)
    return float(np.max(np.abs(stack @ stack.T * grid.spacing - np.eye(len(stack)))))
