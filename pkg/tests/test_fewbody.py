from __future__ import annotations

import numpy as np
import pytest
from scipy.linalg import expm

from polaronsim import fewbody
from polaronsim.errors import ConvergenceError, DimensionOverflowError, ProjectionError, SimulationError
from polaronsim.fewbody import (
    CorrelatedState,
    FockSpace,
    ModeBasis,
    bath_hamiltonian,
    build_hamiltonian,
    ci_dimension,
    depletion,
    energy_expectation,
    evolve,
    ground_state,
    harmonic_modes,
    impurity_one_body_matrix,
    lanczos_expm_multiply,
    natural_populations,
    prepare_quench_state,
    rotate_basis,
    schmidt_spectrum,
    vn_entropy,
)
from polaronsim.grid import Grid1D
from polaronsim.mixture import MixtureParams
from polaronsim.observables import mean_position, one_body_density


def test_fock_space_counts():
    assert FockSpace(2, 3).dimension == len(FockSpace(2, 3).configs) == 6
    assert FockSpace(4, 8).dimension == 330
    assert all(sum(occ) == 4 for occ in FockSpace(4, 5).configs)
    assert FockSpace(0, 3).configs == ((0, 0, 0),)
    assert ci_dimension(4, 4, 8) == 35 * 8


def test_hopping_diagonal_counts_occupations():
    fock = FockSpace(3, 3)
    for i in range(3):
        diagonal = fock.hopping[i][i].diagonal()
        assert np.allclose(diagonal, [occ[i] for occ in fock.configs])
    number = sum(fock.hopping[i][i] for i in range(3))
    assert np.allclose(number.toarray(), 3 * np.eye(fock.dimension))


def test_harmonic_basis_one_body_matches_from_modes(ci_grid, ci_params):
    harmonic = ModeBasis.harmonic(ci_grid, ci_params, 4, 4)
    numeric = ModeBasis.from_modes(ci_grid, harmonic.bath_modes, harmonic.imp_modes, ci_params)
    assert np.allclose(numeric.bath_one_body, harmonic.bath_one_body, atol=1e-6)
    assert np.allclose(numeric.imp_one_body, harmonic.imp_one_body, atol=1e-6)


def test_non_orthonormal_modes_are_rejected(ci_grid, ci_params):
    modes = harmonic_modes(ci_grid, 1.0, 0.5, 2)
    modes[1] = modes[1] + 0.1 * modes[0]
    with pytest.raises(ValueError, match="orthonormal"):
        ModeBasis.from_modes(ci_grid, modes, modes[:1], ci_params)


def test_hamiltonian_is_hermitian(ci_params, ci_basis):
    h = build_hamiltonian(ci_params, ci_basis).matrix
    assert abs(h - h.conj().T).max() < 1e-12


def test_non_interacting_ground_energy(ci_grid):
    params = MixtureParams(n_bath=2, omega=0.5, g_bb=0.0, g_bi_post=0.0)
    basis = ModeBasis.harmonic(ci_grid, params, 3, 3)
    state = ground_state(build_hamiltonian(params, basis))
    assert energy_expectation(state, build_hamiltonian(params, basis).matrix) == pytest.approx(0.75, abs=1e-10)


def test_single_bath_particle_matches_product_basis(ci_grid):
    params = MixtureParams(n_bath=1, omega=0.5, g_bb=1.0, g_bi_post=0.7)
    basis = ModeBasis.harmonic(ci_grid, params, 3, 2)
    h = build_hamiltonian(params, basis).matrix.toarray()
    w = basis.contact_integrals(basis.bath_modes, basis.imp_modes)
    expected = (np.kron(basis.bath_one_body, np.eye(2)) + np.kron(np.eye(3), basis.imp_one_body)
                + 0.7 * w.transpose(0, 2, 1, 3).reshape(6, 6))
    assert np.allclose(h, expected, atol=1e-12)


def test_two_boson_bath_matches_first_quantisation(ci_grid):
    params = MixtureParams(n_bath=2, omega=0.5, g_bb=1.3)
    basis = ModeBasis.harmonic(ci_grid, params, 4, 1)
    matrix, _ = bath_hamiltonian(params, basis)
    second = np.linalg.eigvalsh(matrix.toarray())[0]

    d = basis.d_bath
    h = basis.bath_one_body
    u = basis.contact_integrals(basis.bath_modes, basis.bath_modes)
    first = np.kron(h, np.eye(d)) + np.kron(np.eye(d), h) + 1.3 * u.reshape(d * d, d * d)
    assert second == pytest.approx(np.linalg.eigvalsh(first)[0], abs=1e-10)


def test_dimension_overflow(ci_grid):
    params = MixtureParams(n_bath=4, omega=0.5)
    basis = ModeBasis.harmonic(Grid1D(-30.0, 30.0, 400), params, 40, 10)
    with pytest.raises(DimensionOverflowError, match="dimension-overflow"):
        build_hamiltonian(params, basis)


def test_lanczos_matches_dense_exponential():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20))
    h = 0.5 * (a + a.conj().T)
    v = rng.normal(size=20) + 1j * rng.normal(size=20)
    v /= np.linalg.norm(v)
    exact = expm(-1j * 0.7 * h) @ v
    assert np.allclose(lanczos_expm_multiply(h, v, 0.7), exact, atol=1e-10)


def test_quench_state_is_a_product(ci_params, ci_basis):
    state = prepare_quench_state(ci_params, ci_basis)
    assert state.norm == pytest.approx(1.0, abs=1e-12)
    spectrum = schmidt_spectrum(state)
    assert len(spectrum.lambdas) == ci_basis.d_imp
    assert vn_entropy(spectrum) == pytest.approx(0.0, abs=1e-10)
    assert natural_populations(state, "impurity")[0] == pytest.approx(1.0, abs=1e-10)


def test_fast_impurity_is_poorly_captured(ci_grid):
    params = MixtureParams(n_bath=2, omega=0.5, u0=-3.0)
    with pytest.raises(ProjectionError, match="captured norm"):
        prepare_quench_state(params, ModeBasis.harmonic(ci_grid, params, 3, 2))


def test_quench_entangles_and_conserves(ci_params, ci_basis):
    hamiltonian = build_hamiltonian(ci_params, ci_basis)
    initial = prepare_quench_state(ci_params, ci_basis)
    snapshots = evolve(initial, hamiltonian, dt=0.05, t_final=2.0, sample_every=10)
    assert [s.time for s in snapshots] == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    e0 = energy_expectation(initial, hamiltonian.matrix)
    for snapshot in snapshots[1:]:
        assert snapshot.norm == pytest.approx(1.0, abs=1e-8)
        assert energy_expectation(snapshot, hamiltonian.matrix) == pytest.approx(e0, abs=1e-8)
        entropy = vn_entropy(schmidt_spectrum(snapshot))
        assert 0.0 < entropy <= np.log(ci_basis.d_imp)


def test_schmidt_spectrum_of_bell_state(ci_grid):
    params = MixtureParams(n_bath=1, omega=0.5)
    basis = ModeBasis.harmonic(ci_grid, params, 2, 2)
    state = CorrelatedState(basis, FockSpace(1, 2), np.eye(2, dtype=complex) / np.sqrt(2))
    spectrum = schmidt_spectrum(state)
    assert np.allclose(spectrum.lambdas, [0.5, 0.5])
    assert vn_entropy(spectrum) == pytest.approx(np.log(2.0))
    assert np.allclose(natural_populations(state, "bath"), [0.5, 0.5])
    assert depletion(state) == pytest.approx(0.5)
    assert depletion(state, "impurity") == pytest.approx(0.5)


def test_local_unitaries_keep_the_schmidt_spectrum(ci_params, ci_basis):
    hamiltonian = build_hamiltonian(ci_params, ci_basis)
    state = evolve(prepare_quench_state(ci_params, ci_basis), hamiltonian, 0.05, 1.0)[-1]
    rng = np.random.default_rng(1)
    q_bath, _ = np.linalg.qr(rng.normal(size=(state.fock.dimension,) * 2))
    q_imp, _ = np.linalg.qr(rng.normal(size=(ci_basis.d_imp,) * 2))
    rotated = rotate_basis(state, q_bath, q_imp)
    assert np.allclose(schmidt_spectrum(rotated).lambdas, schmidt_spectrum(state).lambdas, atol=1e-12)


def test_bath_populations_sum_to_one(ci_params, ci_basis):
    state = ground_state(build_hamiltonian(ci_params, ci_basis))
    populations = natural_populations(state, "bath")
    assert populations.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(np.diff(populations) <= 1e-12)
    with pytest.raises(ValueError):
        natural_populations(state, "photon")


def test_projection_failure_is_a_solver_error():
    assert issubclass(ProjectionError, SimulationError)
    assert not issubclass(ProjectionError, ValueError)


def test_lanczos_gives_up_instead_of_accepting_a_bad_step():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(12, 12))
    h = a + a.T
    v = rng.normal(size=12).astype(complex)
    with pytest.raises(ConvergenceError, match="Lanczos step"):
        lanczos_expm_multiply(h, v / np.linalg.norm(v), 1.0, krylov_dim=1)


def test_lanczos_step_grows_back_after_a_halving(monkeypatch):
    steps = []

    def step(matrix, vector, tau, krylov_dim):
        steps.append(tau)
        return vector, (1.0 if len(steps) <= 2 else 0.0)

    monkeypatch.setattr(fewbody, "_lanczos_step", step)
    lanczos_expm_multiply(np.eye(3), np.ones(3, dtype=complex), 1.0)
    assert steps == [1.0, 0.5, 0.25, 0.5, 0.25]


def test_hamiltonian_eigenstate_is_stationary(ci_params, ci_basis):
    hamiltonian = build_hamiltonian(ci_params, ci_basis)
    ground = ground_state(hamiltonian)
    snapshots = evolve(ground, hamiltonian, dt=0.05, t_final=2.0, sample_every=10)
    e0 = energy_expectation(ground, hamiltonian.matrix)
    for snapshot in snapshots[1:]:
        assert abs(np.vdot(ground.vector, snapshot.vector)) == pytest.approx(1.0, abs=1e-8)
        assert energy_expectation(snapshot, hamiltonian.matrix) == pytest.approx(e0, abs=1e-8)
        assert mean_position(snapshot) == pytest.approx(mean_position(ground), abs=1e-8)
        assert np.allclose(one_body_density(snapshot, "bath"), one_body_density(ground, "bath"), atol=1e-8)
        assert np.allclose(schmidt_spectrum(snapshot).lambdas, schmidt_spectrum(ground).lambdas, atol=1e-8)


def test_schmidt_spectrum_matches_impurity_density_matrix(ci_grid):
    params = MixtureParams(n_bath=2, omega=0.5, g_bb=1.0, g_bi_post=0.5, u0=-0.1)
    basis = ModeBasis.harmonic(ci_grid, params, 3, 4)
    state = evolve(prepare_quench_state(params, basis), build_hamiltonian(params, basis), 0.05, 20.0, 400)[-1]
    assert state.time == pytest.approx(20.0)
    eigenvalues = np.sort(np.linalg.eigvalsh(impurity_one_body_matrix(state)))[::-1]
    assert np.allclose(schmidt_spectrum(state).lambdas, eigenvalues, atol=1e-10)


def test_stronger_quench_entangles_faster(ci_params, ci_basis):
    initial = prepare_quench_state(ci_params, ci_basis)
    entropies = {}
    for g_bi in (0.2, 1.0):
        params = ci_params.with_changes(g_bi_post=g_bi)
        snapshots = evolve(initial, build_hamiltonian(params, ci_basis), 0.05, 1.0, sample_every=5)
        entropies[g_bi] = np.array([vn_entropy(schmidt_spectrum(s)) for s in snapshots])
    for series in entropies.values():
        assert series[0] == pytest.approx(0.0, abs=1e-10)
        assert np.all(series <= np.log(ci_basis.d_imp) + 1e-12)
    assert np.all(entropies[1.0][1:] > entropies[0.2][1:])
