from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid
from scipy.stats import kstest

from polaronsim.errors import SamplingStallError
from polaronsim.fewbody import CorrelatedState, FockSpace, ModeBasis, prepare_quench_state
from polaronsim.grid import Grid1D, integrate
from polaronsim.mixture import MixtureParams
from polaronsim.singleshot import (
    PointSpreadFunction,
    ShotImage,
    average_images,
    comoving_average,
    comoving_from_shots,
    expected_average_image,
    generate_shots,
    image_ordering_average_invariance_test,
    sample_positions,
    sample_shot,
    shot_rng,
    shuffled_baseline,
)


def _cdf(density: np.ndarray, grid: Grid1D):
    xs = np.concatenate([[grid.x_min], grid.x, [grid.x_max]])
    ys = np.concatenate([[0.0], density, [0.0]])
    cumulative = cumulative_trapezoid(ys, xs, initial=0.0)
    cumulative /= cumulative[-1]
    return lambda x: np.interp(x, xs, cumulative)


def _split_state() -> CorrelatedState:
    grid = Grid1D(-20.0, 20.0, 256)
    params = MixtureParams(n_bath=1, omega=0.5)
    modes = np.array([np.exp(-0.5 * (grid.x - c) ** 2) for c in (-8.0, 8.0)])
    modes /= np.sqrt(np.sum(modes ** 2, axis=1, keepdims=True) * grid.spacing)
    basis = ModeBasis.from_modes(grid, modes, modes.copy(), params)
    return CorrelatedState(basis, FockSpace(1, 2), np.eye(2, dtype=complex) / np.sqrt(2.0))


def test_uniform_density_sampling():
    grid = Grid1D(0.0, 1.0, 1000)
    samples = sample_positions(np.ones(1000), grid, 2000, shot_rng(3, 0))
    assert samples.shape == (2000,)
    assert np.all((samples > 0.0) & (samples < 1.0))
    assert kstest(samples, "uniform").pvalue > 1e-3


def test_mean_field_positions_follow_the_density(small_state, small_grid):
    shots = generate_shots(small_state, PointSpreadFunction(), seed=1, n_shots=30)
    pooled = np.concatenate([s.bath.positions for s in shots])
    assert pooled.size == 30 * small_state.params.n_bath
    assert kstest(pooled, _cdf(small_state.bath.density, small_grid)).pvalue > 1e-3


def test_vanishing_density_stalls(small_grid):
    with pytest.raises(SamplingStallError):
        sample_positions(np.zeros(small_grid.n_points), small_grid, 3, shot_rng(0, 0))


def test_shots_are_reproducible_across_threads(small_state):
    psf = PointSpreadFunction(1.0)
    serial = generate_shots(small_state, psf, seed=9, n_shots=6)
    threaded = generate_shots(small_state, psf, seed=9, n_shots=6, threads=3)
    for a, b in zip(serial, threaded):
        assert a.index == b.index
        assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(serial[0].positions, serial[1].positions)
    again = sample_shot(small_state, psf, seed=9, index=4)
    assert np.array_equal(again.positions, serial[4].positions)


def test_image_integrals_count_particles(small_state, small_grid):
    shots = generate_shots(small_state, PointSpreadFunction(), seed=2, n_shots=4)
    for shot in shots:
        assert integrate(shot.bath.intensity, small_grid) == pytest.approx(10.0, rel=1e-2)
        assert integrate(shot.impurity.intensity, small_grid) == pytest.approx(1.0, rel=1e-2)
    expected = expected_average_image(10.0 * small_state.bath.density, small_grid, PointSpreadFunction())
    assert integrate(expected, small_grid) == pytest.approx(10.0, rel=1e-2)


def test_point_spread_validation():
    with pytest.raises(ValueError):
        PointSpreadFunction(0.0)


def test_average_images_checks(small_state, small_grid):
    shot = sample_shot(small_state, PointSpreadFunction(), seed=0)
    with pytest.raises(ValueError):
        average_images([])
    with pytest.raises(ValueError, match="species"):
        average_images([shot.bath, shot.impurity])
    other = Grid1D(-10.0, 10.0, 256)
    foreign = ShotImage(other, np.zeros(256), "bath", 0, np.zeros(0))
    with pytest.raises(ValueError, match="grid"):
        average_images([shot.bath, foreign])
    assert np.array_equal(average_images([shot.bath, shot.bath]), shot.bath.intensity)


def test_narrow_psf_images_are_peaked(small_grid):
    psf = PointSpreadFunction(0.3)
    image = psf.render(small_grid, np.array([small_grid.x[100]]))
    assert np.argmax(image) == 100
    assert integrate(image, small_grid) == pytest.approx(1.0, rel=1e-2)


def test_comoving_average_shifts_by_the_impurity(small_grid):
    psf = PointSpreadFunction()
    image = ShotImage(small_grid, psf.render(small_grid, [3.0]), "bath", 0, np.array([3.0]))
    assert np.allclose(comoving_average([image], [1.0]), psf.render(small_grid, [2.0]))
    with pytest.raises(ValueError, match="unpaired shots"):
        comoving_average([image, image], [1.0])


def test_split_state_keeps_species_together():
    state = _split_state()
    for order in ("bath-first", "impurity-first"):
        for shot in generate_shots(state, PointSpreadFunction(), seed=5, n_shots=20, order=order):
            assert shot.bath.positions.size == 1
            assert np.sign(shot.bath.positions[0]) == np.sign(shot.impurity.positions[0])


def test_split_state_comoving_density_differs_from_shuffle():
    state = _split_state()
    shots = generate_shots(state, PointSpreadFunction(), seed=8, n_shots=40)
    grid = state.basis.grid
    comoving = comoving_from_shots(shots)
    shuffled = shuffled_baseline(shots, seed=8)
    near = np.abs(grid.x) < 4.0
    assert integrate(comoving * near, grid) > 0.9
    assert integrate(shuffled * near, grid) < integrate(comoving * near, grid)


def test_unknown_imaging_order(small_state):
    with pytest.raises(ValueError):
        sample_shot(small_state, PointSpreadFunction(), seed=0, order="random")


def test_ordering_report(ci_params, ci_basis, small_state):
    state = prepare_quench_state(ci_params, ci_basis)
    single = image_ordering_average_invariance_test(state, 1)
    assert single.consistent is None
    report = image_ordering_average_invariance_test(state, 40, seed=3)
    assert report.consistent
    assert report.l1_difference >= 0.0
    with pytest.raises(ValueError):
        image_ordering_average_invariance_test(small_state, 4)


@pytest.mark.slow
def test_ordering_is_irrelevant_for_entangled_states():
    report = image_ordering_average_invariance_test(_split_state(), 400, seed=11, threads=4)
    assert report.consistent


@pytest.mark.slow
def test_averages_converge_to_the_density(small_state, small_grid):
    psf = PointSpreadFunction(1.0)
    expected = expected_average_image(10.0 * small_state.bath.density, small_grid, psf)
    norm = integrate(expected, small_grid)

    def error(shots):
        return integrate(np.abs(average_images([s.bath for s in shots]) - expected), small_grid)

    errors = {100: [], 400: [], 800: []}
    for repetition in range(20):
        shots = generate_shots(small_state, psf, seed=100 + repetition, n_shots=800, threads=4)
        for n_shots, found in errors.items():
            found.append(error(shots[:n_shots]))
    assert max(errors[800]) < 0.05 * norm
    assert 1.6 <= np.mean(errors[100]) / np.mean(errors[400]) <= 2.5
