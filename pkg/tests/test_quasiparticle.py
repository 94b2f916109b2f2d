from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from polaronsim.observables import TimeSeries, mean_momentum, mean_position
from polaronsim.quasiparticle import (
    DampedModel,
    FrohlichParams,
    _tail_bound,
    bec_scales,
    damped_trajectory,
    fit_effective_parameters,
    frohlich_coefficient,
    frohlich_curve,
    frohlich_mass,
)

TIMES = np.arange(0.0, 150.0, 0.5)
REFERENCE_N0 = 3.04


def _series(model: DampedModel, noise: float = 0.0, seed: int = 0):
    x, p = damped_trajectory(model, TIMES)
    if noise:
        rng = np.random.default_rng(seed)
        x = x + noise * np.max(np.abs(x)) * rng.normal(size=x.size)
        p = p + noise * np.max(np.abs(p)) * rng.normal(size=p.size)
    return TimeSeries(TIMES, x), TimeSeries(TIMES, p)


def test_closed_form_initial_conditions():
    model = DampedModel(1.2, 0.14, 0.05, x0=0.7, p0=-0.87)
    x, p = damped_trajectory(model, [0.0])
    assert x[0] == pytest.approx(0.7)
    assert p[0] == pytest.approx(-0.87)


def test_undamped_limit():
    model = DampedModel(1.0, 0.1, 0.0, p0=-0.87)
    x, p = damped_trajectory(model, TIMES)
    assert np.allclose(x, -8.7 * np.sin(0.1 * TIMES), atol=1e-12)
    assert np.allclose(p, -0.87 * np.cos(0.1 * TIMES), atol=1e-12)


@pytest.mark.parametrize("x0", [0.0, 1.5])
def test_closed_form_solves_the_equation_of_motion(x0):
    m, omega, gamma, p0 = 1.2, 0.14, 0.05, -0.87

    def rhs(_t, y):
        return [y[1] / m, -gamma * y[1] / m - m * omega ** 2 * y[0]]

    solution = solve_ivp(rhs, (0.0, TIMES[-1]), [x0, p0], t_eval=TIMES, rtol=1e-11, atol=1e-12)
    x, p = damped_trajectory(DampedModel(m, omega, gamma, x0, p0), TIMES)
    assert np.allclose(x, solution.y[0], atol=1e-6)
    assert np.allclose(p, solution.y[1], atol=1e-6)


def test_overdamped_parameters_are_rejected():
    model = DampedModel(1.0, 0.1, 1.0)
    assert not model.underdamped
    with pytest.raises(ValueError, match="overdamped-parameters"):
        damped_trajectory(model, TIMES)


def test_oscillator_energy_never_grows():
    model = DampedModel(1.2, 0.14, 0.05, x0=0.3, p0=-0.87)
    x, p = damped_trajectory(model, TIMES)
    energy = p ** 2 / (2 * model.m_eff) + 0.5 * model.m_eff * model.omega_eff ** 2 * x ** 2
    assert np.all(np.diff(energy) <= 1e-12)


def test_noiseless_fit_recovers_parameters():
    truth = DampedModel(1.2, 0.14, 0.05, p0=-0.87)
    xs, ps = _series(truth)
    result = fit_effective_parameters(xs, ps, 0.0, -0.87, omega_trap=0.1, g_bi=0.5)
    assert result.converged and result.status == "ok"
    assert result.model.m_eff == pytest.approx(1.2, rel=1e-4)
    assert result.model.omega_eff == pytest.approx(0.14, rel=1e-4)
    assert result.model.gamma_eff == pytest.approx(0.05, rel=1e-4)
    assert result.residual_rms < 1e-6


def _median_mass(n_seeds: int) -> float:
    truth = DampedModel(1.2, 0.14, 0.05, p0=-0.87)
    masses = []
    for seed in range(n_seeds):
        xs, ps = _series(truth, noise=0.01, seed=seed)
        masses.append(fit_effective_parameters(xs, ps, 0.0, -0.87).model.m_eff)
    return float(np.median(masses))


def test_noisy_fit_is_unbiased():
    assert _median_mass(10) == pytest.approx(1.2, rel=0.02)


@pytest.mark.slow
def test_noisy_fit_is_unbiased_over_many_seeds():
    assert _median_mass(100) == pytest.approx(1.2, rel=0.02)


def test_fit_is_no_worse_than_the_truth():
    truth = DampedModel(1.1, 0.12, 0.02, p0=-0.87)
    xs, ps = _series(truth, noise=0.02, seed=4)
    result = fit_effective_parameters(xs, ps, 0.0, -0.87)
    x, p = damped_trajectory(truth, TIMES)
    sx, sp = np.max(np.abs(xs.values)), np.max(np.abs(ps.values))
    residuals = np.concatenate([(x - xs.values) / sx, (p - ps.values) / sp])
    truth_rms = np.sqrt(np.mean(residuals ** 2))
    assert result.residual_rms <= truth_rms + 1e-12
    assert all(np.isfinite(result.parameter_uncertainties))


def test_strong_coupling_is_not_applicable():
    xs, ps = _series(DampedModel(1.2, 0.14, 0.05, p0=-0.87))
    result = fit_effective_parameters(xs, ps, 0.0, -0.87, g_bi=1.5)
    assert result.status == "not-applicable"
    assert result.model is None and not result.converged


def test_fit_needs_matching_times():
    xs, ps = _series(DampedModel(1.2, 0.14, 0.05, p0=-0.87))
    with pytest.raises(ValueError):
        fit_effective_parameters(xs, TimeSeries(TIMES + 0.1, ps.values), 0.0, -0.87)


def test_condensate_scales():
    xi, u_c = bec_scales(FrohlichParams(REFERENCE_N0))
    assert u_c == pytest.approx(1.7436, rel=1e-4)
    assert xi == pytest.approx(0.4056, rel=1e-3)
    assert xi * u_c == pytest.approx(1.0 / np.sqrt(2.0))
    assert bec_scales(FrohlichParams(REFERENCE_N0, g_bb=0.0)) == (float("inf"), 0.0)
    xi_double, u_double = bec_scales(FrohlichParams(2 * REFERENCE_N0))
    assert xi_double == pytest.approx(xi / np.sqrt(2.0))
    assert u_double == pytest.approx(u_c * np.sqrt(2.0))


def test_frohlich_mass_limits_and_symmetry():
    params = FrohlichParams(REFERENCE_N0)
    assert frohlich_mass(params) == 1.0
    assert frohlich_mass(params.with_coupling(0.7)) == pytest.approx(frohlich_mass(params.with_coupling(-0.7)))
    assert 1.02 <= frohlich_mass(params.with_coupling(0.5)) <= 1.07
    curve = frohlich_curve(params, [0.0, 0.25, 0.5, 1.0, 2.0])
    assert curve[0] == 1.0
    assert np.all(np.diff(curve) > 0)
    assert curve[2] == pytest.approx(frohlich_mass(params.with_coupling(0.5)), rel=1e-12)


def test_frohlich_coefficient_density_scaling():
    area, _ = frohlich_coefficient(FrohlichParams(REFERENCE_N0))
    quadrupled, _ = frohlich_coefficient(FrohlichParams(4 * REFERENCE_N0))
    assert quadrupled == pytest.approx(area / 2.0, rel=1e-7)


def test_frohlich_cutoff_leaves_a_negligible_tail():
    params = FrohlichParams(REFERENCE_N0)
    area, k_max = frohlich_coefficient(params)
    assert _tail_bound(params, k_max) < 1e-8 * area
    truncated, _ = frohlich_coefficient(FrohlichParams(REFERENCE_N0, k_max=1.0))
    assert 0 < truncated < area


def test_frohlich_needs_repulsive_bath():
    with pytest.raises(ValueError):
        frohlich_coefficient(FrohlichParams(REFERENCE_N0, g_bb=0.0, g_bi=0.5))


@pytest.mark.slow
def test_attractive_run_fits_a_moderately_heavier_impurity(reference_quench):
    snapshots = reference_quench(-1.0)
    times = [s.time for s in snapshots]
    x = TimeSeries(times, [mean_position(s) for s in snapshots])
    p = TimeSeries(times, [mean_momentum(s) for s in snapshots])
    fit = fit_effective_parameters(x, p, x.values[0], p.values[0], omega_trap=0.1, mass_imp=1.0, g_bi=-1.0)
    assert fit.status == "ok"
    assert 1.0 <= fit.model.m_eff <= 1.35
