"""
Quench protocols end to end: prepare, propagate, measure, image, fit and
write the artifact bundle; plus basis-convergence ladders and effective-mass
sweeps over the post-quench coupling and the impurity velocity.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import polars as pl

from . import bundle
from .condensate import (
    MeanFieldState,
    coherent_impurity,
    ground_state_bath,
    prepare_state,
    propagate,
    thomas_fermi_profile,
)
from .config import ExperimentConfig, parse_config_text
from .errors import FitConvergenceError
from .fewbody import (
    CIHamiltonian,
    CorrelatedState,
    FockSpace,
    ModeBasis,
    build_hamiltonian,
    depletion,
    evolve,
    prepare_quench_state,
    schmidt_spectrum,
    vn_entropy,
)
from .grid import ComplexField, Grid1D, integrate
from .observables import (
    TimeSeries,
    density_decomposition_fit,
    effective_potential_eigenstates,
    energy_components,
    instantaneous_effective_potentials,
    mean_momentum,
    mean_position,
    one_body_density,
    peak_density,
    thomas_fermi_radius,
    time_averaged_effective_potential,
)
from .quasiparticle import FIT_WINDOW, FitResult, FrohlichParams, bec_scales, fit_effective_parameters, frohlich_curve
from .render import density_carpet, shot_contact_sheet
from .singleshot import (
    PointSpreadFunction,
    comoving_from_shots,
    expected_average_image,
    generate_shots,
    shuffled_baseline,
    average_images,
)

logger = logging.getLogger(__name__)

State = Union[MeanFieldState, CorrelatedState]

AVERAGING_TIME = 150.0
EIGENSTATE_COUNT = 5
SHEET_SHOTS = 16
DEVIATION_GUARD = 1e-3
VELOCITY_RATIO = "u0/u_c [1]"
VELOCITY = "u0 [l_ho*omega_perp]"


@dataclass
class RunResult:
    config:      ExperimentConfig
    states:      List[State]
    hamiltonian: Optional[CIHamiltonian] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def reference(self) -> State:
        return self.states[0]


@dataclass
class ConvergenceEntry:
    label:          str
    reference:      str
    position:       np.ndarray
    entropy:        np.ndarray
    position_flags: np.ndarray
    entropy_flags:  np.ndarray

    @property
    def max_position(self) -> float:
        return float(np.max(self.position))

    @property
    def max_entropy(self) -> float:
        return float(np.max(self.entropy))


@dataclass
class ConvergenceReport:
    times:   np.ndarray
    entries: List[ConvergenceEntry] = field(default_factory=list)

    def entry(self, label: str, reference: str) -> ConvergenceEntry:
        for e in self.entries:
            if e.label == label and e.reference == reference:
                return e
        raise KeyError(f"no comparison {label} vs {reference}")


def basis_label(d_bath: int, d_imp: int) -> str:
    return f"{d_bath}x{d_imp}"


def build_basis(config: ExperimentConfig, d_bath: Optional[int] = None, d_imp: Optional[int] = None) -> ModeBasis:
    return ModeBasis.harmonic(config.grid, config.params, d_bath or config.d_bath, d_imp or config.d_imp)


def prepare(config: ExperimentConfig, basis: Optional[ModeBasis] = None) -> State:
    """
    Pre-quench state of the configured solver.
    """
    if config.solver == "ci":
        return prepare_quench_state(config.params, basis or build_basis(config))
    return prepare_state(config.params, config.grid, tolerance=config.ground_tolerance, imag_dt=config.imag_dt)


def simulate(config: ExperimentConfig, initial: Optional[State] = None) -> RunResult:
    if config.solver == "ci":
        basis = initial.basis if isinstance(initial, CorrelatedState) else build_basis(config)
        state = initial if initial is not None else prepare(config, basis)
        hamiltonian = build_hamiltonian(config.params, basis, "post")
        states = evolve(state, hamiltonian, config.ci_dt, config.t_final, config.snapshot_stride)
        return RunResult(config, states, hamiltonian)
    state = initial if initial is not None else prepare(config)
    if isinstance(state, MeanFieldState) and state.params != config.params:
        state = MeanFieldState(state.bath, state.impurity, config.params, state.time)
    states = propagate(state, config.dt, config.t_final, config.snapshot_stride)
    return RunResult(config, states)


def trajectories(states: Sequence[State]) -> Tuple[TimeSeries, TimeSeries]:
    times = [s.time for s in states]
    return (TimeSeries(times, [mean_position(s) for s in states]),
            TimeSeries(times, [mean_momentum(s) for s in states]))


def entropy_series(states: Sequence[CorrelatedState]) -> TimeSeries:
    return TimeSeries([s.time for s in states], [vn_entropy(schmidt_spectrum(s)) for s in states])


def observable_columns(result: RunResult) -> Dict[str, np.ndarray]:
    params = result.config.params
    grid = result.config.grid
    reference = result.reference
    initial_bath = one_body_density(reference, "bath")
    x, p = trajectories(result.states)
    energies = [energy_components(s, reference, result.hamiltonian) for s in result.states]
    amplitude = [
        density_decomposition_fit(one_body_density(s, "bath"), initial_bath, one_body_density(s, "impurity"),
                                  grid, params.n_bath).amplitude
        for s in result.states
    ]
    columns = {
        "t": x.times,
        "x": x.values,
        "p": p.values,
        "e_bath": [e.bath for e in energies],
        "e_imp": [e.impurity for e in energies],
        "e_coupling": [e.coupling for e in energies],
        "amplitude": amplitude,
    }
    if isinstance(reference, CorrelatedState):
        columns["entropy"] = entropy_series(result.states).values
        columns["depletion"] = [depletion(s, "bath") for s in result.states]
    return columns


def state_near(states: Sequence[State], time: float) -> State:
    return min(states, key=lambda s: abs(s.time - time))


def central_density(density: np.ndarray, grid: Grid1D) -> float:
    return float(np.interp(0.0, grid.x, density)) if grid.contains(0.0) else peak_density(density)


def sound_speed(config: ExperimentConfig, ground: Optional[State] = None) -> float:
    """
    u_c = sqrt(g_BB n0 / m_B) at the configured n0, else at the centre of the
    bath ground state (the mean-field one when no state is given).
    """
    n0 = config.n0
    if n0 is None:
        if ground is not None:
            density = one_body_density(ground, "bath")
        else:
            bath = ground_state_bath(config.params, config.grid, tolerance=config.ground_tolerance,
                                     imag_dt=config.imag_dt)
            density = config.params.n_bath * np.abs(bath.values) ** 2
        n0 = central_density(density, config.grid)
    params = config.params
    return bec_scales(FrohlichParams(n0, params.g_bb, 0.0, params.mass_bath, params.mass_imp))[1]


def prepare_resolved(config: ExperimentConfig) -> Tuple[ExperimentConfig, State]:
    """
    Pre-quench state with u0 pinned to u0_over_uc * u_c when the velocity is
    configured in units of the sound speed; returns the config actually run.
    """
    if config.u0_over_uc is None:
        return config, prepare(config)
    if config.solver == "ci":
        resolved = config.with_params(u0=config.u0_over_uc * sound_speed(config))
        return resolved, prepare(resolved)
    ground = prepare(config)
    resolved = config.with_params(u0=config.u0_over_uc * sound_speed(config, ground))
    logger.info("u0 = %.4g u_c -> %.6g", config.u0_over_uc, resolved.params.u0)
    return resolved, with_impurity(ground, resolved)


def with_impurity(ground: MeanFieldState, config: ExperimentConfig) -> MeanFieldState:
    return MeanFieldState(ground.bath, coherent_impurity(config.params, config.grid), config.params)


def ground_scales(state: State, config: ExperimentConfig) -> Dict[str, float]:
    """
    Peak density, 1%-of-peak radius and sound/healing scales of the prepared bath.
    """
    grid = config.grid
    density = one_body_density(state, "bath")
    n0 = central_density(density, grid)
    scales = {
        "peak_density": peak_density(density),
        "n0": n0,
        "radius": thomas_fermi_radius(density, grid),
        "norm": integrate(density, grid),
    }
    scales["healing_length"], scales["sound_speed"] = bec_scales(FrohlichParams(n0, config.params.g_bb))
    if config.params.g_bb > 0:
        tf = thomas_fermi_profile(config.params, grid)
        scales["mu_tf"], scales["radius_tf"] = tf.mu, tf.radius
    return scales


def _potential_outputs(result: RunResult, out_dir: Path) -> None:
    config, grid = result.config, result.config.grid
    params = config.params
    if params.g_bi_post < 0:
        bath_pot, imp_pot = instantaneous_effective_potentials(result.states[-1], params)
        bundle.write_csv(bundle.potential_frame(bath_pot), out_dir / "potentials" / "instantaneous_bath.csv")
        bundle.write_csv(bundle.potential_frame(imp_pot), out_dir / "potentials" / "instantaneous_impurity.csv")
        target = imp_pot
    else:
        times = result.times
        series = TimeSeries(times, np.array([one_body_density(s, "bath") for s in result.states]))
        window = min(AVERAGING_TIME, series.duration)
        if window <= 0:
            return
        target = time_averaged_effective_potential(series, grid, params, window)
        bundle.write_csv(bundle.potential_frame(target), out_dir / "potentials" / "time_averaged.csv")
    energies, wavefunctions = effective_potential_eigenstates(target, params.mass_imp, EIGENSTATE_COUNT)
    bundle.write_csv(bundle.eigenstate_frame(energies, wavefunctions, grid), out_dir / "potentials" / "eigenstates.csv")


def fit_row(config: ExperimentConfig, x: TimeSeries, p: TimeSeries, n0: Optional[float]) -> Dict[str, object]:
    """
    One fit table row: damped-oscillator fit of the trajectory and the
    Froehlich mass at the same coupling.
    """
    params = config.params
    g = params.g_bi_post
    try:
        fit = fit_effective_parameters(x, p, float(x.values[0]), float(p.values[0]), params.omega,
                                       params.mass_imp, g)
    except FitConvergenceError as exc:
        logger.error("effective-parameter fit failed at g_BI=%g: %s", g, exc)
        fit = FitResult(None, float("nan"), (float("nan"),) * 3, False, "no-convergence")
    frohlich = float("nan")
    if n0 is not None and params.g_bb > 0:
        frohlich = float(frohlich_curve(FrohlichParams(n0, params.g_bb, g, params.mass_bath, params.mass_imp),
                                        [g])[0])
    model = fit.model
    values = [g,
              model.m_eff if model else float("nan"),
              model.omega_eff if model else float("nan"),
              model.gamma_eff if model else float("nan"),
              fit.residual_rms, frohlich, fit.status]
    return dict(zip(bundle.FIT_COLUMNS, values))


def fit_frame(rows: Sequence[Dict[str, object]]) -> pl.DataFrame:
    schema = {name: (pl.Utf8 if name == "status" else pl.Float64) for name in bundle.FIT_COLUMNS}
    return pl.DataFrame(list(rows), schema=schema)


def write_images(states: Sequence[State], config: ExperimentConfig, out_dir: Path) -> Dict[str, object]:
    """
    Simulated absorption shots at every imaging time: sampled positions,
    averaged, expected and co-moving images, and a contact sheet.
    """
    psf = PointSpreadFunction(config.psf_width)
    grid = config.grid
    imaging_times = config.imaging_times or (states[-1].time,)
    taken = []
    for t_im in imaging_times:
        state = state_near(states, t_im)
        shots = generate_shots(state, psf, config.seed, config.n_shots, config.threads)
        folder = out_dir / "images" / f"t_{state.time:g}"
        records = []
        for shot in shots:
            records.extend((state.time, shot.index, "bath", float(x)) for x in shot.bath.positions)
            records.extend((state.time, shot.index, "impurity", float(x)) for x in shot.impurity.positions)
        bundle.write_csv(bundle.positions_frame(records), folder / "positions.csv")
        images = {
            "bath_average": average_images([s.bath for s in shots]),
            "impurity_average": average_images([s.impurity for s in shots]),
            "bath_expected": expected_average_image(one_body_density(state, "bath"), grid, psf),
            "impurity_expected": expected_average_image(one_body_density(state, "impurity"), grid, psf),
            "comoving": comoving_from_shots(shots),
            "comoving_shuffled": shuffled_baseline(shots, config.seed),
        }
        bundle.write_csv(bundle.image_frame(grid, images), folder / "averages.csv")
        sheet = shots[:SHEET_SHOTS]
        shot_contact_sheet([s.bath.intensity for s in sheet], [f"shot {s.index}" for s in sheet],
                           folder / "shots.png")
        taken.append(state.time)
    return {"seed": config.seed, "n_shots": config.n_shots, "psf_width": config.psf_width,
            "imaging_times": taken}


def _state_outputs(result: RunResult, out_dir: Path) -> None:
    states = result.states
    if isinstance(result.reference, CorrelatedState):
        basis = result.reference.basis
        bundle.write_ci_states(
            out_dir / "ci_states",
            times=result.times,
            amplitudes=np.array([s.amplitudes for s in states]),
            bath_modes=basis.bath_modes,
            imp_modes=basis.imp_modes,
            bath_one_body=basis.bath_one_body,
            imp_one_body=basis.imp_one_body,
        )
    else:
        bundle.write_snapshots(out_dir / "snapshots.bin",
                               ((s.time, s.bath.values, s.impurity.values) for s in states))


def load_states(config: ExperimentConfig, bundle_dir: str | Path) -> List[State]:
    """
    Rebuild solver snapshots stored in a bundle.
    """
    bundle_dir = Path(bundle_dir)
    grid, params = config.grid, config.params
    if config.solver == "ci":
        arrays = bundle.read_ci_states(bundle_dir / "ci_states")
        basis = ModeBasis(grid, arrays["bath_modes"], arrays["imp_modes"], arrays["bath_one_body"],
                          arrays["imp_one_body"])
        fock = FockSpace(params.n_bath, basis.d_bath)
        return [CorrelatedState(basis, fock, a, float(t)) for t, a in zip(arrays["times"], arrays["amplitudes"])]
    return [MeanFieldState(ComplexField(grid, bath), ComplexField(grid, imp), params, t)
            for t, bath, imp in bundle.read_snapshots(bundle_dir / "snapshots.bin")]


def load_bundle_config(bundle_dir: str | Path) -> ExperimentConfig:
    path = Path(bundle_dir) / "config.txt"
    if not path.exists():
        raise FileNotFoundError(f"Bundle config not found: {path}")
    return parse_config_text(path.read_text())


def run_experiment(config: ExperimentConfig, out_dir: Optional[str | Path] = None) -> Path:
    """
    Full protocol: prepare, quench, propagate, measure, optionally image and
    fit, then write the bundle with its manifest.
    """
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config, initial = prepare_resolved(config)
    bundle.write_config_echo(out_dir, config)

    result = simulate(config, initial)
    columns = observable_columns(result)
    bundle.write_csv(bundle.observable_frame(columns), out_dir / "observables.csv")
    _state_outputs(result, out_dir)
    _potential_outputs(result, out_dir)

    densities = {species: np.array([one_body_density(s, species) for s in result.states])
                 for species in ("bath", "impurity")}
    for species, carpet in densities.items():
        density_carpet(result.times, carpet, out_dir / f"carpet_{species}.png", title=f"rho_{species}")

    extra: Dict[str, object] = {"solver": config.solver}
    if config.fit:
        x, p = TimeSeries(columns["t"], columns["x"]), TimeSeries(columns["t"], columns["p"])
        n0 = config.n0 or ground_scales(result.reference, config)["n0"]
        bundle.write_csv(fit_frame([fit_row(config, x, p, n0)]), out_dir / "fit.csv")
    if config.n_shots > 0:
        extra["imaging"] = write_images(result.states, config, out_dir)

    bundle.write_manifest(out_dir, config, extra)
    logger.info("run bundle written to %s (%d snapshots)", out_dir, len(result.states))
    return out_dir


def prepare_bundle(config: ExperimentConfig, out_dir: Optional[str | Path] = None) -> Path:
    """
    Ground state only: densities on the grid and the derived bath scales.
    """
    out_dir = Path(out_dir or config.output_dir)
    config, state = prepare_resolved(config)
    bundle.write_config_echo(out_dir, config)
    grid = config.grid
    bundle.write_csv(
        bundle.image_frame(grid, {"rho_B": one_body_density(state, "bath"),
                                  "rho_I": one_body_density(state, "impurity")}),
        out_dir / "ground.csv",
    )
    scales = ground_scales(state, config)
    bundle.write_csv(pl.DataFrame({"quantity": list(scales), "value": list(scales.values())}),
                     out_dir / "scales.csv")
    bundle.write_manifest(out_dir, config, {"solver": config.solver})
    return out_dir


def image_bundle(bundle_dir: str | Path, config: Optional[ExperimentConfig] = None) -> Path:
    bundle_dir = Path(bundle_dir)
    config = config or load_bundle_config(bundle_dir)
    states = load_states(config, bundle_dir)
    extra = {"solver": config.solver, "imaging": write_images(states, config, bundle_dir)}
    bundle.write_manifest(bundle_dir, config, extra, merge=True)
    return bundle_dir


def fit_bundle(bundle_dir: str | Path, config: Optional[ExperimentConfig] = None) -> pl.DataFrame:
    bundle_dir = Path(bundle_dir)
    config = config or load_bundle_config(bundle_dir)
    x, p = bundle.read_trajectory(bundle_dir / "observables.csv")
    n0 = config.n0
    if n0 is None and config.solver == "mean-field" and (bundle_dir / "snapshots.bin").exists():
        n0 = ground_scales(load_states(config, bundle_dir)[0], config)["n0"]
    frame = fit_frame([fit_row(config, x, p, n0)])
    bundle.write_csv(frame, bundle_dir / "fit.csv")
    bundle.write_manifest(bundle_dir, config, {"solver": config.solver}, merge=True)
    return frame


def relative_deviation(values: np.ndarray, reference: np.ndarray,
                       epsilon: float = DEVIATION_GUARD) -> Tuple[np.ndarray, np.ndarray]:
    """
    |values - reference| / |reference|, falling back to the absolute
    deviation (flagged) where |reference| < epsilon.
    """
    values = np.asarray(values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    absolute = np.abs(values - reference)
    flags = np.abs(reference) < epsilon
    safe = np.where(flags, 1.0, np.abs(reference))
    return np.where(flags, absolute, absolute / safe), flags


def convergence_study(
    runs:  Mapping[str, Tuple[TimeSeries, TimeSeries]],
    pairs: Sequence[Tuple[str, str]],
) -> ConvergenceReport:
    """
    Deviation series of <X_I(t)> and S_VN(t) for each (label, reference)
    pair of runs; every run is a (position, entropy) series couple.
    """
    if not runs:
        raise ValueError("convergence study needs at least one run")
    times = next(iter(runs.values()))[0].times
    for label, (x, s) in runs.items():
        if len(x.times) != len(times) or not np.allclose(x.times, times) or not np.allclose(s.times, times):
            raise ValueError(f"mismatched-time-grids: run {label} does not share the time grid")
    report = ConvergenceReport(times)
    for label, reference in pairs:
        x, s = runs[label]
        x_ref, s_ref = runs[reference]
        dx, fx = relative_deviation(x.values, x_ref.values)
        ds, fs = relative_deviation(s.values, s_ref.values)
        report.entries.append(ConvergenceEntry(label, reference, dx, ds, fx, fs))
    return report


def run_convergence(config: ExperimentConfig) -> ConvergenceReport:
    """
    CI runs over the configured basis ladder, compared pairwise in ladder order.
    """
    if config.solver != "ci":
        raise ValueError("convergence studies need solver = ci")
    if config.u0_over_uc is not None:
        config = config.with_params(u0=config.u0_over_uc * sound_speed(config))
    runs: Dict[str, Tuple[TimeSeries, TimeSeries]] = {}
    for d_bath, d_imp in config.converge_bases:
        basis = build_basis(config, d_bath, d_imp)
        result = simulate(config, prepare(config, basis))
        x, _ = trajectories(result.states)
        runs[basis_label(d_bath, d_imp)] = (x, entropy_series(result.states))
        logger.info("convergence ladder: basis %s done", basis_label(d_bath, d_imp))
    labels = list(runs)
    return convergence_study(runs, list(zip(labels[:-1], labels[1:])))


def convergence_frame(report: ConvergenceReport) -> pl.DataFrame:
    frames = [
        pl.DataFrame({
            "basis": [e.label] * len(report.times),
            "reference": [e.reference] * len(report.times),
            bundle.TIME: report.times,
            "dX_I [1]": e.position,
            "dX_I_absolute": e.position_flags,
            "dS_VN [1]": e.entropy,
            "dS_VN_absolute": e.entropy_flags,
        })
        for e in report.entries
    ]
    return pl.concat(frames) if frames else pl.DataFrame()


def _sweep_point(config: ExperimentConfig, g: float, initial: MeanFieldState,
                 n0: float) -> Dict[str, object]:
    point = config.with_params(g_bi_post=g)
    result = simulate(point, initial)
    x, p = trajectories(result.states)
    return fit_row(point, x, p, n0)


def mass_curve(config: ExperimentConfig) -> pl.DataFrame:
    """
    Effective mass against the post-quench coupling: one mean-field
    propagation and fit per g_BI in the sweep (run in parallel) next to the
    Froehlich prediction. Couplings outside the quasiparticle window are
    tabulated as not-applicable.
    """
    if config.solver != "mean-field":
        raise ValueError("mass curves use the mean-field solver")
    config, initial = prepare_resolved(config)
    n0 = config.n0 or ground_scales(initial, config)["n0"]
    couplings = list(config.g_bi_sweep)
    skipped = [g for g in couplings if not FIT_WINDOW[0] < g < FIT_WINDOW[1]]
    if skipped:
        logger.warning("couplings %s lie outside the quasiparticle window %s", skipped, FIT_WINDOW)
    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        rows = list(pool.map(lambda g: _sweep_point(config, g, initial, n0), couplings))
    return fit_frame(rows)


def _velocity_point(config: ExperimentConfig, factor: float, ground: MeanFieldState, n0: float,
                    u_c: float) -> Dict[str, object]:
    point = config.with_params(u0=factor * u_c)
    result = simulate(point, with_impurity(ground, point))
    x, p = trajectories(result.states)
    return {VELOCITY_RATIO: factor, VELOCITY: point.params.u0, **fit_row(point, x, p, n0)}


def velocity_curve(config: ExperimentConfig) -> pl.DataFrame:
    """
    Effective parameters against the initial impurity velocity at fixed
    g_BI: one mean-field propagation and fit per u0 = factor * u_c in
    `u0_sweep`, all starting from the same bath ground state.
    """
    if config.solver != "mean-field":
        raise ValueError("velocity sweeps use the mean-field solver")
    ground = prepare(config)
    n0 = config.n0 or ground_scales(ground, config)["n0"]
    u_c = sound_speed(config, ground)
    factors = list(config.u0_sweep)
    supersonic = [f for f in factors if abs(f) >= 1.0]
    if supersonic:
        logger.warning("u0/u_c = %s is not subsonic; the damped-oscillator picture may not hold", supersonic)
    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        rows = list(pool.map(lambda f: _velocity_point(config, f, ground, n0, u_c), factors))
    schema = {VELOCITY_RATIO: pl.Float64, VELOCITY: pl.Float64,
              **{name: (pl.Utf8 if name == "status" else pl.Float64) for name in bundle.FIT_COLUMNS}}
    return pl.DataFrame(rows, schema=schema)


def frohlich_table(config: ExperimentConfig, n0: Optional[float] = None) -> pl.DataFrame:
    params = config.params
    if n0 is None:
        n0 = config.n0
    if n0 is None:
        ground = prepare_state(params, config.grid, tolerance=config.ground_tolerance, imag_dt=config.imag_dt)
        n0 = ground_scales(ground, config)["n0"]
    couplings = list(config.g_bi_sweep)
    masses = frohlich_curve(FrohlichParams(n0, params.g_bb, 0.0, params.mass_bath, params.mass_imp), couplings)
    return pl.DataFrame({"g_BI [1]": couplings, "m_eff_frohlich [m_B]": masses, "n0 [1/l_ho]": [n0] * len(couplings)})
