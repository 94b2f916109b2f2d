"""
Flat `key = value` experiment configuration.

Blank lines and `#` comments are ignored, lists are comma separated and
every key is optional; missing keys take the defaults below. When
`u0_over_uc` is set it replaces `u0` by that multiple of the bath sound
speed, resolved once the bath ground state is known.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Tuple

from .errors import ConfigError
from .grid import MIN_POINTS, Grid1D
from .mixture import MixtureParams

SOLVERS = ("mean-field", "ci")
MAX_CI_BATH = 4
TRUE_WORDS = {"true", "yes", "1", "on"}
FALSE_WORDS = {"false", "no", "0", "off"}

Basis = Tuple[int, int]


@dataclass(frozen=True)
class ExperimentConfig:
    grid:             Grid1D = Grid1D(-80.0, 80.0, 1000)
    params:           MixtureParams = MixtureParams()
    solver:           str = "mean-field"
    d_bath:           int = 4
    d_imp:            int = 8
    dt:               float = 1e-3
    ci_dt:            float = 0.05
    t_final:          float = 150.0
    snapshot_stride:  int = 100
    imag_dt:          float = 0.01
    ground_tolerance: float = 1e-10
    n_shots:          int = 800
    psf_width:        float = 1.0
    imaging_times:    Tuple[float, ...] = ()
    fit:              bool = True
    seed:             int = 0
    threads:          int = 1
    output_dir:       str = "results"
    converge_bases:   Tuple[Basis, ...] = ((4, 4), (4, 6), (4, 8))
    g_bi_sweep:       Tuple[float, ...] = (-2.0, -1.0, -0.5, 0.5)
    u0_sweep:         Tuple[float, ...] = (-0.2, -0.5, -1.0)
    u0_over_uc:       Optional[float] = None
    n0:               Optional[float] = None

    @property
    def time_step(self) -> float:
        return self.ci_dt if self.solver == "ci" else self.dt

    @property
    def snapshot_interval(self) -> float:
        return self.time_step * self.snapshot_stride

    def with_params(self, **changes) -> "ExperimentConfig":
        return replace(self, params=self.params.with_changes(**changes))


def _bool(raw: str) -> bool:
    word = raw.strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _floats(raw: str) -> Tuple[float, ...]:
    return tuple(float(item) for item in raw.split(",") if item.strip())


def _bases(raw: str) -> Tuple[Basis, ...]:
    out = []
    for item in raw.split(","):
        item = item.strip().lower()
        if not item:
            continue
        bath, imp = item.split("x")
        out.append((int(bath), int(imp)))
    return tuple(out)


def _optional_float(raw: str) -> Optional[float]:
    return float(raw) if raw.strip() else None


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{a}x{b}" for a, b in value)
        return ",".join(_format(v) for v in value)
    return str(value)


_GRID_KEYS: Dict[str, Callable[[str], object]] = {"x_min": float, "x_max": float, "n_points": int}
_PARAM_KEYS: Dict[str, Callable[[str], object]] = {
    f.name: (int if f.type in ("int", int) else float) for f in fields(MixtureParams) if f.name != "n_imp"
}
_RUN_KEYS: Dict[str, Callable[[str], object]] = {
    "solver": str.strip,
    "d_bath": int,
    "d_imp": int,
    "dt": float,
    "ci_dt": float,
    "t_final": float,
    "snapshot_stride": int,
    "imag_dt": float,
    "ground_tolerance": float,
    "n_shots": int,
    "psf_width": float,
    "imaging_times": _floats,
    "fit": _bool,
    "seed": int,
    "threads": int,
    "output_dir": str.strip,
    "converge_bases": _bases,
    "g_bi_sweep": _floats,
    "u0_sweep": _floats,
    "u0_over_uc": _optional_float,
    "n0": _optional_float,
}
KNOWN_KEYS = tuple(_GRID_KEYS) + tuple(_PARAM_KEYS) + tuple(_RUN_KEYS)

_POSITIVE = ("d_bath", "d_imp", "dt", "ci_dt", "t_final", "snapshot_stride", "imag_dt", "ground_tolerance",
             "n_shots", "psf_width", "threads", "mass_bath", "mass_imp", "omega", "n_bath")


def _split_lines(text: str) -> Dict[str, str]:
    raw: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"invalid-value on line {number}, expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("<empty>", f"invalid-value on line {number}, missing key")
        raw[key] = value.strip()
    return raw


def _convert(raw: Dict[str, str]) -> Dict[str, object]:
    converters = {**_GRID_KEYS, **_PARAM_KEYS, **_RUN_KEYS}
    values: Dict[str, object] = {}
    for key, text in raw.items():
        if key not in converters:
            raise ConfigError(key, "unknown-key")
        try:
            values[key] = converters[key](text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(key, f"invalid-value {text!r} ({exc})") from exc
        if key in _POSITIVE and not values[key] > 0:
            raise ConfigError(key, f"invalid-value {text!r}, must be positive")
    return values


def _build(values: Dict[str, object]) -> ExperimentConfig:
    defaults = ExperimentConfig()
    grid_kwargs = {k: values.get(k, getattr(defaults.grid, k)) for k in _GRID_KEYS}
    if not grid_kwargs["x_min"] < grid_kwargs["x_max"]:
        raise ConfigError("x_max", f"constraint-violation: x_max={grid_kwargs['x_max']} must exceed x_min")
    if grid_kwargs["n_points"] < MIN_POINTS:
        raise ConfigError("n_points", f"constraint-violation: need at least {MIN_POINTS} points")
    grid = Grid1D(**grid_kwargs)

    param_kwargs = {k: values[k] for k in _PARAM_KEYS if k in values}
    if not grid.contains(param_kwargs.get("x0", defaults.params.x0)):
        raise ConfigError("x0", "constraint-violation: x0 lies outside the grid")
    try:
        params = MixtureParams(**param_kwargs)
    except ValueError as exc:
        raise ConfigError("params", f"constraint-violation: {exc}") from exc

    run_kwargs = {k: values[k] for k in _RUN_KEYS if k in values}
    config = replace(defaults, grid=grid, params=params, **run_kwargs)

    if config.solver not in SOLVERS:
        raise ConfigError("solver", f"invalid-value {config.solver!r}, expected one of {SOLVERS}")
    if config.solver == "ci" and params.n_bath > MAX_CI_BATH:
        raise ConfigError("n_bath", f"constraint-violation: solver=ci supports n_bath <= {MAX_CI_BATH}")
    if any(t < 0 or t > config.t_final for t in config.imaging_times):
        raise ConfigError("imaging_times", "constraint-violation: imaging times must lie in [0, t_final]")
    if any(b < 1 or i < 1 for b, i in config.converge_bases):
        raise ConfigError("converge_bases", "constraint-violation: basis sizes must be positive")
    if config.n0 is not None and config.n0 <= 0:
        raise ConfigError("n0", "invalid-value, must be positive")
    return config


def parse_config_text(text: str, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """
    Parse configuration text; `overrides` are raw key/value strings applied
    on top (the CLI flags).
    """
    raw = _split_lines(text)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return _build(_convert(raw))


def load_config(path: str | Path, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    return parse_config_text(path.read_text(), overrides)


def parse_config(source: str | Path | None = None, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """
    Accept a config path (Path) or config text (str); None gives the defaults.
    """
    if source is None:
        return parse_config_text("", overrides)
    if isinstance(source, Path):
        return load_config(source, overrides)
    return parse_config_text(source, overrides)


def config_items(config: ExperimentConfig) -> Iterable[Tuple[str, str]]:
    for key in _GRID_KEYS:
        yield key, _format(getattr(config.grid, key))
    for key in _PARAM_KEYS:
        yield key, _format(getattr(config.params, key))
    for key in _RUN_KEYS:
        yield key, _format(getattr(config, key))


def config_to_text(config: ExperimentConfig) -> str:
    return "".join(f"{key} = {value}\n" for key, value in config_items(config))


def config_to_dict(config: ExperimentConfig) -> Dict[str, str]:
    return dict(config_items(config))
