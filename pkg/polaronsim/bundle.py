"""
On-disk artifact bundle: observable CSVs (polars), binary orbital snapshots,
CI amplitude archives and a manifest with a checksum for every file.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import polars as pl

from .config import ExperimentConfig, config_to_dict, config_to_text
from .grid import Grid1D
from .observables import EffectivePotential, TimeSeries

logger = logging.getLogger(__name__)

FORMAT_TAG = "polaronsim-bundle/1"
MANIFEST_NAME = "manifest.json"
MANIFEST_KEYS = ("format", "config", "files")
SNAPSHOT_MAGIC = b"PLRNSNAP"
SNAPSHOT_VERSION = 1

SNAPSHOT_HEADER = np.dtype([
    ("magic",    "S8"),
    ("version",  "<u4"),
    ("n_points", "<u4"),
    ("time",     "<f8"),
    ("reserved", "V40"),
])

TIME = "t [1/omega]"
POSITION = "X_I [l_ho]"
MOMENTUM = "P_I [hbar/l_ho]"
OBSERVABLE_COLUMNS = {
    "t": TIME,
    "x": POSITION,
    "p": MOMENTUM,
    "e_bath": "E_B [hbar*omega_perp]",
    "e_imp": "E_I [hbar*omega_perp]",
    "e_coupling": "E_BI [hbar*omega_perp]",
    "amplitude": "A [1]",
    "entropy": "S_VN [1]",
    "depletion": "1-n_1 [1]",
}
FIT_COLUMNS = ["g_BI [1]", "m_eff_fit [m_B]", "omega_eff [omega_perp]", "gamma_eff [m_B*omega_perp]",
               "residual_rms [1]", "m_eff_frohlich [m_B]", "status"]


def write_csv(frame: pl.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.write_csv(path)
    return path


def observable_frame(columns: Dict[str, Sequence[float]]) -> pl.DataFrame:
    """
    Fixed-order observable table; keys follow OBSERVABLE_COLUMNS, missing
    optional columns are left out.
    """
    unknown = set(columns) - set(OBSERVABLE_COLUMNS)
    if unknown:
        raise ValueError(f"unknown observable columns: {sorted(unknown)}")
    return pl.DataFrame({OBSERVABLE_COLUMNS[k]: np.asarray(columns[k], dtype=float)
                         for k in OBSERVABLE_COLUMNS if k in columns})


def read_trajectory(path: str | Path) -> Tuple[TimeSeries, TimeSeries]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Observable file not found: {path}")
    frame = pl.read_csv(path)
    missing = {TIME, POSITION, MOMENTUM} - set(frame.columns)
    if missing:
        raise ValueError(f"Observable file is missing required columns: {sorted(missing)}")
    times = frame[TIME].to_numpy()
    return TimeSeries(times, frame[POSITION].to_numpy()), TimeSeries(times, frame[MOMENTUM].to_numpy())


def potential_frame(potential: EffectivePotential) -> pl.DataFrame:
    return pl.DataFrame({"x [l_ho]": potential.grid.x, f"V_{potential.kind} [hbar*omega_perp]": potential.values})


def eigenstate_frame(energies: np.ndarray, wavefunctions: np.ndarray, grid: Grid1D) -> pl.DataFrame:
    n_states = len(energies)
    return pl.DataFrame({
        "n": np.repeat(np.arange(1, n_states + 1), grid.n_points),
        "E_n [hbar*omega_perp]": np.repeat(energies, grid.n_points),
        "x [l_ho]": np.tile(grid.x, n_states),
        "psi_n [l_ho^-1/2]": wavefunctions.reshape(-1),
    })


def image_frame(grid: Grid1D, images: Dict[str, np.ndarray]) -> pl.DataFrame:
    return pl.DataFrame({"x [l_ho]": grid.x, **{f"{name} [1/l_ho]": values for name, values in images.items()}})


def positions_frame(records: Iterable[Tuple[float, int, str, float]]) -> pl.DataFrame:
    rows = list(records)
    return pl.DataFrame(
        {
            "t_im [1/omega]": [r[0] for r in rows],
            "shot": [r[1] for r in rows],
            "species": [r[2] for r in rows],
            "position [l_ho]": [r[3] for r in rows],
        },
        schema={"t_im [1/omega]": pl.Float64, "shot": pl.Int64, "species": pl.Utf8, "position [l_ho]": pl.Float64},
    )


def write_snapshots(path: str | Path, records: Iterable[Tuple[float, np.ndarray, np.ndarray]]) -> Path:
    """
    Records of a 64-byte little-endian header (magic, version, n_points,
    time) followed by the bath then impurity orbital as complex128.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        for time, bath, impurity in records:
            header = np.zeros(1, dtype=SNAPSHOT_HEADER)
            header["magic"] = SNAPSHOT_MAGIC
            header["version"] = SNAPSHOT_VERSION
            header["n_points"] = len(bath)
            header["time"] = time
            handle.write(header.tobytes())
            handle.write(np.asarray(bath, dtype="<c16").tobytes())
            handle.write(np.asarray(impurity, dtype="<c16").tobytes())
    return path


def read_snapshots(path: str | Path) -> List[Tuple[float, np.ndarray, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Snapshot file not found: {path}")
    raw = path.read_bytes()
    records = []
    offset = 0
    while offset < len(raw):
        header = np.frombuffer(raw, dtype=SNAPSHOT_HEADER, count=1, offset=offset)[0]
        if header["magic"] != SNAPSHOT_MAGIC or header["version"] != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: bad snapshot header at byte {offset}")
        n = int(header["n_points"])
        offset += SNAPSHOT_HEADER.itemsize
        values = np.frombuffer(raw, dtype="<c16", count=2 * n, offset=offset)
        offset += values.nbytes
        records.append((float(header["time"]), values[:n].copy(), values[n:].copy()))
    return records


CI_ARRAYS = ("times", "amplitudes", "bath_modes", "imp_modes", "bath_one_body", "imp_one_body")


def write_ci_states(directory: str | Path, **arrays: np.ndarray) -> Path:
    """
    One .npy file per array (zip archives would embed write times).
    """
    directory = Path(directory)
    missing = set(CI_ARRAYS) - set(arrays)
    if missing:
        raise ValueError(f"CI state arrays missing: {sorted(missing)}")
    directory.mkdir(parents=True, exist_ok=True)
    for name in CI_ARRAYS:
        np.save(directory / f"{name}.npy", np.asarray(arrays[name]))
    return directory


def read_ci_states(directory: str | Path) -> Dict[str, np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"CI state directory not found: {directory}")
    return {name: np.load(directory / f"{name}.npy") for name in CI_ARRAYS}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_manifest(out_dir: str | Path) -> Dict:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"Bundle manifest not found: {path}")
    return json.loads(path.read_text())


def write_manifest(out_dir: str | Path, config: ExperimentConfig, extra: Optional[Dict] = None,
                   merge: bool = False) -> Path:
    """
    Manifest listing every other file in the bundle with its SHA-256, the
    full config echo and the bundle format tag. Holds no timestamps.
    With `merge`, extra entries of an existing manifest are kept unless
    `extra` replaces them.
    """
    out_dir = Path(out_dir)
    kept: Dict = {}
    if merge and (out_dir / MANIFEST_NAME).exists():
        kept = {k: v for k, v in read_manifest(out_dir).items() if k not in MANIFEST_KEYS}
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME)
    manifest = {
        **kept,
        **(extra or {}),
        "format": FORMAT_TAG,
        "config": config_to_dict(config),
        "files": {p.relative_to(out_dir).as_posix(): _sha256(p) for p in files},
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("manifest lists %d files in %s", len(files), out_dir)
    return path


def verify_manifest(out_dir: str | Path) -> List[str]:
    """
    Paths whose checksum no longer matches (or that are missing or unlisted).
    """
    out_dir = Path(out_dir)
    manifest = read_manifest(out_dir)
    listed = manifest["files"]
    problems = [name for name, digest in listed.items()
                if not (out_dir / name).is_file() or _sha256(out_dir / name) != digest]
    present = {p.relative_to(out_dir).as_posix() for p in out_dir.rglob("*")
               if p.is_file() and p.name != MANIFEST_NAME}
    problems.extend(sorted(present - set(listed)))
    return problems


def write_config_echo(out_dir: str | Path, config: ExperimentConfig) -> Path:
    path = Path(out_dir) / "config.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_to_text(config))
    return path
