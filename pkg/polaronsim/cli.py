from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import bundle
from .config import ExperimentConfig, load_config, parse_config_text
from .errors import ConfigError, SimulationError
from .experiment import (
    convergence_frame,
    fit_bundle,
    frohlich_table,
    image_bundle,
    mass_curve,
    prepare_bundle,
    run_convergence,
    run_experiment,
    velocity_curve,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

VERBS = ("prepare", "run", "image", "fit", "converge", "frohlich")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Simulate an impurity quenched into a trapped 1D condensate.")
    parser.add_argument("verb", choices=VERBS,
                        help="prepare | run | image | fit | converge | frohlich")
    parser.add_argument("--config", type=Path, default=None,
                        help="key = value config file; defaults apply when omitted.")
    parser.add_argument("--seed", type=int, default=None,
                        help="Override the config seed.")
    parser.add_argument("--out", type=Path, default=None,
                        help="Output (or, for image/fit, existing bundle) directory.")
    parser.add_argument("--threads", type=int, default=None,
                        help="Worker threads for shots and parameter sweeps.")
    parser.add_argument("--mass-sweep", action="store_true",
                        help="fit: run the mean-field g_BI sweep instead of fitting a stored bundle.")
    parser.add_argument("--velocity-sweep", action="store_true",
                        help="fit: run the mean-field u0 sweep (units of u_c) instead of fitting a stored bundle.")
    parser.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="Logging verbosity.")
    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = {"seed": args.seed, "output_dir": args.out, "threads": args.threads}
    return {k: str(v) for k, v in overrides.items() if v is not None}


def _config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = _overrides(args)
    if args.config is not None:
        return load_config(args.config, overrides)
    if args.verb in ("image", "fit") and args.out is not None and (args.out / "config.txt").exists():
        return parse_config_text((args.out / "config.txt").read_text(), overrides)
    return parse_config_text("", overrides)


def dispatch(args: argparse.Namespace) -> None:
    config = _config(args)
    out_dir = Path(config.output_dir)
    if args.verb == "prepare":
        path = prepare_bundle(config, out_dir)
        print(f"Ground state written to {path}")
    elif args.verb == "run":
        path = run_experiment(config, out_dir)
        print(f"Run bundle written to {path}")
    elif args.verb == "image":
        path = image_bundle(out_dir, config)
        print(f"Shot images written to {path / 'images'}")
    elif args.verb == "fit":
        if args.mass_sweep:
            path = bundle.write_csv(mass_curve(config), out_dir / "mass_curve.csv")
        elif args.velocity_sweep:
            path = bundle.write_csv(velocity_curve(config), out_dir / "velocity_curve.csv")
        else:
            fit_bundle(out_dir, config)
            path = out_dir / "fit.csv"
        print(f"Effective parameters written to {path}")
    elif args.verb == "converge":
        report = run_convergence(config)
        path = bundle.write_csv(convergence_frame(report), out_dir / "convergence.csv")
        for entry in report.entries:
            print(f"{entry.label} vs {entry.reference}: max dX={entry.max_position:.3g} "
                  f"max dS={entry.max_entropy:.3g}")
        print(f"Convergence report written to {path}")
    elif args.verb == "frohlich":
        path = bundle.write_csv(frohlich_table(config), out_dir / "frohlich.csv")
        print(f"Froehlich mass curve written to {path}")


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("polaronsim")
    try:
        dispatch(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG
    except SimulationError as exc:
        log.error("solver error: %s", exc)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
