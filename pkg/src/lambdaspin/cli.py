"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input-file error, 2 numerical
failure (non-convergence, missing oscillation, insufficient data).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import RunConfig, apply_overrides, list_presets, load_config, load_preset
from .errors import ConfigError, InsufficientDataError, LambdaSpinError, NoOscillationError, NonConvergenceError
from .experiments import (cpt_scan, estimate_fidelity, period_vs_detuning, rabi_scan,
                          ramsey_scan, stirap_scan)
from .tables import FIT_MODELS, emit_fit_report, write_scan_csv, write_sidecar, write_table_csv

__all__ = ["RunOutcome", "run", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

# subcommand name -> experiment name
_COMMANDS = {
    "rabi": "rabi",
    "stirap": "stirap",
    "ramsey": "ramsey",
    "cpt": "cpt",
    "period": "period-vs-detuning",
    "fidelity": "fidelity",
}


@dataclass
class RunOutcome:
    csv_path: Path
    sidecar_path: Path
    results: dict = field(default_factory=dict)


def run(config: RunConfig, output=None) -> RunOutcome:
    """Execute the configured experiment and write its CSV and sidecar.

    ``output`` overrides ``[output] path``; without either the file is
    named after the experiment in the working directory.
    """
    exp = config.experiment
    cfg = config.experiment_config()
    settings = config.resolved()
    path = Path(output) if output else (config.output_path or Path(f"{exp}.csv"))
    pulses, scan_opts = settings["pulses"], settings["scan"]
    results: dict = {}

    if exp == "period-vs-detuning":
        rows = period_vs_detuning(scan_opts["delta_ghz"], scan_opts["intensity_scale"], cfg)
        table = [(r.delta_ghz, r.intensity_scale, r.period_us, r.rabi_frequency_mhz) for r in rows]
        write_table_csv(path, ["delta_ghz", "intensity_scale", "period_us", "rabi_frequency_mhz"],
                        table, settings)
        return RunOutcome(path, write_sidecar(path, settings), results)

    grid = config.grid()
    if exp in ("rabi", "fidelity"):
        scan = rabi_scan(grid, cfg)
    elif exp == "stirap":
        scan = stirap_scan(grid, pulses["t_rise_us"], cfg)
    elif exp == "ramsey":
        scan = ramsey_scan(grid, cfg)
    elif exp == "cpt":
        scan = cpt_scan(grid, pulses["cpt_duration_us"], cfg)
    else:
        raise AssertionError(exp)

    if exp == "fidelity":
        fraction = scan_opts.get("participating_fraction", cfg.ensemble.participating_fraction)
        results = {"participating_fraction": fraction,
                   "fidelity": estimate_fidelity(scan, fraction)}
    write_scan_csv(path, scan, settings, results)
    return RunOutcome(path, write_sidecar(path, settings, results), results)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lambdaspin",
        description="Optically driven spin dynamics of a three-level Lambda system.")
    parser.add_argument("--version", action="version", version=f"lambdaspin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_options(p):
        src = p.add_mutually_exclusive_group()
        src.add_argument("-c", "--config", help="TOML run configuration")
        src.add_argument("-p", "--preset", help="named preset (see `lambdaspin presets`)")
        p.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration key (repeatable)")
        p.add_argument("-j", "--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("-o", "--output", help="CSV output path")

    for name in _COMMANDS:
        add_run_options(sub.add_parser(name, help=f"run a {_COMMANDS[name]} experiment"))
    add_run_options(sub.add_parser("run", help="run whichever experiment the config names"))

    fit = sub.add_parser("fit", help="fit a scan CSV and write a report plus fitted curve")
    fit.add_argument("csv", help="scan CSV written by this tool")
    fit.add_argument("-m", "--model", choices=FIT_MODELS, default="damped-cosine")
    fit.add_argument("--column", default="pop_g2", help="population column to fit")

    sub.add_parser("presets", help="list bundled presets")
    return parser


def _resolve_config(args) -> RunConfig:
    if args.preset:
        config = load_preset(args.preset)
    elif args.config:
        config = load_config(args.config, _COMMANDS.get(args.command))
    else:
        raise ConfigError("give --config or --preset")
    overrides = list(args.set)
    if args.command != "run":
        wanted = _COMMANDS[args.command]
        if config.experiment != wanted:
            overrides.insert(0, f'experiment="{wanted}"')
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    return apply_overrides(config, overrides) if overrides else config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    stage = "configuration"
    try:
        if args.command == "presets":
            for name in list_presets():
                cfg = load_preset(name)
                print(f"{name:8s} {cfg.experiment}")
            return EXIT_OK
        if args.command == "fit":
            stage = "fit"
            report, report_path, curve_path = emit_fit_report(args.csv, args.model, args.column)
            sys.stdout.write(report)
            print(f"wrote {report_path} and {curve_path}")
            return EXIT_OK
        config = _resolve_config(args)
        stage = "simulation"
        outcome = run(config, args.output)
        for key, value in outcome.results.items():
            print(f"{key} = {value:.6g}")
        print(f"wrote {outcome.csv_path} and {outcome.sidecar_path}")
        return EXIT_OK
    except (ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"lambdaspin: {stage} error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, NoOscillationError, InsufficientDataError) as exc:
        print(f"lambdaspin: {stage} failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LambdaSpinError, ValueError) as exc:
        code = EXIT_CONFIG if stage == "configuration" else EXIT_NUMERIC
        print(f"lambdaspin: {stage} error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
