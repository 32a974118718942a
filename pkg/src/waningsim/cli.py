"""File-based command-line interface.

Subcommands: ``simulate``, ``analyze``, ``sweep``, ``fit``, ``dfe``, ``r0``.
All input and output goes through files (or stdout); there is no network
access.  Exit codes: 0 success, 2 configuration or input error, 3
integration failure, 4 regime-consistency violation (a bug signal; should
never fire in the small-waning regime).

Every artifact embeds a run manifest.  JSON artifacts hold it under
``"manifest"`` beside the ``"data"`` section; CSV artifacts carry it in
leading ``#`` comment lines.  Data sections are byte-identical across reruns
with identical inputs.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .dfe import basic_reproduction_number, solve_dfe_closed_form, solve_dfe_numeric
from .dynamics import IntegrationError, integrate
from .model import ConfigError, config_from_dict, epidemic_start, load_config
from .reports import analyze_config, build_manifest, json_document
from .scanfit import (
    SweepSpec,
    TimeSeriesError,
    FitOptions,
    fit,
    ingest_timeseries,
    sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_INCONSISTENT = 4


def _write(out_path: str | None, text: str) -> None:
    if out_path is None or out_path == "-":
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _csv_with_manifest(manifest: dict, body: str) -> str:
    header = "# manifest: " + json.dumps(manifest, sort_keys=True) + "\n"
    return header + body


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    grid = np.linspace(0.0, args.t_end, args.samples + 1) if args.samples else None
    trajectory = integrate(
        config,
        epidemic_start(config, args.i0),
        args.t_end,
        rtol=args.rtol,
        atol=args.atol,
        t_eval=None if grid is None else grid[1:],
        max_steps=args.max_steps,
    )
    if grid is not None:
        trajectory = trajectory.at_times(grid)
    manifest = build_manifest(
        "simulate",
        config,
        {
            "t_end": args.t_end,
            "samples": args.samples,
            "i0": args.i0,
            "rtol": args.rtol,
            "atol": args.atol,
            "max_steps": args.max_steps,
            "format": args.format,
            "seed": args.seed,
        },
    )
    if args.format == "json":
        _write(args.out, json_document(manifest, trajectory.to_json_dict()))
    else:
        _write(args.out, _csv_with_manifest(manifest, trajectory.to_csv()))
    return EXIT_OK


def cmd_analyze(args) -> int:
    config = load_config(args.config)
    report = analyze_config(config)
    # consistency is asserted before anything is emitted
    if report["consistency"]["checked"] and not report["consistency"]["consistent"]:
        print(f"regime consistency violated: {report['consistency']['note']}", file=sys.stderr)
        return EXIT_INCONSISTENT
    manifest = build_manifest("analyze", config, {"seed": args.seed})
    _write(args.out, json_document(manifest, report))
    return EXIT_OK


def cmd_dfe(args) -> int:
    config = load_config(args.config)
    closed = solve_dfe_closed_form(config)
    numeric = solve_dfe_numeric(config)
    data = closed.to_dict()
    data["numeric_gap"] = float(max(abs(a - b) for a, b in zip(closed.s, numeric.s)))
    manifest = build_manifest("dfe", config, {"seed": args.seed})
    _write(args.out, json_document(manifest, data))
    return EXIT_OK


def cmd_r0(args) -> int:
    config = load_config(args.config)
    manifest = build_manifest("r0", config, {"seed": args.seed})
    _write(args.out, json_document(manifest, basic_reproduction_number(config).to_dict()))
    return EXIT_OK


def _load_sweep_spec(path: str) -> SweepSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("sweep spec must be a JSON object")
    unknown = sorted(set(raw) - {"config", "parameter", "grid", "observable", "t_end"})
    if unknown:
        raise ConfigError(f"unknown sweep spec keys: {', '.join(unknown)}")
    try:
        config = config_from_dict(raw["config"])
        grid_spec = raw["grid"]
        if isinstance(grid_spec, dict):
            grid = np.linspace(grid_spec["start"], grid_spec["stop"], int(grid_spec["num"]))
        else:
            grid = np.asarray(grid_spec, dtype=float)
        return SweepSpec(
            base_config=config,
            parameter=raw["parameter"],
            grid=grid,
            observable=raw["observable"],
            t_end=float(raw.get("t_end", 2000.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"sweep spec missing key {exc}") from exc


def cmd_sweep(args) -> int:
    spec = _load_sweep_spec(args.spec)
    result = sweep(spec, jobs=args.jobs)
    manifest = build_manifest(
        "sweep",
        spec.base_config,
        {
            "parameter": spec.parameter,
            "observable": spec.observable,
            "grid_size": int(spec.grid.size),
            "t_end": spec.t_end,
            "jobs": args.jobs,
            "format": args.format,
            "seed": args.seed,
        },
    )
    if args.format == "json":
        _write(args.out, json_document(manifest, result.to_json_dict()))
    else:
        _write(args.out, _csv_with_manifest(manifest, result.to_csv()))
    return EXIT_OK


def cmd_fit(args) -> int:
    config = load_config(args.config)
    data = ingest_timeseries(args.data)
    free = [name.strip() for name in args.free.split(",") if name.strip()]
    options = FitOptions(
        start_year=args.start_year,
        initial_prevalence=args.i0,
        log_sse=args.log_sse,
        max_iterations=args.max_iterations,
        restarts=args.restarts,
    )
    result = fit(config, free, data, options)
    manifest = build_manifest(
        "fit",
        config,
        {
            "data": str(args.data),
            "free": free,
            "start_year": args.start_year,
            "i0": args.i0,
            "log_sse": args.log_sse,
            "max_iterations": args.max_iterations,
            "restarts": args.restarts,
            "seed": args.seed,
        },
    )
    _write(args.out, json_document(manifest, result.to_json_dict()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waningsim",
        description="Waning-immunity compartment models: simulation, equilibria, sweeps, fitting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--seed", type=int, default=0, help="recorded in the run manifest")

    p = sub.add_parser("simulate", parents=[common], help="integrate the model and export the trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--t-end", dest="t_end", type=float, required=True, help="horizon in years")
    p.add_argument("--samples", type=int, default=200, help="evenly spaced sample times (0 keeps every accepted step)")
    p.add_argument("--i0", type=float, default=1e-6, help="initial infectious proportion")
    p.add_argument("--rtol", type=float, default=1e-10)
    p.add_argument("--atol", type=float, default=1e-12)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=5_000_000)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="equilibria, R0, and stability report")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("dfe", parents=[common], help="disease-free equilibrium (closed form + numeric gap)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_dfe)

    p = sub.add_parser("r0", parents=[common], help="basic reproduction number report")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_r0)

    p = sub.add_parser("sweep", parents=[common], help="one-parameter sweep from a spec file")
    p.add_argument("--spec", required=True, help="sweep spec JSON (config, parameter, grid, observable)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (order-stable output)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", parents=[common], help="least-squares fit to annual prevalence data")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="CSV: year,prevalence or year,cases,population")
    p.add_argument("--free", default="beta_scale,omega,delta", help="comma-separated free parameters")
    p.add_argument("--start-year", dest="start_year", type=int, default=None)
    p.add_argument("--i0", type=float, default=1e-6)
    p.add_argument("--log-sse", dest="log_sse", action="store_true")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=2000)
    p.add_argument("--restarts", type=int, default=2)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except (ConfigError, TimeSeriesError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
