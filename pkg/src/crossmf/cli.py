#!/usr/bin/env python3
"""CLI entry point for crossmf."""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from crossmf.analytics import DEFAULT_MAX_LAG, summarize_returns
from crossmf.diagnostics import DIAGNOSTIC_CHECKS, run_diagnostics
from crossmf.errors import CrossModelError, ParameterError
from crossmf.experiment import (
    EXPERIMENT_PRESETS,
    MEANFIELD_TIERS,
    TIERS,
    ExperimentSpec,
    default_output_dir,
    experiment_preset,
    run_experiment,
)
from crossmf.params import (
    PARAMETER_PRESETS,
    GridSpec,
    ModelParams,
    Pressures,
    PriceMode,
    default_grid,
    load_preset,
    validate_grid,
    with_overrides,
)
from crossmf.records import format_float, load_params_file, read_record

console = Console()
err_console = Console(stderr=True)

TIER_PARAMETER_PRESET = {
    "abm": "abm-original",
    "kinetic": "kinetic-particle",
    "mf-fv": "meanfield",
    "mf-mc": "meanfield",
}


def configure_logging(verbose: bool) -> None:
    """Send crossmf log records to stderr through rich."""
    logger = logging.getLogger("crossmf")
    logger.handlers.clear()
    handler = RichHandler(console=err_console, show_path=False, show_time=False)
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn leftover '--key=value' arguments into a mapping."""
    overrides: dict[str, str] = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            raise ParameterError(f"Unrecognized argument '{arg}' (overrides take the form --key=value)")
        key, value = arg[2:].split("=", 1)
        key = key.replace("-", "_")
        if key in overrides:
            raise ParameterError(f"Override '{key}' given twice")
        overrides[key] = value
    return overrides


def parse_seeds(args: argparse.Namespace) -> tuple[int, ...] | None:
    if args.seeds is not None:
        try:
            return tuple(int(s) for s in args.seeds.split(",") if s.strip())
        except ValueError as e:
            raise ParameterError(f"Cannot parse seed list '{args.seeds}'") from e
    if args.n_seeds is not None:
        return tuple(range(args.n_seeds))
    return None


def base_params(
    args: argparse.Namespace,
    preset_name: str,
    needs_grid: bool,
) -> tuple[ModelParams, GridSpec | None]:
    """Parameters from --params-file or a parameter preset, grid filled in for mean-field runs."""
    if args.params_file:
        params, grid = load_params_file(args.params_file)
    else:
        params, grid = load_preset(args.param_preset or preset_name)
    if needs_grid and grid is None:
        grid = validate_grid(default_grid(params), params)
    if not needs_grid:
        grid = None
    return params, grid


def build_spec(args: argparse.Namespace, overrides: dict[str, str]) -> ExperimentSpec:
    seeds = parse_seeds(args)
    output = Path(args.output) if args.output else None
    if args.preset:
        spec = experiment_preset(args.preset, seeds=seeds, output_dir=output)
        if args.params_file or args.param_preset:
            # theta and ED(0) belong to the experiment arm, not to the base parameters
            preset = EXPERIMENT_PRESETS[args.preset]
            params, grid = base_params(args, "", spec.tier in MEANFIELD_TIERS)
            params = dataclasses.replace(params, theta=preset.theta, ed0=preset.ed0)
            spec = dataclasses.replace(spec, params=params, grid=grid)
    else:
        if args.tier is None:
            raise ParameterError("simulate needs --preset or --tier")
        params, grid = base_params(args, TIER_PARAMETER_PRESET[args.tier], args.tier in MEANFIELD_TIERS)
        spec = ExperimentSpec(
            tier=args.tier,
            params=params,
            grid=grid,
            model=args.model or "heterogeneous",
            pressures=Pressures(args.pressures or Pressures.FULL.value),
            price_mode=PriceMode(args.price_mode or PriceMode.STOCHASTIC.value),
            seeds=seeds or (0,),
            initial=args.initial or "uniform",
            output_dir=output,
        )
    changes: dict[str, Any] = {}
    if args.preset:
        for flag, attr, convert in (
            ("model", "model", str),
            ("pressures", "pressures", Pressures),
            ("price_mode", "price_mode", PriceMode),
            ("initial", "initial", str),
        ):
            value = getattr(args, flag)
            if value is not None:
                changes[attr] = convert(value)
    if args.n_samples is not None:
        changes["n_samples"] = args.n_samples
    if args.snapshot_every is not None:
        changes["snapshot_every"] = args.snapshot_every
    if overrides:
        changes["params"], changes["grid"] = with_overrides(spec.params, spec.grid, overrides)
    return dataclasses.replace(spec, **changes) if changes else spec


def cmd_simulate(args: argparse.Namespace, overrides: dict[str, str]) -> int:
    """Handle simulate command."""
    spec = build_spec(args, overrides)
    result = run_experiment(spec, max_workers=args.workers)

    aggregate = result.summary["aggregate"]
    table = Table(title=f"Experiment {spec.name}")
    table.add_column("Run", style="cyan")
    table.add_column("Status")
    table.add_column("Final S", justify="right")
    table.add_column("Final ED", justify="right")
    table.add_column("Excess kurtosis", justify="right")
    for run in result.summary["runs"]:
        if run["status"] != "ok":
            table.add_row(str(run["index"]), "[red]failed[/red]", "", "", escape(run["error"]))
            continue
        kurt = run["statistics"].get("excess_kurtosis")
        table.add_row(
            str(run["index"]),
            "[green]ok[/green]",
            f"{run['final_s']:.6f}",
            f"{run['final_ed']:.4f}",
            "-" if kurt is None else f"{kurt:.4f}",
        )
    console.print(table)
    if aggregate["kurtosis_mean"] is not None:
        console.print(
            f"kurtosis mean {aggregate['kurtosis_mean']:.4f}, std {aggregate['kurtosis_std']:.4f}"
        )
    console.print(f"summary written to {result.summary_path}")
    return result.exit_code


def cmd_analyze(args: argparse.Namespace, overrides: dict[str, str]) -> int:
    """Handle analyze command."""
    if overrides:
        raise ParameterError(f"analyze takes no parameter overrides (got {sorted(overrides)})")
    source = Path(args.record)
    record = read_record(source)
    summary = summarize_returns(record.s, args.max_lag)

    out = Path(args.output) if args.output else source.with_name(f"{source.stem}-analysis.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    qq_lines = ["theoretical,sample"] + [f"{format_float(a)},{format_float(b)}" for a, b in summary["qq_points"]]
    out.with_name(f"{source.stem}-qq.csv").write_text("\n".join(qq_lines) + "\n", encoding="ascii")
    acf_lines = ["lag,acf_raw,acf_abs"] + [
        f"{lag},{format_float(raw)},{format_float(ab)}"
        for lag, (raw, ab) in enumerate(zip(summary["acf_raw"], summary["acf_abs"]))
    ]
    out.with_name(f"{source.stem}-acf.csv").write_text("\n".join(acf_lines) + "\n", encoding="ascii")

    table = Table(title=f"Returns of {source.name}")
    table.add_column("Statistic", style="cyan")
    table.add_column("Value", justify="right")
    table.add_row("returns", str(summary["n_returns"]))
    table.add_row("excess kurtosis", f"{summary['excess_kurtosis']:.4f}")
    table.add_row("volatility clustering", f"{summary['volatility_clustering']:.4f}")
    table.add_row("white-noise lags", f"{100 * summary['white_noise_fraction']:.1f}%")
    console.print(table)
    console.print(f"analysis written to {out}")
    return 0


def _verdict_rows(results: dict[str, Any], prefix: str = "") -> list[tuple[str, bool, str]]:
    rows: list[tuple[str, bool, str]] = []
    for key, value in results.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict) and "passed" in value:
            detail = ", ".join(f"{k}={v}" for k, v in value.items() if k != "passed")
            rows.append((name, bool(value["passed"]), detail))
        elif isinstance(value, dict):
            rows.extend(_verdict_rows(value, f"{name}/"))
    return rows


def cmd_diagnose(args: argparse.Namespace, overrides: dict[str, str]) -> int:
    """Handle diagnose command."""
    params, grid = base_params(args, "meanfield", needs_grid=True)
    params, grid = with_overrides(params, grid, overrides)
    assert grid is not None
    checks = args.checks.split(",") if args.checks else None
    results = run_diagnostics(params, grid, checks, entropy_steps=args.entropy_steps)

    out = Path(args.output) if args.output else default_output_dir() / "diagnostics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(results, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    rows = _verdict_rows(results)
    table = Table(title="Diagnostics")
    table.add_column("Check", style="cyan")
    table.add_column("Verdict")
    table.add_column("Detail", style="dim")
    for name, passed, detail in rows:
        table.add_row(name, "[green]pass[/green]" if passed else "[red]fail[/red]", escape(detail))
    console.print(table)
    console.print(f"verdicts written to {out}")
    return 0 if all(passed for _, passed, _ in rows) else 1


def cmd_preset_list(args: argparse.Namespace, overrides: dict[str, str]) -> int:
    """Handle preset-list command."""
    _ = args, overrides
    params_table = Table(title="Parameter presets")
    params_table.add_column("Name", style="cyan")
    params_table.add_column("N", justify="right")
    params_table.add_column("dt", justify="right")
    params_table.add_column("t_end", justify="right")
    params_table.add_column("lambda1/lambda2")
    for name, params in sorted(PARAMETER_PRESETS.items()):
        params_table.add_row(
            name, str(params.n_agents), f"{params.dt:g}", f"{params.t_end:g}", f"{params.lambda1:g}/{params.lambda2:g}"
        )
    console.print(params_table)

    table = Table(title="Experiment presets")
    table.add_column("Name", style="cyan")
    table.add_column("Tier", style="green")
    table.add_column("Model")
    table.add_column("Pressures")
    table.add_column("theta", justify="right")
    table.add_column("Price")
    table.add_column("ED(0)", justify="right")
    table.add_column("Seeds", justify="right")
    table.add_column("Description", style="dim")
    for name, preset in sorted(EXPERIMENT_PRESETS.items()):
        meanfield = preset.tier in MEANFIELD_TIERS
        table.add_row(
            name,
            preset.tier,
            preset.model if meanfield else "-",
            preset.pressures.value,
            f"{preset.theta:g}",
            preset.price_mode.value,
            f"{preset.ed0:g}" if meanfield else "-",
            str(preset.n_seeds),
            preset.description,
        )
    console.print(table)
    return 0


def _add_param_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--params-file", help="Parameter file with 'key = value' lines")
    parser.add_argument(
        "--param-preset", choices=sorted(PARAMETER_PRESETS), help="Built-in parameter preset"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossmf",
        description="Multi-fidelity simulator of the Cross market model",
        allow_abbrev=False,
        epilog="Any model or grid field can be overridden with --<field>=<value>.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command")

    simulate = subparsers.add_parser("simulate", aliases=["sim"], help="Run an experiment", allow_abbrev=False)
    simulate.add_argument("-p", "--preset", choices=sorted(EXPERIMENT_PRESETS), help="Experiment preset")
    simulate.add_argument("--tier", choices=TIERS, help="Model tier (without --preset)")
    simulate.add_argument("--model", choices=["heterogeneous", "homogeneous"], help="Mean-field model")
    simulate.add_argument("--pressures", choices=[p.value for p in Pressures], help="Switching pressures")
    simulate.add_argument("--price-mode", choices=[m.value for m in PriceMode], help="Price dynamics")
    simulate.add_argument("--initial", choices=["uniform", "null-support"], help="Mean-field initial data")
    simulate.add_argument("--seeds", help="Comma separated run indices")
    simulate.add_argument("--n-seeds", type=int, help="Run indices 0..n-1")
    simulate.add_argument("--n-samples", type=int, help="Monte Carlo sample count")
    simulate.add_argument("--snapshot-every", type=int, help="Write densities every k model steps (mean-field tiers)")
    simulate.add_argument("-o", "--output", help="Output directory")
    simulate.add_argument("-j", "--workers", type=int, default=1, help="Worker processes")
    _add_param_source(simulate)

    analyze = subparsers.add_parser("analyze", help="Return statistics of a record", allow_abbrev=False)
    analyze.add_argument("record", help="Record CSV (t,S,ED)")
    analyze.add_argument("-o", "--output", help="JSON output path")
    analyze.add_argument("--max-lag", type=int, default=DEFAULT_MAX_LAG, help="Largest ACF lag")

    diagnose = subparsers.add_parser("diagnose", help="Check the mean-field theory numerically", allow_abbrev=False)
    diagnose.add_argument("--checks", help=f"Comma separated subset of {', '.join(DIAGNOSTIC_CHECKS)}")
    diagnose.add_argument("--entropy-steps", type=int, default=200, help="Model steps per entropy trajectory")
    diagnose.add_argument("-o", "--output", help="JSON output path")
    _add_param_source(diagnose)

    subparsers.add_parser("preset-list", aliases=["presets"], help="List presets", allow_abbrev=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)

    if args.command is None:
        parser.print_help()
        return 2

    command_map = {
        "simulate": cmd_simulate,
        "sim": cmd_simulate,
        "analyze": cmd_analyze,
        "diagnose": cmd_diagnose,
        "preset-list": cmd_preset_list,
        "presets": cmd_preset_list,
    }

    handler = command_map.get(args.command)
    if handler is None:
        raise RuntimeError(f"Unknown command: {args.command}")
    configure_logging(args.verbose)
    try:
        return handler(args, parse_overrides(extra))
    except (CrossModelError, OSError) as e:
        err_console.print(f"[red]error:[/red] {escape(str(e))}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
