"""Batch experiments: seeded ensembles of any tier dispatched to a worker pool."""

import asyncio
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np

from crossmf.abm import run_abm
from crossmf.analytics import summarize_returns
from crossmf.errors import CrossModelError, ParameterError, StatisticsError, UnknownPresetError
from crossmf.fv import FVRun, InitialKind, Model, run_fv
from crossmf.kinetic import arm_params, run_kinetic_particle
from crossmf.mc import DEFAULT_SAMPLES, MCRun, run_mc
from crossmf.params import (
    GridSpec,
    ModelParams,
    Pressures,
    PriceMode,
    load_preset,
    validate,
    validate_grid,
)
from crossmf.records import SimulationRecord, encode_density, params_to_dict, write_record

logger = logging.getLogger(__name__)

Tier = Literal["abm", "kinetic", "mf-fv", "mf-mc"]
TIERS: tuple[str, ...] = ("abm", "kinetic", "mf-fv", "mf-mc")
MEANFIELD_TIERS = ("mf-fv", "mf-mc")

OUTPUT_DIR_ENV = "CROSSMF_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "crossmf-out"
SUMMARY_FILE = "summary.json"


def default_output_dir() -> Path:
    """Output directory from CROSSMF_OUTPUT_DIR, else ./crossmf-out."""
    return Path(os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)


def run_rng(seed: int, run_index: int) -> np.random.Generator:
    """Independent stream for one run: SeedSequence(seed, spawn_key=(run_index,))."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run_index,)))


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce an ensemble of runs."""

    tier: Tier
    params: ModelParams
    grid: GridSpec | None = None
    model: Model = "heterogeneous"
    pressures: Pressures = Pressures.FULL
    price_mode: PriceMode = PriceMode.STOCHASTIC
    seeds: tuple[int, ...] = (0,)
    n_samples: int = DEFAULT_SAMPLES
    initial: InitialKind = "uniform"
    snapshot_every: int | None = None
    output_dir: Path | None = None
    name: str = "custom"

    @property
    def theta(self) -> float:
        return self.params.theta


def validate_spec(spec: ExperimentSpec) -> ExperimentSpec:
    """Reject tier/flag combinations that make no sense."""
    problems: list[str] = []
    if spec.tier not in TIERS:
        problems.append(f"unknown tier '{spec.tier}' (valid: {', '.join(TIERS)})")
    meanfield = spec.tier in MEANFIELD_TIERS
    if meanfield and spec.grid is None:
        problems.append(f"tier {spec.tier} needs a grid")
    if not meanfield and spec.grid is not None:
        problems.append(f"tier {spec.tier} takes no grid")
    if not meanfield and spec.model != "heterogeneous":
        problems.append(f"model '{spec.model}' only applies to mean-field tiers")
    if spec.model not in ("heterogeneous", "homogeneous"):
        problems.append(f"unknown model '{spec.model}'")
    if not meanfield and spec.initial != "uniform":
        problems.append(f"initial kind '{spec.initial}' only applies to mean-field tiers")
    if spec.snapshot_every is not None:
        if not meanfield:
            problems.append("density snapshots only apply to mean-field tiers")
        if spec.snapshot_every < 1:
            problems.append(f"snapshot_every must be >= 1 (snapshot_every={spec.snapshot_every})")
    if not spec.seeds:
        problems.append("at least one seed index is required")
    if len(set(spec.seeds)) != len(spec.seeds):
        problems.append(f"duplicate seed indices {list(spec.seeds)}")
    if any(i < 0 for i in spec.seeds):
        problems.append("seed indices must be >= 0")
    if spec.n_samples < 1:
        problems.append(f"n_samples must be >= 1 (n_samples={spec.n_samples})")
    if problems:
        raise ParameterError("invalid experiment: " + "; ".join(problems))
    validate(spec.params)
    if spec.grid is not None:
        validate_grid(spec.grid, spec.params)
    return spec


@dataclass(frozen=True)
class ExperimentPreset:
    """A named experiment arm; materialised into an ExperimentSpec by experiment_preset."""

    description: str
    tier: Tier
    base: str
    theta: float = 0.0
    pressures: Pressures = Pressures.FULL
    price_mode: PriceMode = PriceMode.STOCHASTIC
    model: Model = "heterogeneous"
    ed0: float = 0.334
    initial: InitialKind = "uniform"
    n_seeds: int = 10


_INACTION = Pressures.INACTION_ONLY
_DET = PriceMode.DETERMINISTIC

EXPERIMENT_PRESETS: dict[str, ExperimentPreset] = {
    "abm-inaction": ExperimentPreset("ABM, inaction pressure only", "abm", "abm-original", 2.0, _INACTION),
    "abm-herding": ExperimentPreset("ABM, inaction and herding", "abm", "abm-original", 0.0),
    "abm-herding-vol": ExperimentPreset("ABM, both pressures, heteroskedastic noise", "abm", "abm-original", 2.0),
    "kinetic-inaction": ExperimentPreset("kinetic particles, inaction only", "kinetic", "kinetic-particle", 0.0, _INACTION),
    "kinetic-herding": ExperimentPreset("kinetic particles, both pressures", "kinetic", "kinetic-particle", 0.0),
    "kinetic-inaction-vol": ExperimentPreset(
        "kinetic particles, inaction only, heteroskedastic", "kinetic", "kinetic-particle", 2.0, _INACTION
    ),
    "kinetic-herding-vol": ExperimentPreset(
        "kinetic particles, both pressures, heteroskedastic", "kinetic", "kinetic-particle", 2.0
    ),
    "homogeneous-noise": ExperimentPreset(
        "space-homogeneous mean field, stochastic price", "mf-fv", "meanfield", 0.0, model="homogeneous"
    ),
    "heterogeneous-noise": ExperimentPreset("heterogeneous mean field, stochastic price", "mf-fv", "meanfield", 0.0),
    "heterogeneous-noise-vol": ExperimentPreset(
        "heterogeneous mean field, heteroskedastic noise", "mf-fv", "meanfield", 2.0
    ),
    "homogeneous-skeleton": ExperimentPreset(
        "space-homogeneous deterministic skeleton", "mf-fv", "meanfield", 0.0, price_mode=_DET,
        model="homogeneous", n_seeds=1,
    ),
    "heterogeneous-skeleton": ExperimentPreset(
        "heterogeneous deterministic skeleton", "mf-fv", "meanfield", 2.0, price_mode=_DET, n_seeds=1
    ),
    "monte-carlo-vol": ExperimentPreset(
        "Monte Carlo mean field, heteroskedastic noise", "mf-mc", "meanfield", 2.0, n_seeds=1
    ),
    "homogeneous-null-support": ExperimentPreset(
        "homogeneous skeleton started in the null space", "mf-fv", "meanfield", 0.0, price_mode=_DET,
        model="homogeneous", ed0=0.0, initial="null-support", n_seeds=1,
    ),
    "homogeneous-tilted": ExperimentPreset(
        "homogeneous skeleton with ED(0) = 0.99", "mf-fv", "meanfield", 0.0, price_mode=_DET,
        model="homogeneous", ed0=0.99, n_seeds=1,
    ),
    "heterogeneous-tilted": ExperimentPreset(
        "heterogeneous skeleton with ED(0) = 0.01", "mf-fv", "meanfield", 0.0, price_mode=_DET,
        ed0=0.01, n_seeds=1,
    ),
    "heterogeneous-null-support": ExperimentPreset(
        "heterogeneous skeleton started in the null space", "mf-fv", "meanfield", 0.0, price_mode=_DET,
        ed0=0.01, initial="null-support", n_seeds=1,
    ),
}


def experiment_preset(
    name: str,
    seeds: tuple[int, ...] | None = None,
    output_dir: Path | None = None,
) -> ExperimentSpec:
    """Build the ExperimentSpec of a named experiment preset."""
    preset = EXPERIMENT_PRESETS.get(name)
    if preset is None:
        valid = ", ".join(sorted(EXPERIMENT_PRESETS))
        raise UnknownPresetError(f"Unknown experiment preset '{name}' (valid: {valid})")
    params, grid = load_preset(preset.base)
    params = dataclasses.replace(params, theta=preset.theta, ed0=preset.ed0)
    return validate_spec(
        ExperimentSpec(
            tier=preset.tier,
            params=params,
            grid=grid,
            model=preset.model,
            pressures=preset.pressures,
            price_mode=preset.price_mode,
            seeds=tuple(range(preset.n_seeds)) if seeds is None else seeds,
            initial=preset.initial,
            output_dir=output_dir,
            name=name,
        )
    )


@dataclass
class RunOutcome:
    """Result of one seed; densities only for mean-field tiers."""

    index: int
    record: SimulationRecord
    plus: np.ndarray | None = None
    minus: np.ndarray | None = None
    snapshots: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)


def run_single(spec: ExperimentSpec, run_index: int) -> RunOutcome:
    """Run one seed of the experiment. Module-level so worker processes can import it."""
    rng = run_rng(spec.params.seed, run_index)
    if spec.tier == "abm":
        return RunOutcome(run_index, run_abm(spec.params, spec.pressures, rng, spec.price_mode))
    if spec.tier == "kinetic":
        return RunOutcome(run_index, run_kinetic_particle(spec.params, spec.pressures, rng, spec.price_mode))

    assert spec.grid is not None
    params = arm_params(spec.params, spec.pressures)
    run: FVRun | MCRun
    if spec.tier == "mf-fv":
        run = run_fv(
            params, spec.grid, rng, spec.model, spec.price_mode, kind=spec.initial, snapshot_every=spec.snapshot_every
        )
    else:
        run = run_mc(
            params, spec.grid, rng, spec.n_samples, spec.model, spec.price_mode, spec.initial, spec.snapshot_every
        )
    snapshots = [(round(t / params.dt), f.plus, f.minus) for t, f in run.snapshots]
    return RunOutcome(run_index, run.record, run.density.plus, run.density.minus, snapshots)


def record_statistics(record: SimulationRecord) -> dict[str, Any]:
    """Return statistics of one record, or the reason they are undefined."""
    try:
        stats = summarize_returns(record.s)
    except StatisticsError as e:
        return {"error": str(e)}
    stats.pop("qq_points")
    return stats


def _json_safe(value: Any) -> Any:
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return _json_safe(value.item())
    return value


def _pooled(rows: list[list[float]]) -> list[float] | None:
    if not rows:
        return None
    width = min(len(r) for r in rows)
    return np.mean([r[:width] for r in rows], axis=0).tolist()


def build_summary(
    spec: ExperimentSpec,
    outcomes: list[RunOutcome],
    failures: dict[int, str],
) -> dict[str, Any]:
    """Aggregate per-seed statistics into the JSON summary."""
    runs: list[dict[str, Any]] = []
    kurtosis: list[float] = []
    acf_raw: list[list[float]] = []
    acf_abs: list[list[float]] = []
    for outcome in sorted(outcomes, key=lambda o: o.index):
        stats = record_statistics(outcome.record)
        runs.append(
            {
                "index": outcome.index,
                "status": "ok",
                "file": f"run-{outcome.index}.csv",
                "final_s": float(outcome.record.s[-1]),
                "final_ed": float(outcome.record.ed[-1]),
                "statistics": stats,
                "warnings": list(outcome.record.warnings),
                "snapshot_steps": [step for step, _, _ in outcome.snapshots],
            }
        )
        if "error" not in stats:
            kurtosis.append(stats["excess_kurtosis"])
            acf_raw.append(stats["acf_raw"])
            acf_abs.append(stats["acf_abs"])
    for index, message in sorted(failures.items()):
        runs.append({"index": index, "status": "failed", "error": message})
    runs.sort(key=lambda r: r["index"])

    summary = {
        "name": spec.name,
        "tier": spec.tier,
        "model": spec.model if spec.tier in MEANFIELD_TIERS else None,
        "pressures": spec.pressures.value,
        "price_mode": spec.price_mode.value,
        "initial": spec.initial,
        "snapshot_every": spec.snapshot_every,
        "n_samples": spec.n_samples if spec.tier == "mf-mc" else None,
        "seeds": list(spec.seeds),
        "params": params_to_dict(spec.params, spec.grid),
        "runs": runs,
        "aggregate": {
            "n_ok": len(outcomes),
            "n_failed": len(failures),
            "kurtosis_mean": float(np.mean(kurtosis)) if kurtosis else None,
            "kurtosis_std": float(np.std(kurtosis)) if kurtosis else None,
            "acf_raw_pooled": _pooled(acf_raw),
            "acf_abs_pooled": _pooled(acf_abs),
        },
    }
    return _json_safe(summary)


@dataclass
class ExperimentResult:
    """Records by seed index, the summary and where it was written."""

    spec: ExperimentSpec
    records: dict[int, SimulationRecord]
    summary: dict[str, Any]
    output_dir: Path
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def summary_path(self) -> Path:
        return self.output_dir / SUMMARY_FILE

    @property
    def exit_code(self) -> int:
        return 0 if self.records else 1


async def _dispatch(
    spec: ExperimentSpec,
    index: int,
    executor: Executor | None,
) -> RunOutcome | str:
    logger.info("%s: starting run %d (tier %s)", spec.name, index, spec.tier)
    try:
        if executor is None:
            outcome = run_single(spec, index)
        else:
            loop = asyncio.get_running_loop()
            outcome = await loop.run_in_executor(executor, run_single, spec, index)
    except CrossModelError as e:
        logger.warning("%s: run %d failed: %s", spec.name, index, e)
        return str(e)
    logger.info("%s: run %d finished, %d points", spec.name, index, len(outcome.record))
    return outcome


def write_outputs(spec: ExperimentSpec, outcomes: list[RunOutcome], summary: dict[str, Any], out: Path) -> None:
    for outcome in outcomes:
        write_record(outcome.record, out / f"run-{outcome.index}.csv")
        if outcome.plus is not None and outcome.minus is not None:
            (out / f"run-{outcome.index}-final-plus.csv").write_text(encode_density(outcome.plus), encoding="ascii")
            (out / f"run-{outcome.index}-final-minus.csv").write_text(encode_density(outcome.minus), encoding="ascii")
        for step, plus, minus in outcome.snapshots:
            (out / f"run-{outcome.index}-{step}-plus.csv").write_text(encode_density(plus), encoding="ascii")
            (out / f"run-{outcome.index}-{step}-minus.csv").write_text(encode_density(minus), encoding="ascii")
    summary_path = out / SUMMARY_FILE
    try:
        summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"Failed to write summary to {summary_path}: {e}") from e


async def run_experiment_async(spec: ExperimentSpec, max_workers: int = 1) -> ExperimentResult:
    """Run every seed, one worker process per simulation, then write records and summary."""
    validate_spec(spec)
    out = spec.output_dir if spec.output_dir is not None else default_output_dir()
    out.mkdir(parents=True, exist_ok=True)

    if max_workers <= 1:
        results = [await _dispatch(spec, i, None) for i in spec.seeds]
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            results = await asyncio.gather(*(_dispatch(spec, i, executor) for i in spec.seeds))

    outcomes = [r for r in results if isinstance(r, RunOutcome)]
    failures = {i: r for i, r in zip(spec.seeds, results) if isinstance(r, str)}
    summary = build_summary(spec, outcomes, failures)
    write_outputs(spec, outcomes, summary, out)
    logger.info("%s: %d ok, %d failed, summary at %s", spec.name, len(outcomes), len(failures), out / SUMMARY_FILE)
    return ExperimentResult(
        spec=spec,
        records={o.index: o.record for o in outcomes},
        summary=summary,
        output_dir=out,
        failures=failures,
    )


def run_experiment(spec: ExperimentSpec, max_workers: int = 1) -> ExperimentResult:
    """Blocking wrapper around run_experiment_async."""
    return asyncio.run(run_experiment_async(spec, max_workers))
