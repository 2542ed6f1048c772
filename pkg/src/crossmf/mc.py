"""Monte Carlo particle solver of the mean-field model with histogram reconstruction."""

import logging
from dataclasses import dataclass, field

import numpy as np

from crossmf.abm import herding_update
from crossmf.fv import DensityField, InitialKind, Model, initial_support
from crossmf.kinetic import inaction_switch_prob, switching_rate
from crossmf.params import GridSpec, ModelParams, PriceMode, validate, validate_grid
from crossmf.price import MarketState, excess_demand, initial_market, price_step
from crossmf.records import SimulationRecord

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 100_000
OUT_OF_RANGE_TOL = 0.01


@dataclass
class SampleEnsemble:
    """Samples (gamma_i, m_i, c_i); the count never changes."""

    gamma: np.ndarray
    m: np.ndarray
    c: np.ndarray

    def __len__(self) -> int:
        return int(self.gamma.shape[0])


def effective_switch_prob(rate: np.ndarray | float, dt: float) -> np.ndarray:
    """1 - exp(-dt * rate), in [0, 1) for every finite rate."""
    return -np.expm1(-dt * np.asarray(rate, dtype=np.float64))


def init_samples(
    params: ModelParams,
    n_samples: int,
    rng: np.random.Generator,
    kind: InitialKind = "uniform",
) -> SampleEnsemble:
    """Draw from the same initial law as the finite-volume initial density.

    The first round(N(1+ed0)/2) samples are long. m is drawn before c.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    (m_a, m_b), (c_a, c_b) = initial_support(params, kind)
    n_plus = int(round(n_samples * (1.0 + params.ed0) / 2.0))
    gamma = -np.ones(n_samples, dtype=np.int8)
    gamma[:n_plus] = 1
    m = rng.uniform(m_a, m_b, n_samples)
    c = rng.uniform(c_a, c_b, n_samples)
    return SampleEnsemble(gamma=gamma, m=m, c=c)


def sample_rate(ensemble: SampleEnsemble, s: float, params: ModelParams, model: Model) -> np.ndarray:
    if model == "homogeneous":
        return inaction_switch_prob(ensemble.m, s, params) / params.dt_c
    return switching_rate(ensemble.c, ensemble.m, s, params)


def mc_step(
    ensemble: SampleEnsemble,
    market: MarketState,
    params: ModelParams,
    rng: np.random.Generator,
    price_mode: PriceMode = PriceMode.STOCHASTIC,
    model: Model = "heterogeneous",
) -> tuple[SampleEnsemble, MarketState]:
    """Price first, then switch with probability 1 - exp(-dt lambda) evaluated at the old price.

    Switchers are re-emitted at (S_new, 0); the others accumulate herding pressure.
    """
    ed = excess_demand(ensemble.gamma)
    rate = sample_rate(ensemble, market.s, params, model)
    new_s = price_step(market, params, price_mode, rng)

    switch = rng.random(len(ensemble)) < effective_switch_prob(rate, params.dt)
    ensemble.c = herding_update(ensemble.gamma, ensemble.c, ed, params.dt)
    if switch.any():
        ensemble.gamma[switch] = -ensemble.gamma[switch]
        ensemble.m[switch] = new_s
        ensemble.c[switch] = 0.0

    new_market = MarketState(
        s=new_s,
        ed=excess_demand(ensemble.gamma),
        ed_prev=ed,
        t=market.t + params.dt,
    )
    return ensemble, new_market


def reconstruct_density(
    ensemble: SampleEnsemble,
    grid: GridSpec,
    model: Model = "heterogeneous",
) -> tuple[DensityField, float]:
    """Histogram densities (count / (N * cell measure)) and the out-of-range fraction."""
    n = len(ensemble)
    long = ensemble.gamma > 0
    if model == "homogeneous":
        plus, _ = np.histogram(ensemble.m[long], bins=grid.m_edges)
        minus, _ = np.histogram(ensemble.m[~long], bins=grid.m_edges)
        measure = grid.dm
    else:
        bins = [grid.c_edges, grid.m_edges]
        plus, _, _ = np.histogram2d(ensemble.c[long], ensemble.m[long], bins=bins)
        minus, _, _ = np.histogram2d(ensemble.c[~long], ensemble.m[~long], bins=bins)
        measure = grid.cell_area

    counted = int(plus.sum() + minus.sum())
    out_of_range = (n - counted) / n
    if out_of_range > OUT_OF_RANGE_TOL:
        logger.warning("%.2f%% of samples outside the reconstruction grid", 100 * out_of_range)
    density = DensityField(
        plus=plus.astype(np.float64) / (n * measure),
        minus=minus.astype(np.float64) / (n * measure),
        grid=grid,
    )
    return density, out_of_range


@dataclass
class MCRun:
    """Output of run_mc."""

    record: SimulationRecord
    samples: SampleEnsemble
    density: DensityField
    out_of_range: float
    snapshots: list[tuple[float, DensityField]] = field(default_factory=list)


def run_mc(
    params: ModelParams,
    grid: GridSpec,
    rng: np.random.Generator,
    n_samples: int = DEFAULT_SAMPLES,
    model: Model = "heterogeneous",
    price_mode: PriceMode = PriceMode.STOCHASTIC,
    kind: InitialKind = "uniform",
    snapshot_every: int | None = None,
) -> MCRun:
    """Iterate mc_step over [0, t_end] and reconstruct the final densities."""
    validate(params)
    validate_grid(grid, params)
    ensemble = init_samples(params, n_samples, rng, kind)
    market = initial_market(params, excess_demand(ensemble.gamma))
    logger.info("mc %s run: %d samples, %d steps", model, n_samples, params.n_steps)

    n = params.n_steps
    t = np.empty(n + 1)
    s = np.empty(n + 1)
    ed = np.empty(n + 1)
    t[0], s[0], ed[0] = 0.0, market.s, market.ed
    snapshots: list[tuple[float, DensityField]] = []
    if snapshot_every:
        snapshots.append((0.0, reconstruct_density(ensemble, grid, model)[0]))
    for step in range(1, n + 1):
        ensemble, market = mc_step(ensemble, market, params, rng, price_mode, model)
        t[step] = step * params.dt
        s[step], ed[step] = market.s, market.ed
        if snapshot_every and step % snapshot_every == 0:
            snapshots.append((t[step], reconstruct_density(ensemble, grid, model)[0]))

    density, out_of_range = reconstruct_density(ensemble, grid, model)
    warnings = []
    if out_of_range > OUT_OF_RANGE_TOL:
        warnings.append(f"{100 * out_of_range:.2f}% of samples outside the reconstruction grid")
    record = SimulationRecord(
        t=t,
        s=s,
        ed=ed,
        metadata={
            "tier": "mf-mc",
            "model": model,
            "price_mode": price_mode.value,
            "n_samples": n_samples,
            "out_of_range": out_of_range,
        },
        warnings=warnings,
    )
    return MCRun(record=record, samples=ensemble, density=density, out_of_range=out_of_range, snapshots=snapshots)
