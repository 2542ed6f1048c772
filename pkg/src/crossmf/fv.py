"""Finite-volume solver for the mean-field densities f+ and f-.

Two models share the code: the heterogeneous one over (m, c), where the minority
species is transported in c, and the space-homogeneous one over m alone.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.integrate import trapezoid

from crossmf.errors import DomainError, ParameterError, StabilityError
from crossmf.kinetic import inaction_switch_prob, switching_rate
from crossmf.params import GridSpec, ModelParams, PriceMode, validate, validate_grid
from crossmf.price import MarketState, initial_market, price_step
from crossmf.records import SimulationRecord

logger = logging.getLogger(__name__)

Model = Literal["heterogeneous", "homogeneous"]
InitialKind = Literal["uniform", "null-support"]
QuadratureRule = Literal["midpoint", "trapezoid"]

ShapeFunction = Callable[[float], float]

SAFETY = 0.9
BOUNDARY_MASS_TOL = 1e-6


def shape_c(x: float) -> float:
    """H_C(x) = max(x, 0)."""
    return max(float(x), 0.0)


def check_shape(shape: ShapeFunction) -> ShapeFunction:
    """Spot-check H = 0 on x <= 0, H > 0 on x > 0 and monotone on [0, 1]."""
    negatives = [-1.0, -0.5, -1e-3, 0.0]
    positives = [1e-3, 0.25, 0.5, 0.75, 1.0]
    if any(shape(x) != 0.0 for x in negatives):
        raise ParameterError("shape function must vanish for x <= 0")
    values = [shape(x) for x in positives]
    if any(v <= 0 for v in values):
        raise ParameterError("shape function must be positive for x > 0")
    if any(b < a for a, b in zip(values, values[1:])):
        raise ParameterError("shape function must be nondecreasing on [0, inf)")
    return shape


@dataclass
class DensityField:
    """Cell averages of f+ and f-.

    Heterogeneous fields have shape (n_c, n_m); homogeneous fields are 1-D over m.
    """

    plus: np.ndarray
    minus: np.ndarray
    grid: GridSpec

    @property
    def homogeneous(self) -> bool:
        return self.plus.ndim == 1

    @property
    def cell_measure(self) -> float:
        return self.grid.dm if self.homogeneous else self.grid.cell_area

    def species_masses(self) -> tuple[float, float]:
        w = self.cell_measure
        return float(self.plus.sum() * w), float(self.minus.sum() * w)

    def mass(self) -> float:
        mp, mm = self.species_masses()
        return mp + mm

    def copy(self) -> "DensityField":
        return DensityField(self.plus.copy(), self.minus.copy(), self.grid)

    def l1_distance(self, other: "DensityField") -> float:
        diff = np.abs(self.plus - other.plus).sum() + np.abs(self.minus - other.minus).sum()
        return float(diff * self.cell_measure)

    def m_marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Densities over m after integrating out c."""
        if self.homogeneous:
            return self.plus.copy(), self.minus.copy()
        dc = self.grid.dc
        return self.plus.sum(axis=0) * dc, self.minus.sum(axis=0) * dc

    def min_value(self) -> float:
        return float(min(self.plus.min(), self.minus.min()))


def integrate(values: np.ndarray, grid: GridSpec, rule: QuadratureRule = "midpoint") -> float:
    """Integral of cell values over the grid (1-D over m or 2-D over (c, m))."""
    if rule == "midpoint":
        w = grid.dm if values.ndim == 1 else grid.cell_area
        return float(values.sum() * w)
    if values.ndim == 1:
        return float(trapezoid(values, grid.m_centers))
    return float(trapezoid(trapezoid(values, grid.m_centers, axis=1), grid.c_centers))


def ed_functional(density: DensityField, rule: QuadratureRule = "midpoint") -> float:
    """ED[f+, f-] = integral of (f+ - f-)."""
    return integrate(density.plus - density.minus, density.grid, rule)


def rate_field(grid: GridSpec, params: ModelParams, s: float) -> np.ndarray:
    """Heterogeneous switching rate lambda(m, c, s) on cell centres, shape (n_c, n_m)."""
    return switching_rate(grid.c_centers[:, None], grid.m_centers[None, :], s, params)


def homogeneous_rate(grid: GridSpec, params: ModelParams, s: float) -> np.ndarray:
    """Rate of the c-free model, lambda_h = q(m, s) / dt_C, on m centres."""
    return inaction_switch_prob(grid.m_centers, s, params) / params.dt_c


def max_rate(params: ModelParams, model: Model) -> float:
    """Upper bound of the switching rate over the whole domain."""
    if model == "homogeneous":
        return 1.0 / params.dt_c
    return (params.lambda1 + params.lambda2) / params.dt_c


def deposit_cell(grid: GridSpec, s: float) -> tuple[int, int]:
    """(row, column) of the cell containing the re-emission point (s, 0)."""
    if not grid.m_lo <= s < grid.m_hi:
        raise DomainError(
            f"re-emission price S={s!r} outside m-range [{grid.m_lo}, {grid.m_hi}); "
            "enlarge the grid"
        )
    col = min(int((s - grid.m_lo) / grid.dm), grid.n_m - 1)
    row = min(int((0.0 - grid.c_lo) / grid.dc), grid.n_c - 1)
    return row, col


def collision_apply(
    density: DensityField,
    s: float,
    rate: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gain minus loss for both species.

    Loss is rate*f per cell. The gain of each species is the opposite species' loss flux,
    deposited into the single cell containing (s, 0) and divided by that cell's measure.
    """
    loss_plus = rate * density.plus
    loss_minus = rate * density.minus
    d_plus = -loss_plus
    d_minus = -loss_minus

    # flux / measure * measure: deposit value equals the plain sum
    gain_plus = float(loss_minus.sum())
    gain_minus = float(loss_plus.sum())
    if density.homogeneous:
        _, col = deposit_cell(density.grid, s)
        d_plus[col] += gain_plus
        d_minus[col] += gain_minus
    else:
        row, col = deposit_cell(density.grid, s)
        d_plus[row, col] += gain_plus
        d_minus[row, col] += gain_minus
    return d_plus, d_minus


def _upwind(values: np.ndarray, speed: float, dc: float) -> np.ndarray:
    """-d/dc(speed * f) with first-order upwind fluxes, speed >= 0.

    No inflow through c_lo and no outflow through c_hi.
    """
    out = np.zeros_like(values)
    if speed == 0.0:
        return out
    flux = speed * values[:-1]
    out[:-1] -= flux / dc
    out[1:] += flux / dc
    return out


def advection_apply(
    density: DensityField,
    ed: float,
    shape: ShapeFunction = shape_c,
) -> tuple[np.ndarray, np.ndarray]:
    """Transport in c: f+ moves at H(-ED), f- at H(ED)."""
    if density.homogeneous:
        raise ValueError("advection is only defined for heterogeneous fields")
    dc = density.grid.dc
    return _upwind(density.plus, shape(-ed), dc), _upwind(density.minus, shape(ed), dc)


def stable_dt(grid: GridSpec | None, v_max: float, lambda_max: float, safety: float = SAFETY) -> float:
    """Largest explicit Euler step keeping every cell nonnegative.

    dt <= safety * min(dc / v_max, 1 / lambda_eff), lambda_eff = lambda_max + v_max / dc:
    a cell can be drained by collision and outflow in the same step.
    """
    bounds: list[float] = []
    lambda_eff = lambda_max
    if v_max > 0:
        if grid is None:
            raise ValueError("advection bound needs a grid")
        bounds.append(grid.dc / v_max)
        lambda_eff += v_max / grid.dc
    if lambda_eff > 0:
        bounds.append(1.0 / lambda_eff)
    if not bounds:
        return math.inf
    return safety * min(bounds)


def model_stable_dt(params: ModelParams, grid: GridSpec, model: Model, shape: ShapeFunction = shape_c) -> float:
    v_max = shape(1.0) if model == "heterogeneous" else 0.0
    return stable_dt(grid, v_max, max_rate(params, model))


def check_step(h: float, bound: float) -> None:
    if h > bound * (1.0 + 1e-12):
        raise StabilityError(f"time step {h!r} exceeds stability bound {bound!r}")


def ed_rate(density: DensityField, rate: np.ndarray) -> float:
    """dED/dt = 2 * integral of (f- - f+) * lambda."""
    return 2.0 * float(((density.minus - density.plus) * rate).sum() * density.cell_measure)


def _advance(
    density: DensityField,
    market: MarketState,
    params: ModelParams,
    rng: np.random.Generator,
    price_mode: PriceMode,
    h: float,
    d_plus: np.ndarray,
    d_minus: np.ndarray,
) -> tuple[DensityField, MarketState]:
    new_field = DensityField(density.plus + h * d_plus, density.minus + h * d_minus, density.grid)
    new_s = price_step(market, params, price_mode, rng, dt=h)
    new_market = MarketState(
        s=new_s,
        ed=ed_functional(new_field),
        ed_prev=market.ed,
        t=market.t + h,
    )
    return new_field, new_market


def _euler_update(
    density: DensityField,
    market: MarketState,
    params: ModelParams,
    rng: np.random.Generator,
    price_mode: PriceMode,
    h: float,
    rate: np.ndarray,
    shape: ShapeFunction,
) -> tuple[DensityField, MarketState]:
    """One unchecked Euler step with a precomputed rate field at market.s."""
    d_plus, d_minus = collision_apply(density, market.s, rate)
    if not density.homogeneous:
        a_plus, a_minus = advection_apply(density, market.ed, shape)
        d_plus, d_minus = d_plus + a_plus, d_minus + a_minus
    return _advance(density, market, params, rng, price_mode, h, d_plus, d_minus)


def step_heterogeneous(
    density: DensityField,
    market: MarketState,
    params: ModelParams,
    rng: np.random.Generator,
    price_mode: PriceMode = PriceMode.STOCHASTIC,
    shape: ShapeFunction = shape_c,
    dt: float | None = None,
) -> tuple[DensityField, MarketState]:
    """Explicit Euler step of transport plus collision, then the price step."""
    h = params.dt if dt is None else dt
    check_step(h, model_stable_dt(params, density.grid, "heterogeneous", shape))
    rate = rate_field(density.grid, params, market.s)
    return _euler_update(density, market, params, rng, price_mode, h, rate, shape)


def step_homogeneous(
    density: DensityField,
    market: MarketState,
    params: ModelParams,
    rng: np.random.Generator,
    price_mode: PriceMode = PriceMode.STOCHASTIC,
    dt: float | None = None,
) -> tuple[DensityField, MarketState]:
    """Explicit Euler step of the c-free collision model, then the price step."""
    h = params.dt if dt is None else dt
    check_step(h, model_stable_dt(params, density.grid, "homogeneous"))
    rate = homogeneous_rate(density.grid, params, market.s)
    return _euler_update(density, market, params, rng, price_mode, h, rate, shape_c)


class RateCache:
    """Rate field of the last price seen; recomputed only when S changes."""

    def __init__(self, grid: GridSpec, params: ModelParams, model: Model) -> None:
        self.grid = grid
        self.params = params
        self.compute = rate_field if model == "heterogeneous" else homogeneous_rate
        self.s: float | None = None
        self.rate: np.ndarray | None = None
        self.evaluations = 0

    def at(self, s: float) -> np.ndarray:
        if self.rate is None or s != self.s:
            self.rate = self.compute(self.grid, self.params, s)
            self.s = s
            self.evaluations += 1
        return self.rate


def _interval_weights(edges: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Cell averages of the uniform probability density on [lo, hi]."""
    overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return overlap / ((hi - lo) * np.diff(edges))


def initial_support(params: ModelParams, kind: InitialKind) -> tuple[tuple[float, float], tuple[float, float]]:
    """((m_lo, m_hi), (c_lo, c_hi)) of the initial law."""
    s0 = params.s0
    if kind == "uniform":
        return (s0 / (1.0 + params.A2), s0 * (1.0 + params.A2)), (params.B1, params.B2)
    if kind == "null-support":
        half = params.A1 / 2.0
        return (s0 / (1.0 + half), s0 * (1.0 + half)), (0.0, params.B1 / 2.0)
    raise ParameterError(f"Unknown initial density kind '{kind}' (valid: uniform, null-support)")


def initial_density(
    grid: GridSpec,
    params: ModelParams,
    kind: InitialKind = "uniform",
    model: Model = "heterogeneous",
    floor: float = 0.0,
) -> DensityField:
    """Product-of-uniforms initial data with species masses (1 +/- ed0) / 2.

    A positive floor adds a uniform background everywhere before renormalising.
    """
    (m_a, m_b), (c_a, c_b) = initial_support(params, kind)
    profile = _interval_weights(grid.m_edges, m_a, m_b)
    if model == "heterogeneous":
        profile = np.outer(_interval_weights(grid.c_edges, c_a, c_b), profile)
    if floor > 0:
        profile = profile + floor
    measure = grid.dm if model == "homogeneous" else grid.cell_area
    total = profile.sum() * measure
    if total <= 0:
        raise DomainError(f"initial support of kind '{kind}' does not intersect the grid")
    profile = profile / total
    return DensityField(
        plus=0.5 * (1.0 + params.ed0) * profile,
        minus=0.5 * (1.0 - params.ed0) * profile,
        grid=grid,
    )


@dataclass
class FVRun:
    """Output of run_fv: time series, final field, per-step L1 changes and snapshots."""

    record: SimulationRecord
    density: DensityField
    l1_changes: np.ndarray
    snapshots: list[tuple[float, DensityField]] = field(default_factory=list)
    substeps: int = 1


def choose_substeps(params: ModelParams, grid: GridSpec, model: Model, shape: ShapeFunction = shape_c) -> int:
    """Smallest k with dt / k inside the stability bound."""
    bound = model_stable_dt(params, grid, model, shape)
    return max(1, math.ceil(params.dt / bound - 1e-12))


def run_fv(
    params: ModelParams,
    grid: GridSpec,
    rng: np.random.Generator,
    model: Model = "heterogeneous",
    price_mode: PriceMode = PriceMode.STOCHASTIC,
    initial: DensityField | None = None,
    kind: InitialKind = "uniform",
    shape: ShapeFunction = shape_c,
    substeps: int | None = None,
    snapshot_every: int | None = None,
) -> FVRun:
    """Integrate the mean-field model over [0, t_end].

    Each model step dt is split into k equal substeps; S and ED are recorded once per dt.
    """
    validate(params)
    validate_grid(grid, params)
    check_shape(shape)
    density = initial if initial is not None else initial_density(grid, params, kind, model)
    if density.homogeneous != (model == "homogeneous"):
        raise ParameterError(f"initial field does not match model '{model}'")

    k = substeps if substeps is not None else choose_substeps(params, grid, model, shape)
    h = params.dt / k
    check_step(h, model_stable_dt(params, grid, model, shape))
    rates = RateCache(grid, params, model)
    logger.info("fv %s run: grid %dx%d, %d substeps per step", model, grid.n_c, grid.n_m, k)

    market = initial_market(params, ed_functional(density))
    n = params.n_steps
    t = np.empty(n + 1)
    s = np.empty(n + 1)
    ed = np.empty(n + 1)
    l1 = np.empty(n)
    t[0], s[0], ed[0] = 0.0, market.s, market.ed
    snapshots: list[tuple[float, DensityField]] = []
    if snapshot_every:
        snapshots.append((0.0, density.copy()))
    warnings: list[str] = []

    for step in range(1, n + 1):
        before = density
        for _ in range(k):
            rate = rates.at(market.s)
            density, market = _euler_update(density, market, params, rng, price_mode, h, rate, shape)
        t[step] = step * params.dt
        s[step], ed[step] = market.s, market.ed
        l1[step - 1] = density.l1_distance(before)
        if snapshot_every and step % snapshot_every == 0:
            snapshots.append((t[step], density.copy()))
        if not warnings and model == "heterogeneous":
            edge_mass = (density.plus[-1].sum() + density.minus[-1].sum()) * grid.cell_area
            if edge_mass > BOUNDARY_MASS_TOL:
                msg = f"mass {edge_mass:.3g} reached c_hi={grid.c_hi} at t={t[step]:.6g}"
                logger.warning(msg)
                warnings.append(msg)

    record = SimulationRecord(
        t=t,
        s=s,
        ed=ed,
        metadata={
            "tier": "mf-fv",
            "model": model,
            "price_mode": price_mode.value,
            "substeps": k,
            "rate_evaluations": rates.evaluations,
            "mass": density.mass(),
        },
        warnings=warnings,
    )
    return FVRun(record=record, density=density, l1_changes=l1, snapshots=snapshots, substeps=k)
