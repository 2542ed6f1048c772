"""Model parameters, computational grids and the built-in parameter presets."""

import dataclasses
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum

import numpy as np

from crossmf.errors import ParameterError, UnknownPresetError


class Pressures(str, Enum):
    """Which switching pressures are active in a run."""

    INACTION_ONLY = "inaction-only"
    FULL = "full"


class PriceMode(str, Enum):
    """How the stock price evolves."""

    STOCHASTIC = "stochastic"
    DETERMINISTIC = "deterministic"
    FROZEN = "frozen"


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters shared by every model tier."""

    kappa: float = 0.2
    theta: float = 0.0
    A1: float = 0.1
    A2: float = 0.3
    b1: float = 25.0
    b2: float = 100.0
    dt: float = 4e-5
    t_end: float = 0.4
    n_agents: int = 1000
    lambda1: float = 0.5
    lambda2: float = 0.5
    s0: float = 1.0
    seed: int = 0
    dt_cross: float | None = None
    ed0: float = 0.0

    @property
    def dt_c(self) -> float:
        """Characteristic time step of the agent model (defaults to dt)."""
        return self.dt if self.dt_cross is None else self.dt_cross

    @property
    def B1(self) -> float:
        return self.b1 * self.dt_c

    @property
    def B2(self) -> float:
        return self.b2 * self.dt_c

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid over memory m and herding pressure c.

    Arrays on the grid have shape (n_c, n_m): row index is c, column index is m.
    """

    m_lo: float
    m_hi: float
    c_lo: float
    c_hi: float
    n_m: int
    n_c: int

    @property
    def dm(self) -> float:
        return (self.m_hi - self.m_lo) / self.n_m

    @property
    def dc(self) -> float:
        return (self.c_hi - self.c_lo) / self.n_c

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_c, self.n_m)

    @property
    def cell_area(self) -> float:
        return self.dm * self.dc

    @property
    def m_centers(self) -> np.ndarray:
        return self.m_lo + (np.arange(self.n_m) + 0.5) * self.dm

    @property
    def c_centers(self) -> np.ndarray:
        return self.c_lo + (np.arange(self.n_c) + 0.5) * self.dc

    @property
    def m_edges(self) -> np.ndarray:
        return np.linspace(self.m_lo, self.m_hi, self.n_m + 1)

    @property
    def c_edges(self) -> np.ndarray:
        return np.linspace(self.c_lo, self.c_hi, self.n_c + 1)


def default_grid(params: ModelParams, n_m: int = 400, n_c: int = 400) -> GridSpec:
    """Domain m in [0.25, 2.5], c in [0, 2*B2]."""
    return GridSpec(m_lo=0.25, m_hi=2.5, c_lo=0.0, c_hi=2.0 * params.B2, n_m=n_m, n_c=n_c)


def validate(params: ModelParams) -> ModelParams:
    """Return params unchanged, or raise ParameterError listing every violation."""
    problems: list[str] = []
    if not params.A1 > 0:
        problems.append(f"A1 > 0 violated (A1={params.A1})")
    if not params.A1 < params.A2:
        problems.append(f"A1 < A2 violated (A1={params.A1}, A2={params.A2})")
    if not params.b1 > 0:
        problems.append(f"b1 > 0 violated (b1={params.b1})")
    if not params.b1 < params.b2:
        problems.append(f"b1 < b2 violated (b1={params.b1}, b2={params.b2})")
    if not params.dt > 0:
        problems.append(f"dt > 0 violated (dt={params.dt})")
    if not params.t_end > 0:
        problems.append(f"t_end > 0 violated (t_end={params.t_end})")
    if not params.s0 > 0:
        problems.append(f"s0 > 0 violated (s0={params.s0})")
    if not params.kappa > 0:
        problems.append(f"kappa > 0 violated (kappa={params.kappa})")
    if not params.theta >= 0:
        problems.append(f"theta >= 0 violated (theta={params.theta})")
    if params.n_agents < 1:
        problems.append(f"n_agents >= 1 violated (n_agents={params.n_agents})")
    if params.lambda1 < 0 or params.lambda2 < 0:
        problems.append(
            f"lambda1, lambda2 >= 0 violated (lambda1={params.lambda1}, lambda2={params.lambda2})"
        )
    if abs(params.lambda1 + params.lambda2 - 1.0) > 1e-12:
        problems.append(
            f"lambda1 + lambda2 = 1 violated (sum={params.lambda1 + params.lambda2})"
        )
    if params.dt_cross is not None and not params.dt_cross > 0:
        problems.append(f"dt_cross > 0 violated (dt_cross={params.dt_cross})")
    elif params.dt > 0 and not 0 < params.B1 < params.B2:
        problems.append(f"0 < B1 < B2 violated (B1={params.B1}, B2={params.B2})")
    if not -1.0 <= params.ed0 <= 1.0:
        problems.append(f"|ed0| <= 1 violated (ed0={params.ed0})")

    if problems:
        raise ParameterError("invalid parameters: " + "; ".join(problems))
    return params


def validate_grid(grid: GridSpec, params: ModelParams) -> GridSpec:
    """Check grid shape and that the re-emission point (s0, 0) is covered."""
    problems: list[str] = []
    if not grid.m_lo < grid.m_hi:
        problems.append(f"m_lo < m_hi violated (m_lo={grid.m_lo}, m_hi={grid.m_hi})")
    if not grid.c_lo < grid.c_hi:
        problems.append(f"c_lo < c_hi violated (c_lo={grid.c_lo}, c_hi={grid.c_hi})")
    if grid.n_m < 2:
        problems.append(f"n_m >= 2 violated (n_m={grid.n_m})")
    if grid.n_c < 2:
        problems.append(f"n_c >= 2 violated (n_c={grid.n_c})")
    if not grid.m_lo < params.s0 < grid.m_hi:
        problems.append(f"s0={params.s0} not inside m-range [{grid.m_lo}, {grid.m_hi}]")
    # c = 0 sits on the lower boundary; re-emission goes to the first row
    if not grid.c_lo <= 0.0 < grid.c_hi:
        problems.append(f"c=0 not inside c-range [{grid.c_lo}, {grid.c_hi})")

    if problems:
        raise ParameterError("invalid grid: " + "; ".join(problems))
    return grid


_COMMON = dict(kappa=0.2, A1=0.1, A2=0.3, b1=25.0, b2=100.0, dt=4e-5, t_end=0.4, s0=1.0)

PARAMETER_PRESETS: dict[str, ModelParams] = {
    "abm-original": ModelParams(**_COMMON, n_agents=1000),
    "kinetic-particle": ModelParams(**_COMMON, n_agents=30000, lambda1=0.5, lambda2=0.5),
    "meanfield": ModelParams(**_COMMON, n_agents=1000, lambda1=0.5, lambda2=0.5),
}

MEANFIELD_GRID_POINTS = 400


def load_preset(name: str) -> tuple[ModelParams, GridSpec | None]:
    """Return a preset's parameters, and its grid for the mean-field preset."""
    params = PARAMETER_PRESETS.get(name)
    if params is None:
        valid = ", ".join(sorted(PARAMETER_PRESETS))
        raise UnknownPresetError(f"Unknown preset '{name}' (valid: {valid})")
    validate(params)
    if name == "meanfield":
        grid = default_grid(params, MEANFIELD_GRID_POINTS, MEANFIELD_GRID_POINTS)
        return params, validate_grid(grid, params)
    return params, None


_INT_FIELDS = {"n_agents", "seed", "n_m", "n_c"}
_OPTIONAL_FIELDS = {"dt_cross"}

PARAM_KEYS = tuple(f.name for f in dataclasses.fields(ModelParams))
GRID_KEYS = tuple(f.name for f in dataclasses.fields(GridSpec))


def coerce_value(key: str, raw: object) -> object:
    """Convert a textual override to the field's type."""
    if key not in PARAM_KEYS and key not in GRID_KEYS:
        raise ParameterError(f"Unknown parameter key '{key}'")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if key in _OPTIONAL_FIELDS and text.lower() in {"", "none"}:
        return None
    try:
        if key in _INT_FIELDS:
            return int(text)
        return float(text)
    except ValueError as e:
        raise ParameterError(f"Cannot parse value '{raw}' for key '{key}'") from e


def with_overrides(
    params: ModelParams,
    grid: GridSpec | None,
    overrides: Mapping[str, object],
) -> tuple[ModelParams, GridSpec | None]:
    """Apply key/value overrides to params and grid and revalidate both."""
    param_changes: dict[str, object] = {}
    grid_changes: dict[str, object] = {}
    for key, raw in overrides.items():
        value = coerce_value(key, raw)
        if key in PARAM_KEYS:
            param_changes[key] = value
        else:
            grid_changes[key] = value

    new_params = validate(dataclasses.replace(params, **param_changes))  # type: ignore[arg-type]
    if grid_changes and grid is None:
        raise ParameterError(
            f"Grid keys {sorted(grid_changes)} given but the run has no grid"
        )
    new_grid = grid
    if grid is not None:
        new_grid = dataclasses.replace(grid, **grid_changes)  # type: ignore[arg-type]
        new_grid = validate_grid(new_grid, new_params)
    return new_params, new_grid

