"""Numerical checks of the mean-field theory.

Collision invariants, null-space membership, steady-state classification,
the dual equations and the general relative entropy.
"""

import dataclasses
import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from crossmf.errors import DomainError, ParameterError, SteadyStateError
from crossmf.fv import (
    DensityField,
    Model,
    ShapeFunction,
    advection_apply,
    check_step,
    choose_substeps,
    collision_apply,
    deposit_cell,
    ed_functional,
    homogeneous_rate,
    initial_density,
    model_stable_dt,
    rate_field,
    run_fv,
    shape_c,
)
from crossmf.params import GridSpec, ModelParams, PriceMode, validate, validate_grid

logger = logging.getLogger(__name__)

Kernel = Callable[[np.ndarray], np.ndarray]

SMOOTH_ABS_EPS = 1e-3


def _quadratic(x: np.ndarray) -> np.ndarray:
    return (x - 1.0) ** 2


def _boltzmann(x: np.ndarray) -> np.ndarray:
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe), 0.0)


def _smooth_abs(x: np.ndarray) -> np.ndarray:
    return np.sqrt((x - 1.0) ** 2 + SMOOTH_ABS_EPS**2) - SMOOTH_ABS_EPS


ENTROPY_FUNCTIONS: dict[str, Kernel] = {
    "quadratic": _quadratic,
    "boltzmann": _boltzmann,
    "smooth-abs": _smooth_abs,
}


def entropy_function(name: str) -> Kernel:
    try:
        return ENTROPY_FUNCTIONS[name]
    except KeyError:
        valid = ", ".join(sorted(ENTROPY_FUNCTIONS))
        raise ParameterError(f"Unknown entropy function '{name}' (valid: {valid})") from None


@dataclass(frozen=True)
class EntropyConfig:
    """Convex K by catalog name, reference solution p and dual weight psi (None means psi = 1)."""

    kernel: str = "quadratic"
    reference: DensityField | None = None
    weight: DensityField | None = None


def operator_rate(grid: GridSpec, params: ModelParams, s: float, model: Model) -> np.ndarray:
    if model == "homogeneous":
        return homogeneous_rate(grid, params, s)
    return rate_field(grid, params, s)


def collision_invariant_residual(
    density: DensityField,
    s: float,
    rate: np.ndarray,
    phi_plus: np.ndarray | None = None,
    phi_minus: np.ndarray | None = None,
) -> float:
    """Integral of phi+ Q+ + phi- Q-; zero for constant test functions."""
    d_plus, d_minus = collision_apply(density, s, rate)
    w_plus = 1.0 if phi_plus is None else phi_plus
    w_minus = 1.0 if phi_minus is None else phi_minus
    return float((w_plus * d_plus + w_minus * d_minus).sum() * density.cell_measure)


def total_loss_flux(density: DensityField, rate: np.ndarray) -> float:
    return float((rate * (density.plus + density.minus)).sum() * density.cell_measure)


def null_space_membership(density: DensityField, rate: np.ndarray, tol: float = 1e-8) -> bool:
    """True iff the mass sitting on cells with rate > tol is at most tol * total mass."""
    active = rate > tol
    w = density.cell_measure
    active_mass = float((density.plus[active].sum() + density.minus[active].sum()) * w)
    return active_mass <= tol * density.mass()


def _species_in_null_space(values: np.ndarray, rate: np.ndarray, tol: float, measure: float) -> bool:
    total = float(values.sum() * measure)
    active = float(values[rate > tol].sum() * measure)
    return active <= tol * max(total, 0.0)


class ConvergenceMonitor:
    """Tracks per-step L1 changes; converged once `window` consecutive changes are below tol."""

    def __init__(self, tol: float = 1e-8, window: int = 100) -> None:
        self.tol = tol
        self.window = window
        self._streak = 0
        self.steps = 0

    def update(self, change: float) -> bool:
        self.steps += 1
        self._streak = self._streak + 1 if change < self.tol else 0
        return self.converged

    def feed(self, changes: Iterable[float]) -> bool:
        for change in changes:
            self.update(float(change))
        return self.converged

    @property
    def converged(self) -> bool:
        return self._streak >= self.window


def classify_steady_state(
    density: DensityField,
    rate: np.ndarray,
    l1_changes: Sequence[float] | np.ndarray,
    conv_tol: float = 1e-8,
    window: int = 100,
    mass_tol: float = 1e-4,
    ed_tol: float = 1e-2,
    null_tol: float = 1e-6,
) -> str:
    """Label a converged state: a-i ... c-ii for the homogeneous model, A/B/C otherwise.

    mass_tol is relative to the total mass.
    """
    if not ConvergenceMonitor(conv_tol, window).feed(l1_changes):
        raise SteadyStateError(
            f"state not converged: need {window} consecutive L1 changes below {conv_tol}"
        )
    mp, mm = density.species_masses()
    total = mp + mm
    plus_present = mp > mass_tol * max(total, 1e-300)
    minus_present = mm > mass_tol * max(total, 1e-300)
    measure = density.cell_measure
    for present, values, name in ((plus_present, density.plus, "f+"), (minus_present, density.minus, "f-")):
        if present and not _species_in_null_space(values, rate, null_tol, measure):
            raise SteadyStateError(f"{name} carries mass outside the null space of the collision operator")

    ed = ed_functional(density)
    if density.homogeneous:
        if not plus_present and not minus_present:
            return "a-i"
        if abs(ed) <= ed_tol:
            return "a-ii"
        if ed < 0:
            return "b-ii" if plus_present else "b-i"
        return "c-ii" if minus_present else "c-i"

    if abs(ed) <= ed_tol:
        return "A"
    if ed < 0 and not plus_present:
        return "B"
    if ed > 0 and not minus_present:
        return "C"
    raise SteadyStateError(
        f"ED={ed:.4f} with both species present is inconsistent with the transport constraint"
    )


@dataclass
class DualSolution:
    """Dual weights psi(t_k) for k = 0..n; index n holds the terminal data."""

    times: np.ndarray
    weights: list[DensityField]


def _dual_rhs(
    psi: DensityField,
    rate: np.ndarray,
    s: float,
    ed: float,
    shape: ShapeFunction,
) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of the forward operator applied to psi."""
    if psi.homogeneous:
        col = deposit_cell(psi.grid, s)[1]
        at_plus = psi.plus[col]
        at_minus = psi.minus[col]
    else:
        row, col = deposit_cell(psi.grid, s)
        at_plus = psi.plus[row, col]
        at_minus = psi.minus[row, col]
    d_plus = rate * (at_minus - psi.plus)
    d_minus = rate * (at_plus - psi.minus)
    if not psi.homogeneous:
        dc = psi.grid.dc
        d_plus += _upwind_adjoint(psi.plus, shape(-ed), dc)
        d_minus += _upwind_adjoint(psi.minus, shape(ed), dc)
    return d_plus, d_minus


def _upwind_adjoint(values: np.ndarray, speed: float, dc: float) -> np.ndarray:
    """speed * forward difference in c with zero gradient at c_hi."""
    out = np.zeros_like(values)
    if speed == 0.0:
        return out
    out[:-1] = speed * (values[1:] - values[:-1]) / dc
    return out


def solve_dual(
    params: ModelParams,
    terminal: DensityField,
    n_steps: int,
    s: float | None = None,
    ed: float | Sequence[float] = 0.0,
    dt: float | None = None,
    shape: ShapeFunction = shape_c,
) -> DualSolution:
    """Integrate the dual system backward from the terminal weights at constant price.

    `ed` is the excess demand driving transport, either fixed or one value per forward step.
    """
    if np.any(terminal.plus <= 0) or np.any(terminal.minus <= 0):
        raise ValueError("dual terminal data must be strictly positive")
    model: Model = "homogeneous" if terminal.homogeneous else "heterogeneous"
    price = params.s0 if s is None else s
    h = params.dt if dt is None else dt
    check_step(h, model_stable_dt(params, terminal.grid, model, shape))
    eds = np.broadcast_to(np.asarray(ed, dtype=np.float64), (n_steps,))
    rate = operator_rate(terminal.grid, params, price, model)

    weights: list[DensityField] = [terminal]
    psi = terminal
    for k in range(n_steps - 1, -1, -1):
        d_plus, d_minus = _dual_rhs(psi, rate, price, float(eds[k]), shape)
        psi = DensityField(psi.plus + h * d_plus, psi.minus + h * d_minus, psi.grid)
        weights.append(psi)
    weights.reverse()
    return DualSolution(times=np.arange(n_steps + 1) * h, weights=weights)


def relative_entropy(g: DensityField, config: EntropyConfig) -> float:
    """Sum over species of the integral psi * p * K(g / p)."""
    if config.reference is None:
        raise ValueError("relative entropy needs a reference solution")
    kernel = entropy_function(config.kernel)
    total = 0.0
    pairs = [(g.plus, config.reference.plus), (g.minus, config.reference.minus)]
    weights: list[np.ndarray | float] = [1.0, 1.0]
    if config.weight is not None:
        weights = [config.weight.plus, config.weight.minus]
    for (gv, pv), psi in zip(pairs, weights):
        if np.any((pv <= 0) & (gv > 0)):
            raise DomainError("reference density vanishes where the compared density is positive")
        positive = pv > 0
        ratio = np.where(positive, gv / np.where(positive, pv, 1.0), 0.0)
        integrand = np.where(positive, psi * pv * kernel(ratio), 0.0)
        total += float(integrand.sum())
    return total * g.cell_measure


def _linear_step(
    density: DensityField,
    rate: np.ndarray,
    s: float,
    ed: float,
    h: float,
    shape: ShapeFunction,
) -> DensityField:
    d_plus, d_minus = collision_apply(density, s, rate)
    if not density.homogeneous:
        a_plus, a_minus = advection_apply(density, ed, shape)
        d_plus = d_plus + a_plus
        d_minus = d_minus + a_minus
    return DensityField(density.plus + h * d_plus, density.minus + h * d_minus, density.grid)


def entropy_trajectory(
    params: ModelParams,
    g0: DensityField,
    p0: DensityField,
    config: EntropyConfig = EntropyConfig(),
    n_steps: int | None = None,
    shape: ShapeFunction = shape_c,
    terminal_weight: DensityField | None = None,
) -> np.ndarray:
    """Relative entropy of g against p along the constant-price dynamics.

    Both fields see the same linear operator; transport speed follows the ED of p.
    Without terminal_weight the dual weight is psi = 1.
    """
    if g0.homogeneous != p0.homogeneous:
        raise ValueError("g and p must belong to the same model")
    model: Model = "homogeneous" if p0.homogeneous else "heterogeneous"
    grid = p0.grid
    k = choose_substeps(params, grid, model, shape)
    h = params.dt / k
    total_steps = (params.n_steps if n_steps is None else n_steps) * k
    s = params.s0
    rate = operator_rate(grid, params, s, model)

    gs, ps, eds = [g0], [p0], []
    g, p = g0, p0
    for _ in range(total_steps):
        ed = ed_functional(p)
        eds.append(ed)
        g = _linear_step(g, rate, s, ed, h, shape)
        p = _linear_step(p, rate, s, ed, h, shape)
        gs.append(g)
        ps.append(p)

    if terminal_weight is None:
        weights: list[DensityField | None] = [None] * len(gs)
    else:
        dual = solve_dual(params, terminal_weight, total_steps, s=s, ed=eds, dt=h, shape=shape)
        weights = list(dual.weights)

    return np.array(
        [
            relative_entropy(gv, dataclasses.replace(config, reference=pv, weight=wv))
            for gv, pv, wv in zip(gs, ps, weights)
        ]
    )


def entropy_is_monotone(values: np.ndarray, rel_tol: float = 1e-10) -> bool:
    """Non-increasing within rel_tol * (initial entropy + 1) per step."""
    slack = rel_tol * (abs(values[0]) + 1.0)
    return bool(np.all(np.diff(values) <= slack))


def _random_field(grid: GridSpec, model: Model, rng: np.random.Generator) -> DensityField:
    shape = (grid.n_m,) if model == "homogeneous" else grid.shape
    return DensityField(rng.random(shape), rng.random(shape), grid)


def _check_collision_invariant(params: ModelParams, grid: GridSpec, rng: np.random.Generator) -> dict[str, Any]:
    worst = 0.0
    for model in ("homogeneous", "heterogeneous"):
        density = _random_field(grid, model, rng)
        rate = operator_rate(grid, params, params.s0, model)
        flux = total_loss_flux(density, rate)
        residual = abs(collision_invariant_residual(density, params.s0, rate))
        worst = max(worst, residual / flux if flux > 0 else residual)
    return {"passed": worst <= 1e-12, "relative_residual": worst}


def _check_null_space_stasis(params: ModelParams, grid: GridSpec, rng: np.random.Generator) -> dict[str, Any]:
    stasis_params = dataclasses.replace(params, ed0=0.0)
    start = initial_density(grid, stasis_params, "null-support", "homogeneous")
    run = run_fv(stasis_params, grid, rng, "homogeneous", PriceMode.DETERMINISTIC, initial=start.copy())
    drift = float(
        max(np.abs(run.density.plus - start.plus).max(), np.abs(run.density.minus - start.minus).max())
    )
    return {"passed": drift <= 1e-13, "max_cell_drift": drift}


def _check_dual_fixed_point(params: ModelParams, grid: GridSpec) -> dict[str, Any]:
    worst = 0.0
    for model in ("homogeneous", "heterogeneous"):
        shape = (grid.n_m,) if model == "homogeneous" else grid.shape
        terminal = DensityField(np.ones(shape), np.ones(shape), grid)
        h = params.dt / choose_substeps(params, grid, model)
        dual = solve_dual(params, terminal, n_steps=50, dt=h, ed=0.3)
        worst = max(
            worst,
            max(float(np.abs(w.plus - 1.0).max()) for w in dual.weights),
            max(float(np.abs(w.minus - 1.0).max()) for w in dual.weights),
        )
    return {"passed": worst == 0.0, "max_deviation": worst}


def _check_entropy(params: ModelParams, grid: GridSpec, n_steps: int) -> dict[str, Any]:
    out: dict[str, Any] = {}
    g_params = dataclasses.replace(params, ed0=0.334)
    for model in ("homogeneous", "heterogeneous"):
        p0 = initial_density(grid, params, "uniform", model, floor=1e-6)
        g0 = initial_density(grid, g_params, "uniform", model)
        for name in ENTROPY_FUNCTIONS:
            values = entropy_trajectory(params, g0, p0, EntropyConfig(kernel=name), n_steps=n_steps)
            out[f"{model}/{name}"] = {
                "passed": entropy_is_monotone(values),
                "initial": float(values[0]),
                "final": float(values[-1]),
                "max_increase": float(np.diff(values).max()) if values.size > 1 else 0.0,
            }
    return out


def _check_classification(params: ModelParams, grid: GridSpec, rng: np.random.Generator) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for model, ed0 in (("homogeneous", 0.0), ("heterogeneous", 0.334)):
        run_params = dataclasses.replace(params, ed0=ed0)
        run = run_fv(run_params, grid, rng, model, PriceMode.DETERMINISTIC)
        rate = operator_rate(grid, run_params, run.record.s[-1], model)
        try:
            label = classify_steady_state(run.density, rate, run.l1_changes)
            out[model] = {"passed": True, "label": label, "final_ed": float(run.record.ed[-1])}
        except SteadyStateError as e:
            out[model] = {"passed": False, "error": str(e), "final_ed": float(run.record.ed[-1])}
    return out


DIAGNOSTIC_CHECKS = ("collision-invariant", "null-space-stasis", "dual-fixed-point", "entropy", "steady-state")


def run_diagnostics(
    params: ModelParams,
    grid: GridSpec,
    checks: Sequence[str] | None = None,
    entropy_steps: int = 200,
) -> dict[str, Any]:
    """Run the selected checks and return JSON-ready verdicts."""
    validate(params)
    validate_grid(grid, params)
    selected = list(DIAGNOSTIC_CHECKS if checks is None else checks)
    unknown = [c for c in selected if c not in DIAGNOSTIC_CHECKS]
    if unknown:
        raise ParameterError(f"Unknown diagnostic checks {unknown} (valid: {', '.join(DIAGNOSTIC_CHECKS)})")

    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    results: dict[str, Any] = {}
    for check in selected:
        logger.info("diagnostic %s", check)
        if check == "collision-invariant":
            results[check] = _check_collision_invariant(params, grid, rng)
        elif check == "null-space-stasis":
            results[check] = _check_null_space_stasis(params, grid, rng)
        elif check == "dual-fixed-point":
            results[check] = _check_dual_fixed_point(params, grid)
        elif check == "entropy":
            results[check] = _check_entropy(params, grid, entropy_steps)
        else:
            results[check] = _check_classification(params, grid, rng)
    return results
