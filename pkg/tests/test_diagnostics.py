"""Unit tests for diagnostics.py."""

import numpy as np
import pytest

from crossmf.diagnostics import (
    ConvergenceMonitor,
    EntropyConfig,
    classify_steady_state,
    collision_invariant_residual,
    entropy_function,
    entropy_is_monotone,
    entropy_trajectory,
    null_space_membership,
    relative_entropy,
    run_diagnostics,
    solve_dual,
    total_loss_flux,
)
from crossmf.errors import DomainError, ParameterError, StabilityError, SteadyStateError
from crossmf.fv import (
    DensityField,
    deposit_cell,
    ed_functional,
    homogeneous_rate,
    initial_density,
    rate_field,
    step_heterogeneous,
    step_homogeneous,
)
from crossmf.params import GridSpec, ModelParams, PriceMode
from crossmf.price import initial_market

PARAMS = ModelParams()
HOM_GRID = GridSpec(m_lo=0.25, m_hi=2.5, c_lo=0.0, c_hi=8e-3, n_m=90, n_c=10)
HET_GRID = GridSpec(m_lo=0.25, m_hi=2.5, c_lo=0.0, c_hi=8e-3, n_m=60, n_c=40)
STILL = np.zeros(100)


def point_field(grid: GridSpec, plus: float, minus: float, homogeneous: bool, col: int | None = None) -> DensityField:
    """Species masses `plus` and `minus` placed in one cell (the deposit cell for s=1 by default)."""
    row, dep_col = deposit_cell(grid, 1.0)
    col = dep_col if col is None else col
    if homogeneous:
        p, m = np.zeros(grid.n_m), np.zeros(grid.n_m)
        p[col], m[col] = plus / grid.dm, minus / grid.dm
    else:
        p, m = np.zeros(grid.shape), np.zeros(grid.shape)
        p[row, col], m[row, col] = plus / grid.cell_area, minus / grid.cell_area
    return DensityField(p, m, grid)


def inner(psi: DensityField, f: DensityField) -> float:
    return float(((psi.plus * f.plus).sum() + (psi.minus * f.minus).sum()) * f.cell_measure)


class TestCollisionInvariants:
    """Tests for the conservation residual."""

    def test_constant_test_functions(self):
        gen = np.random.default_rng(0)
        density = DensityField(gen.random(HET_GRID.shape), gen.random(HET_GRID.shape), HET_GRID)
        rate = rate_field(HET_GRID, PARAMS, 1.0)
        residual = collision_invariant_residual(density, 1.0, rate)
        assert abs(residual) <= 1e-12 * total_loss_flux(density, rate)

    def test_non_invariant_test_function(self):
        density = point_field(HOM_GRID, 0.0, 1.0, homogeneous=True, col=0)
        rate = homogeneous_rate(HOM_GRID, PARAMS, 1.0)
        phi = np.zeros(HOM_GRID.n_m)
        residual = collision_invariant_residual(density, 1.0, rate, phi_plus=phi, phi_minus=np.ones(HOM_GRID.n_m))
        assert residual == pytest.approx(-total_loss_flux(density, rate))


class TestNullSpace:
    """Tests for null-space membership."""

    def test_band_is_null(self):
        density = point_field(HOM_GRID, 0.5, 0.5, homogeneous=True)
        assert null_space_membership(density, homogeneous_rate(HOM_GRID, PARAMS, 1.0))

    def test_outside_band(self):
        density = point_field(HOM_GRID, 0.5, 0.5, homogeneous=True, col=0)
        assert not null_space_membership(density, homogeneous_rate(HOM_GRID, PARAMS, 1.0))


class TestConvergenceMonitor:
    """Tests for the L1 convergence window."""

    def test_streak_resets(self):
        monitor = ConvergenceMonitor(tol=1e-8, window=3)
        assert not monitor.feed([0.0, 0.0, 1.0, 0.0, 0.0])
        assert monitor.update(0.0)
        assert monitor.steps == 6


class TestClassifySteadyState:
    """Tests for steady-state labels."""

    @pytest.mark.parametrize(
        ("plus", "minus", "label"),
        [
            (0.0, 0.0, "a-i"),
            (0.5, 0.5, "a-ii"),
            (0.0, 1.0, "b-i"),
            (0.25, 0.75, "b-ii"),
            (1.0, 0.0, "c-i"),
            (0.75, 0.25, "c-ii"),
        ],
    )
    def test_homogeneous_labels(self, plus, minus, label):
        density = point_field(HOM_GRID, plus, minus, homogeneous=True)
        rate = homogeneous_rate(HOM_GRID, PARAMS, 1.0)
        assert classify_steady_state(density, rate, STILL) == label

    @pytest.mark.parametrize(
        ("plus", "minus", "label"),
        [(0.5, 0.5, "A"), (0.0, 1.0, "B"), (1.0, 0.0, "C")],
    )
    def test_heterogeneous_labels(self, plus, minus, label):
        density = point_field(HET_GRID, plus, minus, homogeneous=False)
        rate = rate_field(HET_GRID, PARAMS, 1.0)
        assert classify_steady_state(density, rate, STILL) == label

    def test_heterogeneous_mixed_state_rejected(self):
        density = point_field(HET_GRID, 0.75, 0.25, homogeneous=False)
        with pytest.raises(SteadyStateError, match="transport"):
            classify_steady_state(density, rate_field(HET_GRID, PARAMS, 1.0), STILL)

    def test_not_converged(self):
        density = point_field(HOM_GRID, 0.5, 0.5, homogeneous=True)
        with pytest.raises(SteadyStateError, match="not converged"):
            classify_steady_state(density, homogeneous_rate(HOM_GRID, PARAMS, 1.0), np.ones(100))

    def test_mass_outside_null_space(self):
        density = point_field(HOM_GRID, 0.5, 0.5, homogeneous=True, col=0)
        with pytest.raises(SteadyStateError, match="null space"):
            classify_steady_state(density, homogeneous_rate(HOM_GRID, PARAMS, 1.0), STILL)


class TestSolveDual:
    """Tests for the backward dual system."""

    def test_constants_are_fixed(self):
        terminal = DensityField(np.ones(HET_GRID.shape), np.ones(HET_GRID.shape), HET_GRID)
        dual = solve_dual(PARAMS, terminal, n_steps=30, ed=0.3, dt=2e-5)
        assert len(dual.weights) == 31
        assert all(np.all(w.plus == 1.0) and np.all(w.minus == 1.0) for w in dual.weights)

    def test_stays_within_terminal_bounds(self):
        gen = np.random.default_rng(1)
        terminal = DensityField(0.5 + gen.random(HET_GRID.shape), 0.5 + gen.random(HET_GRID.shape), HET_GRID)
        dual = solve_dual(PARAMS, terminal, n_steps=30, ed=-0.2, dt=2e-5)
        lo = min(terminal.plus.min(), terminal.minus.min())
        hi = max(terminal.plus.max(), terminal.minus.max())
        for w in dual.weights:
            assert w.min_value() >= lo - 1e-12
            assert max(w.plus.max(), w.minus.max()) <= hi + 1e-12

    def test_rejects_nonpositive_terminal(self):
        terminal = DensityField(np.zeros(HOM_GRID.n_m), np.ones(HOM_GRID.n_m), HOM_GRID)
        with pytest.raises(ValueError, match="strictly positive"):
            solve_dual(PARAMS, terminal, n_steps=5, dt=1e-5)

    def test_rejects_unstable_step(self):
        terminal = DensityField(np.ones(HOM_GRID.n_m), np.ones(HOM_GRID.n_m), HOM_GRID)
        with pytest.raises(StabilityError):
            solve_dual(PARAMS, terminal, n_steps=5)

    def test_pairing_constant_homogeneous(self):
        params = ModelParams(ed0=0.334)
        f = initial_density(HOM_GRID, params, model="homogeneous")
        market = initial_market(params, ed_functional(f))
        h, n = 2e-5, 20
        gen = np.random.default_rng(2)
        terminal = DensityField(0.5 + gen.random(HOM_GRID.n_m), 0.5 + gen.random(HOM_GRID.n_m), HOM_GRID)
        dual = solve_dual(params, terminal, n_steps=n, dt=h)
        pairings = [inner(dual.weights[0], f)]
        for k in range(1, n + 1):
            f, market = step_homogeneous(f, market, params, gen, PriceMode.FROZEN, dt=h)
            pairings.append(inner(dual.weights[k], f))
        assert np.allclose(pairings, pairings[0], rtol=1e-10, atol=0.0)

    def test_pairing_constant_heterogeneous(self):
        params = ModelParams(ed0=0.334)
        f = initial_density(HET_GRID, params)
        market = initial_market(params, ed_functional(f))
        h, n = 2e-5, 20
        gen = np.random.default_rng(3)
        fields, eds = [f], []
        for _ in range(n):
            eds.append(market.ed)
            f, market = step_heterogeneous(f, market, params, gen, PriceMode.FROZEN, dt=h)
            fields.append(f)
        terminal = DensityField(0.5 + gen.random(HET_GRID.shape), 0.5 + gen.random(HET_GRID.shape), HET_GRID)
        dual = solve_dual(params, terminal, n_steps=n, ed=eds, dt=h)
        pairings = [inner(w, field) for w, field in zip(dual.weights, fields)]
        assert np.allclose(pairings, pairings[0], rtol=1e-10, atol=0.0)


class TestRelativeEntropy:
    """Tests for the general relative entropy."""

    def test_unit_example(self):
        grid = GridSpec(m_lo=0.0, m_hi=1.0, c_lo=0.0, c_hi=1.0, n_m=10, n_c=2)
        g = DensityField(np.full(10, 2.0), np.ones(10), grid)
        p = DensityField(np.ones(10), np.ones(10), grid)
        assert relative_entropy(g, EntropyConfig(reference=p)) == pytest.approx(1.0)

    def test_zero_for_identical_fields(self):
        field = initial_density(HOM_GRID, PARAMS, model="homogeneous", floor=1e-6)
        for name in ("quadratic", "boltzmann", "smooth-abs"):
            assert relative_entropy(field, EntropyConfig(kernel=name, reference=field)) == pytest.approx(0.0, abs=1e-12)

    def test_reference_must_cover_support(self):
        grid = GridSpec(m_lo=0.0, m_hi=1.0, c_lo=0.0, c_hi=1.0, n_m=10, n_c=2)
        g = DensityField(np.ones(10), np.ones(10), grid)
        p = DensityField(np.zeros(10), np.ones(10), grid)
        with pytest.raises(DomainError):
            relative_entropy(g, EntropyConfig(reference=p))

    def test_needs_reference(self):
        field = initial_density(HOM_GRID, PARAMS, model="homogeneous")
        with pytest.raises(ValueError, match="reference"):
            relative_entropy(field, EntropyConfig())

    def test_unknown_kernel(self):
        with pytest.raises(ParameterError, match="Unknown entropy function"):
            entropy_function("renyi")


class TestEntropyTrajectory:
    """Relative entropy never increases along the linear dynamics."""

    @pytest.mark.parametrize("kernel", ["quadratic", "boltzmann", "smooth-abs"])
    def test_homogeneous(self, kernel):
        p0 = initial_density(HOM_GRID, PARAMS, model="homogeneous", floor=1e-6)
        g0 = initial_density(HOM_GRID, ModelParams(ed0=0.334), model="homogeneous")
        values = entropy_trajectory(PARAMS, g0, p0, EntropyConfig(kernel=kernel), n_steps=100)
        assert values.size == 201
        assert values[0] > 0
        assert entropy_is_monotone(values)

    @pytest.mark.parametrize("kernel", ["quadratic", "boltzmann", "smooth-abs"])
    def test_heterogeneous(self, kernel):
        p0 = initial_density(HET_GRID, PARAMS, floor=1e-6)
        g0 = initial_density(HET_GRID, ModelParams(ed0=0.334))
        values = entropy_trajectory(PARAMS, g0, p0, EntropyConfig(kernel=kernel), n_steps=50)
        assert entropy_is_monotone(values)
        assert values[-1] < values[0]

    def test_weighted_by_dual_solution(self):
        p0 = initial_density(HET_GRID, PARAMS, floor=1e-6)
        g0 = initial_density(HET_GRID, ModelParams(ed0=0.334))
        gen = np.random.default_rng(4)
        weight = DensityField(0.5 + gen.random(HET_GRID.shape), 0.5 + gen.random(HET_GRID.shape), HET_GRID)
        values = entropy_trajectory(PARAMS, g0, p0, n_steps=50, terminal_weight=weight)
        assert entropy_is_monotone(values)

    def test_mixed_models_rejected(self):
        p0 = initial_density(HET_GRID, PARAMS)
        g0 = initial_density(HET_GRID, PARAMS, model="homogeneous")
        with pytest.raises(ValueError):
            entropy_trajectory(PARAMS, g0, p0, n_steps=1)

    def test_monotone_helper(self):
        assert entropy_is_monotone(np.array([3.0, 2.0, 2.0, 1.0]))
        assert not entropy_is_monotone(np.array([1.0, 2.0]))


class TestRunDiagnostics:
    """Tests for the diagnostics driver."""

    def test_selected_checks_pass(self):
        params = ModelParams(t_end=0.01)
        grid = GridSpec(m_lo=0.25, m_hi=2.5, c_lo=0.0, c_hi=8e-3, n_m=40, n_c=20)
        results = run_diagnostics(params, grid, ["collision-invariant", "null-space-stasis", "dual-fixed-point"])
        assert list(results) == ["collision-invariant", "null-space-stasis", "dual-fixed-point"]
        assert all(result["passed"] for result in results.values())

    def test_entropy_check(self):
        grid = GridSpec(m_lo=0.25, m_hi=2.5, c_lo=0.0, c_hi=8e-3, n_m=40, n_c=20)
        results = run_diagnostics(PARAMS, grid, ["entropy"], entropy_steps=20)
        assert len(results["entropy"]) == 6
        assert all(v["passed"] for v in results["entropy"].values())

    def test_unknown_check(self):
        with pytest.raises(ParameterError, match="Unknown diagnostic checks"):
            run_diagnostics(PARAMS, HOM_GRID, ["entropy", "vibes"])
