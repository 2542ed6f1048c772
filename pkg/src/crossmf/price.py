"""Excess demand and the stock price update rules of every model tier."""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from crossmf.errors import PositivityError, StatisticsError
from crossmf.params import ModelParams, PriceMode


@dataclass(frozen=True)
class MarketState:
    """Stock price together with the current and previous excess demand."""

    s: float
    ed: float
    ed_prev: float
    t: float = 0.0

    @property
    def d_ed(self) -> float:
        return self.ed - self.ed_prev


def initial_market(params: ModelParams, ed: float) -> MarketState:
    """Market at t=0; the first step sees no change in excess demand."""
    return MarketState(s=params.s0, ed=ed, ed_prev=ed, t=0.0)


def excess_demand(positions: Sequence[int] | np.ndarray) -> float:
    """Average of all positions gamma in {-1, +1}."""
    arr = np.asarray(positions)
    if arr.size == 0:
        raise StatisticsError("excess demand of an empty position list is undefined")
    return float(np.mean(arr, dtype=np.float64))


def price_step_exponential(
    market: MarketState,
    params: ModelParams,
    eta: float,
    dt: float | None = None,
) -> float:
    """Exponential integrator of the agent-based model.

    S' = S exp{(1 + theta|ED|)(sqrt(dt) eta - dt/2) + kappa dED}
    """
    h = params.dt if dt is None else dt
    vol = 1.0 + params.theta * abs(market.ed)
    return market.s * math.exp(vol * (math.sqrt(h) * eta - h / 2.0) + params.kappa * market.d_ed)


def price_step_euler_maruyama(
    market: MarketState,
    params: ModelParams,
    eta: float,
    dt: float | None = None,
) -> float:
    """Euler-Maruyama step of dS = kappa dED S + (1 + theta|ED|) S dW (Ito)."""
    h = params.dt if dt is None else dt
    s = market.s
    vol = 1.0 + params.theta * abs(market.ed)
    new_s = s + params.kappa * market.d_ed * s + math.sqrt(h) * vol * s * eta
    if not new_s > 0:
        raise PositivityError(
            f"Euler-Maruyama step produced non-positive price {new_s!r} "
            f"(S={s!r}, dED={market.d_ed!r}, eta={eta!r}, t={market.t!r})"
        )
    return new_s


def price_step_deterministic(market: MarketState, params: ModelParams) -> float:
    """Drift-only step S' = S + kappa dED S."""
    new_s = market.s + params.kappa * market.d_ed * market.s
    if not new_s > 0:
        raise PositivityError(f"drift step produced non-positive price {new_s!r} at t={market.t!r}")
    return new_s


def price_step(
    market: MarketState,
    params: ModelParams,
    mode: PriceMode,
    rng: np.random.Generator,
    dt: float | None = None,
) -> float:
    """Price update of the kinetic and mean-field tiers; only the stochastic mode draws."""
    if mode is PriceMode.FROZEN:
        return market.s
    if mode is PriceMode.DETERMINISTIC:
        return price_step_deterministic(market, params)
    return price_step_euler_maruyama(market, params, float(rng.standard_normal()), dt)
