"""Kinetic particle model: agents switch at random with probability lambda_P each step."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from crossmf.abm import herding_update, initial_positions
from crossmf.params import ModelParams, Pressures, PriceMode, validate
from crossmf.price import MarketState, excess_demand, initial_market, price_step
from crossmf.records import SimulationRecord

logger = logging.getLogger(__name__)

ArrayLike = np.ndarray | float


@dataclass
class KineticEnsemble:
    """Agents without personal thresholds: position, herding pressure, memory."""

    gamma: np.ndarray
    c: np.ndarray
    m: np.ndarray

    def __len__(self) -> int:
        return int(self.gamma.shape[0])


def herding_switch_prob(c: ArrayLike, params: ModelParams) -> np.ndarray:
    """CDF of beta ~ U(B1, B2) evaluated at c.

    A zero-width ramp (B1 == B2) degenerates to a step at B1.
    """
    c_arr = np.asarray(c, dtype=np.float64)
    b1, b2 = params.B1, params.B2
    if b2 <= b1:
        return np.where(c_arr > b1, 1.0, 0.0)
    return np.clip((c_arr - b1) / (b2 - b1), 0.0, 1.0)


def inaction_switch_prob(m: ArrayLike, s: float, params: ModelParams) -> np.ndarray:
    """Switch probability from the inaction band around memory m at price s.

    1 below M1, falling ramp on [M1, M2], 0 on (M2, M3), rising ramp on [M3, M4], 1 above M4,
    where M1 = m/(1+A2), M2 = m/(1+A1), M3 = m(1+A1), M4 = m(1+A2).
    """
    m_arr = np.asarray(m, dtype=np.float64)
    m1 = m_arr / (1.0 + params.A2)
    m2 = m_arr / (1.0 + params.A1)
    m3 = m_arr * (1.0 + params.A1)
    m4 = m_arr * (1.0 + params.A2)
    falling = 1.0 - (s - m1) / (m2 - m1)
    rising = (s - m3) / (m4 - m3)
    q = np.where(s <= m2, falling, np.where(s >= m3, rising, 0.0))
    return np.clip(q, 0.0, 1.0)


def switching_probability(c: ArrayLike, m: ArrayLike, s: float, params: ModelParams) -> np.ndarray:
    """lambda_P = lambda1 p(c) + lambda2 q(m, s)."""
    prob = np.zeros(np.broadcast(np.asarray(c), np.asarray(m)).shape)
    if params.lambda1 != 0.0:
        prob = prob + params.lambda1 * herding_switch_prob(c, params)
    if params.lambda2 != 0.0:
        prob = prob + params.lambda2 * inaction_switch_prob(m, s, params)
    return prob


def switching_rate(c: ArrayLike, m: ArrayLike, s: float, params: ModelParams) -> np.ndarray:
    """Rate lambda = lambda_P / dt_C (1/time)."""
    return switching_probability(c, m, s, params) / params.dt_c


def arm_params(params: ModelParams, pressures: Pressures) -> ModelParams:
    """The inaction-only arm switches on q alone (lambda1 = 0, lambda2 = 1)."""
    if pressures is Pressures.INACTION_ONLY:
        return validate(replace(params, lambda1=0.0, lambda2=1.0))
    return params


def init_kinetic_ensemble(params: ModelParams) -> KineticEnsemble:
    """ceil(2N/3) agents long, c = B1, m = S(0)."""
    n = params.n_agents
    return KineticEnsemble(
        gamma=initial_positions(n),
        c=np.full(n, params.B1),
        m=np.full(n, params.s0),
    )


def kinetic_step(
    ensemble: KineticEnsemble,
    market: MarketState,
    params: ModelParams,
    rng: np.random.Generator,
    price_mode: PriceMode = PriceMode.STOCHASTIC,
) -> tuple[KineticEnsemble, MarketState]:
    """One step: ED, Euler-Maruyama price, herding pressures, random switches.

    Draw order per step is one normal (price) then one uniform per agent in index order.
    """
    ed = excess_demand(ensemble.gamma)
    new_s = price_step(market, params, price_mode, rng)
    ensemble.c = herding_update(ensemble.gamma, ensemble.c, ed, params.dt)

    prob = switching_probability(ensemble.c, ensemble.m, new_s, params)
    switch = rng.random(len(ensemble)) < prob
    if switch.any():
        ensemble.gamma[switch] = -ensemble.gamma[switch]
        ensemble.c[switch] = 0.0
        ensemble.m[switch] = new_s

    new_market = MarketState(
        s=new_s,
        ed=excess_demand(ensemble.gamma),
        ed_prev=ed,
        t=market.t + params.dt,
    )
    return ensemble, new_market


def run_kinetic_particle(
    params: ModelParams,
    pressures: Pressures,
    rng: np.random.Generator,
    price_mode: PriceMode = PriceMode.STOCHASTIC,
) -> SimulationRecord:
    """Iterate kinetic_step over [0, t_end]."""
    run_params = arm_params(validate(params), pressures)
    ensemble = init_kinetic_ensemble(run_params)
    market = initial_market(run_params, excess_demand(ensemble.gamma))

    n = run_params.n_steps
    t = np.empty(n + 1)
    s = np.empty(n + 1)
    ed = np.empty(n + 1)
    t[0], s[0], ed[0] = market.t, market.s, market.ed
    for k in range(1, n + 1):
        ensemble, market = kinetic_step(ensemble, market, run_params, rng, price_mode)
        t[k] = k * run_params.dt
        s[k], ed[k] = market.s, market.ed

    logger.debug("kinetic run finished: %d agents, %d steps", len(ensemble), n)
    return SimulationRecord(
        t=t,
        s=s,
        ed=ed,
        metadata={
            "tier": "kinetic",
            "pressures": pressures.value,
            "price_mode": price_mode.value,
            "n_agents": run_params.n_agents,
            "lambda1": run_params.lambda1,
            "lambda2": run_params.lambda2,
        },
    )
