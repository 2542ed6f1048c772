"""The original agent-based Cross model with threshold switching."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from crossmf.params import ModelParams, Pressures, PriceMode, validate
from crossmf.price import MarketState, excess_demand, initial_market, price_step_exponential
from crossmf.records import SimulationRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Agent:
    """Single agent view: position, herding pressure, memory and personal thresholds."""

    gamma: int
    c: float
    m: float
    alpha: float
    beta: float


@dataclass
class AgentEnsemble:
    """All agents stored as parallel arrays; pressures are fixed for a run."""

    gamma: np.ndarray
    c: np.ndarray
    m: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pressures: Pressures

    def __len__(self) -> int:
        return int(self.gamma.shape[0])

    def agent(self, i: int) -> Agent:
        return Agent(
            gamma=int(self.gamma[i]),
            c=float(self.c[i]),
            m=float(self.m[i]),
            alpha=float(self.alpha[i]),
            beta=float(self.beta[i]),
        )


def initial_positions(n_agents: int) -> np.ndarray:
    """First ceil(2N/3) agents long, the rest short."""
    n_long = math.ceil(2 * n_agents / 3)
    gamma = -np.ones(n_agents, dtype=np.int8)
    gamma[:n_long] = 1
    return gamma


def init_ensemble(
    params: ModelParams,
    pressures: Pressures,
    rng: np.random.Generator,
) -> AgentEnsemble:
    """Initial agents: c = B1, m = S(0), alpha ~ U(A1, A2), beta ~ U(B1, B2)."""
    n = params.n_agents
    alpha = rng.uniform(params.A1, params.A2, n)
    beta = rng.uniform(params.B1, params.B2, n)
    return AgentEnsemble(
        gamma=initial_positions(n),
        c=np.full(n, params.B1),
        m=np.full(n, params.s0),
        alpha=alpha,
        beta=beta,
        pressures=pressures,
    )


def inaction_triggered(m: np.ndarray | float, alpha: np.ndarray | float, s: float) -> np.ndarray:
    """True where s leaves the closed interval [m/(1+alpha), m(1+alpha)]."""
    m_arr = np.asarray(m, dtype=np.float64)
    a_arr = np.asarray(alpha, dtype=np.float64)
    return (s < m_arr / (1.0 + a_arr)) | (s > m_arr * (1.0 + a_arr))


def herding_update(
    gamma: np.ndarray | int,
    c: np.ndarray | float,
    ed: float,
    dt: float,
) -> np.ndarray:
    """Herding pressure grows by dt|ED| for agents in the minority (gamma*ED < 0)."""
    c_arr = np.asarray(c, dtype=np.float64)
    minority = np.asarray(gamma) * ed < 0
    return np.where(minority, c_arr + dt * abs(ed), c_arr)


def abm_step(
    ensemble: AgentEnsemble,
    market: MarketState,
    params: ModelParams,
    rng: np.random.Generator,
    price_mode: PriceMode = PriceMode.STOCHASTIC,
) -> tuple[AgentEnsemble, MarketState]:
    """Advance one step: ED, price, pressures, switches. Agent arrays are updated in place."""
    ed = excess_demand(ensemble.gamma)

    if price_mode is PriceMode.FROZEN:
        new_s = market.s
    else:
        eta = float(rng.standard_normal()) if price_mode is PriceMode.STOCHASTIC else 0.0
        new_s = price_step_exponential(market, params, eta)

    ensemble.c = herding_update(ensemble.gamma, ensemble.c, ed, params.dt)

    switch = inaction_triggered(ensemble.m, ensemble.alpha, new_s)
    if ensemble.pressures is Pressures.FULL:
        switch |= ensemble.c > ensemble.beta
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


def run_abm(
    params: ModelParams,
    pressures: Pressures,
    rng: np.random.Generator,
    price_mode: PriceMode = PriceMode.STOCHASTIC,
) -> SimulationRecord:
    """Iterate abm_step over [0, t_end]; the record includes t=0."""
    validate(params)
    ensemble = init_ensemble(params, pressures, rng)
    market = initial_market(params, excess_demand(ensemble.gamma))

    n = params.n_steps
    t = np.empty(n + 1)
    s = np.empty(n + 1)
    ed = np.empty(n + 1)
    t[0], s[0], ed[0] = market.t, market.s, market.ed
    for k in range(1, n + 1):
        ensemble, market = abm_step(ensemble, market, params, rng, price_mode)
        t[k] = k * params.dt
        s[k], ed[k] = market.s, market.ed

    logger.debug("abm run finished: %d agents, %d steps, final ED %.4f", len(ensemble), n, ed[-1])
    return SimulationRecord(
        t=t,
        s=s,
        ed=ed,
        metadata={
            "tier": "abm",
            "pressures": pressures.value,
            "price_mode": price_mode.value,
            "n_agents": params.n_agents,
        },
    )
