"""Agent decision pipeline: cancellation, market sentiment, entry and order
generation.

The scalar functions below are the whole model. :func:`agent_step` chains them
for one agent; the simulator evaluates the sentiment gate for the whole
population at once (same formulas on arrays) and then calls
:func:`generate_order` for each agent that decided to trade.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Union

import numpy as np

from .engine import BUY, SELL, OrderBook
from .information import PublicSnapshot


class OrderKind(enum.Enum):
    LIMIT = "L"
    MARKET = "M"


class Status(enum.Enum):
    FLAT = "flat"
    RESTING = "resting"
    HOLDING = "holding"


@dataclass
class AgentState:
    agent_id: int
    kappa: float
    order_id: Optional[int] = None
    submit_step: Optional[int] = None
    position: int = 0  # signed lots

    @property
    def status(self) -> Status:
        if self.order_id is not None:
            return Status.RESTING
        if self.position:
            return Status.HOLDING
        return Status.FLAT


@dataclass(frozen=True)
class OrderSpec:
    direction: int
    kind: OrderKind
    volume: int
    price: Optional[int] = None


@dataclass(frozen=True)
class Cancel:
    order_id: int


Action = Union[None, Cancel, OrderSpec]


def lognormal_params(mean: float, std: float) -> tuple[float, float]:
    """Underlying normal ``(mu, sigma)`` of a log-normal with the given mean and std."""
    if mean <= 0 or std <= 0:
        raise ValueError("log-normal mean and std must be positive")
    s2 = math.log1p((std / mean) ** 2)
    return math.log(mean) - s2 / 2, math.sqrt(s2)


@dataclass(frozen=True)
class AgentParams:
    """Per-run constants of the decision pipeline."""

    phi_0: float = 0.165
    t_max: int = 100
    mu: float = 0.0
    sigma: float = 1.0
    q_p: int = 1
    n_min: float = 50.0

    @classmethod
    def from_moments(
        cls,
        mean: float = 7.0,
        std: float = 10.0,
        q: float = 0.5,
        n_agents: int = 10000,
        phi_0: float = 0.165,
        t_max: int = 100,
    ) -> "AgentParams":
        mu, sigma = lognormal_params(mean, std)
        q_p = math.ceil(math.exp(mu + sigma * NormalDist().inv_cdf(q)))
        return cls(phi_0=phi_0, t_max=t_max, mu=mu, sigma=sigma, q_p=q_p,
                   n_min=min(50.0, n_agents / 10))


# ---- sentiment -------------------------------------------------------------

def sample_private_info(nu_hat, rng: np.random.Generator, size=None):
    return nu_hat * rng.standard_normal(size)


def market_sentiment(phi_0, kappa, psi_star, eta, epsilon):
    return phi_0 * kappa * psi_star * eta * epsilon


def trading_probability(phi):
    return (2.0 / np.pi) * np.abs(np.arctan(phi))


def trade_direction(phi: float) -> int:
    if phi == 0 or not math.isfinite(phi):
        raise ValueError(f"trade direction undefined for sentiment {phi}")
    return BUY if phi > 0 else SELL


def evaluate_cancellation(age: int, t_max: int, psi: float, u: float) -> bool:
    """True when a resting order should be pulled; ``u`` is a uniform draw."""
    return age >= t_max or u < psi


# ---- order generation ------------------------------------------------------

def generate_submission_price(direction: int, reference: float, xi: int, q_p: int) -> int:
    """Place ``xi - q_p`` ticks behind the own-side best; never below one tick.

    ``reference`` is the best bid for a buy and the best ask for a sell.
    """
    price = reference - direction * (xi - q_p)
    return max(1, math.floor(price) if direction == BUY else math.ceil(price))


def classify_order(
    direction: int,
    price: int,
    best_bid: Optional[int],
    best_ask: Optional[int],
    u: float,
) -> OrderKind:
    """Market if the price goes through the opposite best; a coin flip (``u``)
    decides when it lands exactly on it."""
    opposite = best_ask if direction == BUY else best_bid
    if opposite is None:
        return OrderKind.LIMIT
    gap = (price - opposite) * direction
    if gap > 0:
        return OrderKind.MARKET
    if gap == 0:
        return OrderKind.MARKET if u < 0.5 else OrderKind.LIMIT
    return OrderKind.LIMIT


def volume_cap(opposite_total: int) -> int:
    """Largest admissible volume: strictly below a quarter of the opposite side."""
    return math.ceil(opposite_total / 4) - 1


def generate_order_volume(opposite_total: int, raw: float) -> Optional[int]:
    """Round a log-normal draw and clamp it to ``[1, cap]``; ``None`` to abstain."""
    cap = volume_cap(opposite_total)
    if cap < 1:
        return None
    return min(max(1, round(raw)), cap)


def liquidity_check_market(opposite_total: int, n_min: float) -> bool:
    return opposite_total > n_min


def generate_order(
    direction: int,
    book: OrderBook,
    reference_mid: float,
    xi_draw: float,
    coin: float,
    volume_draw: float,
    params: AgentParams,
    position: int = 0,
) -> Optional[OrderSpec]:
    """Price, type and volume for one order, or ``None`` if the agent abstains.

    ``reference_mid`` stands in for an empty own side. A holder (nonzero
    ``position``) never sends more than it needs to flatten.
    """
    best_bid, best_ask = book.best_bid(), book.best_ask()
    own = best_bid if direction == BUY else best_ask
    reference = reference_mid if own is None else own
    price = generate_submission_price(direction, reference, math.ceil(xi_draw), params.q_p)
    kind = classify_order(direction, price, best_bid, best_ask, coin)
    opposite_total = book.side_total_volume(-direction)
    volume = generate_order_volume(opposite_total, volume_draw)
    if volume is None:
        return None
    if position:
        volume = min(volume, abs(position))
    if kind is OrderKind.MARKET:
        if not liquidity_check_market(opposite_total, params.n_min):
            return None
        return OrderSpec(direction, kind, volume)
    return OrderSpec(direction, kind, volume, price)


def agent_step(
    agent: AgentState,
    snapshot: PublicSnapshot,
    book: OrderBook,
    rng: np.random.Generator,
    params: AgentParams,
) -> Action:
    """Full decision for a single agent.

    Draw order: resting agents take one uniform; everyone else takes a
    normal (private signal), a uniform (entry gate) and, on entry, a
    log-normal price offset, a uniform coin and a log-normal volume.
    """
    if agent.status is Status.RESTING:
        age = snapshot.step - agent.submit_step
        if evaluate_cancellation(age, params.t_max, snapshot.psi, rng.random()):
            return Cancel(agent.order_id)
        return None
    eps = sample_private_info(snapshot.nu_hat, rng)
    phi = market_sentiment(params.phi_0, agent.kappa, 1.0 - snapshot.psi, snapshot.eta, eps)
    if not rng.random() < trading_probability(phi):
        return None
    direction = -int(np.sign(agent.position)) if agent.position else trade_direction(phi)
    xi_draw = rng.lognormal(params.mu, params.sigma)
    coin = rng.random()
    volume_draw = rng.lognormal(params.mu, params.sigma)
    return generate_order(direction, book, snapshot.mid, xi_draw, coin, volume_draw,
                          params, agent.position)
