"""Public information shared by all agents: smoothed volatility, liquidity and
the volatility-driven cancellation probability."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class EmaState:
    current: float
    length: float


def ema_update(state: EmaState, x: float) -> EmaState:
    """One step of ``x_hat(t) = x(t)/L + (1 - 1/L) x_hat(t-1)``."""
    if state.length < 1:
        raise ValueError(f"EMA length must be >= 1, got {state.length}")
    if not math.isfinite(x):
        raise ValueError(f"EMA input must be finite, got {x}")
    w = 1.0 / state.length
    return EmaState(w * x + (1.0 - w) * state.current, state.length)


def perceived_volatility(
    r2_ema: EmaState, r: float, nu_floor: float = 0.1
) -> tuple[EmaState, float]:
    """Feed the squared return into the EMA and return ``(state, nu_hat)``.

    ``nu_hat`` is the square root of the smoothed squared return, floored at
    ``nu_floor`` so that a silent book never freezes the market.
    """
    state = ema_update(r2_ema, r * r)
    return state, max(math.sqrt(state.current), nu_floor)


def cancellation_probability(nu_hat, gamma: float = 0.02):
    return 1.0 - np.exp(-gamma * nu_hat)


def liquidity_proxy(n_bar: int, n_agents: int) -> float:
    if not 0 <= n_bar <= n_agents:
        raise ValueError(f"order count {n_bar} outside [0, {n_agents}]")
    return n_bar / n_agents


@dataclass(frozen=True)
class PublicSnapshot:
    """Step-start public state, computed once before any agent acts."""

    step: int
    mid: float
    ret: float
    nu_hat: float
    eta: float
    psi: float
    best_bid: Optional[int]
    best_ask: Optional[int]
    spread: Optional[int]
    n_bar: int
