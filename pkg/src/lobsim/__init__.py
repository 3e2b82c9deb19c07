"""Agent-based limit order book simulator with stylized-fact analytics."""

from .engine import BUY, SELL, DepthProfile, Fill, Order, OrderBook
from .simulator import Ensemble, Market, SimConfig, SimOutput, StepRecord, ensemble, run

__all__ = [
    "BUY",
    "SELL",
    "DepthProfile",
    "Ensemble",
    "Fill",
    "Market",
    "Order",
    "OrderBook",
    "SimConfig",
    "SimOutput",
    "StepRecord",
    "ensemble",
    "run",
]

__version__ = "0.1.0"
