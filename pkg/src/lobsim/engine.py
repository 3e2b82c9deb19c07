"""Limit order book with price-time priority matching.

Prices are integer ticks (tick size 1) and volumes are integer lots. Each side
keeps a map ``price -> level`` where a level is an insertion-ordered dict of
resting orders, so the oldest order at a price is always matched first and
cancellation by id is O(1). Best prices come from lazily-pruned heaps.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

BUY = 1
SELL = -1

EventSink = Callable[[str, int, int, int, int], None]


class BookError(ValueError):
    """Raised for order flow that can only come from an upstream bug."""


@dataclass(slots=True)
class Order:
    order_id: int
    agent_id: int
    direction: int
    price: int
    volume: int
    submit_step: int
    seq: int = 0


@dataclass(frozen=True, slots=True)
class Fill:
    maker_order_id: int
    maker_agent_id: int
    taker_agent_id: int
    direction: int  # taker direction
    price: int
    volume: int
    step: int


@dataclass
class DepthProfile:
    """Resting volume per price level, keyed by distance from the mid price."""

    mid: float
    bid: list[tuple[float, int]] = field(default_factory=list)
    ask: list[tuple[float, int]] = field(default_factory=list)


class OrderBook:
    """Continuous double auction book.

    All mutation happens through :meth:`submit_limit`, :meth:`submit_market`
    and :meth:`cancel`. ``step`` and the intra-step ``seq`` counter form the
    arrival stamp of each order; the simulator advances ``step`` via
    :meth:`begin_step`.
    """

    def __init__(self, event_sink: Optional[EventSink] = None) -> None:
        self.bids: dict[int, dict[int, Order]] = {}
        self.asks: dict[int, dict[int, Order]] = {}
        self._bid_heap: list[int] = []  # negated prices
        self._ask_heap: list[int] = []
        self._bid_heaped: set[int] = set()
        self._ask_heaped: set[int] = set()
        self._orders: dict[int, Order] = {}
        self.bid_volume = 0
        self.ask_volume = 0
        self.step = 0
        self.seq = 0
        self.rejected = 0
        self._next_id = 1
        self.event_sink = event_sink

    # ---- queries -------------------------------------------------------

    def best_bid(self) -> Optional[int]:
        heap, levels, heaped = self._bid_heap, self.bids, self._bid_heaped
        while heap and -heap[0] not in levels:
            heaped.discard(-heapq.heappop(heap))
        return -heap[0] if heap else None

    def best_ask(self) -> Optional[int]:
        heap, levels, heaped = self._ask_heap, self.asks, self._ask_heaped
        while heap and heap[0] not in levels:
            heaped.discard(heapq.heappop(heap))
        return heap[0] if heap else None

    def mid_price(self) -> Optional[float]:
        bid, ask = self.best_bid(), self.best_ask()
        if bid is None or ask is None:
            return None
        return (bid + ask) / 2

    def spread(self) -> Optional[int]:
        bid, ask = self.best_bid(), self.best_ask()
        if bid is None or ask is None:
            return None
        return ask - bid

    def side_total_volume(self, side: int) -> int:
        return self.bid_volume if side == BUY else self.ask_volume

    def volume_imbalance(self) -> int:
        return self.bid_volume - self.ask_volume

    @property
    def n_orders(self) -> int:
        return len(self._orders)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._orders

    def get(self, order_id: int) -> Optional[Order]:
        return self._orders.get(order_id)

    def level_orders(self, side: int, price: int) -> list[Order]:
        """Orders resting at ``price`` on ``side``, oldest first."""
        levels = self.bids if side == BUY else self.asks
        return list(levels.get(price, {}).values())

    def depth_snapshot(self, mid: Optional[float] = None) -> DepthProfile:
        """Aggregate resting volume per level as ``(|price - mid|, volume)``.

        ``mid`` defaults to the current mid price; pass a fallback reference
        when one side of the book is empty.
        """
        if mid is None:
            mid = self.mid_price()
            if mid is None:
                raise BookError("mid price undefined; pass an explicit reference")
        bid = [
            (abs(p - mid), sum(o.volume for o in lvl.values()))
            for p, lvl in sorted(self.bids.items(), reverse=True)
        ]
        ask = [
            (abs(p - mid), sum(o.volume for o in lvl.values()))
            for p, lvl in sorted(self.asks.items())
        ]
        return DepthProfile(mid=mid, bid=bid, ask=ask)

    # ---- mutation ------------------------------------------------------

    def begin_step(self, step: int) -> None:
        self.step = step
        self.seq = 0

    def submit_limit(
        self, agent_id: int, direction: int, price: int, volume: int
    ) -> tuple[list[Fill], Optional[Order]]:
        """Match a limit order against the opposite side, rest any remainder.

        Returns the fills in execution order and the resting order (``None``
        when the order was filled completely).
        """
        if volume < 1:
            raise BookError(f"limit order volume must be >= 1, got {volume}")
        if price < 1 or int(price) != price:
            raise BookError(f"limit price must be a positive integer tick, got {price}")
        if direction not in (BUY, SELL):
            raise BookError(f"direction must be +1 or -1, got {direction}")
        price = int(price)
        self._emit("L", agent_id, direction, price, volume)
        opposite = self.best_ask() if direction == BUY else self.best_bid()
        if opposite is not None and (price - opposite) * direction >= 0:
            fills, remaining = self._match(agent_id, direction, volume, price)
        else:
            fills, remaining = [], volume
        if not remaining:
            return fills, None
        order = Order(
            order_id=self._next_id,
            agent_id=agent_id,
            direction=direction,
            price=price,
            volume=remaining,
            submit_step=self.step,
            seq=self.seq,
        )
        self._next_id += 1
        self.seq += 1
        self._rest(order)
        return fills, order

    def submit_market(self, direction: int, volume: int, taker: int) -> list[Fill]:
        """Execute ``volume`` lots immediately, best price first.

        An order larger than the whole opposite side is rejected without
        touching the book: the return value is empty and ``rejected`` is
        incremented.
        """
        if volume < 1:
            raise BookError(f"market order volume must be >= 1, got {volume}")
        if direction not in (BUY, SELL):
            raise BookError(f"direction must be +1 or -1, got {direction}")
        available = self.ask_volume if direction == BUY else self.bid_volume
        if volume > available:
            self.rejected += 1
            return []
        self._emit("M", taker, direction, 0, volume)
        fills, _ = self._match(taker, direction, volume, None)
        return fills

    def cancel(self, order_id: int) -> Order:
        order = self._orders.pop(order_id, None)
        if order is None:
            raise KeyError(f"unknown order id {order_id}")
        levels = self.bids if order.direction == BUY else self.asks
        level = levels[order.price]
        del level[order_id]
        if not level:
            del levels[order.price]
        if order.direction == BUY:
            self.bid_volume -= order.volume
        else:
            self.ask_volume -= order.volume
        self._emit("C", order.agent_id, order.direction, order.price, order.volume)
        return order

    def audit(self) -> None:
        """Recount the whole book and raise ``AssertionError`` on any drift."""
        bid_total = ask_total = count = 0
        for levels, side in ((self.bids, BUY), (self.asks, SELL)):
            for price, level in levels.items():
                assert level, f"empty level kept at {price}"
                last = (-(10**18), -1)
                for oid, order in level.items():
                    assert order.volume >= 1
                    assert order.direction == side and order.price == price
                    assert self._orders.get(oid) is order
                    stamp = (order.submit_step, order.seq)
                    assert stamp > last, f"FIFO violated at {price}"
                    last = stamp
                    count += 1
                    if side == BUY:
                        bid_total += order.volume
                    else:
                        ask_total += order.volume
        assert count == len(self._orders)
        assert bid_total == self.bid_volume, (bid_total, self.bid_volume)
        assert ask_total == self.ask_volume, (ask_total, self.ask_volume)
        bid, ask = self.best_bid(), self.best_ask()
        if self.bids:
            assert bid == max(self.bids)
        if self.asks:
            assert ask == min(self.asks)
        if bid is not None and ask is not None:
            assert bid < ask, f"crossed book {bid} >= {ask}"

    # ---- internals -----------------------------------------------------

    def _emit(self, kind: str, agent: int, direction: int, price: int, volume: int) -> None:
        if self.event_sink is not None:
            self.event_sink(kind, agent, direction, price, volume)

    def _rest(self, order: Order) -> None:
        price = order.price
        if order.direction == BUY:
            levels, heap, heaped, key = self.bids, self._bid_heap, self._bid_heaped, -price
            self.bid_volume += order.volume
        else:
            levels, heap, heaped, key = self.asks, self._ask_heap, self._ask_heaped, price
            self.ask_volume += order.volume
        level = levels.get(price)
        if level is None:
            level = levels[price] = {}
            if price not in heaped:
                heaped.add(price)
                heapq.heappush(heap, key)
        level[order.order_id] = order
        self._orders[order.order_id] = order

    def _match(
        self, taker: int, direction: int, volume: int, limit: Optional[int]
    ) -> tuple[list[Fill], int]:
        fills: list[Fill] = []
        if direction == BUY:
            levels, best = self.asks, self.best_ask
        else:
            levels, best = self.bids, self.best_bid
        remaining = volume
        traded = 0
        while remaining:
            price = best()
            if price is None:
                break
            if limit is not None and (price - limit) * direction > 0:
                break
            level = levels[price]
            while remaining and level:
                maker = next(iter(level.values()))
                qty = min(remaining, maker.volume)
                maker.volume -= qty
                remaining -= qty
                traded += qty
                fills.append(
                    Fill(maker.order_id, maker.agent_id, taker, direction, price, qty, self.step)
                )
                self._emit("F", maker.agent_id, maker.direction, price, qty)
                if not maker.volume:
                    del level[maker.order_id]
                    del self._orders[maker.order_id]
            if not level:
                del levels[price]
        if direction == BUY:
            self.ask_volume -= traded
        else:
            self.bid_volume -= traded
        return fills, remaining
