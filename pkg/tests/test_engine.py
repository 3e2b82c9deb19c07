import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobsim.engine import BUY, SELL, BookError, OrderBook


def book_with(*orders):
    """Build a book from ``(direction, price, volume)`` triples in arrival order."""
    book = OrderBook()
    ids = []
    for i, (d, p, v) in enumerate(orders):
        _, order = book.submit_limit(i, d, p, v)
        ids.append(order.order_id)
    return book, ids


# ---- submit_limit ----------------------------------------------------------

def test_limit_into_empty_book_rests():
    book = OrderBook()
    fills, order = book.submit_limit(0, BUY, 100, 5)
    assert fills == []
    assert order.volume == 5
    assert book.best_bid() == 100
    assert sum(o.volume for o in book.level_orders(BUY, 100)) == 5


def test_non_crossing_limit():
    book, _ = book_with((SELL, 101, 5))
    fills, _ = book.submit_limit(9, BUY, 100, 3)
    assert fills == []
    assert (book.best_bid(), book.best_ask(), book.spread()) == (100, 101, 1)


def test_crossing_limit_matches_generically():
    book, (a,) = book_with((SELL, 101, 5))
    fills, rest = book.submit_limit(9, BUY, 101, 2)
    assert [(f.maker_order_id, f.volume, f.price) for f in fills] == [(a, 2, 101)]
    assert rest is None
    assert book.side_total_volume(SELL) == 3
    assert book.level_orders(SELL, 101)[0].volume == 3


def test_crossing_limit_remainder_rests_at_its_price():
    book, _ = book_with((SELL, 101, 2))
    fills, rest = book.submit_limit(9, BUY, 102, 5)
    assert sum(f.volume for f in fills) == 2
    assert rest.volume == 3 and rest.price == 102
    assert book.best_ask() is None and book.best_bid() == 102


@pytest.mark.parametrize("price,volume", [(100, 0), (0, 5), (-3, 1), (100.5, 1)])
def test_limit_rejects_bad_input(price, volume):
    with pytest.raises(BookError):
        OrderBook().submit_limit(0, BUY, price, volume)


# ---- submit_market ---------------------------------------------------------

def test_market_walks_levels_fifo():
    book, ids = book_with((SELL, 101, 5), (SELL, 102, 6), (SELL, 102, 4))
    fills = book.submit_market(BUY, 8, taker=99)
    assert [(f.price, f.volume, f.maker_order_id) for f in fills] == [
        (101, 5, ids[0]), (102, 3, ids[1])]
    assert [o.volume for o in book.level_orders(SELL, 102)] == [3, 4]
    assert book.best_ask() == 102


def test_market_sell_single_level_partial():
    book, _ = book_with((BUY, 100, 10))
    fills = book.submit_market(SELL, 1, taker=5)
    assert [(f.price, f.volume) for f in fills] == [(100, 1)]
    assert book.side_total_volume(BUY) == 9


def test_market_larger_than_side_is_rejected():
    book, _ = book_with((SELL, 101, 5), (SELL, 102, 7))
    before = book.depth_snapshot(100.0)
    assert book.submit_market(BUY, 100, taker=1) == []
    assert book.rejected == 1
    assert book.depth_snapshot(100.0) == before


def test_market_into_empty_side_is_rejected():
    book = OrderBook()
    assert book.submit_market(SELL, 1, taker=1) == []
    assert book.rejected == 1


# ---- cancel ----------------------------------------------------------------

def test_cancel_only_order_removes_level():
    book, ids = book_with((BUY, 100, 5), (BUY, 99, 1))
    book.cancel(ids[0])
    assert 100 not in book.bids
    assert book.best_bid() == 99


def test_cancel_middle_preserves_fifo():
    book, ids = book_with((SELL, 105, 1), (SELL, 105, 2), (SELL, 105, 3))
    book.cancel(ids[1])
    assert [o.order_id for o in book.level_orders(SELL, 105)] == [ids[0], ids[2]]


def test_cancel_then_resubmit_ranks_last():
    book, ids = book_with((BUY, 100, 1), (BUY, 100, 1))
    book.cancel(ids[0])
    _, again = book.submit_limit(0, BUY, 100, 1)
    assert [o.order_id for o in book.level_orders(BUY, 100)] == [ids[1], again.order_id]
    fills = book.submit_market(SELL, 1, taker=7)
    assert fills[0].maker_order_id == ids[1]


def test_cancel_unknown_id():
    with pytest.raises(KeyError):
        OrderBook().cancel(42)


# ---- queries ---------------------------------------------------------------

@pytest.mark.parametrize("bid,ask,mid,spread", [(100, 101, 100.5, 1), (98, 103, 100.5, 5)])
def test_mid_and_spread(bid, ask, mid, spread):
    book, _ = book_with((BUY, bid, 1), (SELL, ask, 1))
    assert book.mid_price() == mid
    assert book.spread() == spread


def test_empty_ask_side_undefined():
    book, _ = book_with((BUY, 100, 1))
    assert book.best_ask() is None
    assert book.spread() is None
    assert book.mid_price() is None


def test_volume_imbalance():
    assert OrderBook().volume_imbalance() == 0
    book, _ = book_with((BUY, 100, 30), (SELL, 101, 30))
    assert book.volume_imbalance() == 0
    book, _ = book_with((BUY, 100, 15), (BUY, 99, 25), (SELL, 101, 20), (SELL, 104, 5))
    assert book.volume_imbalance() == 15


def test_side_total_and_depth():
    book, _ = book_with((SELL, 101, 7))
    assert book.side_total_volume(SELL) == 7
    book, _ = book_with((BUY, 100, 5), (SELL, 101, 2))
    assert book.depth_snapshot().bid == [(0.5, 5)]


def test_depth_matches_recount():
    rng = np.random.default_rng(3)
    book = OrderBook()
    for i in range(300):
        d = BUY if i % 2 else SELL
        p = int(100 - d * rng.integers(1, 30))
        book.submit_limit(i, d, p, int(rng.integers(1, 9)))
    mid = book.mid_price()
    snap = book.depth_snapshot()
    for side, levels in ((BUY, snap.bid), (SELL, snap.ask)):
        recount = {}
        for o in (book.bids if side == BUY else book.asks).values():
            for order in o.values():
                recount[abs(order.price - mid)] = recount.get(abs(order.price - mid), 0) + order.volume
        assert dict(levels) == recount
        assert all(dist >= book.spread() / 2 for dist, _ in levels)


def test_depth_requires_reference_when_side_empty():
    book, _ = book_with((BUY, 100, 5))
    with pytest.raises(BookError):
        book.depth_snapshot()
    assert book.depth_snapshot(101.0).bid == [(1.0, 5)]


def test_event_sink_records_types():
    events = []
    book = OrderBook(event_sink=lambda *e: events.append(e))
    _, o = book.submit_limit(1, SELL, 101, 3)
    book.submit_market(BUY, 1, taker=2)
    book.cancel(o.order_id)
    assert [e[0] for e in events] == ["L", "M", "F", "C"]


# ---- shadow-book equivalence -------------------------------------------------

class ShadowBook:
    """Naive list-scan reference: every query recomputed from scratch."""

    def __init__(self):
        self.orders = []  # [order_id, direction, price, volume, arrival]
        self.arrival = 0

    def best(self, side):
        prices = [o[2] for o in self.orders if o[1] == side]
        if not prices:
            return None
        return max(prices) if side == BUY else min(prices)

    def total(self, side):
        return sum(o[3] for o in self.orders if o[1] == side)

    def _match(self, direction, volume, limit):
        makers = sorted((o for o in self.orders if o[1] == -direction),
                        key=lambda o: (o[2] * direction, o[4]))
        fills = []
        for o in makers:
            if not volume:
                break
            if limit is not None and (o[2] - limit) * direction > 0:
                break
            q = min(volume, o[3])
            o[3] -= q
            volume -= q
            fills.append((o[0], o[2], q))
        self.orders = [o for o in self.orders if o[3] > 0]
        return fills, volume

    def limit(self, order_id, direction, price, volume):
        fills, rest = self._match(direction, volume, price)
        if rest:
            self.orders.append([order_id, direction, price, rest, self.arrival])
            self.arrival += 1
        return fills, rest

    def market(self, direction, volume):
        if volume > self.total(-direction):
            return []
        return self._match(direction, volume, None)[0]

    def cancel(self, order_id):
        self.orders = [o for o in self.orders if o[0] != order_id]


def _apply(book, shadow, op, a, b, c):
    """One operation on both books; returns fills from each."""
    if op == 0 or not book.n_orders:
        d = BUY if a % 2 else SELL
        price = 100 + (b % 21) - 10
        fills, rest = book.submit_limit(0, d, price, 1 + c % 9)
        oid = rest.order_id if rest is not None else book._next_id
        shadow_fills, _ = shadow.limit(oid, d, price, 1 + c % 9)
    elif op == 1:
        d = BUY if a % 2 else SELL
        fills = book.submit_market(d, 1 + c % 15, taker=0)
        shadow_fills = shadow.market(d, 1 + c % 15)
    else:
        ids = sorted(book._orders)
        oid = ids[b % len(ids)]
        book.cancel(oid)
        shadow.cancel(oid)
        fills, shadow_fills = [], []
    return [(f.maker_order_id, f.price, f.volume) for f in fills], shadow_fills


def _check(book, shadow):
    assert book.best_bid() == shadow.best(BUY)
    assert book.best_ask() == shadow.best(SELL)
    assert book.side_total_volume(BUY) == shadow.total(BUY)
    assert book.side_total_volume(SELL) == shadow.total(SELL)
    assert book.n_orders == len(shadow.orders)
    bid, ask = book.best_bid(), book.best_ask()
    if bid is not None and ask is not None:
        assert bid < ask


def test_shadow_book_equivalence_1e5_ops():
    rng = np.random.default_rng(2024)
    n_ops = 100_000
    ops = rng.choice(3, size=n_ops, p=[0.55, 0.15, 0.30])
    draws = rng.integers(0, 1 << 30, size=(n_ops, 3))
    book, shadow = OrderBook(), ShadowBook()
    for i in range(n_ops):
        got, want = _apply(book, shadow, int(ops[i]), *map(int, draws[i]))
        assert got == want
        _check(book, shadow)
        if i % 5000 == 0:
            book.audit()
    book.audit()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 1000), st.integers(0, 1000),
                          st.integers(0, 1000)), max_size=80))
def test_shadow_book_equivalence_property(ops):
    book, shadow = OrderBook(), ShadowBook()
    for op in ops:
        got, want = _apply(book, shadow, *op)
        assert got == want
        _check(book, shadow)
    book.audit()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.integers(1, 9)), min_size=1, max_size=40),
       st.integers(1, 60))
def test_market_conservation_and_priority(levels, volume):
    book = OrderBook()
    arrival = {}
    for i, (offset, v) in enumerate(levels):
        _, o = book.submit_limit(i, SELL, 100 + offset, v)
        arrival[o.order_id] = i
    available = book.side_total_volume(SELL)
    fills = book.submit_market(BUY, volume, taker=-1)
    if volume > available:
        assert fills == []
        return
    assert sum(f.volume for f in fills) == volume
    for f1, f2 in zip(fills, fills[1:]):
        assert f1.price <= f2.price
        if f1.price == f2.price:
            assert arrival[f1.maker_order_id] < arrival[f2.maker_order_id]
    book.audit()
