from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safexec.book import BUY, SELL, InvalidPrice, InvalidQty, Order, OrderBook
from safexec.exchange import Exchange
from safexec.kernel import Kernel


# -- brute-force reference matcher ---------------------------------------------------------
# Independent of the book: a flat list of resting orders, re-sorted on every match.

def reference_match(orders):
    """Return the fill sequence (maker, taker, price, qty) and the final resting list."""
    resting = []  # dicts: id, trader, side, price, qty, seq
    fills = []
    for seq, (oid, trader, side, price, qty) in enumerate(orders):
        remaining = qty
        opp = [r for r in resting if r["side"] != side]
        if side == SELL:
            opp.sort(key=lambda r: (-r["price"], r["seq"]))
            ok = lambda p: price is None or p >= price
        else:
            opp.sort(key=lambda r: (r["price"], r["seq"]))
            ok = lambda p: price is None or p <= price
        for r in opp:
            if not remaining or not ok(r["price"]):
                break
            if r["trader"] == trader:
                continue
            q = min(r["qty"], remaining)
            fills.append((r["id"], oid, r["price"], q))
            r["qty"] -= q
            remaining -= q
        resting = [r for r in resting if r["qty"] > 0]
        if remaining and price is not None:
            # resting crossed against our own older orders is not allowed: cancel them
            crossed = lambda r: r["trader"] == trader and r["side"] != side and (
                r["price"] >= price if side == SELL else r["price"] <= price)
            resting = [r for r in resting if not crossed(r)]
            resting.append(dict(id=oid, trader=trader, side=side, price=price, qty=remaining, seq=seq))
    return fills, resting


order_st = st.tuples(
    st.integers(0, 2),                                  # trader
    st.sampled_from([BUY, SELL]),
    st.one_of(st.none(), st.integers(98, 102)),         # None = market order
    st.integers(1, 20),
)


def run_book(raw):
    book = OrderBook()
    fills = []
    orders = [(i + 1, t, s, p, q) for i, (t, s, p, q) in enumerate(raw)]
    for oid, t, s, p, q in orders:
        res = book.submit(Order(oid, t, s, p, q))
        fills += [(f.maker_id, f.taker_id, f.price_ticks, f.qty) for f in res.fills]
        assert not any(f.maker_trader == f.taker_trader for f in res.fills)
        assert not book.is_crossed()
    return orders, book, fills


@settings(max_examples=3000, deadline=None)
@given(st.lists(order_st, min_size=1, max_size=10))
def test_matches_reference(raw):
    orders, book, fills = run_book(raw)
    ref_fills, ref_rest = reference_match(orders)
    assert fills == ref_fills
    got = sorted((o.order_id, o.price, o.qty) for side in (BUY, SELL) for o in book.resting_orders(side))
    assert got == sorted((r["id"], r["price"], r["qty"]) for r in ref_rest)


@settings(max_examples=500, deadline=None)
@given(st.lists(order_st, min_size=1, max_size=10))
def test_share_conservation(raw):
    book = OrderBook()
    submitted = filled_twice = cancelled = discarded = 0
    for i, (t, s, p, q) in enumerate(raw):
        res = book.submit(Order(i + 1, t, s, p, q))
        got = sum(f.qty for f in res.fills)
        filled_twice += 2 * got  # one share leaves the maker and one the taker
        cancelled += sum(o.qty for o in res.self_match_cancels)
        submitted += q
        if p is None:
            discarded += q - got
    # every submitted share is resting, filled (on one side of a trade), cancelled or discarded
    assert submitted == book.total_qty() + filled_twice + cancelled + discarded


def test_market_sell_into_empty_book():
    book = OrderBook()
    res = book.submit(Order(1, 0, SELL, None, 100))
    assert res.fills == [] and res.resting is None
    assert book.best_bid() is None and book.best_ask() is None


def test_fill_at_maker_price():
    book = OrderBook()
    book.submit(Order(1, 0, BUY, 10_000, 100))
    res = book.submit(Order(2, 1, SELL, 9_990, 60))
    assert [(f.price_ticks, f.qty) for f in res.fills] == [(10_000, 60)]
    assert book.depth(BUY)[0] == 40


def test_price_time_priority():
    book = OrderBook()
    book.submit(Order(1, 0, BUY, 100, 10))
    book.submit(Order(2, 1, BUY, 101, 10))
    book.submit(Order(3, 2, BUY, 101, 10))
    res = book.submit(Order(4, 3, SELL, 100, 25))
    assert [(f.maker_id, f.price_ticks, f.qty) for f in res.fills] == [(2, 101, 10), (3, 101, 10), (1, 100, 5)]


def test_self_match_skipped_not_filled():
    book = OrderBook()
    book.submit(Order(1, 7, BUY, 101, 10))
    book.submit(Order(2, 8, BUY, 100, 10))
    res = book.submit(Order(3, 7, SELL, 100, 5))
    assert [(f.maker_id, f.qty) for f in res.fills] == [(2, 5)]
    assert book.best_bid() == 101  # own order untouched


def test_self_cross_rest_cancels_older_own_order():
    book = OrderBook()
    book.submit(Order(1, 7, BUY, 101, 10))
    res = book.submit(Order(2, 7, SELL, 100, 5))
    assert res.fills == []
    assert [o.order_id for o in res.self_match_cancels] == [1]
    assert book.best_bid() is None and book.best_ask() == 100


def test_cancel_semantics():
    book = OrderBook()
    book.submit(Order(1, 0, BUY, 100, 100))
    book.submit(Order(2, 1, SELL, 100, 40))
    assert book.cancel(1) == 60
    assert book.cancel(1) == 0
    assert book.cancel(999) == 0


def test_snapshot_basics():
    book = OrderBook()
    snap = book.snapshot()
    assert snap.best_bid is None and snap.best_ask is None
    book.submit(Order(1, 0, BUY, 10_000, 100))
    snap = book.snapshot()
    assert snap.best_bid == 10_000 and snap.bid_depth[0] == 100 and len(snap.bid_depth) == 5


def test_invalid_orders():
    book = OrderBook()
    with pytest.raises(InvalidPrice):
        book.submit(Order(1, 0, BUY, 0, 10))
    with pytest.raises(InvalidQty):
        book.submit(Order(2, 0, BUY, 10, 0))


def test_level_reuse_after_cancel():
    book = OrderBook()
    book.submit(Order(1, 0, BUY, 100, 10))
    book.cancel(1)
    book.submit(Order(2, 0, BUY, 100, 10))
    book.submit(Order(3, 0, BUY, 100, 10))
    res = book.submit(Order(4, 1, SELL, 100, 20))
    assert sum(f.qty for f in res.fills) == 20
    assert book.best_bid() is None


class _Sink:
    def receive(self, kernel, event):
        pass


def test_interval_volume_counts_each_trade_once():
    k = Kernel(0)
    ex = Exchange(0, interval_ns=1000)
    k.register(ex)
    sink = _Sink()
    k.register(sink)
    assert ex.interval_volume(0) == 0
    k.schedule(10, ex.id, ("order", Order(1, 5, BUY, 100, 100)))
    k.schedule(20, ex.id, ("order", Order(2, 6, SELL, 100, 60)))
    k.schedule(30, ex.id, ("order", Order(3, 6, SELL, None, 40)))
    k.schedule(1500, ex.id, ("order", Order(4, 5, BUY, 99, 10)))
    k.schedule(1600, ex.id, ("order", Order(5, 6, SELL, 99, 7)))
    k.run_until(2000)
    assert ex.interval_volume(0) == 100
    assert ex.interval_volume(1) == 7
    assert ex.total_volume == 107
    assert ex.snapshot(1999).last_interval_volume == 7
    assert ex.snapshot(999).last_interval_volume == 100
    lines = ex.fill_log_csv().splitlines()
    assert lines[0] == "ts,venue,maker_id,taker_id,price_ticks,qty"
    assert lines[1] == "20,0,1,2,100,60"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5000), st.integers(1, 50)), min_size=1, max_size=30))
def test_volume_between_matches_fill_log(stream):
    k = Kernel(0)
    ex = Exchange(0, interval_ns=1000)
    k.register(ex)
    oid = 0
    for t, q in sorted(stream):
        oid += 1
        k.schedule(t, ex.id, ("order", Order(oid, 1, BUY, 100, q)))
        oid += 1
        k.schedule(t, ex.id, ("order", Order(oid, 2, SELL, 100, q)))
    k.run_until(6000)
    for idx in range(6):
        expect = sum(f.qty for f in ex.fills if idx * 1000 <= f.ts < (idx + 1) * 1000)
        assert ex.interval_volume(idx) == expect
