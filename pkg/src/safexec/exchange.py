"""Exchange actor: one venue's order book wired into the kernel.

Messages understood (payload tuples):

``("order", Order)``
    submit; fill reports go to subscribed owners.
``("replace", cancel_id, Order | None)``
    cancel then submit, applied atomically in that order.
``("cancel", order_id)``
    cancel; subscribed owners receive ``("cancelled", order_id, qty)``.
``("publish", recipient)``
    send a :class:`BookSnapshot` of the current state to ``recipient``.

Top-of-book changes are appended to a quote history so agents can read the
book as it stood ``latency`` ago without per-event broadcast traffic.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from typing import Optional

from .book import BUY, SELL, DEPTH_LEVELS, BookSnapshot, Fill, Order, OrderBook


class Exchange:
    def __init__(self, venue_id: int, interval_ns: int, origin_ns: int = 0, keep_fills: bool = True):
        self.id = -1
        self.venue_id = venue_id
        self.book = OrderBook(venue_id)
        self.interval_ns = interval_ns
        self.origin_ns = origin_ns
        self.subscribers: set[int] = set()
        self.keep_fills = keep_fills
        self.fills: list[Fill] = []
        self._fill_ts: list[int] = []
        self._cum_vol: list[int] = []
        self._total_vol = 0
        self._q_ts: list[int] = [0]
        self._q_bid: list[Optional[int]] = [None]
        self._q_ask: list[Optional[int]] = [None]
        self.self_match_cancels = 0
        self.messages = 0

    # -- kernel interface ------------------------------------------------
    def receive(self, kernel, event) -> None:
        msg = event.payload
        kind = msg[0]
        self.messages += 1
        if kind == "order":
            self._submit(kernel, msg[1])
        elif kind == "replace":
            if msg[1] is not None:
                self._cancel(kernel, msg[1])
            if msg[2] is not None:
                self._submit(kernel, msg[2])
        elif kind == "cancel":
            self._cancel(kernel, msg[1])
        elif kind == "publish":
            kernel.send(self.id, msg[1], ("snapshot", self.venue_id, self.snapshot(kernel.now)))
            return
        else:
            raise ValueError(f"unknown message {kind!r}")
        self._record_quote(kernel.now)

    def _submit(self, kernel, order: Order) -> None:
        order.ts = kernel.now
        order.venue_id = self.venue_id
        res = self.book.submit(order)
        subs = self.subscribers
        if res.fills:
            ts = kernel.now
            for f in res.fills:
                self._total_vol += f.qty
                self._fill_ts.append(ts)
                self._cum_vol.append(self._total_vol)
                if self.keep_fills:
                    self.fills.append(f)
                if f.maker_trader in subs:
                    kernel.send(self.id, f.maker_trader, ("fill", f))
                if f.taker_trader in subs:
                    kernel.send(self.id, f.taker_trader, ("fill", f))
        for o in res.self_match_cancels:
            self.self_match_cancels += 1
            if o.trader_id in subs:
                kernel.send(self.id, o.trader_id, ("cancelled", o.order_id, o.qty))
        if order.price is None and res.resting is None and order.trader_id in subs:
            unfilled = order.qty - sum(f.qty for f in res.fills)
            if unfilled:
                kernel.send(self.id, order.trader_id, ("cancelled", order.order_id, unfilled))

    def _cancel(self, kernel, order_id: int) -> None:
        o = self.book.orders.get(order_id)
        qty = self.book.cancel(order_id)
        if o is not None and o.trader_id in self.subscribers:
            kernel.send(self.id, o.trader_id, ("cancelled", order_id, qty))

    def _record_quote(self, ts: int) -> None:
        b, a = self.book.best_bid(), self.book.best_ask()
        if b != self._q_bid[-1] or a != self._q_ask[-1]:
            if self._q_ts[-1] == ts:
                self._q_bid[-1] = b
                self._q_ask[-1] = a
            else:
                self._q_ts.append(ts)
                self._q_bid.append(b)
                self._q_ask.append(a)

    # -- market data -------------------------------------------------------
    def quote_at(self, ts: int) -> tuple[Optional[int], Optional[int]]:
        """Best bid/ask as they stood at time ``ts`` (after all events at ``ts``)."""
        i = bisect_right(self._q_ts, ts) - 1
        if i < 0:
            return None, None
        return self._q_bid[i], self._q_ask[i]

    def mid_at(self, ts: int) -> Optional[float]:
        b, a = self.quote_at(ts)
        if b is None or a is None:
            return None
        return 0.5 * (b + a)

    def volume_between(self, t0: int, t1: int) -> int:
        """Traded shares with ``t0 <= ts < t1``; each trade counted once."""
        ts, cum = self._fill_ts, self._cum_vol
        i = bisect_left(ts, t0)
        j = bisect_left(ts, t1)
        if j == 0:
            return 0
        before = cum[i - 1] if i > 0 else 0
        return cum[j - 1] - before

    def interval_volume(self, index: int) -> int:
        t0 = self.origin_ns + index * self.interval_ns
        return self.volume_between(t0, t0 + self.interval_ns)

    def snapshot(self, ts: int, k: int = DEPTH_LEVELS) -> BookSnapshot:
        vol = self.volume_between(max(0, ts - self.interval_ns), ts + 1)
        return self.book.snapshot(ts, k, vol)

    @property
    def total_volume(self) -> int:
        return self._total_vol

    def fill_log_csv(self) -> str:
        from .book import FILL_CSV_HEADER

        return "\n".join([FILL_CSV_HEADER] + [f.csv_row() for f in self.fills]) + "\n"


__all__ = ["Exchange", "BUY", "SELL"]
