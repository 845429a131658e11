"""Limit order book with price-time priority and self-match prevention.

Prices are integer ticks, quantities integer shares. An incoming order never
trades against a resting order of the same trader: those are skipped and
deeper liquidity is matched instead. If the incoming remainder would then
rest crossed with a skipped same-trader order, the older order is cancelled.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from typing import Optional

BUY = "buy"
SELL = "sell"
DEPTH_LEVELS = 5


class BookError(Exception):
    pass


class InvalidPrice(BookError):
    pass


class InvalidQty(BookError):
    pass


class Order:
    __slots__ = ("order_id", "trader_id", "venue_id", "side", "price", "qty", "ts")

    def __init__(self, order_id: int, trader_id: int, side: str, price: Optional[int], qty: int,
                 ts: int = 0, venue_id: int = 0):
        self.order_id = order_id
        self.trader_id = trader_id
        self.venue_id = venue_id
        self.side = side
        self.price = price  # None => market order
        self.qty = qty
        self.ts = ts

    @property
    def is_market(self) -> bool:
        return self.price is None

    def __repr__(self) -> str:
        px = "MKT" if self.price is None else self.price
        return f"Order(id={self.order_id}, trader={self.trader_id}, {self.side} {self.qty}@{px})"


@dataclass(slots=True, frozen=True)
class Fill:
    maker_id: int
    taker_id: int
    price_ticks: int
    qty: int
    ts: int
    maker_trader: int = -1
    taker_trader: int = -1
    taker_side: str = SELL
    venue: int = 0

    def csv_row(self) -> str:
        return f"{self.ts},{self.venue},{self.maker_id},{self.taker_id},{self.price_ticks},{self.qty}"


FILL_CSV_HEADER = "ts,venue,maker_id,taker_id,price_ticks,qty"


@dataclass(slots=True, frozen=True)
class BookSnapshot:
    ts: int
    best_bid: Optional[int]
    best_ask: Optional[int]
    bid_depth: tuple[int, ...]
    ask_depth: tuple[int, ...]
    last_interval_volume: int = 0

    @property
    def mid(self) -> Optional[float]:
        if self.best_bid is None or self.best_ask is None:
            return None
        return 0.5 * (self.best_bid + self.best_ask)

    @property
    def spread(self) -> Optional[int]:
        if self.best_bid is None or self.best_ask is None:
            return None
        return self.best_ask - self.best_bid


@dataclass(slots=True)
class SubmitResult:
    fills: list[Fill]
    resting: Optional[Order]
    self_match_cancels: list[Order]


class OrderBook:
    def __init__(self, venue_id: int = 0):
        self.venue_id = venue_id
        self._bids: dict[int, deque[Order]] = {}
        self._asks: dict[int, deque[Order]] = {}
        self._bid_heap: list[int] = []  # negated prices
        self._ask_heap: list[int] = []
        self._bid_qty: dict[int, int] = {}
        self._ask_qty: dict[int, int] = {}
        # prices currently present in each heap (keeps heap entries unique)
        self._bid_keys: set[int] = set()
        self._ask_keys: set[int] = set()
        self.orders: dict[int, Order] = {}

    # -- queries -------------------------------------------------------
    def best_bid(self) -> Optional[int]:
        heap, levels = self._bid_heap, self._bids
        while heap:
            p = -heap[0]
            if p in levels:
                return p
            heapq.heappop(heap)
            self._bid_keys.discard(p)
        return None

    def best_ask(self) -> Optional[int]:
        heap, levels = self._ask_heap, self._asks
        while heap:
            p = heap[0]
            if p in levels:
                return p
            heapq.heappop(heap)
            self._ask_keys.discard(p)
        return None

    def depth(self, side: str, k: int = DEPTH_LEVELS) -> tuple[int, ...]:
        qty = self._bid_qty if side == BUY else self._ask_qty
        prices = sorted(qty, reverse=(side == BUY))[:k]
        out = [qty[p] for p in prices]
        return tuple(out + [0] * (k - len(out)))

    def levels(self, side: str) -> list[tuple[int, int]]:
        qty = self._bid_qty if side == BUY else self._ask_qty
        return [(p, qty[p]) for p in sorted(qty, reverse=(side == BUY))]

    def resting_orders(self, side: str) -> list[Order]:
        """Resting orders in priority order (best price first, FIFO within a level)."""
        levels = self._bids if side == BUY else self._asks
        out: list[Order] = []
        for p in sorted(levels, reverse=(side == BUY)):
            out.extend(levels[p])
        return out

    def snapshot(self, ts: int = 0, k: int = DEPTH_LEVELS, last_interval_volume: int = 0) -> BookSnapshot:
        return BookSnapshot(ts, self.best_bid(), self.best_ask(), self.depth(BUY, k), self.depth(SELL, k),
                            last_interval_volume)

    def is_crossed(self) -> bool:
        b, a = self.best_bid(), self.best_ask()
        return b is not None and a is not None and b >= a

    # -- mutation ------------------------------------------------------
    def submit(self, order: Order) -> SubmitResult:
        if order.qty <= 0 or int(order.qty) != order.qty:
            raise InvalidQty(f"qty={order.qty}")
        if order.price is not None and order.price < 1:
            raise InvalidPrice(f"price={order.price}")
        if order.side == SELL:
            levels, heap, qtys, keys, sign = self._bids, self._bid_heap, self._bid_qty, self._bid_keys, -1
        elif order.side == BUY:
            levels, heap, qtys, keys, sign = self._asks, self._ask_heap, self._ask_qty, self._ask_keys, 1
        else:
            raise BookError(f"bad side {order.side!r}")
        limit = order.price
        tid = order.trader_id
        remaining = order.qty
        fills: list[Fill] = []
        stash: list[int] = []
        pop = heapq.heappop
        while remaining and heap:
            p = sign * heap[0]
            level = levels.get(p)
            if level is None:
                pop(heap)
                keys.discard(p)
                continue
            if limit is not None and (p > limit if sign == 1 else p < limit):
                break
            skipped: list[Order] = []
            while remaining and level:
                o = level[0]
                if o.trader_id == tid:
                    skipped.append(level.popleft())
                    continue
                q = o.qty if o.qty < remaining else remaining
                fills.append(Fill(o.order_id, order.order_id, p, q, order.ts, o.trader_id, tid,
                                  order.side, self.venue_id))
                remaining -= q
                o.qty -= q
                qtys[p] -= q
                if o.qty == 0:
                    level.popleft()
                    del self.orders[o.order_id]
            if skipped:
                level.extendleft(reversed(skipped))
            if not level:
                del levels[p]
                del qtys[p]
                pop(heap)
                keys.discard(p)
            elif remaining:
                # only same-trader orders left at this price
                pop(heap)
                keys.discard(p)
                stash.append(p)
        cancels: list[Order] = []
        resting = None
        if remaining and limit is not None:
            for p in stash:
                cancels.extend(levels.pop(p))
                del qtys[p]
            for o in cancels:
                del self.orders[o.order_id]
            stash = []
            order.qty = remaining
            self._rest(order)
            resting = order
        for p in stash:
            heapq.heappush(heap, sign * p)
            keys.add(p)
        return SubmitResult(fills, resting, cancels)

    def _rest(self, order: Order) -> None:
        p = order.price
        if order.side == BUY:
            levels, heap, qtys, keys, key = self._bids, self._bid_heap, self._bid_qty, self._bid_keys, -p
        else:
            levels, heap, qtys, keys, key = self._asks, self._ask_heap, self._ask_qty, self._ask_keys, p
        level = levels.get(p)
        if level is None:
            levels[p] = deque((order,))
            qtys[p] = order.qty
            if p not in keys:
                keys.add(p)
                heapq.heappush(heap, key)
        else:
            level.append(order)
            qtys[p] += order.qty
        self.orders[order.order_id] = order

    def cancel(self, order_id: int) -> int:
        """Remove a resting order; returns the cancelled residual (0 if unknown)."""
        o = self.orders.pop(order_id, None)
        if o is None:
            return 0
        if o.side == BUY:
            levels, qtys = self._bids, self._bid_qty
        else:
            levels, qtys = self._asks, self._ask_qty
        level = levels[o.price]
        level.remove(o)
        qtys[o.price] -= o.qty
        if not level:
            del levels[o.price]
            del qtys[o.price]
        return o.qty

    def total_qty(self) -> int:
        return sum(self._bid_qty.values()) + sum(self._ask_qty.values())
