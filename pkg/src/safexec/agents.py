"""Background trading population: fundamental value process and agent types.

The decision rules are small pure functions (``ou_step``,
``market_maker_quotes``, ``noise_act``, ``momentum_act``, ``value_act``) so
they can be tested in isolation; the agent classes wire them to the kernel.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .book import BUY, SELL, Order
from .kernel import NS_PER_S


@dataclass
class FundamentalOU:
    kappa: float = 1.67e-4  # 1/s
    mu: float = 10_000.0  # ticks
    sigma: float = 0.5  # ticks / sqrt(s)
    x0: Optional[float] = None  # defaults to mu

    def __post_init__(self):
        if self.kappa < 0 or self.sigma < 0:
            raise ValueError("kappa and sigma must be non-negative")
        if self.x0 is None:
            self.x0 = self.mu

    def mean(self, t: float) -> float:
        return self.mu + (self.x0 - self.mu) * math.exp(-self.kappa * t)

    def variance(self, t: float) -> float:
        if self.kappa == 0:
            return self.sigma ** 2 * t
        return self.sigma ** 2 / (2 * self.kappa) * (1 - math.exp(-2 * self.kappa * t))


def ou_step(x, dt: float, params: FundamentalOU, rng: np.random.Generator):
    """One Euler step of the mean-reverting fundamental (works on arrays)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    eps = rng.standard_normal(np.shape(x))
    out = x + params.kappa * (params.mu - x) * dt + params.sigma * math.sqrt(dt) * eps
    return float(out) if np.ndim(out) == 0 else out


class FundamentalPath:
    """Fundamental sampled on a fixed grid; shared by every venue."""

    def __init__(self, params: FundamentalOU, end_ns: int, rng: np.random.Generator, dt_s: float = 1.0):
        self.params = params
        self.dt_ns = int(dt_s * NS_PER_S)
        n = end_ns // self.dt_ns + 2
        eps = rng.standard_normal(n - 1)
        a = params.kappa * dt_s
        b = params.sigma * math.sqrt(dt_s)
        mu = params.mu
        x = params.x0
        values = [x]
        for e in eps.tolist():
            x = x + a * (mu - x) + b * e
            values.append(x)
        self.values = values

    def at(self, t_ns: int) -> float:
        i = t_ns // self.dt_ns
        if i >= len(self.values):
            i = len(self.values) - 1
        return self.values[i]

    def tick_at(self, t_ns: int) -> int:
        return round(self.at(t_ns))


@dataclass
class IntradayProfile:
    """Quadratic U-shaped activity curve over the session, mean 1."""

    amplitude: float = 2.0

    def intensity(self, tau: float) -> float:
        tau = min(max(tau, 0.0), 1.0)
        return (1.0 + self.amplitude * (2 * tau - 1) ** 2) / (1.0 + self.amplitude / 3.0)

    def _cumulative(self, tau: float) -> float:
        return (tau + self.amplitude * (2 * tau - 1) ** 3 / 6.0) / (1.0 + self.amplitude / 3.0)

    def weights(self, n_steps: int) -> np.ndarray:
        """Share of the session's activity falling in each of ``n_steps`` equal buckets."""
        edges = np.linspace(0.0, 1.0, n_steps + 1)
        cum = np.array([self._cumulative(e) for e in edges])
        w = np.diff(cum)
        return w / w.sum()


@dataclass
class PopulationConfig:
    n_market_makers: int = 2
    n_noise: int = 1000
    n_momentum: int = 10
    n_value: int = 100

    def __post_init__(self):
        for name in ("n_market_makers", "n_noise", "n_momentum", "n_value"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class MarketMakerParams:
    half_spread: int = 1
    skew: float = 2e-4  # ticks per share of inventory
    size: int = 500
    period_s: float = 2.0
    replenish_frac: float = 0.5


@dataclass
class NoiseParams:
    daily_volume: float = 2.0e6  # expected noise shares submitted per session, all venues
    p_market: float = 0.5
    limit_levels: int = 5
    max_size: int = 100
    profile: IntradayProfile = field(default_factory=IntradayProfile)

    @property
    def mean_size(self) -> float:
        return (self.max_size + 1) / 2.0


@dataclass
class MomentumParams:
    period_s: float = 30.0
    short_window_s: float = 60.0
    long_window_s: float = 600.0
    threshold: float = 1.0
    max_size: int = 100


@dataclass
class ValueParams:
    mean_period_s: float = 300.0
    obs_noise: float = 5.0
    band: float = 10.0
    max_size: int = 200


# -- decision rules ------------------------------------------------------------

def market_maker_quotes(fundamental: float, inventory: int, params: MarketMakerParams) -> tuple[int, int, int]:
    """(bid, ask, size) centred on the fundamental, skewed against inventory."""
    center = round(fundamental - params.skew * inventory)
    bid = max(1, center - params.half_spread)
    ask = max(bid + 1, center + params.half_spread)
    return bid, ask, params.size


@dataclass(slots=True, frozen=True)
class NoiseIntent:
    side: str
    is_market: bool
    size: int
    offset: int


def noise_act(rng, params: NoiseParams) -> NoiseIntent:
    """Draw one noise order. Every field is drawn on every call so the random
    stream does not depend on market state."""
    r = rng.random
    side = BUY if r() < 0.5 else SELL
    is_market = r() < params.p_market
    size = int(r() * params.max_size) + 1
    offset = int(r() * params.limit_levels)
    return NoiseIntent(side, is_market, size, offset)


def noise_limit_price(intent: NoiseIntent, bid: Optional[int], ask: Optional[int]) -> Optional[int]:
    if intent.side == BUY:
        ref = bid if bid is not None else (ask - 1 if ask is not None else None)
        if ref is None:
            return None
        return max(1, ref - intent.offset)
    ref = ask if ask is not None else (bid + 1 if bid is not None else None)
    if ref is None:
        return None
    return ref + intent.offset


def moving_average_signal(history, short_n: int, long_n: int) -> float:
    h = list(history)
    if len(h) < 2:
        return 0.0
    s = h[-short_n:]
    lg = h[-long_n:]
    return sum(s) / len(s) - sum(lg) / len(lg)


def momentum_act(history, params: MomentumParams, rng, period_s: Optional[float] = None) -> Optional[tuple[str, int]]:
    """Trend follower: buy on a rising short MA, sell on a falling one."""
    size = int(rng.random() * params.max_size) + 1
    if len(history) < 2:
        return None
    period = period_s or params.period_s
    short_n = max(1, round(params.short_window_s / period))
    long_n = max(short_n + 1, round(params.long_window_s / period))
    signal = moving_average_signal(history, short_n, long_n)
    if signal > params.threshold:
        return BUY, size
    if signal < -params.threshold:
        return SELL, size
    return None


def value_act(estimate: float, mid: Optional[float], params: ValueParams, rng) -> Optional[tuple[str, int]]:
    """Buy below value, sell above it, nothing inside the band."""
    size = int(rng.random() * params.max_size) + 1
    if mid is None:
        return None
    if mid < estimate - params.band:
        return BUY, size
    if mid > estimate + params.band:
        return SELL, size
    return None


# -- agents --------------------------------------------------------------------

class _Trader:
    def __init__(self, market, venue: int):
        self.id = -1
        self.market = market
        self.venue = venue
        self.rng = None
        self._n_orders = 0

    def start(self, kernel) -> None:
        self.rng = kernel.rng_for(self.id)
        self.exchange = self.market.exchanges[self.venue]
        self.lat = kernel.latency.one_way_ns(self.exchange.id, self.id)

    def next_order_id(self) -> int:
        self._n_orders += 1
        return (self.id << 32) | self._n_orders


class MarketMaker(_Trader):
    def __init__(self, market, venue: int, params: MarketMakerParams):
        super().__init__(market, venue)
        self.params = params
        self.inventory = 0
        self.live: dict[int, list] = {}  # order id -> [side, price, remaining]
        self.quoted_minutes = 0

    def start(self, kernel) -> None:
        super().start(kernel)
        self.market.exchanges[self.venue].subscribers.add(self.id)
        phase = int(self.rng.random() * self.params.period_s * NS_PER_S)
        kernel.wakeup(self.id, self.market.start_ns + phase)

    def receive(self, kernel, event) -> None:
        msg = event.payload
        if msg == "wakeup":
            self._requote(kernel)
            kernel.wakeup(self.id, kernel.now + int(self.params.period_s * NS_PER_S))
        elif msg[0] == "fill":
            f = msg[1]
            mine = f.maker_id if f.maker_trader == self.id else f.taker_id
            rec = self.live.get(mine)
            side = rec[0] if rec is not None else (f.taker_side if f.taker_trader == self.id else
                                                    (SELL if f.taker_side == BUY else BUY))
            self.inventory += f.qty if side == BUY else -f.qty
            if rec is not None:
                rec[2] -= f.qty
                if rec[2] <= 0:
                    del self.live[mine]
        elif msg[0] == "cancelled":
            self.live.pop(msg[1], None)

    def _requote(self, kernel) -> None:
        f = self.market.fundamental.at(kernel.now)
        bid, ask, size = market_maker_quotes(f, self.inventory, self.params)
        want = {BUY: bid, SELL: ask}
        floor_qty = size * self.params.replenish_frac
        have = {rec[0]: (oid, rec) for oid, rec in self.live.items()}
        for side in (BUY, SELL):
            cur = have.get(side)
            if cur is not None and cur[1][1] == want[side] and cur[1][2] >= floor_qty:
                continue
            cancel_id = cur[0] if cur is not None else None
            if cur is not None:
                del self.live[cur[0]]
            oid = self.next_order_id()
            self.live[oid] = [side, want[side], size]
            kernel.send(self.id, self.exchange.id,
                        ("replace", cancel_id, Order(oid, self.id, side, want[side], size)))


class NoiseTrader(_Trader):
    def __init__(self, market, venue: int, params: NoiseParams, rate_scale: float):
        super().__init__(market, venue)
        self.params = params
        self.rate_scale = rate_scale  # orders per second at unit intensity
        self.resting: Optional[int] = None

    def start(self, kernel) -> None:
        super().start(kernel)
        kernel.wakeup(self.id, self.market.start_ns + self._wait(self.market.start_ns))

    def _wait(self, now: int) -> int:
        rate = self.rate_scale * self.params.profile.intensity(self.market.session_frac(now))
        return int(self.rng.expovariate(rate) * NS_PER_S) + 1

    def receive(self, kernel, event) -> None:
        now = kernel.now
        intent = noise_act(self.rng, self.params)
        self.market.record_intent(self.id, now, intent)
        kernel.wakeup(self.id, now + self._wait(now))
        if intent.is_market:
            price = None
        else:
            bid, ask = self.exchange.quote_at(now - self.lat)
            price = noise_limit_price(intent, bid, ask)
            if price is None:
                return
        oid = self.next_order_id()
        cancel_id = self.resting
        self.resting = None if intent.is_market else oid
        kernel.send(self.id, self.exchange.id, ("replace", cancel_id, Order(oid, self.id, intent.side, price, intent.size)))


class MomentumTrader(_Trader):
    def __init__(self, market, venue: int, params: MomentumParams):
        super().__init__(market, venue)
        self.params = params
        long_n = max(2, round(params.long_window_s / params.period_s))
        self.history: deque[float] = deque(maxlen=long_n)

    def start(self, kernel) -> None:
        super().start(kernel)
        phase = int(self.rng.random() * self.params.period_s * NS_PER_S)
        kernel.wakeup(self.id, self.market.start_ns + phase)

    def receive(self, kernel, event) -> None:
        now = kernel.now
        kernel.wakeup(self.id, now + int(self.params.period_s * NS_PER_S))
        mid = self.exchange.mid_at(now - self.lat)
        if mid is not None:
            self.history.append(mid)
        decision = momentum_act(self.history, self.params, self.rng)
        self.market.record_draw(self.id, now)
        if decision is None:
            return
        side, size = decision
        kernel.send(self.id, self.exchange.id, ("order", Order(self.next_order_id(), self.id, side, None, size)))


class ValueTrader(_Trader):
    def __init__(self, market, venue: int, params: ValueParams):
        super().__init__(market, venue)
        self.params = params
        self.resting: Optional[int] = None

    def start(self, kernel) -> None:
        super().start(kernel)
        kernel.wakeup(self.id, self.market.start_ns + int(self.rng.expovariate(1.0 / self.params.mean_period_s) * NS_PER_S))

    def receive(self, kernel, event) -> None:
        now = kernel.now
        rng = self.rng
        kernel.wakeup(self.id, now + int(rng.expovariate(1.0 / self.params.mean_period_s) * NS_PER_S) + 1)
        estimate = self.market.fundamental.at(now) + rng.gauss(0.0, self.params.obs_noise)
        bid, ask = self.exchange.quote_at(now - self.lat)
        mid = None if bid is None or ask is None else 0.5 * (bid + ask)
        decision = value_act(estimate, mid, self.params, rng)
        self.market.record_draw(self.id, now)
        if decision is None:
            return
        side, size = decision
        # marketable limit at the far touch; any remainder rests until the next wake
        price = ask if side == BUY else bid
        oid = self.next_order_id()
        cancel_id, self.resting = self.resting, oid
        kernel.send(self.id, self.exchange.id, ("replace", cancel_id, Order(oid, self.id, side, price, size)))


class IntentDigest:
    """Running hash of background decisions that do not depend on market state."""

    def __init__(self):
        self._h = hashlib.sha256()
        self.count = 0

    def update(self, *fields: int) -> None:
        self._h.update(struct.pack(f"<{len(fields)}q", *fields))
        self.count += 1

    def hexdigest(self) -> str:
        return self._h.hexdigest()
