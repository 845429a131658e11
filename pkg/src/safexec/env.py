"""Sell-side execution environment over the simulated two-venue market.

Decision step ``k`` happens at ``t_k = open + k * interval`` (agent clock):

1. the agent holds snapshots each venue published at ``t_k - latency``;
2. the raw action is checked (penalty) and passed through the shield;
3. one limit sell per venue is sent (arrives at ``t_k + latency``);
4. at ``t_{k+1} - 2 * latency`` the agent sends cancels, so every fill and
   cancel acknowledgement of step ``k`` is known at ``t_{k+1}``;
5. unfilled shares return to the remaining quantity and the reward is assembled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .audit import NO_BID, EpisodeHeader, ReportEntry, KIND_CODES, Transcript, TranscriptRecord
from .book import BUY, SELL, BookSnapshot, Fill, Order
from .market import Market, MarketConfig
from .shield import (
    SELF_TRADE,
    ComplianceMonitor,
    ConstraintSet,
    ExecAction,
    HaltDirective,
    LiveOrder,
    Shield,
    ViolationReport,
    check,
    violation_magnitude,
)


class EnvError(Exception):
    pass


class OversellAttempt(EnvError):
    pass


class ZeroHorizon(EnvError):
    pass


class NoFills(EnvError):
    pass


@dataclass
class EpisodeConfig:
    q0: int = 100_000
    horizon: int = 390
    interval_s: float = 60.0
    n_venues: int = 2
    liquidity_weights: Optional[tuple[float, ...]] = None
    tick_value: float = 0.01
    time_penalty: float = 0.001
    terminal_penalty: float = 0.001
    violation_coef: float = 0.005
    self_trade_penalty: float = 1000.0
    vhat_prior: Optional[int] = None
    depth_scale: float = 2500.0
    volume_scale: float = 1500.0

    def __post_init__(self):
        if self.q0 < 0:
            raise ValueError("q0 must be non-negative")
        if self.n_venues < 1:
            raise ValueError("need at least one venue")

    @property
    def weights(self) -> tuple[float, ...]:
        if self.liquidity_weights is None:
            return (1.0 / self.n_venues,) * self.n_venues
        return tuple(self.liquidity_weights)


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer split of ``total`` proportional to ``weights``, summing exactly."""
    w = np.asarray(weights, dtype=float)
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    exact = total * w / w.sum()
    base = np.floor(exact).astype(np.int64)
    left = int(total - base.sum())
    order = sorted(range(len(w)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return [int(x) for x in base]


def planner_schedule(q0: int, horizon: int, weights: Sequence[float],
                     step_profile: Optional[Sequence[float]] = None) -> np.ndarray:
    """Per-step, per-venue share targets summing exactly to ``q0``.

    Step totals follow ``step_profile`` (uniform by default, remainder to the
    earliest steps); each step is split across venues by cumulative rounding
    against ``weights`` so venue totals track their weights.
    """
    if horizon <= 0:
        raise ZeroHorizon("horizon must be positive")
    w = np.asarray(weights, dtype=float)
    if (w < 0).any() or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
        raise ValueError("liquidity weights must be non-negative and sum to 1")
    profile = np.full(horizon, 1.0 / horizon) if step_profile is None else np.asarray(step_profile, float)
    if len(profile) != horizon:
        raise ValueError("profile length must equal horizon")
    steps = largest_remainder(q0, profile)
    out = np.zeros((horizon, len(w)), dtype=np.int64)
    cum_prev = np.zeros(len(w), dtype=np.int64)
    running = 0
    for k, s in enumerate(steps):
        running += s
        cum = np.asarray(largest_remainder(running, w), dtype=np.int64)
        out[k] = cum - cum_prev
        cum_prev = cum
    # cumulative rounding can produce a -1/+1 pair when a step total is small
    if (out < 0).any():
        for k in range(horizon):
            for i in range(len(w)):
                if out[k, i] < 0:
                    j = int(np.argmax(out[k]))
                    out[k, j] += out[k, i]
                    out[k, i] = 0
    return out


def implementation_shortfall_bps(fills: Sequence[tuple[int, int]], p0: float, side: str = SELL) -> float:
    """IS of ``(qty, price_ticks)`` fills against ``p0`` in bps; negative is a cost."""
    qty = sum(q for q, _ in fills)
    if qty <= 0:
        raise NoFills("no executed shares")
    avg = sum(q * p for q, p in fills) / qty
    sign = 1.0 if side == SELL else -1.0
    return sign * 1e4 * (avg - p0) / p0


@dataclass
class RewardBreakdown:
    is_ticks: int = 0  # sum of qty * (price - p0) in ticks
    is_term: float = 0.0
    violation_term: float = 0.0
    terminal_term: float = 0.0
    time_term: float = 0.0
    self_trade_term: float = 0.0

    @property
    def total(self) -> float:
        return self.is_term + self.violation_term + self.terminal_term + self.time_term + self.self_trade_term


@dataclass
class ExecState:
    step: int
    remaining: int
    remaining_frac: float
    time_frac: float
    snapshots: tuple[Optional[BookSnapshot], ...]
    planner_targets: tuple[int, ...]
    vector: np.ndarray

    @property
    def best_bids(self) -> tuple[Optional[int], ...]:
        return tuple(s.best_bid if s is not None else None for s in self.snapshots)


def feature_length(n_venues: int) -> int:
    return 2 + 9 * n_venues


@dataclass
class StepInfo:
    raw: ExecAction
    executed: ExecAction
    raw_reports: list[ViolationReport]
    executed_reports: list[ViolationReport]
    v_hat: tuple[int, ...]
    halted: Optional[HaltDirective] = None
    self_trade_terminated: bool = False


@dataclass
class DailyResult:
    seed: int
    strategy: str
    is_bps: float
    completed_pct: float
    max_participation_pct: float
    violations: int
    shares_filled: int

    CSV_HEADER = "seed,strategy,is_bps,completed_pct,max_participation_pct,violations,shares_filled"

    def csv_row(self) -> str:
        return (f"{self.seed},{self.strategy},{self.is_bps:.6f},{self.completed_pct:.4f},"
                f"{self.max_participation_pct:.4f},{self.violations},{self.shares_filled}")

    @classmethod
    def from_csv_row(cls, row: str) -> "DailyResult":
        s, name, isb, comp, mp, vio, filled = row.strip().split(",")
        return cls(int(s), name, float(isb), float(comp), float(mp), int(vio), int(filled))


class ExecutionAgent:
    """Kernel actor holding the desk's view: snapshots, own orders, fills."""

    def __init__(self, n_venues: int):
        self.id = -1
        self.n_venues = n_venues
        self.snapshots: list[Optional[BookSnapshot]] = [None] * n_venues
        self.prev_snapshots: list[Optional[BookSnapshot]] = [None] * n_venues
        self.live: dict[int, Order] = {}
        self.fills: list[Fill] = []
        self.exchange_ids: list[int] = []
        self._n = 0

    def next_order_id(self) -> int:
        self._n += 1
        return (self.id << 32) | self._n

    def receive(self, kernel, event) -> None:
        msg = event.payload
        kind = msg[0]
        if kind == "snapshot":
            self.prev_snapshots[msg[1]] = self.snapshots[msg[1]]
            self.snapshots[msg[1]] = msg[2]
        elif kind == "fill":
            f = msg[1]
            self.fills.append(f)
            oid = f.maker_id if f.maker_trader == self.id else f.taker_id
            o = self.live.get(oid)
            if o is not None:
                o.qty -= f.qty
                if o.qty <= 0:
                    del self.live[oid]
        elif kind == "cancelled":
            self.live.pop(msg[1], None)
        elif kind == "end_step":
            for oid in msg[1]:
                o = self.live.get(oid)
                if o is not None:
                    kernel.send(self.id, self.exchange_ids[o.venue_id], ("cancel", oid))
            for ex in self.exchange_ids:
                kernel.schedule(kernel.now + kernel.latency.one_way_ns(self.id, ex), ex, ("publish", self.id),
                                sender=self.id)

    def submit(self, kernel, venue: int, side: str, price: int, qty: int) -> int:
        oid = self.next_order_id()
        o = Order(oid, self.id, side, price, qty, venue_id=venue)
        self.live[oid] = o
        # the exchange mutates its own copy
        kernel.send(self.id, self.exchange_ids[venue], ("order", Order(oid, self.id, side, price, qty)))
        return oid


class ExecutionEnv:
    def __init__(self, market_config: MarketConfig, episode: Optional[EpisodeConfig] = None,
                 constraints: Optional[ConstraintSet] = None, shield_mode: str = "project",
                 record_transcript: bool = True, keep_fills: bool = False):
        self.market_config = market_config
        self.episode = episode or EpisodeConfig(n_venues=market_config.n_venues,
                                                horizon=market_config.session_minutes * 60 // int(market_config.interval_s),
                                                interval_s=market_config.interval_s)
        ep = self.episode
        if ep.n_venues != market_config.n_venues:
            raise ValueError("episode and market disagree on venue count")
        if abs(ep.horizon * ep.interval_s - market_config.session_minutes * 60) > 1e-9:
            raise ValueError("horizon * interval must equal the session length")
        if ep.interval_s != market_config.interval_s:
            raise ValueError("episode and market disagree on the decision interval")
        self.constraints = constraints or ConstraintSet()
        self.shield = Shield(self.constraints, shield_mode)
        self.record_transcript = record_transcript
        self.keep_fills = keep_fills
        self.schedule = planner_schedule(ep.q0, ep.horizon, ep.weights)
        self.fault: Optional[Callable[[int, ExecAction], ExecAction]] = None
        # stress hook: from this step on, projection is disabled and only checked
        self.shield_off_at: Optional[int] = None
        self.market: Optional[Market] = None

    # -- lifecycle ---------------------------------------------------------
    def reset(self, seed: int, episode_id: Optional[int] = None) -> ExecState:
        ep = self.episode
        self.seed = int(seed)
        self.market = Market(self.market_config, seed, keep_fills=self.keep_fills)
        self.kernel = self.market.kernel
        self.agent = ExecutionAgent(ep.n_venues)
        self.kernel.register(self.agent)
        self.market.set_exec_latency(self.agent.id)
        self.agent.exchange_ids = [ex.id for ex in self.market.exchanges]
        for ex in self.market.exchanges:
            ex.subscribers.add(self.agent.id)
        self.lat = [self.kernel.latency.one_way_ns(self.agent.id, ex.id) for ex in self.market.exchanges]
        self.interval_ns = self.market_config.interval_ns
        if 2 * max(self.lat) >= self.interval_ns:
            raise EnvError("decision interval must exceed the round-trip latency")
        self.t0 = self.market.open_ns
        for ex, lat in zip(self.market.exchanges, self.lat):
            self.kernel.schedule(self.t0 - lat, ex.id, ("publish", self.agent.id), sender=self.agent.id)
        self.market.run_until(self.t0)

        snaps = self.agent.snapshots
        mids = [s.mid for s in snaps if s is not None and s.mid is not None]
        if not mids:
            raise EnvError("no two-sided market at session open")
        self.p0 = int(round(sum(mids) / len(mids)))
        self.k = 0
        self.remaining = ep.q0
        self.filled_by_venue = [0] * ep.n_venues
        self.fill_log: list[tuple[int, int, int, int]] = []  # (step, venue, qty, price)
        self.done = ep.q0 == 0
        self.halted: Optional[HaltDirective] = None
        self.self_trade_terminated = False
        self.executed_violations = 0
        self.raw_violations = 0
        self.max_participation = 0.0
        self.total_reward = 0.0
        self.last_fill_ratio = [0.0] * ep.n_venues
        self.firm_orders: dict[int, Order] = {}
        self.monitor = ComplianceMonitor(self.constraints)
        eid = self.seed if episode_id is None else episode_id
        self.transcript = Transcript(EpisodeHeader(eid, self.constraints.alpha_ppm, self.constraints.beta_ppm,
                                                   self.seed, ep.n_venues, self.constraints.self_trade_guard))
        return self.observe()

    # -- observation -------------------------------------------------------
    def observe(self) -> ExecState:
        ep = self.episode
        p0 = self.p0
        feats = [self.remaining / ep.q0 if ep.q0 else 0.0, self.k / ep.horizon]
        k = min(self.k, ep.horizon - 1)
        even = ep.q0 / ep.horizon if ep.q0 else 1.0
        for i in range(ep.n_venues):
            s = self.agent.snapshots[i]
            prev = self.agent.prev_snapshots[i]
            bid = s.best_bid if s is not None else None
            ask = s.best_ask if s is not None else None
            # prices and returns in units of 10 bps of the arrival price
            bid_rel = 1000.0 * (bid - p0) / p0 if bid is not None else 0.0
            ask_rel = 1000.0 * (ask - p0) / p0 if ask is not None else 0.0
            spread = (ask - bid) / 10.0 if bid is not None and ask is not None else 0.0
            dbid = sum(s.bid_depth) / ep.depth_scale if s is not None else 0.0
            dask = sum(s.ask_depth) / ep.depth_scale if s is not None else 0.0
            vol = s.last_interval_volume / ep.volume_scale if s is not None else 0.0
            ret = 0.0
            if s is not None and prev is not None and s.mid is not None and prev.mid is not None:
                ret = 1000.0 * (s.mid - prev.mid) / p0
            target = self.schedule[k, i] / even
            feats += [bid_rel, ask_rel, spread, dbid, dask, vol, ret, target, self.last_fill_ratio[i]]
        vec = np.asarray(feats, dtype=np.float64)
        return ExecState(self.k, self.remaining, feats[0], feats[1], tuple(self.agent.snapshots),
                         tuple(int(x) for x in self.schedule[k]), vec)

    def v_hat(self) -> tuple[int, ...]:
        ep = self.episode
        if self.k == 0 and ep.vhat_prior is not None:
            return (int(ep.vhat_prior),) * ep.n_venues
        return tuple(s.last_interval_volume if s is not None else 0 for s in self.agent.snapshots)

    def live_own_orders(self) -> list[LiveOrder]:
        out = [LiveOrder(o.venue_id, o.side, o.price, o.qty) for o in self.agent.live.values()]
        return out

    # -- firm-level orders (other desks of the same firm) ---------------------
    def place_firm_order(self, venue: int, side: str, price: int, qty: int) -> int:
        oid = self.agent.submit(self.kernel, venue, side, price, qty)
        self.firm_orders[oid] = self.agent.live[oid]
        return oid

    # -- stepping ------------------------------------------------------------
    def _cap_inventory(self, raw: ExecAction) -> ExecAction:
        left = self.remaining
        vols = []
        for v in raw.volumes:
            v = max(0, int(v))
            take = min(v, left)
            vols.append(take)
            left -= take
        prices = tuple(max(1, int(p)) for p in raw.prices)
        return ExecAction(tuple(vols), prices)

    def step(self, raw_action: ExecAction):
        if self.done:
            raise EnvError("episode finished; call reset()")
        ep = self.episode
        if raw_action.n_venues != ep.n_venues:
            raise ValueError("action has the wrong number of venues")
        k = self.k
        if self.shield_off_at is not None and k >= self.shield_off_at and self.shield.mode == "project":
            self.shield.mode = "check"
        t_k = self.t0 + k * self.interval_ns
        t_next = t_k + self.interval_ns
        raw = self._cap_inventory(raw_action)
        snaps = self.agent.snapshots
        bids = tuple(s.best_bid if s is not None else None for s in snaps)
        v_hat = self.v_hat()
        live = self.live_own_orders()
        q_start = self.remaining

        executed, raw_reports = self.shield.apply(raw, v_hat, bids, live, k)
        if self.shield.mode == "off":
            raw_reports = []
        if self.fault is not None:
            executed = self.fault(k, executed)
        if executed.total > self.remaining:
            raise OversellAttempt(f"step {k}: {executed.total} > remaining {self.remaining}")
        executed_reports = check(executed, v_hat, bids, self.constraints, live, k)

        reward = RewardBreakdown()
        reward.violation_term = -ep.violation_coef * violation_magnitude(raw_reports)
        reward.time_term = -ep.time_penalty * (q_start / ep.q0 if ep.q0 else 0.0)
        halted = None
        st_terminated = False
        submit = True
        if self.shield.mode == "project" and executed_reports:
            halted = self.monitor.kill_switch(f"post-projection violation at step {k}", k)
            submit = False
        if self.shield.mode == "check" and any(r.kind == SELF_TRADE for r in raw_reports):
            st_terminated = True
            submit = False
            reward.self_trade_term = -ep.self_trade_penalty

        step_orders: dict[int, int] = {}
        if submit:
            for i in range(ep.n_venues):
                v, p = executed.volumes[i], executed.prices[i]
                if v > 0:
                    oid = self.agent.submit(self.kernel, i, SELL, p, v)
                    step_orders[oid] = i
            end_at = t_next - 2 * max(self.lat)
            self.kernel.wakeup(self.agent.id, end_at, ("end_step", tuple(step_orders)))
            n_before = len(self.agent.fills)
            self.market.run_until(t_next)
            new_fills = [f for f in self.agent.fills[n_before:]
                         if (f.taker_id if f.taker_trader == self.agent.id else f.maker_id) in step_orders]
        else:
            # halt: pull everything we have resting and stop trading
            for oid, o in list(self.agent.live.items()):
                self.kernel.send(self.agent.id, self.agent.exchange_ids[o.venue_id], ("cancel", oid))
            new_fills = []

        per_venue_qty = [0] * ep.n_venues
        per_venue_notional = [0] * ep.n_venues
        is_ticks = 0
        for f in new_fills:
            oid = f.taker_id if f.taker_trader == self.agent.id else f.maker_id
            i = step_orders[oid]
            per_venue_qty[i] += f.qty
            per_venue_notional[i] += f.qty * f.price_ticks
            is_ticks += f.qty * (f.price_ticks - self.p0)
            self.fill_log.append((k, i, f.qty, f.price_ticks))
        filled = sum(per_venue_qty)
        self.remaining -= filled
        reward.is_ticks = is_ticks
        reward.is_term = is_ticks * ep.tick_value
        for i in range(ep.n_venues):
            self.filled_by_venue[i] += per_venue_qty[i]
            self.last_fill_ratio[i] = per_venue_qty[i] / executed.volumes[i] if executed.volumes[i] else 0.0
            if submit and per_venue_qty[i]:
                vol = self.market.exchanges[i].volume_between(t_k, t_next)
                if vol:
                    self.max_participation = max(self.max_participation, per_venue_qty[i] / vol)

        self.raw_violations += len(raw_reports)
        self.executed_violations += len(executed_reports)
        if self.record_transcript:
            own_buy = max((o.price for o in live if o.side == BUY), default=None)
            for i in range(ep.n_venues):
                reps = tuple(ReportEntry(KIND_CODES[r.kind], r.raw, r.limit, r.magnitude)
                             for r in raw_reports if r.venue == i)
                v_exec = executed.volumes[i] if submit else 0
                cross = int(v_exec > 0 and own_buy is not None and executed.prices[i] <= own_buy)
                self.transcript.record(TranscriptRecord(
                    k, i, raw.volumes[i], raw.prices[i], v_exec, executed.prices[i], v_hat[i],
                    bids[i] if bids[i] is not None else NO_BID, per_venue_qty[i], per_venue_notional[i], cross, reps))

        self.k += 1
        done = self.k >= ep.horizon or self.remaining == 0 or halted is not None or st_terminated
        if halted is not None:
            self.halted = halted
        self.self_trade_terminated = st_terminated
        if done:
            reward.terminal_term = -ep.terminal_penalty * self.remaining
            self.done = True
        self.total_reward += reward.total
        info = StepInfo(raw, executed, raw_reports, executed_reports, v_hat, halted, st_terminated)
        self.last_info = info
        state = self.observe()
        return state, reward, new_fills, done

    def finish_day(self) -> None:
        """Run the background market to the session close after an early finish."""
        if self.market is not None and self.kernel.now < self.market.end_ns:
            self.market.run_day()

    # -- summaries -------------------------------------------------------------
    @property
    def shares_filled(self) -> int:
        return self.episode.q0 - self.remaining

    def is_bps(self) -> float:
        return implementation_shortfall_bps([(q, p) for _, _, q, p in self.fill_log], self.p0)

    def result(self, strategy: str) -> DailyResult:
        ep = self.episode
        try:
            isb = self.is_bps()
        except NoFills:
            isb = 0.0
        return DailyResult(self.seed, strategy, isb, 100.0 * self.shares_filled / ep.q0 if ep.q0 else 100.0,
                           100.0 * self.max_participation, self.executed_violations, self.shares_filled)
