"""Assemble a full simulated trading day: kernel, venues, fundamental, population."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agents import (
    FundamentalOU,
    FundamentalPath,
    IntentDigest,
    MarketMaker,
    MarketMakerParams,
    MomentumParams,
    MomentumTrader,
    NoiseIntent,
    NoiseParams,
    NoiseTrader,
    PopulationConfig,
    ValueParams,
    ValueTrader,
)
from .book import BUY
from .exchange import Exchange
from .kernel import NS_PER_MS, NS_PER_S, Kernel, LatencyModel, mix_seed

FUNDAMENTAL_STREAM = (1 << 30) + 1


@dataclass
class MarketConfig:
    n_venues: int = 2
    session_minutes: int = 390
    interval_s: float = 60.0
    warmup_s: float = 60.0
    latency_ms: float = 50.0
    exec_latency_ms: float = 50.0
    ou: FundamentalOU = field(default_factory=FundamentalOU)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    mm: MarketMakerParams = field(default_factory=MarketMakerParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    momentum: MomentumParams = field(default_factory=MomentumParams)
    value: ValueParams = field(default_factory=ValueParams)

    @property
    def session_ns(self) -> int:
        return self.session_minutes * 60 * NS_PER_S

    @property
    def start_ns(self) -> int:
        """Execution session open; background trading starts at 0 (warm-up)."""
        return int(round(self.warmup_s * NS_PER_S))

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.session_ns

    @property
    def interval_ns(self) -> int:
        return int(round(self.interval_s * NS_PER_S))


class Market:
    def __init__(self, config: MarketConfig, seed: int, keep_fills: bool = True):
        self.config = config
        self.seed = int(seed)
        cfg = config
        self.kernel = Kernel(seed, LatencyModel(int(round(cfg.latency_ms * NS_PER_MS))))
        self.start_ns = 0
        self.open_ns = cfg.start_ns
        self.end_ns = cfg.end_ns
        self.digest = IntentDigest()
        self.noise_shares = 0  # noise shares submitted during the session
        fund_rng = np.random.Generator(np.random.PCG64(mix_seed(seed, FUNDAMENTAL_STREAM)))
        self.fundamental = FundamentalPath(cfg.ou, self.end_ns + cfg.interval_ns, fund_rng)
        for v in self.fundamental.values[:: max(1, len(self.fundamental.values) // 64)]:
            self.digest.update(int(round(v * 1e6)))

        self.exchanges: list[Exchange] = []
        for v in range(cfg.n_venues):
            ex = Exchange(v, cfg.interval_ns, origin_ns=self.open_ns, keep_fills=keep_fills)
            self.kernel.register(ex)
            self.exchanges.append(ex)

        pop = cfg.population
        self.agents = []
        for i in range(pop.n_market_makers):
            self._add(MarketMaker(self, i % cfg.n_venues, cfg.mm))
        noise_rate = 0.0
        if pop.n_noise:
            orders_per_s = cfg.noise.daily_volume / cfg.noise.mean_size / (cfg.session_minutes * 60.0)
            noise_rate = orders_per_s / pop.n_noise
        for i in range(pop.n_noise):
            self._add(NoiseTrader(self, i % cfg.n_venues, cfg.noise, noise_rate))
        for i in range(pop.n_momentum):
            self._add(MomentumTrader(self, i % cfg.n_venues, cfg.momentum))
        for i in range(pop.n_value):
            self._add(ValueTrader(self, i % cfg.n_venues, cfg.value))
        for a in self.agents:
            a.start(self.kernel)

    def _add(self, agent) -> None:
        self.kernel.register(agent)
        self.agents.append(agent)

    def set_exec_latency(self, agent_id: int) -> None:
        ns = int(round(self.config.exec_latency_ms * NS_PER_MS))
        for ex in self.exchanges:
            self.kernel.latency.set_pair(agent_id, ex.id, ns)

    def session_frac(self, t_ns: int) -> float:
        if t_ns <= self.open_ns:
            return 0.0
        return min(1.0, (t_ns - self.open_ns) / self.config.session_ns)

    # -- paired-seed bookkeeping -------------------------------------------------
    def record_intent(self, agent_id: int, t: int, intent: NoiseIntent) -> None:
        if self.open_ns <= t < self.end_ns:
            self.noise_shares += intent.size
        self.digest.update(agent_id, t, 1 if intent.side == BUY else 0, int(intent.is_market), intent.size,
                           intent.offset)

    def record_draw(self, agent_id: int, t: int) -> None:
        self.digest.update(agent_id, t)

    def background_digest(self) -> str:
        return self.digest.hexdigest()

    def run_until(self, t_ns: int) -> int:
        return self.kernel.run_until(t_ns)

    def run_day(self) -> int:
        return self.kernel.run_until(self.end_ns)

    def total_volume(self) -> int:
        return sum(ex.total_volume for ex in self.exchanges)

    def mid(self, venue: int, t_ns: Optional[int] = None) -> Optional[float]:
        t = self.kernel.now if t_ns is None else t_ns
        return self.exchanges[venue].mid_at(t)
