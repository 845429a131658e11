"""Execution strategies behind one interface: ``act(env, state) -> ExecAction``."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .agents import IntradayProfile
from .env import ExecState, ExecutionEnv, planner_schedule
from .shield import ExecAction

TWAP = "TWAP"
VWAP = "VWAP"
GREEDY = "GREEDY"
RANDOM = "RANDOM"
RL_SAFE = "RL_SAFE"
RL_UNCONSTRAINED = "RL_UNCONSTRAINED"

GREEDY_DEPTH_TICKS = 10
M_MAX = 2.0
D_MAX = 20.0


class ProfileMismatch(ValueError):
    pass


def scaled_action(state: ExecState, multipliers: Sequence[float], offsets: Sequence[float],
                  p0: int) -> ExecAction:
    """Map per-venue (volume multiplier, price offset) onto a legal integer action.

    ``v_i = round(m_i * target_i)`` (half-to-even), ``p_i = best_bid_i + round(d_i)``;
    volumes are trimmed in venue order so the total never exceeds ``Q_t``.
    """
    left = state.remaining
    vols, prices = [], []
    for i, (m, d) in enumerate(zip(multipliers, offsets)):
        v = int(round(float(m) * state.planner_targets[i]))
        v = max(0, min(v, left))
        left -= v
        bid = state.snapshots[i].best_bid if state.snapshots[i] is not None else None
        ref = bid if bid is not None else p0
        vols.append(v)
        prices.append(max(1, ref + int(round(float(d)))))
    return ExecAction(tuple(vols), tuple(prices))


class Strategy:
    name = "BASE"
    shield_mode = "project"

    def begin(self, env: ExecutionEnv) -> None:
        """Called once after ``env.reset``."""

    def act(self, env: ExecutionEnv, state: ExecState) -> ExecAction:
        raise NotImplementedError


def _bids(state: ExecState) -> list[int]:
    return [s.best_bid if s is not None and s.best_bid is not None else 0 for s in state.snapshots]


class ScheduleStrategy(Strategy):
    """Follow a fixed per-step, per-venue schedule at the best bid.

    Orders target the cumulative schedule minus what each venue has filled, so
    shares trimmed by the shield or left unfilled are caught up later. The last
    step has no later step, so its residual goes to any venue with a bid and is
    priced at the collar floor instead.
    """

    def __init__(self, name: str, step_profile: Optional[Sequence[float]] = None):
        self.name = name
        self.step_profile = step_profile

    def begin(self, env: ExecutionEnv) -> None:
        ep = env.episode
        sched = planner_schedule(ep.q0, ep.horizon, ep.weights, self.step_profile)
        self.cum = np.cumsum(sched, axis=0)

    def act(self, env: ExecutionEnv, state: ExecState) -> ExecAction:
        k = state.step
        bids = _bids(state)
        left = state.remaining
        vols = []
        for i, bid in enumerate(bids):
            want = int(self.cum[k, i]) - env.filled_by_venue[i]
            v = max(0, min(want, left)) if bid > 0 else 0
            left -= v
            vols.append(v)
        prices = [max(1, b) for b in bids]
        if k == len(self.cum) - 1:
            live = [i for i, b in enumerate(bids) if b > 0]
            for j, i in enumerate(live):
                extra = left // (len(live) - j)
                vols[i] += extra
                left -= extra
            prices = [env.constraints.price_floor(b) if b > 0 else 1 for b in bids]
        return ExecAction(tuple(vols), tuple(prices))


def twap() -> ScheduleStrategy:
    return ScheduleStrategy(TWAP)


def vwap_profile(horizon: int, profile: Optional[IntradayProfile] = None) -> np.ndarray:
    return (profile or IntradayProfile()).weights(horizon)


def vwap(profile: Sequence[float], horizon: int) -> ScheduleStrategy:
    prof = np.asarray(profile, dtype=float)
    if len(prof) != horizon:
        raise ProfileMismatch(f"profile has {len(prof)} steps, horizon is {horizon}")
    if (prof < 0).any() or prof.sum() <= 0:
        raise ProfileMismatch("profile weights must be non-negative with positive sum")
    return ScheduleStrategy(VWAP, prof / prof.sum())


class Greedy(Strategy):
    """Dump everything left every step, deep through the book; runs unshielded."""

    name = GREEDY
    shield_mode = "off"

    def act(self, env: ExecutionEnv, state: ExecState) -> ExecAction:
        bids = _bids(state)
        depth = [sum(s.bid_depth) if s is not None and b > 0 else 0 for s, b in zip(state.snapshots, bids)]
        q = state.remaining
        total = sum(depth)
        if q == 0 or total == 0:
            live = [1 if b > 0 else 0 for b in bids]
            depth = live if sum(live) else [1] * len(bids)
            total = sum(depth)
        vols = [q * d // total for d in depth]
        # hand the rounding remainder to the deepest venue
        vols[int(np.argmax(depth))] += q - sum(vols)
        # an emptied bid side falls back to the arrival price, as the other baselines do
        prices = [max(1, (b if b > 0 else env.p0) - GREEDY_DEPTH_TICKS) for b in bids]
        return ExecAction(tuple(vols), tuple(prices))


class RandomStrategy(Strategy):
    """Uniform multipliers in [0, 2] and offsets in [-20, 20] ticks, shielded."""

    name = RANDOM

    def __init__(self, seed: int = 0):
        self.seed = seed

    def begin(self, env: ExecutionEnv) -> None:
        self.rng = random.Random((self.seed << 20) ^ env.seed)

    def act(self, env: ExecutionEnv, state: ExecState) -> ExecAction:
        n = len(state.snapshots)
        m = [self.rng.uniform(0.0, M_MAX) for _ in range(n)]
        d = [self.rng.uniform(-D_MAX, D_MAX) for _ in range(n)]
        return scaled_action(state, m, d, env.p0)


class PolicyStrategy(Strategy):
    """Wrap a trained policy; ``RL_SAFE`` projects, ``RL_UNCONSTRAINED`` only checks."""

    def __init__(self, policy, constrained: bool = True, deterministic: bool = True, seed: int = 0):
        self.policy = policy
        self.name = RL_SAFE if constrained else RL_UNCONSTRAINED
        self.shield_mode = "project" if constrained else "check"
        self.deterministic = deterministic
        self.seed = seed

    def begin(self, env: ExecutionEnv) -> None:
        self.rng = np.random.default_rng([self.seed, env.seed])

    def act(self, env: ExecutionEnv, state: ExecState) -> ExecAction:
        action, _, _, _ = self.policy.act(state, env.p0, rng=self.rng, deterministic=self.deterministic)
        return action


@dataclass
class EpisodeOutcome:
    result: object
    env: ExecutionEnv


def run_episode(env: ExecutionEnv, strategy: Strategy, seed: int, episode_id: Optional[int] = None):
    """Run one full day of ``strategy`` and return its :class:`DailyResult`."""
    env.shield.mode = strategy.shield_mode
    state = env.reset(seed, episode_id)
    strategy.begin(env)
    done = env.done
    while not done:
        state, _, _, done = env.step(strategy.act(env, state))
    return env.result(strategy.name)
