"""Deterministic discrete-event kernel.

Time is integer nanoseconds since session open. Events are delivered in
``(deliver_at, seq)`` order, so ties resolve FIFO by scheduling order. Agents
are plain objects with a ``receive(kernel, event)`` method; they are given an
integer id at registration and a private ``random.Random`` stream derived
from the master seed.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000
DEFAULT_LATENCY_NS = 50 * NS_PER_MS


class KernelError(Exception):
    pass


class PastTime(KernelError):
    pass


class UnknownAgent(KernelError):
    pass


@dataclass(slots=True)
class Event:
    deliver_at: int
    seq: int
    recipient: int
    payload: Any
    sender: int = -1

    def __lt__(self, other: "Event") -> bool:
        # seq is unique, so this is a total order
        return (self.deliver_at, self.seq) < (other.deliver_at, other.seq)


@dataclass
class LatencyModel:
    """Constant one-way latency per (sender, recipient) pair.

    ``jitter`` is an optional hook ``(sender, recipient, rng) -> extra_ns``;
    it is unset in every shipped scenario so runs stay reproducible.
    """

    default_ns: int = DEFAULT_LATENCY_NS
    overrides: dict[tuple[int, int], int] = field(default_factory=dict)
    jitter: Optional[Callable[[int, int, random.Random], int]] = None

    def one_way_ns(self, sender: int, recipient: int) -> int:
        ns = self.overrides.get((sender, recipient), self.default_ns)
        if ns < 0:
            raise ValueError(f"negative latency for pair {(sender, recipient)}")
        return ns

    def set_pair(self, sender: int, recipient: int, ns: int, symmetric: bool = True) -> None:
        self.overrides[(sender, recipient)] = ns
        if symmetric:
            self.overrides[(recipient, sender)] = ns


def mix_seed(master_seed: int, stream_id: int) -> int:
    """Derive a 64-bit seed for one stream of a master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stream_id),))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def rng_stream(master_seed: int, stream_id: int) -> random.Random:
    return random.Random(mix_seed(master_seed, stream_id))


class Kernel:
    def __init__(self, master_seed: int = 0, latency: Optional[LatencyModel] = None):
        self.master_seed = int(master_seed)
        self.latency = latency or LatencyModel()
        self.now = 0
        self.agents: list[Any] = []
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self._jitter_rng = rng_stream(self.master_seed, 1 << 30)
        self.processed = 0

    # -- agents --------------------------------------------------------
    def register(self, agent: Any) -> int:
        agent_id = len(self.agents)
        self.agents.append(agent)
        agent.id = agent_id
        return agent_id

    def rng_for(self, agent_id: int) -> random.Random:
        return rng_stream(self.master_seed, agent_id)

    # -- scheduling ----------------------------------------------------
    def schedule(self, deliver_at: int, recipient: int, payload: Any, sender: int = -1) -> int:
        """Enqueue a message; returns a handle usable with :meth:`cancel`."""
        if deliver_at < self.now:
            raise PastTime(f"deliver_at={deliver_at} < now={self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (deliver_at, seq, Event(deliver_at, seq, recipient, payload, sender)))
        return seq

    def schedule_event(self, event: Event) -> int:
        if event.deliver_at < self.now:
            raise PastTime(f"deliver_at={event.deliver_at} < now={self.now}")
        heapq.heappush(self._queue, (event.deliver_at, event.seq, event))
        self._seq = max(self._seq, event.seq + 1)
        return event.seq

    def wakeup(self, agent_id: int, at: int, payload: Any = "wakeup") -> int:
        return self.schedule(at, agent_id, payload, sender=agent_id)

    def send(self, sender: int, recipient: int, payload: Any) -> int:
        n = len(self.agents)
        if not (0 <= sender < n) or not (0 <= recipient < n):
            raise UnknownAgent(f"{sender} -> {recipient}")
        delay = self.latency.one_way_ns(sender, recipient)
        if self.latency.jitter is not None:
            delay += max(0, int(self.latency.jitter(sender, recipient, self._jitter_rng)))
        return self.schedule(self.now + delay, recipient, payload, sender=sender)

    def cancel(self, handle: int) -> None:
        self._cancelled.add(handle)

    def pending(self) -> int:
        return len(self._queue)

    # -- loop ----------------------------------------------------------
    def run_until(self, end: int) -> int:
        """Process every event with ``deliver_at <= end``; the clock ends at ``end``."""
        queue = self._queue
        agents = self.agents
        cancelled = self._cancelled
        pop = heapq.heappop
        count = 0
        while queue and queue[0][0] <= end:
            t, seq, event = pop(queue)
            if cancelled and seq in cancelled:
                cancelled.discard(seq)
                continue
            self.now = t
            agents[event.recipient].receive(self, event)
            count += 1
        if end > self.now:
            self.now = end
        self.processed += count
        return count
