"""Runtime constraint shield for sell-side execution actions.

Three per-venue rules are enforced on every decision step:

* participation: ``v <= floor(alpha * V_hat)`` where ``V_hat`` is the venue's
  traded volume over the previous interval;
* price collar: ``p >= ceil(best_bid * (1 - beta))`` for any non-zero order;
* self-cross: a sell must not be marketable against a live buy of our own
  on any venue; such orders are blocked (volume set to 0).

``alpha`` and ``beta`` are held as integer parts-per-million so the shield
and the audit circuit compute bit-identical bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

PPM = 1_000_000

VOLUME = "volume"
PRICE = "price"
SELF_TRADE = "self_trade"


@dataclass(frozen=True)
class ConstraintSet:
    alpha: float = 0.10
    beta: float = 0.005
    self_trade_guard: bool = True

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")

    @property
    def alpha_ppm(self) -> int:
        return round(self.alpha * PPM)

    @property
    def beta_ppm(self) -> int:
        return round(self.beta * PPM)

    def volume_cap(self, v_hat: int) -> int:
        return volume_cap(self.alpha_ppm, v_hat)

    def price_floor(self, best_bid: int) -> int:
        return price_floor(self.beta_ppm, best_bid)


def volume_cap(alpha_ppm: int, v_hat: int) -> int:
    return (alpha_ppm * max(0, v_hat)) // PPM


def price_floor(beta_ppm: int, best_bid: int) -> int:
    # ceil(bid * (1 - beta)) in exact integer arithmetic
    return -((-best_bid * (PPM - beta_ppm)) // PPM)


@dataclass(frozen=True)
class ExecAction:
    """Per-venue sell volumes (shares) and limit prices (ticks)."""

    volumes: tuple[int, ...]
    prices: tuple[int, ...]

    def __post_init__(self):
        if len(self.volumes) != len(self.prices):
            raise ValueError("volumes and prices must have one entry per venue")
        object.__setattr__(self, "volumes", tuple(int(v) for v in self.volumes))
        object.__setattr__(self, "prices", tuple(int(p) for p in self.prices))

    @property
    def n_venues(self) -> int:
        return len(self.volumes)

    @property
    def total(self) -> int:
        return sum(self.volumes)

    @classmethod
    def zeros(cls, n_venues: int, price: int = 1) -> "ExecAction":
        return cls((0,) * n_venues, (price,) * n_venues)


@dataclass(frozen=True)
class LiveOrder:
    venue: int
    side: str
    price: int
    qty: int = 0


@dataclass(frozen=True)
class ViolationReport:
    step: int
    venue: int
    kind: str
    raw: int
    limit: int
    magnitude: int


@dataclass(frozen=True)
class HaltDirective:
    step: int
    reason: str
    cancel_all: bool = True


def _own_best_buy(live_orders: Sequence[LiveOrder]) -> Optional[int]:
    best = None
    for o in live_orders:
        if o.side == "buy" and (best is None or o.price > best):
            best = o.price
    return best


def project(raw: ExecAction, v_hat: Sequence[int], best_bids: Sequence[Optional[int]],
            constraints: ConstraintSet, live_orders: Sequence[LiveOrder] = (),
            step: int = 0) -> tuple[ExecAction, list[ViolationReport]]:
    """Map ``raw`` onto the nearest compliant action; one report per adjusted component."""
    n = raw.n_venues
    if len(v_hat) != n or len(best_bids) != n:
        raise ValueError("v_hat and best_bids need one entry per venue")
    a_ppm, b_ppm = constraints.alpha_ppm, constraints.beta_ppm
    own_buy = _own_best_buy(live_orders) if constraints.self_trade_guard else None
    vols: list[int] = []
    prices: list[int] = []
    reports: list[ViolationReport] = []
    for i in range(n):
        v, p = raw.volumes[i], raw.prices[i]
        bid = best_bids[i]
        if bid is None:
            vols.append(0)
            prices.append(p)
            continue
        if v > 0:
            cap = volume_cap(a_ppm, v_hat[i])
            if v > cap:
                reports.append(ViolationReport(step, i, VOLUME, v, cap, v - cap))
                v_safe = cap
            else:
                v_safe = v
            floor = price_floor(b_ppm, bid)
            if p < floor:
                reports.append(ViolationReport(step, i, PRICE, p, floor, (floor - p) * v))
                p = floor
            if own_buy is not None and v_safe > 0 and p <= own_buy:
                reports.append(ViolationReport(step, i, SELF_TRADE, p, own_buy + 1, v_safe))
                v_safe = 0
            v = v_safe
        vols.append(v)
        prices.append(p)
    return ExecAction(tuple(vols), tuple(prices)), reports


def check(raw: ExecAction, v_hat: Sequence[int], best_bids: Sequence[Optional[int]],
          constraints: ConstraintSet, live_orders: Sequence[LiveOrder] = (),
          step: int = 0) -> list[ViolationReport]:
    """Reports ``raw`` would trigger, without modifying it."""
    return project(raw, v_hat, best_bids, constraints, live_orders, step)[1]


def violation_magnitude(reports: Sequence[ViolationReport]) -> int:
    """Shares over the cap + ticks-below-floor x shares + blocked self-cross shares."""
    return sum(r.magnitude for r in reports)


@dataclass
class Shield:
    """Shield with a mode switch.

    ``project``: executed action is the projection. ``check``: raw action is
    executed, reports still produced. ``off``: raw action executed, no reports.
    """

    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    mode: str = "project"

    def __post_init__(self):
        if self.mode not in ("project", "check", "off"):
            raise ValueError(f"unknown shield mode {self.mode!r}")

    def apply(self, raw: ExecAction, v_hat, best_bids, live_orders=(), step: int = 0
              ) -> tuple[ExecAction, list[ViolationReport]]:
        if self.mode == "off":
            return raw, []
        safe, reports = project(raw, v_hat, best_bids, self.constraints, live_orders, step)
        if self.mode == "check":
            return raw, reports
        return safe, reports


class ComplianceMonitor:
    """Post-projection watchdog: any violation reaching it halts the episode."""

    def __init__(self, constraints: ConstraintSet):
        self.constraints = constraints
        self.halted: Optional[HaltDirective] = None

    def inspect(self, executed: ExecAction, v_hat, best_bids, live_orders=(), step: int = 0
                ) -> list[ViolationReport]:
        return check(executed, v_hat, best_bids, self.constraints, live_orders, step)

    def kill_switch(self, reason: str, step: int) -> HaltDirective:
        if self.halted is None:
            self.halted = HaltDirective(step, reason)
        return self.halted
