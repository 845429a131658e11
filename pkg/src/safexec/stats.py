"""Evaluation statistics: Student-t machinery, paired tests, CIs, CVaR, report tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

from .env import DailyResult


class StatsError(ValueError):
    pass


class EmptySamples(StatsError):
    pass


class TooFewSamples(StatsError):
    pass


class LengthMismatch(StatsError):
    pass


class ZeroVariance(StatsError):
    pass


class UnpairedSeeds(StatsError):
    pass


_EPS = 1e-16
_TINY = 1e-300


def _betacf(a: float, b: float, x: float, max_iter: int = 10_000) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = _TINY if abs(d) < _TINY else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise StatsError(f"incomplete beta failed to converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # use the symmetry relation where the fraction converges fastest
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student-t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(df):
        return math.erfc(abs(t) / math.sqrt(2.0))
    if t == 0:
        return 1.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


def t_ppf(q: float, df: float) -> float:
    """Student-t quantile by bracketing bisection on the CDF."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_ppf(1.0 - q, df)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < q:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# -- descriptive ---------------------------------------------------------------------

def mean(xs: Sequence[float]) -> float:
    if not xs:
        raise EmptySamples("no samples")
    return math.fsum(xs) / len(xs)


def stdev(xs: Sequence[float]) -> float:
    n = len(xs)
    if n < 2:
        raise TooFewSamples("need at least two samples")
    m = mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (n - 1))


def cvar(samples: Sequence[float], level: float = 0.95) -> float:
    """Mean of the worst ``ceil((1 - level) * n)`` samples (most negative first)."""
    xs = sorted(samples)
    if not xs:
        raise EmptySamples("cvar of empty sample")
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    # round away float noise before the ceiling: (1 - 0.95) * 20 is 1.0000000000000009
    k = max(1, math.ceil(round((1.0 - level) * len(xs), 9)))
    return math.fsum(xs[:k]) / k


def ci95(samples: Sequence[float]) -> tuple[float, float]:
    """(mean, half-width) with a t critical value on n - 1 degrees of freedom."""
    n = len(samples)
    if n < 2:
        raise TooFewSamples("ci95 needs at least two samples")
    return mean(samples), t_ppf(0.975, n - 1) * stdev(samples) / math.sqrt(n)


@dataclass(frozen=True)
class PairedT:
    t: float
    p: float
    mean_diff: float
    ci: tuple[float, float]
    df: int


def paired_t(a: Sequence[float], b: Sequence[float]) -> PairedT:
    """Two-sided paired t-test of ``a - b``."""
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} samples")
    n = len(a)
    if n < 2:
        raise TooFewSamples("paired test needs n >= 2")
    diffs = [x - y for x, y in zip(a, b)]
    d = mean(diffs)
    s = stdev(diffs)
    if s == 0.0:
        if all(x == 0 for x in diffs):
            return PairedT(0.0, 1.0, 0.0, (0.0, 0.0), n - 1)
        raise ZeroVariance("all paired differences are identical")
    se = s / math.sqrt(n)
    t = d / se
    half = t_ppf(0.975, n - 1) * se
    return PairedT(t, t_sf_two_sided(t, n - 1), d, (d - half, d + half), n - 1)


# -- report ------------------------------------------------------------------------------

@dataclass
class AggregateRow:
    strategy: str
    n: int
    mean_is: float
    ci_half: float
    std_is: float
    completed_pct: float
    max_participation_pct: float
    violations_per_day: float
    cvar95: float


@dataclass
class AggregateReport:
    rows: list[AggregateRow]
    pairs: dict[tuple[str, str], PairedT] = field(default_factory=dict)

    def row(self, strategy: str) -> AggregateRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    CSV_HEADER = ("strategy,n,mean_is_bps,ci95_bps,std_is_bps,completed_pct,max_participation_pct,"
                  "violations_per_day,cvar95_bps")

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.strategy},{r.n},{r.mean_is:.6f},{r.ci_half:.6f},{r.std_is:.6f},"
                         f"{r.completed_pct:.4f},{r.max_participation_pct:.4f},{r.violations_per_day:.4f},"
                         f"{r.cvar95:.6f}")
        return "\n".join(lines) + "\n"

    def pairs_csv(self) -> str:
        lines = ["strategy_a,strategy_b,mean_diff_bps,t,p"]
        for (a, b), pt in self.pairs.items():
            lines.append(f"{a},{b},{pt.mean_diff:.6f},{pt.t:.6f},{pt.p:.6g}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        head = ["Strategy", "IS (bps)", "Std", "% Completed", "Max Vol %", "Violations/day", "CVaR95"]
        body = [[r.strategy, f"{r.mean_is:.2f} ± {r.ci_half:.2f}", f"{r.std_is:.2f}", f"{r.completed_pct:.1f}",
                 f"{r.max_participation_pct:.1f}", f"{r.violations_per_day:.1f}", f"{r.cvar95:.2f}"]
                for r in self.rows]
        widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
        fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
        if self.pairs:
            out.append("")
            out.append("Paired t-tests (two-sided)")
            for (a, b), pt in self.pairs.items():
                out.append(f"  {a} - {b}: diff {pt.mean_diff:+.3f} bps, t = {pt.t:.3f}, p = {pt.p:.3g}")
        return "\n".join(out) + "\n"


def _safe_paired(a: Sequence[float], b: Sequence[float]) -> PairedT:
    try:
        return paired_t(a, b)
    except ZeroVariance:
        d = a[0] - b[0]
        return PairedT(math.copysign(math.inf, d), 0.0, d, (d, d), len(a) - 1)


def aggregate_report(results: Iterable[DailyResult], order: Sequence[str] | None = None) -> AggregateReport:
    """Aggregate per-day results into summary rows and pairwise paired t-tests."""
    by: dict[str, dict[int, DailyResult]] = {}
    for r in results:
        seeds = by.setdefault(r.strategy, {})
        if r.seed in seeds:
            raise UnpairedSeeds(f"duplicate seed {r.seed} for {r.strategy}")
        seeds[r.seed] = r
    if not by:
        raise EmptySamples("no results")
    names = list(order) if order is not None else list(by)
    names = [n for n in names if n in by]
    seed_sets = {n: set(by[n]) for n in names}
    ref = seed_sets[names[0]]
    for n in names:
        if seed_sets[n] != ref:
            raise UnpairedSeeds(f"{n} was not evaluated on the same seeds as {names[0]}")
    seeds = sorted(ref)
    if len(seeds) < 2:
        raise TooFewSamples("need at least two days per strategy")
    rows = []
    for n in names:
        days = [by[n][s] for s in seeds]
        isv = [d.is_bps for d in days]
        m, half = ci95(isv)
        rows.append(AggregateRow(n, len(days), m, half, stdev(isv), mean([d.completed_pct for d in days]),
                                 mean([d.max_participation_pct for d in days]),
                                 mean([float(d.violations) for d in days]), cvar(isv, 0.95)))
    pairs = {}
    for a, b in combinations(names, 2):
        pairs[(a, b)] = _safe_paired([by[a][s].is_bps for s in seeds], [by[b][s].is_bps for s in seeds])
    return AggregateReport(rows, pairs)
