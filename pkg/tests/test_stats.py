from __future__ import annotations

import math

import pytest

from safexec.env import DailyResult
from safexec.stats import (
    EmptySamples,
    LengthMismatch,
    TooFewSamples,
    UnpairedSeeds,
    ZeroVariance,
    betainc,
    ci95,
    cvar,
    mean,
    paired_t,
    stdev,
    t_cdf,
    t_ppf,
    t_sf_two_sided,
    aggregate_report,
)

mpmath = pytest.importorskip("mpmath")
mpmath.mp.dps = 40


# -- fixtures with hand-computed answers -----------------------------------------------

def test_paired_t_fixture():
    # diffs 1..5: mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5)/sqrt(5)) = 3 sqrt 2
    pt = paired_t([2, 4, 6, 8, 10], [1, 2, 3, 4, 5])
    assert pt.t == pytest.approx(3 * math.sqrt(2), abs=1e-12)
    assert pt.t == pytest.approx(4.2426, abs=1e-4)
    assert pt.p == pytest.approx(0.0132, abs=1e-3)
    assert pt.df == 4 and pt.mean_diff == 3.0


def test_paired_t_p_against_mpmath():
    pt = paired_t([2, 4, 6, 8, 10], [1, 2, 3, 4, 5])
    t, df = mpmath.mpf(3) * mpmath.sqrt(2), 4
    # two-sided tail = I_{df/(df+t^2)}(df/2, 1/2)
    exact = mpmath.betainc(df / 2, 0.5, 0, df / (df + t * t), regularized=True)
    assert pt.p == pytest.approx(float(exact), abs=1e-12)


def test_cvar_fixtures():
    xs = list(range(-20, 0))  # 20 samples; worst 5% = 1 sample
    assert cvar(xs, 0.95) == pytest.approx(-20.0, abs=1e-9)
    ys = [float(-i) for i in range(40)]  # worst 2 of 40
    assert cvar(ys, 0.95) == pytest.approx(-38.5, abs=1e-9)
    zs = [5.0, -1.0, 3.0, -7.0, 2.0, 0.5, -2.5, 4.0, 1.0, -3.0]
    assert cvar(zs, 0.8) == pytest.approx((-7.0 - 3.0) / 2, abs=1e-9)
    assert cvar([1.0], 0.95) == 1.0


def test_ci95_fixture():
    m, half = ci95([1.0, 2.0, 3.0])
    # t_{0.975, 2} = 4.302652729911275, s = 1
    assert m == 2.0
    assert half == pytest.approx(4.302652729911275 / math.sqrt(3), abs=1e-9)


def test_mean_and_stdev():
    assert mean([1, 2, 3, 4]) == 2.5
    assert stdev([2, 4, 4, 4, 5, 5, 7, 9]) == pytest.approx(math.sqrt(32 / 7), abs=1e-12)


# -- special functions -----------------------------------------------------------------

BETA_POINTS = [
    (0.5, 0.5, 0.1), (0.5, 0.5, 0.9), (1.0, 1.0, 0.3), (2.0, 3.0, 0.4), (5.0, 0.5, 0.7),
    (0.5, 5.0, 0.05), (10.0, 10.0, 0.5), (2.0, 0.5, 0.999), (49.5, 0.5, 0.98), (1.5, 0.5, 0.2),
    (0.1, 0.1, 0.5), (100.0, 0.5, 0.99), (3.0, 7.0, 0.01), (7.0, 3.0, 0.99), (0.5, 0.5, 1e-6),
    (25.0, 0.5, 0.6), (0.7, 2.3, 0.35), (4.5, 0.5, 0.9), (12.0, 0.5, 0.3), (200.0, 300.0, 0.4),
]


@pytest.mark.parametrize("a,b,x", BETA_POINTS)
def test_betainc_spot_checks(a, b, x):
    exact = float(mpmath.betainc(a, b, 0, x, regularized=True))
    assert betainc(a, b, x) == pytest.approx(exact, abs=1e-10)


def test_betainc_edges():
    assert betainc(2.0, 3.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        betainc(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        betainc(1.0, 1.0, 1.5)


@pytest.mark.parametrize("df", [1, 2, 4, 9, 19, 49, 99])
def test_t_distribution_against_scipy(df):
    scipy_stats = pytest.importorskip("scipy.stats")
    for t in (-6.0, -2.1, -0.3, 0.0, 0.7, 1.96, 4.5):
        assert t_cdf(t, df) == pytest.approx(scipy_stats.t.cdf(t, df), abs=1e-10)
        assert t_sf_two_sided(t, df) == pytest.approx(2 * scipy_stats.t.sf(abs(t), df), abs=1e-10)
    for q in (0.025, 0.5, 0.9, 0.975, 0.995):
        assert t_ppf(q, df) == pytest.approx(scipy_stats.t.ppf(q, df), abs=1e-8)


def test_t_ppf_cauchy_closed_form():
    assert t_ppf(0.75, 1) == pytest.approx(1.0, abs=1e-12)


def test_paired_t_against_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    import random
    rng = random.Random(3)
    a = [rng.gauss(0, 2) for _ in range(30)]
    b = [x + rng.gauss(0.4, 1) for x in a]
    ours = paired_t(a, b)
    ref = scipy_stats.ttest_rel(a, b)
    assert ours.t == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.p == pytest.approx(ref.pvalue, abs=1e-12)


# -- error handling ------------------------------------------------------------------------

def test_errors():
    with pytest.raises(EmptySamples):
        mean([])
    with pytest.raises(EmptySamples):
        cvar([])
    with pytest.raises(TooFewSamples):
        stdev([1.0])
    with pytest.raises(TooFewSamples):
        ci95([1.0])
    with pytest.raises(LengthMismatch):
        paired_t([1, 2], [1])
    with pytest.raises(ZeroVariance):
        paired_t([2, 3, 4], [1, 2, 3])


def test_identical_samples_give_null_result():
    pt = paired_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (pt.t, pt.p, pt.mean_diff) == (0.0, 1.0, 0.0)


# -- report --------------------------------------------------------------------------------

def _day(seed, strategy, is_bps, part=10.0, viol=0):
    return DailyResult(seed, strategy, is_bps, 100.0, part, viol, 100_000)


def test_table_report():
    days = [_day(s, "TWAP", -2.0 - s, 9.0 + s) for s in range(4)] + \
           [_day(s, "GREEDY", -5.0 - 2 * s, 30.0, 3) for s in range(4)]
    rep = aggregate_report(days, ["TWAP", "GREEDY"])
    tw = rep.row("TWAP")
    assert tw.n == 4 and tw.mean_is == -3.5 and tw.max_participation_pct == 10.5
    assert rep.row("GREEDY").violations_per_day == 3.0
    assert rep.row("GREEDY").cvar95 == -11.0
    pt = rep.pairs[("TWAP", "GREEDY")]
    assert pt.mean_diff == pytest.approx(3.0 + 1.5)
    assert "TWAP" in rep.to_text() and rep.to_csv().count("\n") == 3
    assert rep.pairs_csv().startswith("strategy_a,strategy_b")


def test_table_report_requires_pairing():
    days = [_day(0, "A", 1.0), _day(1, "A", 2.0), _day(0, "B", 1.0), _day(2, "B", 2.0)]
    with pytest.raises(UnpairedSeeds):
        aggregate_report(days)
    with pytest.raises(UnpairedSeeds):
        aggregate_report([_day(0, "A", 1.0), _day(0, "A", 2.0)])
