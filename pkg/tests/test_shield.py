from __future__ import annotations

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safexec.shield import (
    PRICE,
    SELF_TRADE,
    VOLUME,
    ComplianceMonitor,
    ConstraintSet,
    ExecAction,
    LiveOrder,
    Shield,
    check,
    price_floor,
    project,
    violation_magnitude,
    volume_cap,
)

N_EXAMPLES = 500  # shrinking search; the bulk sweep below covers >= 10^4 actions
N_VENUES = 2


@st.composite
def scenarios(draw):
    vols = draw(st.lists(st.integers(0, 5_000), min_size=N_VENUES, max_size=N_VENUES))
    bids = draw(st.lists(st.one_of(st.none(), st.integers(1, 20_000)), min_size=N_VENUES, max_size=N_VENUES))
    prices = [draw(st.integers(1, 20_100)) if b is None else draw(st.integers(max(1, b - 200), b + 200))
              for b in bids]
    v_hat = draw(st.lists(st.integers(0, 40_000), min_size=N_VENUES, max_size=N_VENUES))
    alpha = draw(st.sampled_from([0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0]) | st.floats(0.001, 1.0))
    beta = draw(st.sampled_from([0.0, 0.001, 0.005, 0.01]) | st.floats(0.0, 0.05))
    guard = draw(st.booleans())
    live = []
    if draw(st.booleans()):
        ref = next((b for b in bids if b is not None), 10_000)
        live.append(LiveOrder(draw(st.integers(0, N_VENUES - 1)), "buy", draw(st.integers(ref - 100, ref + 50)), 10))
    return ExecAction(tuple(vols), tuple(prices)), v_hat, bids, ConstraintSet(alpha, beta, guard), live


@settings(max_examples=N_EXAMPLES, deadline=None)
@given(scenarios())
def test_projection_is_idempotent(sc):
    raw, v_hat, bids, cs, live = sc
    safe, _ = project(raw, v_hat, bids, cs, live)
    again, reports = project(safe, v_hat, bids, cs, live)
    assert again == safe
    assert reports == []


@settings(max_examples=N_EXAMPLES, deadline=None)
@given(scenarios())
def test_projection_is_sound(sc):
    raw, v_hat, bids, cs, live = sc
    safe, _ = project(raw, v_hat, bids, cs, live)
    assert check(safe, v_hat, bids, cs, live) == []


@settings(max_examples=N_EXAMPLES, deadline=None)
@given(scenarios())
def test_projection_is_minimal(sc):
    """Each component moves only as far as the binding constraint: onto the boundary."""
    raw, v_hat, bids, cs, live = sc
    safe, reports = project(raw, v_hat, bids, cs, live)
    own_buy = max((o.price for o in live if o.side == "buy"), default=None) if cs.self_trade_guard else None
    for i in range(N_VENUES):
        v, p, bid = raw.volumes[i], raw.prices[i], bids[i]
        if bid is None:
            assert safe.volumes[i] == 0
            continue
        if v == 0:
            assert (safe.volumes[i], safe.prices[i]) == (0, p)
            continue
        cap = math.floor(Fraction(cs.alpha_ppm, 10**6) * v_hat[i])
        floor = math.ceil(bid * (1 - Fraction(cs.beta_ppm, 10**6)))
        exp_p = max(p, floor)
        exp_v = min(v, cap)
        if own_buy is not None and exp_v > 0 and exp_p <= own_buy:
            exp_v = 0
        assert (safe.volumes[i], safe.prices[i]) == (exp_v, exp_p)
        # an already compliant component is left untouched
        if v <= cap and p >= floor and not (own_buy is not None and p <= own_buy):
            assert (safe.volumes[i], safe.prices[i]) == (v, p)
            assert not [r for r in reports if r.venue == i]


@settings(max_examples=N_EXAMPLES, deadline=None)
@given(scenarios(), st.floats(0.001, 1.0))
def test_alpha_monotonicity(sc, other):
    raw, v_hat, bids, cs, live = sc
    lo, hi = sorted([cs.alpha, other])
    tight, _ = project(raw, v_hat, bids, ConstraintSet(lo, cs.beta, cs.self_trade_guard), live)
    loose, _ = project(raw, v_hat, bids, ConstraintSet(hi, cs.beta, cs.self_trade_guard), live)
    assert all(a <= b for a, b in zip(tight.volumes, loose.volumes))
    assert tight.prices == loose.prices
    # volume reports only; a tighter cap can zero an order and so avoid a self-cross report
    vol = lambda a: [r for r in check(raw, v_hat, bids, ConstraintSet(a, cs.beta, cs.self_trade_guard), live)
                     if r.kind == VOLUME]
    assert len(vol(hi)) <= len(vol(lo))


@settings(max_examples=N_EXAMPLES, deadline=None)
@given(scenarios(), st.floats(0.0, 0.05))
def test_beta_monotonicity(sc, other):
    raw, v_hat, bids, cs, live = sc
    lo, hi = sorted([cs.beta, other])
    tight, _ = project(raw, v_hat, bids, ConstraintSet(cs.alpha, lo, cs.self_trade_guard), live)
    loose, _ = project(raw, v_hat, bids, ConstraintSet(cs.alpha, hi, cs.self_trade_guard), live)
    # a wider collar lowers the floor, so projected prices can only fall
    assert all(a >= b for a, b in zip(tight.prices, loose.prices))
    price_reports = lambda beta: [r for r in check(raw, v_hat, bids, ConstraintSet(cs.alpha, beta, False)) if r.kind == PRICE]
    assert len(price_reports(hi)) <= len(price_reports(lo))


@settings(max_examples=2_000, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**7))
def test_volume_cap_exact(a_ppm, v_hat):
    assert volume_cap(a_ppm, v_hat) == (Fraction(a_ppm, 10**6) * v_hat).__floor__()


@settings(max_examples=2_000, deadline=None)
@given(st.integers(0, 999_999), st.integers(1, 10**7))
def test_price_floor_exact(b_ppm, bid):
    assert price_floor(b_ppm, bid) == math.ceil(bid * (1 - Fraction(b_ppm, 10**6)))


def _random_scenario(rng: random.Random):
    bids = [None if rng.random() < 0.05 else rng.randint(1, 20_000) for _ in range(N_VENUES)]
    prices = [rng.randint(1, 20_100) if b is None else rng.randint(max(1, b - 200), b + 200) for b in bids]
    vols = [0 if rng.random() < 0.1 else rng.randint(1, 5_000) for _ in range(N_VENUES)]
    v_hat = [rng.randint(0, 40_000) for _ in range(N_VENUES)]
    cs = ConstraintSet(rng.uniform(0.001, 1.0), rng.uniform(0.0, 0.05), rng.random() < 0.5)
    live = []
    if rng.random() < 0.5:
        ref = next((b for b in bids if b is not None), 10_000)
        live.append(LiveOrder(rng.randrange(N_VENUES), "buy", rng.randint(ref - 100, ref + 50), 10))
    return ExecAction(tuple(vols), tuple(prices)), v_hat, bids, cs, live


def test_property_sweep_over_random_actions():
    """Idempotence, soundness, minimality and monotonicity on 2 x 10^4 seeded actions."""
    rng = random.Random(20240601)
    for _ in range(20_000):
        sc = _random_scenario(rng)
        raw, v_hat, bids, cs, live = sc
        test_projection_is_idempotent.hypothesis.inner_test(sc)
        test_projection_is_sound.hypothesis.inner_test(sc)
        test_projection_is_minimal.hypothesis.inner_test(sc)
        test_alpha_monotonicity.hypothesis.inner_test(sc, rng.uniform(0.001, 1.0))
        test_beta_monotonicity.hypothesis.inner_test(sc, rng.uniform(0.0, 0.05))


# -- examples ----------------------------------------------------------------------------

CS = ConstraintSet(0.10, 0.005)


def test_volume_clipped_to_cap():
    safe, reps = project(ExecAction((300, 50), (10_000, 10_000)), [2_000, 2_000], [10_000, 10_000], CS)
    assert safe.volumes == (200, 50)
    assert [(r.kind, r.venue, r.limit, r.magnitude) for r in reps] == [(VOLUME, 0, 200, 100)]


def test_price_raised_to_collar():
    safe, reps = project(ExecAction((10, 0), (9_900, 9_000)), [1_000, 1_000], [10_000, 10_000], CS)
    assert safe.prices == (9_950, 9_000)
    assert reps[0].kind == PRICE and reps[0].magnitude == 50 * 10


def test_self_cross_blocked():
    live = [LiveOrder(1, "buy", 10_005, 100)]
    safe, reps = project(ExecAction((10, 10), (10_000, 10_010)), [1_000, 1_000], [10_000, 10_000], CS, live)
    assert safe.volumes == (0, 10)
    assert [r.kind for r in reps] == [SELF_TRADE]
    assert violation_magnitude(reps) == 10


def test_self_trade_guard_can_be_disabled():
    live = [LiveOrder(1, "buy", 10_005, 100)]
    cs = ConstraintSet(0.10, 0.005, self_trade_guard=False)
    assert check(ExecAction((10, 10), (10_000, 10_010)), [1_000, 1_000], [10_000, 10_000], cs, live) == []


def test_no_bid_means_no_order():
    safe, reps = project(ExecAction((10, 10), (10_000, 10_000)), [1_000, 1_000], [None, 10_000], CS)
    assert safe.volumes == (0, 10) and reps == []


def test_zero_vhat_blocks_trading():
    safe, _ = project(ExecAction((1, 0), (10_000, 10_000)), [0, 0], [10_000, 10_000], CS)
    assert safe.volumes == (0, 0)


def test_shield_modes():
    raw = ExecAction((500, 0), (10_000, 10_000))
    args = ([1_000, 1_000], [10_000, 10_000])
    a, r = Shield(CS, "project").apply(raw, *args)
    assert a.volumes == (100, 0) and len(r) == 1
    a, r = Shield(CS, "check").apply(raw, *args)
    assert a == raw and len(r) == 1
    a, r = Shield(CS, "off").apply(raw, *args)
    assert a == raw and r == []
    with pytest.raises(ValueError):
        Shield(CS, "bogus")


def test_monitor_kill_switch_latches_first_reason():
    mon = ComplianceMonitor(CS)
    assert mon.inspect(ExecAction((500, 0), (10_000, 10_000)), [1_000, 1_000], [10_000, 10_000])
    first = mon.kill_switch("volume", 3)
    assert mon.kill_switch("other", 7) is first
    assert first.step == 3 and first.cancel_all


@pytest.mark.parametrize("alpha,beta", [(0.0, 0.005), (1.5, 0.005), (0.1, -0.1), (0.1, 1.0)])
def test_constraint_validation(alpha, beta):
    with pytest.raises(ValueError):
        ConstraintSet(alpha, beta)


def test_mismatched_lengths_rejected():
    with pytest.raises(ValueError):
        project(ExecAction((1, 1), (1, 1)), [1], [1, 1], CS)
    with pytest.raises(ValueError):
        ExecAction((1,), (1, 2))
