import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from coopuwb.geometry import SPEED_OF_LIGHT as C, Point2
from coopuwb.transmission import (RoundAborted, TimingRecord, chain_schedule, interval_label,
                                  recover_propagation_times, simulate_round)

D = (1e-3, 1e-3, 1e-3)


def equilateral(side=3.0):
    return [Point2(0, 0), Point2(side, 0), Point2(side / 2, side * math.sqrt(3) / 2)]


def true_tp(pts, i, j):
    return math.hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) / C


def test_equilateral_timeline():
    rec = simulate_round(equilateral(), D)
    tp = 3.0 / C
    # hand timeline: tag 2 RX at tp, TX at tp+1ms; tag 1 hears it at 2tp+1ms
    assert rec.t12 == pytest.approx(1.0000200138457e-3, abs=1e-16)
    assert rec.t12 == pytest.approx(2 * tp + 1e-3, abs=1e-18)
    assert rec.t23 == pytest.approx(2 * tp + 1e-3, abs=1e-18)
    assert rec.t13 == pytest.approx(3 * tp + 2e-3, abs=1e-18)
    assert rec.t3w == pytest.approx(tp + 1e-3, abs=1e-18)


def test_colocated_tags():
    rec = simulate_round([Point2(1, 1)] * 3, (1e-3, 2e-3, 3e-3))
    assert rec.t12 == 2e-3
    assert rec.t23 == 3e-3
    assert rec.t3w == 2e-3
    tp = recover_propagation_times(rec)
    assert tp.tp12 == 0 and tp.tp23 == 0 and tp.tp13 == 0


def test_failed_middle_tag_fallback():
    pts = [Point2(0, 0), Point2(4, 1), Point2(2, 5)]
    rec = simulate_round(pts, D, failed={1})
    assert rec.t12 is None and rec.t23 is None and rec.t3w is None
    assert rec.t13 == pytest.approx(2 * true_tp(pts, 0, 2) + D[2], abs=1e-18)
    tp = recover_propagation_times(rec)
    assert not tp.available(0, 1) and not tp.available(1, 2)
    assert abs(tp.tp13 - true_tp(pts, 0, 2)) < 1e-12


def test_fallback_ignores_failed_tag_parameters():
    pts = [Point2(0, 0), Point2(4, 1), Point2(2, 5)]
    a = simulate_round(pts, (1e-3, 1e-3, 1e-3), clock_ppm=(0, 0, 0), failed={1})
    b = simulate_round([pts[0], Point2(9, 9), pts[2]], (1e-3, 7e-3, 1e-3),
                       clock_ppm=(0, 40e-6, 0), failed={1})
    assert recover_propagation_times(a).tp13 == recover_propagation_times(b).tp13


def test_too_few_live_tags():
    with pytest.raises(RoundAborted):
        simulate_round([Point2(0, 0), Point2(1, 1)], D[:2], failed={0})


def test_zero_flight_recovery():
    rec = TimingRecord(2, (0.0, 1e-3), frozenset({0, 1}), tx_rx={(0, 1): 1e-3})
    assert recover_propagation_times(rec).tp12 == 0


def test_partial_record():
    rec = simulate_round(equilateral(), D)
    del rec.waits[(2, 0)]
    tp = recover_propagation_times(rec)
    assert not tp.available(0, 2)
    assert tp.available(1, 2) and tp.available(0, 1)


def test_negative_time_flagged_not_clamped():
    rec = TimingRecord(2, (0.0, 1e-3), frozenset({0, 1}), tx_rx={(0, 1): 1e-3 - 1e-9})
    tp = recover_propagation_times(rec, tolerance=1e-12)
    assert (0, 1) in tp.invalid and not tp.available(0, 1)
    # within tolerance it is kept as is
    tp = recover_propagation_times(rec, tolerance=1e-8)
    assert tp.tp12 == pytest.approx(-0.5e-9)


coords = st.floats(0, 10, allow_nan=False)


@settings(max_examples=200)
@given(st.lists(st.tuples(coords, coords), min_size=3, max_size=3),
       st.lists(st.floats(1e-4, 1e-2), min_size=3, max_size=3))
def test_round_trip(xy, delays):
    pts = [Point2(*p) for p in xy]
    tp = recover_propagation_times(simulate_round(pts, delays))
    for i, j in ((0, 1), (1, 2), (0, 2)):
        assert abs(tp.get(i, j) - true_tp(pts, i, j)) < 1e-12


@settings(max_examples=50)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_round_trip_long_chains(n, seed):
    rng = np.random.default_rng(seed)
    pts = [Point2(*p) for p in rng.uniform(0, 10, (n, 2))]
    delays = rng.uniform(1e-4, 2e-3, n)
    failed = {int(k) for k in rng.choice(n, size=rng.integers(0, n - 1), replace=False)}
    tp = recover_propagation_times(simulate_round(pts, delays, failed=failed))
    live = [k for k in range(n) if k not in failed]
    for a in range(len(live)):
        for b in live[a + 1:]:
            assert abs(tp.get(live[a], b) - true_tp(pts, live[a], b)) < 1e-12


def _labels(plan):
    n_waits = {t: sum(1 for m in ms if m[0] == "wait") for t, ms in plan.measurements.items()}
    return {t: {interval_label(k, a, b, n_waits[t]) for k, a, b in ms} for t, ms in plan.measurements.items()}


def test_plan_three_tags():
    plan = chain_schedule(3, D)
    assert plan.senders == [0, 1, 2]
    assert [p.trigger for p in plan.packets] == [None, 0, 1]
    assert _labels(plan) == {0: {"t12", "t13"}, 1: {"t23"}, 2: {"t3w"}}


def test_plan_two_tags():
    plan = chain_schedule(2, D[:2])
    assert _labels(plan) == {0: {"t12"}, 1: set()}


def test_plan_single_packet_per_tag():
    for n in range(2, 8):
        plan = chain_schedule(n, [1e-3] * n)
        assert sorted(plan.senders) == list(range(n))


def test_plan_four_tags_full_rank():
    """Symbolic inversion of the four-tag timeline: the measured intervals determine all 6 tp."""
    n = 4
    tp = {(i, j): sp.Symbol(f"tp{i}{j}") for i in range(n) for j in range(i + 1, n)}
    T = lambda i, j: tp[(min(i, j), max(i, j))]
    d = sp.symbols("d0:4")
    plan = chain_schedule(n, [1e-3] * n)
    tx = {0: sp.Integer(0)}
    for p in plan.packets[1:]:
        tx[p.sender] = tx[p.trigger] + T(p.trigger, p.sender) + d[p.sender]
    rx = lambda r, s: tx[s] + T(s, r)
    eqs = []
    for tag, ms in plan.measurements.items():
        for kind, a, b in ms:
            if kind == "tx_rx":
                eqs.append(rx(a, b) - tx[a])
            else:
                eqs.append(rx(a, plan.trigger_of(a)) - rx(a, b))
    unknowns = list(tp.values())
    M = sp.Matrix([[sp.diff(e, u) for u in unknowns] for e in eqs])
    assert M.rank() == 6


def test_clock_error_slope():
    pts = equilateral()
    delays = (1e-3, 1e-3, 1e-3)
    es = np.linspace(-20e-6, 20e-6, 9)
    errs = []
    for e in es:
        tp = recover_propagation_times(simulate_round(pts, delays, clock_ppm=(0, e, 0)))
        errs.append(tp.tp12 - true_tp(pts, 0, 1))
    slope = np.polyfit(es, errs, 1)[0]
    # tag 2 waits dt2/(1+e) ~ dt2(1-e): bias -e*dt2/2
    assert slope == pytest.approx(-delays[1] / 2, rel=0.01)


def test_jitter_needs_rng():
    with pytest.raises(ValueError):
        simulate_round(equilateral(), D, timing_jitter_std=1e-10)


def test_jitter_is_zero_mean(rng):
    pts = equilateral()
    vals = [recover_propagation_times(simulate_round(pts, D, rng=rng, timing_jitter_std=1e-10)).tp12
            for _ in range(4000)]
    assert np.mean(vals) == pytest.approx(true_tp(pts, 0, 1), abs=5e-12)


def test_timing_record_json_round_trip():
    rec = simulate_round([Point2(0, 0), Point2(4, 1), Point2(2, 5), Point2(7, 7)], [1e-3] * 4, failed={2})
    back = TimingRecord.from_json(rec.to_json())
    assert back == rec
