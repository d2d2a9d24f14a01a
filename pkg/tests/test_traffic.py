import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latwsr.config import BurstyTrafficParams, PoissonTrafficParams
from latwsr.traffic import (
    LatencyRecord,
    Packet,
    UserQueue,
    drain,
    fifo_latencies,
    init_traffic_state,
    outage_probability,
    overdue_unfinished,
    pareto,
    step_arrivals,
)


def _drain_all(arrivals, sizes, rate, horizon):
    q = UserQueue(0)
    by_tti = {}
    for a, s in zip(arrivals, sizes):
        by_tti.setdefault(a, []).append(s)
    out = []
    for t in range(horizon):
        for s in by_tti.get(t, []):
            q.push(Packet(s, t))
        out.extend(drain(q, rate, t))
    return out, q


def test_packet_served_in_arrival_tti():
    q = UserQueue(3)
    q.push(Packet(100.0, 5))
    (rec,) = drain(q, 1000.0, 5)
    assert rec == LatencyRecord(3, 5, 0, 1, 1)
    assert len(q) == 0 and q.served_bits == 100.0


def test_drain_partial_and_head_of_line():
    q = UserQueue()
    q.push(Packet(250.0, 0))
    q.push(Packet(50.0, 0))
    assert drain(q, 100.0, 0) == []
    assert drain(q, 100.0, 1) == []
    recs = drain(q, 100.0, 2)
    assert [r.total_ttis for r in recs] == [3, 3]
    assert recs[1].waiting_ttis == 2 and recs[1].service_ttis == 1
    assert q.backlog_bits == 0.0


def test_drain_rejects_negative():
    with pytest.raises(ValueError):
        drain(UserQueue(), -1.0, 0)


def test_push_order_enforced():
    q = UserQueue()
    q.push(Packet(1.0, 4))
    with pytest.raises(ValueError):
        q.push(Packet(1.0, 3))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 500)), min_size=1, max_size=40),
       st.integers(10, 300))
def test_bit_conservation_and_fifo(gaps, rate):
    arrivals = np.cumsum([g for g, _ in gaps]).tolist()
    sizes = [float(s) for _, s in gaps]
    horizon = arrivals[-1] + int(sum(sizes) // rate) + 3
    recs, q = _drain_all(arrivals, sizes, float(rate), horizon)
    assert len(recs) == len(sizes)
    assert q.served_bits == pytest.approx(q.arrived_bits)
    # FIFO: departures are nondecreasing in arrival order
    deps = [r.arrival_tti + r.total_ttis for r in recs]
    assert deps == sorted(deps)
    assert all(r.total_ttis == r.waiting_ttis + r.service_ttis for r in recs)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(1, 400)), min_size=1, max_size=40),
       st.integers(1, 200))
def test_fluid_recursion_matches_drain(gaps, rate):
    # integer sizes and rates keep both routes exact
    arrivals = np.cumsum([g for g, _ in gaps])
    sizes = np.array([float(s) for _, s in gaps])
    recs, _ = _drain_all(arrivals.tolist(), sizes.tolist(), float(rate),
                         int(arrivals[-1] + sizes.sum() // rate + 3))
    wait, service = fifo_latencies(arrivals, sizes, float(rate))
    assert [r.waiting_ttis for r in recs] == wait.tolist()
    assert [r.service_ttis for r in recs] == service.tolist()


def test_outage_probability():
    recs = [LatencyRecord(0, 0, w, 1, w + 1) for w in (0, 5, 19, 20, 40)]
    assert outage_probability(recs, 20) == pytest.approx(2 / 5)
    assert outage_probability([], 20) == 0.0
    assert outage_probability(recs, 20, overdue=3) == pytest.approx(5 / 8)
    assert outage_probability([], 20, overdue=2) == 1.0


def test_overdue_unfinished_matches_eventual_latency():
    """A queued packet counted as overdue ends with latency > d_max however fast it is then served."""
    q = UserQueue(0)
    for a in (0, 5, 10, 15):
        q.push(Packet(100.0, a))
    end, d_max = 25, 15
    assert overdue_unfinished(q, end, d_max) == 3  # arrival 10 finishes with latency 16 at best
    recs = drain(q, 400.0, end)
    assert [r.total_ttis > d_max for r in recs] == [True, True, True, False]


def test_poisson_arrivals_statistics():
    params = PoissonTrafficParams(lam=0.3, mean_size_bits=500.0)
    rng = np.random.default_rng(1)
    state = init_traffic_state(params, 4, rng)
    counts, sizes = np.zeros(4), []
    T = 20000
    for t in range(T):
        for u, pkts in enumerate(step_arrivals(params, state, rng, t)):
            counts[u] += len(pkts)
            sizes.extend(p.size_bits for p in pkts)
            assert all(p.arrival_tti == t for p in pkts)
    # 5 sigma bands
    assert np.all(np.abs(counts / T - 0.3) < 5 * math.sqrt(0.3 / T))
    assert abs(np.mean(sizes) - 500.0) < 5 * 500.0 / math.sqrt(len(sizes))


def test_pareto_mean():
    rng = np.random.default_rng(2)
    x = pareto(rng, 3.0, 2.0, size=200_000)
    assert x.min() >= 2.0
    assert np.mean(x) == pytest.approx(3.0 * 2.0 / 2.0, rel=0.01)


def test_bursty_duty_cycle():
    params = BurstyTrafficParams(pareto_shape=3.0, pareto_scale=10.0, off_rate=0.05, burst_packet_bits=100.0)
    rng = np.random.default_rng(3)
    state = init_traffic_state(params, 8, rng)
    on = 0
    T = 40000
    for t in range(T):
        pkts = step_arrivals(params, state, rng, t)
        on += sum(len(p) for p in pkts)
        assert all(p.size_bits == 100.0 for ps in pkts for p in ps)
    # ON lengths are ceil(Pareto) (mean about 15.5), OFF lengths about 1/off_rate
    mean_on = np.mean(state.on_periods)
    mean_off = 1 / 0.05 + 0.5
    duty = mean_on / (mean_on + mean_off)
    assert on / (8 * T) == pytest.approx(duty, rel=0.05)


def test_mm1_mean_wait():
    """Constant-rate FIFO with Poisson arrivals and exponential sizes is M/M/1."""
    rng = np.random.default_rng(4)
    n = 200_000
    lam, mean_size, rate = 0.002, 1000.0, 2.5  # service 400 TTIs, load 0.8
    arrivals = np.floor(np.cumsum(rng.exponential(1 / lam, n))).astype(np.int64)
    wait, _ = fifo_latencies(arrivals, rng.exponential(mean_size, n), rate)
    mu = rate / mean_size
    analytic = lam / (mu * (mu - lam))
    assert np.mean(wait) == pytest.approx(analytic, rel=0.1)
