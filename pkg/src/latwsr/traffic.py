"""Packet arrivals, per-user FIFO buffers and latency bookkeeping.

Buffers are tracked in bits.  A packet's latency is ``D = W + delta`` TTIs,
where ``W`` runs from its arrival TTI to the TTI in which its first bit is
served, and ``delta`` counts TTIs from that first-service TTI through the
departure TTI inclusive.  A packet fully served in its arrival TTI therefore
has ``W = 0, delta = 1, D = 1``.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import BurstyTrafficParams, PoissonTrafficParams


@dataclass
class Packet:
    size_bits: float
    arrival_tti: int
    departure_tti: int | None = None
    remaining_bits: float = -1.0
    first_service_tti: int | None = None

    def __post_init__(self):
        if self.size_bits <= 0:
            raise ValueError("packet size must be positive")
        if self.remaining_bits < 0:
            self.remaining_bits = float(self.size_bits)


@dataclass(frozen=True)
class LatencyRecord:
    user: int
    arrival_tti: int
    waiting_ttis: int
    service_ttis: int
    total_ttis: int

    def __post_init__(self):
        assert self.total_ttis == self.waiting_ttis + self.service_ttis
        assert self.waiting_ttis >= 0 and self.service_ttis >= 1


@dataclass
class UserQueue:
    user: int = 0
    packets: deque = field(default_factory=deque)
    arrived_bits: float = 0.0
    served_bits: float = 0.0

    @property
    def backlog_bits(self) -> float:
        return math.fsum(p.remaining_bits for p in self.packets)

    def __len__(self):
        return len(self.packets)

    def push(self, packet: Packet) -> None:
        if self.packets and packet.arrival_tti < self.packets[-1].arrival_tti:
            raise ValueError("packets must be enqueued in arrival order")
        self.packets.append(packet)
        self.arrived_bits += packet.size_bits


def drain(queue: UserQueue, served_bits: float, tti: int) -> list[LatencyRecord]:
    """Serve up to ``served_bits`` from the head of ``queue`` during ``tti``."""
    if served_bits < 0:
        raise ValueError("served_bits must be non-negative")
    budget = float(served_bits)
    out = []
    while budget > 0 and queue.packets:
        head = queue.packets[0]
        if head.first_service_tti is None:
            head.first_service_tti = tti
        take = min(budget, head.remaining_bits)
        head.remaining_bits -= take
        budget -= take
        queue.served_bits += take
        if head.remaining_bits == 0.0:
            head.departure_tti = tti
            queue.packets.popleft()
            wait = head.first_service_tti - head.arrival_tti
            service = tti - head.first_service_tti + 1
            out.append(LatencyRecord(queue.user, head.arrival_tti, wait, service, wait + service))
    return out


def overdue_unfinished(queue: UserQueue, end_tti: int, d_max: int) -> int:
    """Packets still queued at ``end_tti`` (the first TTI after the run) that
    have already missed their deadline.

    Such a packet departs at ``end_tti`` at the earliest, so its latency is at
    least ``end_tti - arrival_tti + 1``.  Queued packets younger than that are
    undecided and stay censored.
    """
    return sum(end_tti - p.arrival_tti + 1 > d_max for p in queue.packets)


def outage_probability(records, d_max: int, overdue: int = 0) -> float:
    """Fraction of packets whose latency exceeds ``d_max`` TTIs (0 if none).

    ``overdue`` counts unfinished packets already known to be late; they enter
    both the numerator and the denominator.
    """
    totals = [r.total_ttis for r in records]
    if not totals and not overdue:
        return 0.0
    return (sum(t > d_max for t in totals) + overdue) / (len(totals) + overdue)


# -- arrival processes -----------------------------------------------------


@dataclass
class TrafficState:
    """Per-user ON-OFF state; unused for Poisson traffic."""

    on: np.ndarray
    remaining: np.ndarray  # TTIs left in the current ON/OFF period
    on_periods: list = field(default_factory=list)  # completed + ongoing ON lengths


def pareto(rng: np.random.Generator, shape: float, scale: float, size=None):
    """Classical Pareto samples (support ``[scale, inf)``)."""
    return scale * (1.0 + rng.pareto(shape, size=size))


def _on_length(params: BurstyTrafficParams, rng) -> int:
    return int(math.ceil(pareto(rng, params.pareto_shape, params.pareto_scale)))


def _off_length(params: BurstyTrafficParams, rng) -> int:
    return max(1, int(math.ceil(rng.exponential(1.0 / params.off_rate))))


def init_traffic_state(params, n_users: int, rng: np.random.Generator) -> TrafficState:
    if isinstance(params, BurstyTrafficParams):
        rem = np.array([_off_length(params, rng) for _ in range(n_users)], dtype=int)
        return TrafficState(np.zeros(n_users, dtype=bool), rem)
    return TrafficState(np.zeros(n_users, dtype=bool), np.zeros(n_users, dtype=int))


def step_arrivals(
    params: PoissonTrafficParams | BurstyTrafficParams,
    state: TrafficState,
    rng: np.random.Generator,
    tti: int,
) -> list[list[Packet]]:
    n = state.on.size
    if isinstance(params, PoissonTrafficParams):
        counts = rng.poisson(params.lam, size=n)
        total = int(counts.sum())
        sizes = rng.exponential(params.mean_size_bits, size=total) if total else []
        out, k = [], 0
        for c in counts:
            out.append([Packet(float(s), tti) for s in sizes[k:k + c]])
            k += c
        return out

    out = []
    for u in range(n):
        if state.remaining[u] == 0:
            state.on[u] = not state.on[u]
            if state.on[u]:
                state.remaining[u] = _on_length(params, rng)
                state.on_periods.append(int(state.remaining[u]))
            else:
                state.remaining[u] = _off_length(params, rng)
        state.remaining[u] -= 1
        out.append([Packet(params.burst_packet_bits, tti)] if state.on[u] else [])
    return out


# -- fast constant-rate FIFO -----------------------------------------------


def fifo_latencies(arrival_ttis, sizes, bits_per_tti: float):
    """Per-packet ``(waiting, service)`` for a FIFO served at a constant rate.

    Equivalent to calling :func:`drain` with ``bits_per_tti`` every TTI, but
    evaluated per packet as a fluid recursion so long runs stay cheap.
    Arrivals must be sorted.
    """
    arrival_ttis = np.asarray(arrival_ttis)
    sizes = np.asarray(sizes, dtype=float)
    wait = np.empty(arrival_ttis.size, dtype=np.int64)
    service = np.empty(arrival_ttis.size, dtype=np.int64)
    # Server position kept in cumulative bits so integer inputs stay exact.
    rate = float(bits_per_tti)
    finish = -math.inf
    for m, (a, size) in enumerate(zip(arrival_ttis.tolist(), sizes.tolist())):
        start = max(a * rate, finish)
        finish = start + size
        first = int(start // rate)
        wait[m] = first - a
        service[m] = int(-(-finish // rate)) - first
    return wait, service


def write_latency_csv(path, records_by_run) -> None:
    """Rows ``(run_id, user, arrival_tti, waiting, service, total)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "user", "arrival_tti", "waiting", "service", "total"])
        for run_id, records in records_by_run:
            for r in records:
                w.writerow([run_id, r.user, r.arrival_tti, r.waiting_ttis, r.service_ttis, r.total_ttis])
