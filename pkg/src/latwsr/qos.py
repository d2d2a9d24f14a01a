"""Latency-outage targets mapped to minimum-rate requirements.

A user with a non-empty buffer must be served at least

    R_min = -(L / d_max) * (W_{-1}(xi * a * exp(a)) + a),
    a = lambda * d_max / (1 - exp(lambda * d_max)),

bits per TTI for ``P{D > d_max} <= xi`` to hold, with ``W_{-1}`` the lower
branch of the Lambert W function.  Rates here are bits/TTI and ``d_max`` is
in TTIs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BRANCH_POINT = -math.exp(-1.0)


class InfeasibleQosError(ValueError):
    """Latency target cannot be mapped to a finite rate requirement."""

    def __init__(self, user, argument, reason=""):
        self.user = user
        self.argument = argument
        msg = f"infeasible QoS for user {user}: Lambert argument {argument!r} outside [-1/e, 0)"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


def lambert_w_minus1_bisect(x: float, max_iter: int = 2000) -> float:
    """Lower-branch Lambert W by bisection on ``w e^w = x`` over ``w <= -1``."""
    if not BRANCH_POINT <= x < 0:
        raise ValueError(f"x={x!r} outside [-1/e, 0)")
    hi = -1.0
    lo = -2.0
    # w e^w decreases from 0- to -1/e on (-inf, -1]
    while lo * math.exp(lo) < x:
        lo *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid * math.exp(mid) < x:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _initial_guess(x: float) -> float:
    if x < -0.25:
        # series about the branch point
        p = -math.sqrt(2.0 * (1.0 + math.e * x))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    l1 = math.log(-x)
    l2 = math.log(-l1)
    return l1 - l2 + l2 / l1


def lambert_w_minus1(x: float) -> float:
    """Lower branch ``W_{-1}(x)`` for ``-1/e <= x < 0``.

    Halley iteration from a branch-point series (near ``-1/e``) or the
    asymptotic log expansion (near ``0``), with bisection as a fallback.
    """
    x = float(x)
    if not (BRANCH_POINT <= x < 0) or math.isnan(x):
        raise ValueError(f"x={x!r} outside [-1/e, 0)")
    if x == BRANCH_POINT:
        return -1.0
    w = _initial_guess(x)
    if w > -1.0:
        w = -1.0 - 1e-8
    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_new = w - dw
        if w_new > -1.0:
            w_new = 0.5 * (w - 1.0)
        if abs(w_new - w) <= 4e-16 * abs(w_new):
            w = w_new
            break
        w = w_new
    if not (w <= -1.0 and abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, abs(x))):
        return lambert_w_minus1_bisect(x)
    return w


@dataclass
class QosTarget:
    d_max: int
    xi: float
    lam: np.ndarray  # per-user arrivals per TTI
    mean_size_bits: np.ndarray  # per-user mean packet size

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        self.mean_size_bits = np.broadcast_to(
            np.asarray(self.mean_size_bits, dtype=float), self.lam.shape).copy()
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1 TTI")
        if np.any(self.lam < 0) or np.any(self.mean_size_bits <= 0):
            raise ValueError("need lam >= 0 and mean_size_bits > 0")


@dataclass(frozen=True)
class RateRequirement:
    r_min: float  # bits per TTI
    active: bool


def lambert_argument(lam: float, d_max: float, xi: float):
    """Return ``(x, a)``: the Lambert argument and the additive offset."""
    ld = lam * d_max
    # lambda d / (1 - e^{lambda d}), continuous at 0 and written to avoid overflow
    a = -1.0 if ld == 0 else ld * math.exp(-ld) / math.expm1(-ld)
    return xi * a * math.exp(a), a


def required_rate(lam: float, mean_size_bits: float, d_max: float, xi: float, user=None) -> float:
    x, a = lambert_argument(lam, d_max, xi)
    if not (BRANCH_POINT <= x < 0) or not math.isfinite(x):
        raise InfeasibleQosError(user, x)
    return -(mean_size_bits / d_max) * (lambert_w_minus1(x) + a)


def min_rate(target: QosTarget, user: int, backlog_bits: float = 1.0) -> RateRequirement:
    """Rate requirement of ``user``; inactive (zero rate) when its buffer is empty."""
    r = required_rate(float(target.lam[user]), float(target.mean_size_bits[user]),
                      target.d_max, target.xi, user)
    return RateRequirement(r, backlog_bits > 0)


def active_users(backlog_bits) -> np.ndarray:
    return np.asarray(backlog_bits) > 0
