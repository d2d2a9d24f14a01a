"""Invariant checks on small random instances, used by ``latwsr check``.

Each check returns ``(name, ok, detail)``.  With a config the solver checks
use its dimensions and pathloss law; otherwise a 2-cell toy network.
"""
from __future__ import annotations

import math

import numpy as np

from . import beamforming as bf
from . import distsim, optimizer as opt, qos
from .channel import generate_channel
from .config import ScenarioConfig, SolverConfig


def _rate_mse_identity(rng, trials=50):
    worst = 0.0
    for _ in range(trials):
        nt, nr = int(rng.integers(1, 9)), int(rng.integers(1, 3))
        s = int(rng.integers(1, min(nt, nr) + 1))
        h = [(rng.standard_normal((nr, nt)) + 1j * rng.standard_normal((nr, nt))) / math.sqrt(2) for _ in range(3)]
        tx = [(rng.standard_normal((nt, s)) + 1j * rng.standard_normal((nt, s))) for _ in range(3)]
        desired = h[0] @ tx[0]
        interf = np.stack([h[1] @ tx[1], h[2] @ tx[2]])
        rx = bf.mmse_from_effective(desired, interf, 1.0)
        e = bf.mse_from_effective(desired, interf, rx, 1.0)
        rate = float(bf.rate_from_effective(desired, interf, 1.0))
        worst = max(worst, abs(-float(bf.logdet2(e)) - rate) / max(1.0, rate))
    return "rate-MSE identity", worst <= 1e-9, f"max relative gap {worst:.2e}"


def _lambert(rng, points=50):
    worst = 0.0
    for target in rng.uniform(-30.0, -1.0, points):
        z = target * math.exp(target)
        w = qos.lambert_w_minus1(z)
        worst = max(worst, abs(w * math.exp(w) - z) / abs(z))
    return "Lambert W_-1 round trip", worst <= 1e-9, f"max relative residual {worst:.2e}"


def _taylor(rng, trials=50):
    worst = -np.inf
    for _ in range(trials):
        s = int(rng.integers(1, 4))
        a = rng.standard_normal((2, s, s)) + 1j * rng.standard_normal((2, s, s))
        e, e_ref = (m @ bf.herm(m) + 0.1 * np.eye(s) for m in a)
        gap = float(bf.taylor_rate_bound(e, e_ref) + bf.logdet2(e))
        worst = max(worst, gap)
    return "Taylor bound below -log2 det", worst <= 1e-9, f"max excess {worst:.2e}"


def _instance(cfg: ScenarioConfig | None, rng):
    if cfg is None:
        cfg = ScenarioConfig(B=2, U_b=2, N=1, N_T=4, N_R=2)
    ch = generate_channel(cfg, rng, 0)
    return opt.Problem(ch.h / math.sqrt(cfg.sigma2), cfg.serving_bs(), cfg.p_watts, cfg.S,
                       beta=cfg.user_weights())


def _power_and_parity(cfg, rng):
    problem = _instance(cfg, rng)
    solver = SolverConfig(max_outer=3, max_inner=3)
    central = opt.run_centralized(problem, solver)
    worst = max(float(np.max(s.power - problem.p_budget)) for s in central.trace)
    power = ("per-BS power within budget", worst <= 1e-6 * max(1.0, float(problem.p_budget.max())),
             f"max excess {worst:.2e} W over {len(central.trace)} snapshots")
    dec = distsim.run_decentralized(problem, solver)
    gap = abs(dec.weighted_rate - central.weighted_rate) / max(abs(central.weighted_rate), 1e-12)
    parity = ("centralized and message-passing runs agree", gap <= 0.05, f"relative objective gap {gap:.2e}")
    return [power, parity]


def _overhead(rng):
    cases = [(10, 4, 4, 2), (1, 1, 1, 1), (7, 2, 3, 2)]
    bad = []
    for T, B, U_b, S in cases:
        shape = (B, B * U_b, 1, S, 4)
        h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
        problem = opt.Problem(h, np.repeat(np.arange(B), U_b), 1.0, S)
        res = distsim.run_decentralized(problem, SolverConfig(max_outer=1, max_inner=T, converge_tol=1e-300))
        if res.overhead.pilot_symbols != 2 * T * B * U_b * S:
            bad.append((T, B, U_b, S, res.overhead.pilot_symbols))
    return "pilot overhead 2 T B U_b S", not bad, "exact on 3 cases" if not bad else f"mismatch {bad}"


def run_all(cfg: ScenarioConfig | None = None, seed: int = 0):
    rng = np.random.default_rng(seed)
    results = [_rate_mse_identity(rng), _lambert(rng), _taylor(rng)]
    results += _power_and_parity(cfg, rng)
    results.append(_overhead(rng))
    return results
