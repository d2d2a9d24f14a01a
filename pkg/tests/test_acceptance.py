"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

The lines are collected by ``report`` and printed in the terminal summary
(see ``conftest.py``), so ``pytest tests/test_acceptance.py`` ends with a
twelve-line verdict.  Criterion 10 runs six 10-seed x 300-TTI campaigns and
dominates the runtime (about 20 minutes on one core).
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from latwsr import beamforming as bf
from latwsr import distsim, optimizer as opt, qos, runner
from latwsr.channel import generate_channel
from latwsr.config import PoissonTrafficParams, ScenarioConfig, load_config
from latwsr.traffic import fifo_latencies
from conftest import crand, random_pd
from oracles import projected_gradient_rate, water_filling_rate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def report(request):
    results = request.config.acceptance_results

    def record(number, ok, detail):
        results[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


# -- 1 ---------------------------------------------------------------------


def test_c01_rate_mse_identity(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        nt, nr = int(rng.integers(1, 9)), int(rng.integers(1, 3))
        s = int(rng.integers(1, min(nt, nr) + 1))
        n_interf = int(rng.integers(0, 4))
        scale = 10 ** rng.uniform(-1, 1.5)
        desired = scale * crand(rng, nr, nt) @ crand(rng, nt, s)
        interf = scale * crand(rng, n_interf, nr, nt) @ crand(rng, n_interf, nt, s)
        rx = bf.mmse_from_effective(desired, interf, 1.0)
        e = bf.mse_from_effective(desired, interf, rx, 1.0)
        via_mse = float(-bf.logdet2(e))
        # rate evaluated directly as log2 det(I + D D^H R^-1)
        R = bf.interference_covariance(interf, 1.0)
        direct = math.log2(np.linalg.det(np.eye(nr) + desired @ bf.herm(desired) @ np.linalg.inv(R)).real)
        worst = max(worst, abs(via_mse - direct) / max(abs(direct), 1e-300))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-9 and elapsed < 10, f"max relative gap {worst:.2e} over 500 instances in {elapsed:.1f} s")


# -- 2 ---------------------------------------------------------------------


def test_c02_lambert(report):
    worst_fwd = worst_inv = 0.0
    for w in np.linspace(-30.0, -1.0, 100):
        x = w * math.exp(w)
        got = qos.lambert_w_minus1(x)
        worst_fwd = max(worst_fwd, abs(got * math.exp(got) - x) / abs(x))
        worst_inv = max(worst_inv, abs(got - w) / abs(w))
    branch = qos.lambert_w_minus1(-math.exp(-1.0))
    rng = np.random.default_rng(2)
    xs = rng.uniform(qos.BRANCH_POINT + 1e-5, 0.0, 50)
    worst_oracle = max(abs(qos.lambert_w_minus1(x) - qos.lambert_w_minus1_bisect(x)) / abs(qos.lambert_w_minus1_bisect(x))
                       for x in xs)
    ok = max(worst_fwd, worst_inv) <= 1e-9 and abs(branch + 1) <= 1e-8 and worst_oracle <= 1e-12
    report(2, ok, f"round trip {max(worst_fwd, worst_inv):.1e}, W(-1/e)+1 = {branch + 1:.1e}, "
                  f"bisection gap {worst_oracle:.1e}")


# -- 3 ---------------------------------------------------------------------


def test_c03_taylor_dominance(report):
    rng = np.random.default_rng(3)
    worst_excess, worst_equal = -np.inf, 0.0
    for _ in range(100):
        s = int(rng.integers(1, 5))
        e, e_ref = random_pd(rng, s, cond=10 ** rng.uniform(0, 3)), random_pd(rng, s, cond=10 ** rng.uniform(0, 3))
        exact = float(-bf.logdet2(e))
        worst_excess = max(worst_excess, float(bf.taylor_rate_bound(e, e_ref)) - exact)
        worst_equal = max(worst_equal, abs(float(bf.taylor_rate_bound(e, e)) - exact))
    report(3, worst_excess <= 1e-9 and worst_equal <= 1e-12,
           f"max bound excess {worst_excess:.1e}, max gap at the expansion point {worst_equal:.1e}")


# -- 4 to 7: the {2, 6, 3, 1, 8, 2} convergence suite -------------------------


def _suite_problem(cfg, seed):
    ch = generate_channel(cfg, np.random.default_rng(seed), 0)
    return opt.Problem(ch.h / math.sqrt(cfg.sigma2), cfg.serving_bs(), cfg.p_watts, cfg.S)


@pytest.fixture(scope="module")
def suite():
    cfg = load_config(CONFIGS / "convergence.toml")
    assert (cfg.B, cfg.U, cfg.U_b, cfg.N, cfg.N_T, cfg.N_R) == (2, 6, 3, 1, 8, 2)
    problems = [_suite_problem(cfg, s) for s in cfg.seeds]
    start = time.perf_counter()
    central = [opt.run_centralized(p, cfg.solver) for p in problems]
    elapsed = time.perf_counter() - start
    return cfg, problems, central, elapsed


def test_c04_monotone_convergence(report, suite):
    cfg, problems, central, elapsed = suite
    worst_drop, worst_spread = 0.0, 0.0
    for res in central:
        rates = [s.weighted_rate for s in opt.outer_final(res.trace)]
        worst_drop = min(worst_drop, float(np.min(np.diff(rates))))
        worst_spread = max(worst_spread, opt.relative_spread(rates[-10:]))
    ok = worst_drop >= -1e-6 and worst_spread < 1e-3 and elapsed < 120
    report(4, ok, f"{len(central)} instances: largest step decrease {abs(worst_drop):.1e}, "
                  f"last-10 spread {worst_spread:.1e}, {elapsed:.0f} s")


def test_c05_kkt_residuals(report, suite):
    cfg, problems, central, _ = suite
    res = [opt.kkt_residuals(p, r, cfg.solver) for p, r in zip(problems, central)]
    worst = {k: max(r[k] for r in res) for k in ("stationarity", "slackness", "tightness")}
    ok = worst["stationarity"] <= 1e-6 and worst["slackness"] <= 1e-4 and worst["tightness"] <= 1e-6
    report(5, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


@pytest.fixture(scope="module")
def decentralized(suite):
    cfg, problems, _, _ = suite
    return [distsim.run_decentralized(p, cfg.solver) for p in problems]


def test_c06_power_feasibility(report, suite, decentralized):
    cfg, problems, central, _ = suite
    excess = -np.inf
    snapshots = 0
    for p, c, d in zip(problems, central, decentralized):
        for s in c.trace + d.trace:
            excess = max(excess, float(np.max(s.power - p.p_budget)))
            snapshots += 1
    campaign = runner.run_campaign(ScenarioConfig(seeds=[0, 1], ttis=30, algorithm="decentralized"))
    for row in campaign.traces:
        excess = max(excess, max(row.power) - ScenarioConfig().p_watts)
        snapshots += 1
    report(6, excess <= 1e-6, f"max power above budget {excess:.1e} W over {snapshots} snapshots")


def test_c07_centralized_decentralized_gap(report, suite, decentralized):
    _, _, central, _ = suite
    gaps = [abs(d.weighted_rate - c.weighted_rate) / abs(c.weighted_rate) for c, d in zip(central, decentralized)]
    report(7, max(gaps) <= 0.05, f"max relative objective gap {max(gaps):.1e}")


# -- 8 ---------------------------------------------------------------------


def test_c08_overhead_formula(report):
    rng = np.random.default_rng(8)
    got = {}
    for T, B, U_b, S in [(10, 4, 4, 2), (1, 1, 1, 1), (7, 2, 3, 2)]:
        p = opt.Problem(crand(rng, B, B * U_b, 1, S, 4), np.repeat(np.arange(B), U_b), 1.0, S)
        res = distsim.run_decentralized(p, opt.SolverConfig(max_outer=1, max_inner=T, converge_tol=1e-300))
        got[(T, B, U_b, S)] = (res.overhead.pilot_symbols, 2 * T * B * U_b * S)
    report(8, all(a == b for a, b in got.values()),
           "; ".join(f"{k}: {a} == {b}" for k, (a, b) in got.items()))


# -- 9 ---------------------------------------------------------------------


def test_c09_queue_law(report):
    rng = np.random.default_rng(9)
    n = 1_000_000
    lam, mean_size, rate = 0.002, 1000.0, 2.5  # mean service 400 TTIs, load 0.8
    start = time.perf_counter()
    arrivals = np.floor(np.cumsum(rng.exponential(1 / lam, n))).astype(np.int64)
    wait, _ = fifo_latencies(arrivals, rng.exponential(mean_size, n), rate)
    elapsed = time.perf_counter() - start
    mu = rate / mean_size
    analytic = lam / (mu * (mu - lam))
    rel = abs(float(np.mean(wait)) - analytic) / analytic
    report(9, rel <= 0.1 and elapsed < 60,
           f"mean wait {np.mean(wait):.1f} vs {analytic:.1f} TTIs ({rel:.1%}), {elapsed:.0f} s")


# -- 10 ----------------------------------------------------------------------


def test_c10_outage_trends(report):
    base = load_config(CONFIGS / "campaign.toml")
    assert (base.B, base.U, base.U_b, base.N, base.N_T, base.N_R) == (4, 16, 4, 4, 8, 2)
    assert len(base.seeds) >= 10 and base.ttis >= 300
    skewed = [1.0, 0.1, 0.01, 0.001]
    start = time.perf_counter()

    def outage(algorithm, lam, beta=None):
        return runner.run_campaign(base.replace(algorithm=algorithm, beta=beta,
                                                traffic=PoissonTrafficParams(lam=lam))).outage

    proposed = [outage("centralized", lam) for lam in (0.05, 0.07, 0.09)]
    baseline = outage("wmmse_baseline", 0.07)
    proposed_w = outage("centralized", 0.07, skewed)
    baseline_w = outage("wmmse_baseline", 0.07, skewed)
    elapsed = time.perf_counter() - start
    a = proposed[0] <= proposed[1] <= proposed[2]
    b = proposed[1] < baseline
    c = baseline_w > baseline and abs(proposed_w - proposed[1]) < 0.02
    report(10, a and b and c and elapsed < 1800,
           f"proposed {[round(x, 4) for x in proposed]}, baseline {baseline:.4f}; weighted: proposed "
           f"{proposed_w:.4f}, baseline {baseline_w:.4f}; (a) {a} (b) {b} (c) {c}; {elapsed:.0f} s")


# -- 11 ----------------------------------------------------------------------


def test_c11_determinism(report, tmp_path):
    cfg = ScenarioConfig(seeds=[5, 6], ttis=15, algorithm="decentralized")
    first, second = runner.run_campaign(cfg), runner.run_campaign(cfg)
    for name, res in (("a", first), ("b", second)):
        runner.emit_results(res, "csv", tmp_path / name)
        runner.emit_results(res, "json", tmp_path / f"{name}.json")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same_files = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    same_json = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    digests = first.transcript_digests
    same_transcripts = digests == second.transcript_digests and all(digests)
    report(11, same_files and same_json and same_transcripts,
           f"{len(files)} CSV files + JSON byte-identical: {same_files and same_json}; "
           f"transcripts identical: {same_transcripts}")


# -- 12 ----------------------------------------------------------------------


def test_c12_single_user_oracle(report):
    solver = load_config(CONFIGS / "convergence.toml").solver
    ratios = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        H = crand(rng, 1, 1, 1, 2, 8)
        p = opt.Problem(H, np.array([0]), 10.0, 2)
        res = opt.run_centralized(p, solver)
        achieved = float(bf.rates(H, p.serving, res.tx, 1.0).sum())
        oracle, _ = projected_gradient_rate(H[0, 0], 10.0)
        assert oracle == pytest.approx(water_filling_rate(H[0, 0], 10.0), rel=1e-6)
        ratios.append(achieved / oracle)
    report(12, min(ratios) >= 0.98 and max(ratios) <= 1 + 1e-9,
           f"achieved / oracle in [{min(ratios):.6f}, {max(ratios):.6f}] over 5 channels")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
