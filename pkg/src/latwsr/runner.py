"""Multi-TTI Monte-Carlo campaigns and result files.

Per seed and TTI: evolve the channel, corrupt it into the CSI estimate,
generate arrivals, derive the active set and rate targets, run the selected
algorithm on the estimate, evaluate the achieved rates on the true channel,
convert them to bits (rate x sub-channel bandwidth x TTI) and drain the
buffers.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import beamforming as bf
from . import distsim, optimizer as opt, qos, traffic
from .channel import corrupt_csi, generate_channel
from .config import ScenarioConfig, config_to_dict

SCHEMA_VERSION = 2
_STREAMS = ("drop", "channel", "traffic", "csi")


@dataclass(frozen=True)
class TraceRow:
    """Final engine iterate of one TTI."""

    run_id: int
    tti: int
    iterations: int
    objective: float
    weighted_rate: float
    max_violation: float
    power: tuple


@dataclass
class RunResult:
    seed: int
    records: list
    arrived_bits: np.ndarray
    served_bits: np.ndarray
    bits_per_tti: np.ndarray  # total served bits per TTI
    trace: list
    overhead: distsim.OverheadCounter
    transcript_digest: str = ""
    overdue: int = 0  # unfinished packets already past d_max at the end of the run


@dataclass
class CampaignResult:
    outage: float
    latency_samples: list  # sorted total latencies in TTIs
    mean_sum_bits: float  # mean over runs and TTIs of bits served per TTI (all users)
    traces: list  # TraceRow, all runs
    overhead: distsim.OverheadCounter
    records: list = field(default_factory=list)  # (run_id, LatencyRecord)
    transcript_digests: list = field(default_factory=list)
    tti_ms: float = 1.0
    d_max: int = 20
    overdue: int = 0

    def __eq__(self, other):
        if not isinstance(other, CampaignResult):
            return NotImplemented
        return all(getattr(self, k) == getattr(other, k) for k in
                   ("outage", "latency_samples", "mean_sum_bits", "traces", "overhead", "records",
                    "transcript_digests", "tti_ms", "d_max", "overdue"))


def rate_requirement_bits(cfg: ScenarioConfig) -> np.ndarray:
    """Per-user minimum rate in bits/TTI; raises on infeasible targets."""
    t = cfg.traffic
    out = np.empty(cfg.U)
    for u in range(cfg.U):
        out[u] = qos.required_rate(t.qos_lambda, t.qos_mean_size_bits, cfg.d_max, cfg.xi, user=u)
    return out


def _solve(cfg: ScenarioConfig, problem, duals, frame, transport):
    if cfg.algorithm == "wmmse_baseline":
        return opt.run_wmmse_baseline(problem, cfg.solver)
    if cfg.algorithm == "centralized":
        return opt.run_centralized(problem, cfg.solver, duals)
    return distsim.run_decentralized(problem, cfg.solver, transport, duals, frame=frame)


def run_single(cfg: ScenarioConfig, seed: int, run_id: int = 0) -> RunResult:
    streams = dict(zip(_STREAMS, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))))
    unit = cfg.bits_per_rate_unit
    norm = 1.0 / math.sqrt(cfg.sigma2)
    serving = cfg.serving_bs()
    beta = cfg.user_weights()
    r_min_bits = rate_requirement_bits(cfg)
    queues = [traffic.UserQueue(u) for u in range(cfg.U)]
    tstate = traffic.init_traffic_state(cfg.traffic, cfg.U, streams["traffic"])
    duals = opt.DualState.zeros(cfg.U, cfg.N, cfg.S, cfg.B)
    transport = distsim.Transport()
    overhead = distsim.OverheadCounter()
    records, trace = [], []
    bits_per_tti = np.zeros(cfg.ttis)

    ch = generate_channel(cfg, streams["drop"], 0)
    for t in range(cfg.ttis):
        if t > 0:
            ch = generate_channel(cfg, streams["channel"], t, previous=ch)
        est = corrupt_csi(ch, cfg.csi_reliability, streams["csi"])
        for q, pkts in zip(queues, traffic.step_arrivals(cfg.traffic, tstate, streams["traffic"], t)):
            for p in pkts:
                q.push(p)
        backlog = np.array([q.backlog_bits for q in queues])
        active = qos.active_users(backlog)
        problem = opt.Problem(est.h_hat * norm, serving, cfg.p_watts, cfg.S, 1.0, beta,
                              np.minimum(r_min_bits, backlog) / unit, backlog / unit, active)
        res = _solve(cfg, problem, duals, t, transport)
        if isinstance(res, distsim.DecentralizedResult):
            overhead = overhead.add(res.overhead)
        served = bf.rates(ch.h * norm, serving, res.tx, 1.0).sum(axis=1) * unit
        for u, q in enumerate(queues):
            records.extend(traffic.drain(q, float(served[u]), t))
        bits_per_tti[t] = sum(min(float(s), b) for s, b in zip(served, backlog))
        if res.trace:
            s = res.trace[-1]
            trace.append(TraceRow(run_id, t, len(res.trace), s.objective, s.weighted_rate,
                                  s.constraint_violation, tuple(float(p) for p in s.power)))
        else:
            trace.append(TraceRow(run_id, t, 0, 0.0, 0.0, 0.0, (0.0,) * cfg.B))
    overdue = sum(traffic.overdue_unfinished(q, cfg.ttis, cfg.d_max) for q in queues)
    return RunResult(seed, records, np.array([q.arrived_bits for q in queues]),
                     np.array([q.served_bits for q in queues]), bits_per_tti, trace, overhead,
                     transport.digest() if cfg.algorithm == "decentralized" else "", overdue)


def _run_one(args):
    cfg, seed, run_id = args
    return run_single(cfg, seed, run_id)


def run_campaign(cfg: ScenarioConfig, workers: int | None = None) -> CampaignResult:
    """Run every seed of ``cfg`` and merge the runs in seed order."""
    rate_requirement_bits(cfg)  # fail before spending time on runs
    jobs = [(cfg, seed, i) for i, seed in enumerate(cfg.seeds)]
    workers = cfg.workers if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = [_run_one(j) for j in jobs]
    return merge_runs(cfg, runs)


def merge_runs(cfg: ScenarioConfig, runs) -> CampaignResult:
    tagged = [(i, r) for i, run in enumerate(runs) for r in run.records]
    recs = [r for _, r in tagged]
    overhead = distsim.OverheadCounter()
    for run in runs:
        overhead = overhead.add(run.overhead)
    mean_bits = float(np.mean([run.bits_per_tti.mean() for run in runs])) if runs else 0.0
    overdue = sum(run.overdue for run in runs)
    return CampaignResult(
        outage=traffic.outage_probability(recs, cfg.d_max, overdue),
        latency_samples=sorted(r.total_ttis for r in recs),
        mean_sum_bits=mean_bits,
        traces=[row for run in runs for row in run.trace],
        overhead=overhead,
        records=tagged,
        transcript_digests=[run.transcript_digest for run in runs],
        tti_ms=cfg.tti_s * 1e3,
        d_max=cfg.d_max,
        overdue=overdue,
    )


# -- result files ----------------------------------------------------------------


def latency_cdf(samples):
    """Rows ``(latency_ttis, cumulative_fraction)`` at each distinct value."""
    if not samples:
        return []
    values, counts = np.unique(np.asarray(samples), return_counts=True)
    cum = np.cumsum(counts) / len(samples)
    return [(int(v), float(c)) for v, c in zip(values, cum)]


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _result_dict(result: CampaignResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "outage": result.outage,
        "mean_sum_bits": result.mean_sum_bits,
        "d_max": result.d_max,
        "tti_ms": result.tti_ms,
        "overdue_unfinished": result.overdue,
        "latency_samples": list(result.latency_samples),
        "latency_cdf": [list(r) for r in latency_cdf(result.latency_samples)],
        "traces": [[r.run_id, r.tti, r.iterations, r.objective, r.weighted_rate, r.max_violation, list(r.power)]
                   for r in result.traces],
        "overhead": asdict(result.overhead),
        "records": [[i, r.user, r.arrival_tti, r.waiting_ttis, r.service_ttis, r.total_ttis]
                    for i, r in result.records],
        "transcript_digests": list(result.transcript_digests),
    }


def emit_results(result: CampaignResult, fmt: str, path) -> None:
    """Write ``result`` as one JSON file or as a directory of CSV tables."""
    path = Path(path)
    try:
        if fmt == "json":
            if path.parent != Path(""):
                path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(_result_dict(result), indent=1) + "\n")
        elif fmt == "csv":
            _emit_csv(result, path)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _emit_csv(result: CampaignResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    d = _result_dict(result)
    _write_rows(out / "summary.csv", ["key", "value"], [
        ("schema_version", SCHEMA_VERSION), ("outage", result.outage), ("mean_sum_bits", result.mean_sum_bits),
        ("d_max_ttis", result.d_max), ("tti_ms", result.tti_ms),
        ("overdue_unfinished", result.overdue),
    ])
    _write_rows(out / "latency_cdf.csv", ["latency_ttis", "latency_ms", "cumulative_fraction"],
                [(v, v * result.tti_ms, c) for v, c in latency_cdf(result.latency_samples)])
    _write_rows(out / "latency_samples.csv", ["latency_ttis"], [(v,) for v in result.latency_samples])
    n_bs = max((len(r.power) for r in result.traces), default=0)
    _write_rows(out / "traces.csv",
                ["run_id", "tti", "iterations", "objective", "weighted_rate", "max_violation"]
                + [f"power_b{b + 1}" for b in range(n_bs)],
                [(r.run_id, r.tti, r.iterations, r.objective, r.weighted_rate, r.max_violation, *r.power)
                 for r in result.traces])
    _write_rows(out / "overhead.csv", list(d["overhead"]), [tuple(d["overhead"].values())])
    _write_rows(out / "latency_records.csv",
                ["run_id", "user", "arrival_tti", "waiting", "service", "total"], d["records"])
    _write_rows(out / "transcripts.csv", ["run_id", "sha256"], list(enumerate(result.transcript_digests)))


def load_results(path) -> CampaignResult:
    path = Path(path)
    if path.is_dir():
        return _load_csv(path)
    d = json.loads(path.read_text())
    _check_schema(d["schema_version"])
    return CampaignResult(
        outage=d["outage"],
        latency_samples=d["latency_samples"],
        mean_sum_bits=d["mean_sum_bits"],
        traces=[TraceRow(r[0], r[1], r[2], r[3], r[4], r[5], tuple(r[6])) for r in d["traces"]],
        overhead=distsim.OverheadCounter(**d["overhead"]),
        records=[(r[0], traffic.LatencyRecord(*r[1:])) for r in d["records"]],
        transcript_digests=d["transcript_digests"],
        tti_ms=d["tti_ms"],
        d_max=d["d_max"],
        overdue=d["overdue_unfinished"],
    )


def _check_schema(v):
    if int(v) != SCHEMA_VERSION:
        raise ValueError(f"unsupported result schema version {v}")


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _load_csv(out: Path) -> CampaignResult:
    _, rows = _read_rows(out / "summary.csv")
    s = dict(rows)
    _check_schema(s["schema_version"])
    _, lat = _read_rows(out / "latency_samples.csv")
    _, tr = _read_rows(out / "traces.csv")
    head, ov = _read_rows(out / "overhead.csv")
    _, rec = _read_rows(out / "latency_records.csv")
    _, dig = _read_rows(out / "transcripts.csv")
    return CampaignResult(
        outage=float(s["outage"]),
        latency_samples=[int(r[0]) for r in lat],
        mean_sum_bits=float(s["mean_sum_bits"]),
        traces=[TraceRow(int(r[0]), int(r[1]), int(r[2]), float(r[3]), float(r[4]), float(r[5]),
                         tuple(float(x) for x in r[6:])) for r in tr],
        overhead=distsim.OverheadCounter(**{k: int(v) for k, v in zip(head, ov[0])}),
        records=[(int(r[0]), traffic.LatencyRecord(*(int(x) for x in r[1:]))) for r in rec],
        transcript_digests=[r[1] for r in dig],
        tti_ms=float(s["tti_ms"]),
        d_max=int(s["d_max_ttis"]),
        overdue=int(s["overdue_unfinished"]),
    )


def config_summary(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, default=str)


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
