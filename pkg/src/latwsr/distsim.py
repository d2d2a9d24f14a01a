"""Message-passing run of the primal-dual engine.

UE nodes hold their own receiver, MSE reference, theta and duals.  BS nodes
hold the channel from themselves to every user and solve their own transmit
beamformers.  All coupling goes through messages:

* ``BU_pilot``    BS -> UE   precoded downlink pilots, i.e. ``H_{b,u,n} M_{i,n}``
                            for the users ``i`` served by ``b``
* ``UB_pilot``    air -> BS  uplink pilots precoded with ``W``: ``H_{b,u,n}^H W_{u,n}``
* ``UB_feedback`` UE -> BS   theta of the sending UE (plus its duals)
* ``BB_share``    BS -> BS   theta of the users served by the sender

The pilot budget follows the precoded-pilot frame: every inner iteration costs
one downlink round (``U_b S`` symbols per BS) and one uplink round (``S``
symbols per UE), so ``2 T B U_b S`` symbols after ``T`` iterations.
"""
from __future__ import annotations

import hashlib
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import beamforming as bf
from . import optimizer as opt
from .config import SolverConfig

log = logging.getLogger(__name__)

KINDS = ("BU_pilot", "UB_pilot", "UB_feedback", "BB_share")


class ProtocolError(RuntimeError):
    """A message the protocol relies on was not delivered."""


class StaleInterferenceWarning(RuntimeWarning):
    pass


def payload_hash(payload: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(payload):
        v = np.ascontiguousarray(payload[key])
        h.update(key.encode())
        h.update(str(v.dtype).encode())
        h.update(str(v.shape).encode())
        h.update(v.tobytes())
    return h.hexdigest()


@dataclass
class NodeMessage:
    kind: str
    sender: str
    receiver: str
    frame: int
    iter: int
    payload: dict

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")

    def record(self) -> tuple:
        return (self.frame, self.iter, self.kind, self.sender, self.receiver, payload_hash(self.payload))


@dataclass
class OverheadCounter:
    pilot_symbols: int = 0
    backhaul_matrices: int = 0
    iterations: int = 0
    messages: int = 0
    stale_events: int = 0

    def add(self, other: "OverheadCounter") -> "OverheadCounter":
        return OverheadCounter(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.pilot_symbols, self.backhaul_matrices, self.iterations, self.messages, self.stale_events)


def pilot_overhead(T: int, B: int, U_b: int, S: int) -> int:
    return 2 * T * B * U_b * S


class Transport:
    """In-process ordered reliable channel with a transcript.

    ``drop`` (optional) is a predicate on messages used to emulate losses in
    tests; dropped messages are recorded and reported via :attr:`dropped`.
    """

    def __init__(self, drop=None):
        self._boxes: dict[str, list] = {}
        self.transcript: list[tuple] = []
        self.dropped: list[tuple] = []
        self._drop = drop

    def send(self, msg: NodeMessage) -> None:
        rec = msg.record()
        if self._drop is not None and self._drop(msg):
            self.dropped.append(rec)
            return
        self.transcript.append(rec)
        self._boxes.setdefault(msg.receiver, []).append(msg)

    def receive(self, receiver: str) -> list[NodeMessage]:
        return self._boxes.pop(receiver, [])

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.transcript:
                fh.write("\t".join(str(x) for x in rec) + "\n")

    def digest(self) -> str:
        h = hashlib.sha256()
        for rec in self.transcript:
            h.update(repr(rec).encode())
        return h.hexdigest()


def ue_id(u):
    return f"ue{u}"


def bs_id(b):
    return f"bs{b}"


# -- nodes -------------------------------------------------------------------


@dataclass
class UENode:
    u: int
    serving: np.ndarray  # serving BS of every user (public topology)
    N: int
    S: int
    sigma2: float
    beta: float
    r_min: float
    cap: float
    usable: bool
    cfg: SolverConfig
    baseline: bool = False
    gamma: float = 0.0
    phi: float = 0.0
    theta: np.ndarray | None = None
    rx: np.ndarray | None = None
    e: np.ndarray | None = None
    e_ref: np.ndarray | None = None
    r_hat: np.ndarray | None = None
    psi: np.ndarray | None = None
    pilots: dict = field(default_factory=dict)  # b -> (U_b, N, N_R, S)
    stale_events: int = 0

    def __post_init__(self):
        if self.theta is None:
            self.theta = np.zeros((self.N, self.S, self.S), complex)
        self.psi = np.zeros(self.N)
        self.r_hat = np.zeros(self.N)

    def receive_pilots(self, msgs) -> None:
        got = {int(m.sender[2:]): m.payload["effective"] for m in msgs if m.kind == "BU_pilot"}
        for b in np.unique(self.serving):
            if b not in got:
                if b not in self.pilots:
                    raise opt.SolverError(f"UE {self.u} never heard BS {b}")
                warnings.warn(f"UE {self.u}: no pilot from BS {b}, reusing previous effective channel",
                              StaleInterferenceWarning, stacklevel=2)
                self.stale_events += 1
        self.pilots.update(got)

    def effective(self):
        """Own desired ``(N, N_R, S)`` and interference ``(N, U, N_R, S)`` channels."""
        U = self.serving.size
        NR = next(iter(self.pilots.values())).shape[2]
        F = np.zeros((self.N, U, NR, self.S), complex)
        for b, eff in self.pilots.items():
            F[:, self.serving == b] = np.moveaxis(eff, 0, 1)
        D = F[:, self.u].copy()
        F[:, self.u] = 0.0
        return D, F

    def receiver_update(self):
        """Outer-loop step: MMSE receiver and the MSE reference point."""
        D, I = self.effective()
        self.rx = bf.mmse_from_effective(D, I, self.sigma2)
        self.e_ref = bf.mse_from_effective(D, I, self.rx, self.sigma2)
        return self.rx

    def feedback_update(self, step_theta: float):
        """Weight step toward ``psi E_ref^{-1} / ln 2``; returns the theta to feed back."""
        if not self.usable:
            self.psi = np.zeros(self.N)
            return self.theta
        self.psi = np.full(self.N, float(opt.update_psi(self.beta, self.gamma, self.phi)))
        self.theta = opt.update_theta(self.theta, self.psi, self.e_ref, step_theta)
        return self.theta

    def measure(self, step_dual: float):
        """After new pilots: MSE, surrogate rate, rate-demand duals, new linearization point."""
        D, I = self.effective()
        self.e = bf.mse_from_effective(D, I, self.rx, self.sigma2)
        if not self.usable:
            self.r_hat = np.zeros(self.N)
            self.e_ref = self.e
            return
        self.r_hat = opt.update_rhat(self.e, self.e_ref)
        if not self.baseline:
            self.gamma, self.phi = opt.update_gamma_phi(self.gamma, self.phi, self.r_hat.sum(), self.r_min,
                                                        self.cap, step_dual)
        self.e_ref = self.e

    def rate(self):
        D, I = self.effective()
        return bf.rate_from_effective(D, I, self.sigma2)


@dataclass
class BSNode:
    b: int
    H_local: np.ndarray  # (U, N, N_R, N_T): channel from this BS to every user
    own: np.ndarray  # users served by this BS
    p_budget: float
    S: int
    cfg: SolverConfig
    uplink: np.ndarray | None = None  # (U, N, N_T, S) = H^H W measured from uplink pilots
    theta: np.ndarray | None = None  # (U, N, S, S) last known theta of every user
    tx: np.ndarray | None = None
    nu: float = 0.0
    info: opt.TxSolveInfo | None = None
    stale_events: int = 0

    def __post_init__(self):
        U, N = self.H_local.shape[:2]
        if self.theta is None:
            self.theta = np.zeros((U, N, self.S, self.S), complex)
        if self.tx is None:
            self.tx = np.zeros((self.own.size, N, self.H_local.shape[3], self.S), complex)

    def init_tx(self, usable):
        act = usable[self.own]
        self.tx[:] = 0.0
        self.tx[act] = opt.initial_tx(self.H_local[self.own[act]], int(act.sum()), self.p_budget, self.S)

    def pilots(self):
        """Effective channels ``H_{b,u,n} M_{i,n}`` toward every user: (U_b, U, N, N_R, S)."""
        return bf.bs_effective(self.H_local, self.tx)

    def receive_theta(self, msgs, expected_users) -> None:
        seen = set()
        for m in msgs:
            if m.kind in ("UB_feedback", "BB_share"):
                for u, th in zip(m.payload["users"].tolist(), m.payload["theta"]):
                    self.theta[u] = th
                    seen.add(u)
        missing = sorted(set(int(u) for u in expected_users) - seen)
        if missing:
            self.stale_events += len(missing)
            log.warning("BS %d: no theta for users %s, using last known values", self.b, missing)

    def local_update(self):
        self.tx, self.info = opt.solve_tx_from_uplink(self.uplink, self.theta, self.own,
                                                     self.p_budget, self.cfg.power_tol)
        self.nu = self.info.nu
        return self.tx


# -- over-the-air propagation --------------------------------------------------


class Medium:
    """Computes what receivers measure from precoded pilots.

    This is the physical channel, not a node: BS nodes never see each other's
    channel matrices through it.
    """

    def __init__(self, H):
        self.H = H

    def uplink(self, b, rx):
        return bf.uplink_effective(self.H[b:b + 1], rx)[0]


# -- scheduler -------------------------------------------------------------------


@dataclass
class DecentralizedResult(opt.SolveResult):
    overhead: OverheadCounter = field(default_factory=OverheadCounter)
    transcript_digest: str = ""


def _map(pool, fn, items):
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))


def run_decentralized(problem: opt.Problem, cfg: SolverConfig, transport: Transport | None = None,
                      duals: opt.DualState | None = None, frame: int = 0, threaded: bool = False,
                      baseline: bool = False) -> DecentralizedResult:
    """Run the engine as BS / UE nodes exchanging messages through ``transport``.

    Update order and convergence tests mirror :func:`optimizer.run_centralized`.
    ``threaded`` runs the nodes of each phase on a thread pool; messages are
    still sent in node order so transcripts do not depend on scheduling.
    """
    B, U, N, NR, NT, S = problem.dims
    transport = Transport() if transport is None else transport
    duals = opt.DualState.zeros(U, N, S, B) if duals is None else duals
    if baseline:
        problem = opt.Problem(problem.H, problem.serving, problem.p_budget, S, problem.sigma2,
                              problem.beta, np.zeros(U), np.full(U, np.inf), np.ones(U, bool))
        duals.gamma[:] = 0.0
        duals.phi[:] = 0.0
    duals.theta[:] = 0.0
    usable = problem.usable()
    weights = np.where(usable, problem.beta, 0.0)
    overhead = OverheadCounter()
    if not np.any(usable):
        duals.psi[:] = 0.0
        duals.nu[:] = 0.0
        return DecentralizedResult(np.zeros((U, N, NT, S), complex), np.zeros((U, N, NR, S), complex),
                                   duals, [], converged=True, overhead=overhead,
                                   transcript_digest=transport.digest())

    medium = Medium(problem.H)
    U_b = int(np.bincount(problem.serving, minlength=B).max())
    ues = [UENode(u, problem.serving, N, S, problem.sigma2, float(problem.beta[u]), float(problem.r_min[u]),
                  float(problem.cap[u]), bool(usable[u]), cfg, baseline,
                  float(duals.gamma[u]), float(duals.phi[u])) for u in range(U)]
    bss = [BSNode(b, problem.H[b], problem.served_users(b), float(problem.p_budget[b]), S, cfg)
           for b in range(B)]
    for node in bss:
        node.init_tx(usable)

    pool = ThreadPoolExecutor(max_workers=min(8, U)) if threaded else None
    k_global = 0
    n_sent = 0

    def send(msg):
        nonlocal n_sent
        n_sent += 1
        transport.send(msg)

    def downlink(it):
        pil = _map(pool, lambda node: node.pilots(), bss)
        for node, eff in zip(bss, pil):
            for u in range(U):
                send(NodeMessage("BU_pilot", bs_id(node.b), ue_id(u), frame, it, {"effective": eff[:, u]}))
        for ue in ues:
            ue.receive_pilots(transport.receive(ue_id(ue.u)))

    def check_delivery():
        if transport.dropped:
            raise ProtocolError(f"transport lost {len(transport.dropped)} message(s); first: {transport.dropped[0]}")

    trace = []
    prev_outer = None
    converged = False
    try:
        downlink(k_global)
        check_delivery()
        for outer in range(cfg.max_outer):
            rxs = _map(pool, lambda ue: ue.receiver_update(), ues)
            rx = np.stack(rxs)
            for b in range(B):
                send(NodeMessage("UB_pilot", "air", bs_id(b), frame, k_global, {"uplink": medium.uplink(b, rx)}))
            for node in bss:
                (m,) = transport.receive(bs_id(node.b))
                node.uplink = m.payload["uplink"]
            check_delivery()
            objs = []
            for inner in range(cfg.max_inner):
                step_dual = cfg.dual_step(k_global)
                step_theta = cfg.theta_step_at(k_global)
                thetas = _map(pool, lambda ue: ue.feedback_update(step_theta), ues)
                for ue, th in zip(ues, thetas):
                    send(NodeMessage("UB_feedback", ue_id(ue.u), bs_id(problem.serving[ue.u]), frame, k_global,
                                     {"users": np.array([ue.u]), "theta": th[None],
                                      "gamma": np.array(ue.gamma), "phi": np.array(ue.phi)}))
                fb = {node.b: transport.receive(bs_id(node.b)) for node in bss}
                for node in bss:
                    th = np.stack([m.payload["theta"][0] for m in fb[node.b]]) if fb[node.b] else \
                        np.zeros((0, N, S, S), complex)
                    users = np.array([m.payload["users"][0] for m in fb[node.b]], dtype=int)
                    for other in bss:
                        if other.b != node.b:
                            send(NodeMessage("BB_share", bs_id(node.b), bs_id(other.b), frame, k_global,
                                             {"users": users, "theta": th}))
                            overhead.backhaul_matrices += users.size * N
                    node.receive_theta(fb[node.b], node.own)
                for node in bss:
                    others = np.setdiff1d(np.arange(U), node.own)
                    node.receive_theta(transport.receive(bs_id(node.b)), others)
                check_delivery()
                _map(pool, lambda node: node.local_update(), bss)
                # one downlink round (U_b S per BS) and one uplink round (S per UE)
                overhead.pilot_symbols += B * U_b * S + U * S
                overhead.iterations += 1
                k_global += 1

                downlink(k_global)
                check_delivery()
                _map(pool, lambda ue: ue.measure(step_dual), ues)
                # monitor: node states are read only to build the trace
                tx = _assemble_tx(bss, U, N, NT, S)
                duals.theta = np.stack([ue.theta for ue in ues])
                duals.psi = np.stack([ue.psi for ue in ues])
                duals.gamma = np.array([ue.gamma for ue in ues])
                duals.phi = np.array([ue.phi for ue in ues])
                duals.nu = np.array([node.nu for node in bss])
                r_hat = np.where(usable[:, None], np.stack([ue.r_hat for ue in ues]), 0.0)
                rate = np.stack([ue.rate() for ue in ues])
                snap = opt._snapshot(outer, inner, r_hat, rate, weights, problem, usable, tx, duals)
                trace.append(snap)
                objs.append(snap.objective)
                if len(objs) >= 3 and opt.relative_spread(objs[-3:]) < cfg.converge_tol:
                    break
            wr = trace[-1].weighted_rate
            if prev_outer is not None and outer + 1 >= cfg.min_outer:
                if abs(wr - prev_outer) <= cfg.converge_tol * max(abs(wr), 1e-12):
                    converged = True
                    break
            prev_outer = wr
    finally:
        if pool is not None:
            pool.shutdown()
    overhead.messages = n_sent
    overhead.stale_events = sum(ue.stale_events for ue in ues) + sum(n.stale_events for n in bss)
    tx = _assemble_tx(bss, U, N, NT, S)
    rx = np.stack([ue.rx for ue in ues])
    e = np.stack([ue.e for ue in ues])
    e_ref = np.stack([ue.e_ref for ue in ues])
    r_hat = np.where(usable[:, None], np.stack([ue.r_hat for ue in ues]), 0.0)
    return DecentralizedResult(tx, rx, duals, trace, e, e_ref, r_hat, converged, [n.info for n in bss],
                               overhead=overhead, transcript_digest=transport.digest())


def _assemble_tx(bss, U, N, NT, S):
    tx = np.zeros((U, N, NT, S), complex)
    for node in bss:
        tx[node.own] = node.tx
    return tx
