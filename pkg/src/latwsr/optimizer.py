"""Primal-dual SCA engine for latency-constrained weighted sum-rate maximization.

Rates inside the engine are unit-free: bits/s/Hz summed over sub-channels.
``r_min`` and ``cap`` must be expressed in the same unit (the runner divides
bits/TTI by ``subchannel_bw * tti``).

One inner iteration, for every active user ``u`` and sub-channel ``n``:

1. ``psi = [beta + gamma - phi]^+``,
2. ``theta <- theta + rho (psi E_ref^{-1} / ln 2 - theta)``,
3. each BS solves ``(Q_b + nu_b I) M = H^H W theta`` for its own users,
4. measure ``E`` for the new transmit beamformers (receiver fixed),
5. ``r_hat = taylor_rate_bound(E, E_ref)`` and the projected steps on gamma / phi,
6. ``E_ref <- E``.

The outer loop refreshes the MMSE receivers and re-measures ``E_ref``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import beamforming as bf
from .beamforming import LN2, NumericalError, herm
from .config import SolverConfig

# eigen-directions of Q below this fraction of the largest are treated as null
NULL_RCOND = 1e-10


class SolverError(RuntimeError):
    """The engine could not produce a valid iterate."""

    def __init__(self, msg, state=None):
        self.state = state or {}
        if state:
            msg += " | state: " + ", ".join(f"{k}={v}" for k, v in self.state.items())
        super().__init__(msg)


# -- closed-form updates ---------------------------------------------------


def update_psi(beta, gamma, phi):
    return np.maximum(0.0, np.asarray(beta) + gamma - phi)


def _hermitian_inverse(e: np.ndarray) -> np.ndarray:
    c = bf._cholesky(e, "reference MSE matrix")
    eye = np.broadcast_to(np.eye(e.shape[-1], dtype=complex), e.shape)
    inv = np.linalg.solve(herm(c), np.linalg.solve(c, eye))
    return 0.5 * (inv + herm(inv))


def update_theta(theta_prev, psi, e_ref, step: float):
    """``theta + step * (psi * e_ref^{-1} / ln 2 - theta)``, re-Hermitized."""
    if not 0 < step <= 1:
        raise ValueError("step must lie in (0, 1]")
    psi = np.asarray(psi, dtype=float)[..., None, None]
    target = psi * _hermitian_inverse(e_ref) / LN2
    if step == 1:
        out = target
    else:
        out = theta_prev + step * (target - theta_prev)
    return 0.5 * (out + herm(out))


def update_rhat(e, e_ref):
    return bf.taylor_rate_bound(e, e_ref)


def update_gamma_phi(gamma, phi, rhat_sum, r_min, queue_cap, step: float):
    if step <= 0:
        raise ValueError("step must be positive")
    g = np.maximum(0.0, gamma + step * (np.asarray(r_min) - rhat_sum))
    # an infinite cap never binds
    excess = np.where(np.isinf(queue_cap), -np.inf, rhat_sum - np.asarray(queue_cap, dtype=float))
    p = np.maximum(0.0, phi + step * np.maximum(excess, -1e300))
    if np.ndim(g) == 0:
        return float(g), float(p)
    return g, p


# -- transmit beamformers --------------------------------------------------


@dataclass
class TxSolveInfo:
    nu: float
    power: float
    parts: list = field(default_factory=list, repr=False)  # (nu, power) arrays from the search
    residual: float = 0.0  # max |(Q + nu I) M - H^H W theta| entry

    @property
    def trace(self) -> np.ndarray:
        """Every ``(nu, power)`` pair evaluated by the search, sorted by ``nu``."""
        if not self.parts:
            return np.zeros((0, 2))
        t = np.concatenate([np.column_stack(p) for p in self.parts])
        return t[np.argsort(t[:, 0], kind="stable")]


def _bisect_nu(a, lam, p_budget, power_tol):
    """Smallest ``nu >= 0`` with ``sum_k a_k / (lam_k + nu)^2 <= p_budget``, per row.

    ``a`` and ``lam`` are ``(B, K)``; entries with ``a == 0`` do not contribute.
    Power is convex and decreasing in ``nu``, so each round shrinks the bracket
    ``[lo, hi]`` from both sides: a Newton step from ``lo`` stays infeasible,
    the chord through the bracket ends lands on the feasible side, and the
    midpoint between the two guarantees at least halving.  Power must
    decrease strictly along every round's points, otherwise
    :class:`SolverError`.  Returns ``(nu, power, parts)`` where ``parts[b]``
    lists the ``(nu, power)`` arrays evaluated for row ``b``.
    """
    a3, lam3 = a[:, None, :], lam[:, None, :]

    def power(nu):  # nu (B, M) -> power and derivative, both (B, M)
        inv = 1.0 / (lam3 + nu[:, :, None])
        t = a3 * inv * inv
        return t.sum(axis=2), -2.0 * np.sum(t * inv, axis=2)

    Bn = a.shape[0]
    P = p_budget
    used = a > 0
    root = np.sqrt(a.sum(axis=1) / P)
    # power(nu) lies between sum(a) / (lam_max + nu)^2 and sum(a) / (lam_min + nu)^2
    lam_hi = np.max(np.where(used, lam, -np.inf), axis=1)
    lam_lo = np.min(np.where(used, lam, np.inf), axis=1)
    start = np.stack([np.zeros(Bn), np.maximum(root - lam_hi, 0.0), np.maximum(root - lam_lo, 0.0)], axis=1)
    start = np.nan_to_num(start, posinf=0.0, neginf=0.0)
    p, dp = power(start)
    p0 = p[:, 0]
    parts = [[(start[b], p[b])] for b in range(Bn)]
    open_ = p0 > P
    if not np.any(open_):
        return np.zeros(Bn), p0, parts
    lo, p_lo, dp_lo = start[:, 1].copy(), p[:, 1].copy(), dp[:, 1].copy()
    hi, p_hi = start[:, 2].copy(), p[:, 2].copy()
    first = p_lo <= P  # the lower bound is already feasible: it is the answer
    hi[first], p_hi[first], lo[first], p_lo[first], dp_lo[first] = lo[first], p_lo[first], 0.0, p0[first], dp[first, 0]
    for _ in range(200):
        open_ &= (P - p_hi > power_tol) & (hi - lo > 4 * np.spacing(hi))
        if not np.any(open_):
            break
        with np.errstate(divide="ignore", invalid="ignore"):  # closed rows may divide by zero
            newton = np.clip(lo - (p_lo - P) / dp_lo, lo, hi)
            # aim the chord half a tolerance below budget so it lands strictly inside
            chord = np.clip(lo + (p_lo - P + 0.5 * power_tol) * (hi - lo) / (p_lo - p_hi), newton, hi)
        nus = np.stack([newton, 0.5 * (newton + chord), chord], axis=1)
        nus[~open_] = 0.0
        p, dp = power(nus)
        for b in np.flatnonzero(open_):
            parts[b].append((nus[b], p[b]))
        dn, dpw = np.diff(nus, axis=1), np.diff(p, axis=1)
        bad = ((dpw > 0) | ((dpw == 0) & (dn > 1e-12 * np.maximum(nus[:, 1:], 1.0)))) & open_[:, None]
        if np.any(bad):
            b, i = np.argwhere(bad)[0]
            raise SolverError("transmit power is not decreasing in nu",
                              {"bs": int(b), "nu": tuple(nus[b, i:i + 2]), "power": tuple(p[b, i:i + 2])})
        k = np.sum(p > P[:, None], axis=1)  # points 0..k-1 are infeasible, k.. feasible
        rows = np.arange(Bn)
        kl, kh = np.maximum(k - 1, 0), np.minimum(k, 2)
        up_lo, up_hi = open_ & (k > 0), open_ & (k < 3)
        lo = np.where(up_lo, nus[rows, kl], lo)
        p_lo = np.where(up_lo, p[rows, kl], p_lo)
        dp_lo = np.where(up_lo, dp[rows, kl], dp_lo)
        hi = np.where(up_hi, nus[rows, kh], hi)
        p_hi = np.where(up_hi, p[rows, kh], p_hi)
    needs = p0 > P
    return np.where(needs, hi, 0.0), np.where(needs, p_hi, p0), parts


def _check_monotone(trace):
    t = trace[np.argsort(trace[:, 0], kind="stable")]
    dn, dp = np.diff(t[:, 0]), np.diff(t[:, 1])
    bad = np.flatnonzero((dn > 0) & ~(dp < 0))
    if bad.size:
        i = int(bad[0])
        raise SolverError("transmit power is not decreasing in nu",
                          {"nu": tuple(t[i:i + 2, 0]), "power": tuple(t[i:i + 2, 1])})


def _gram(gt, G):
    """``Q_n = sum_i gt_{i,n} G_{i,n}^H`` per BS, Hermitized: (B, N, N_T, N_T)."""
    A = np.moveaxis(gt, 1, 3)  # (B, N, N_T, U, S)
    Bm = np.moveaxis(G, 1, 3)
    b, n, nt = A.shape[:3]
    Q = A.reshape(b, n, nt, -1) @ herm(Bm.reshape(b, n, nt, -1))
    return 0.5 * (Q + herm(Q))


def solve_tx_batch(G, theta, own, p_budget, power_tol: float = 1e-9):
    """Transmit beamformers of several BSs from their uplink effective channels.

    ``G[b, i, n] = H_{b,i,n}^H W_{i,n}`` for every user ``i``; ``own[b]`` lists
    the users BS ``b`` serves (equal counts).  Solves
    ``(Q_b + nu_b I) M = H^H W theta`` with ``nu_b`` set by the power budget;
    eigen-directions of ``Q_b`` below ``NULL_RCOND`` of its largest eigenvalue
    are dropped (pseudo-inverse).  Returns ``(tx, infos)``, ``tx`` of shape
    ``(B, U_b, N, N_T, S)``.
    """
    own = np.asarray(own, dtype=int)
    Bn, NT = G.shape[0], G.shape[3]
    p_budget = np.broadcast_to(np.asarray(p_budget, dtype=float), (Bn,))
    gt = G @ theta[None]  # (B, U, N, N_T, S)
    Q = _gram(gt, G)
    X = gt[np.arange(Bn)[:, None], own]  # (B, U_b, N, N_T, S)
    lam, V = np.linalg.eigh(Q)  # (B, N, N_T), (B, N, N_T, N_T)
    lam_max = np.maximum(lam.max(axis=(1, 2)), 0.0)
    keep = lam > NULL_RCOND * lam_max[:, None, None]
    Y = herm(V)[:, None] @ X
    Y = np.where(keep[:, None, :, :, None], Y, 0.0)
    a = np.sum(np.abs(Y) ** 2, axis=(1, 4))  # (B, N, N_T)
    lam_safe = np.where(keep, lam, 1.0)
    nu, _, parts = _bisect_nu(a.reshape(Bn, -1), lam_safe.reshape(Bn, -1), p_budget, power_tol)
    inv = np.where(keep, 1.0 / (lam_safe + nu[:, None, None]), 0.0)
    tx = V[:, None] @ (inv[:, None, :, :, None] * Y)
    if not np.all(np.isfinite(tx)):
        raise SolverError("non-finite transmit beamformer", {"nu": nu, "lam_max": lam_max})
    resid = (Q[:, None] + nu[:, None, None, None, None] * np.eye(NT)) @ tx - X
    power = np.sum(np.abs(tx) ** 2, axis=(1, 2, 3, 4))
    infos = [TxSolveInfo(float(nu[b]), float(power[b]), parts[b], float(np.max(np.abs(resid[b]), initial=0.0)))
             for b in range(Bn)]
    return tx, infos


def solve_tx_from_uplink(G, theta, own, p_budget: float, power_tol: float = 1e-9):
    """Single-BS form of :func:`solve_tx_batch`: ``G`` is ``(U, N, N_T, S)``."""
    tx, infos = solve_tx_batch(G[None], theta, np.asarray(own, dtype=int)[None], p_budget, power_tol)
    return tx[0], infos[0]


def solve_tx_beamformers(H, rx, theta, b: int, P_b: float, serving, power_tol: float = 1e-9):
    """Transmit beamformers for the users served by BS ``b``."""
    serving = np.asarray(serving)
    G = bf.uplink_effective(H[b:b + 1], rx)[0]
    return solve_tx_from_uplink(G, theta, np.flatnonzero(serving == b), P_b, power_tol)


# -- engine state ----------------------------------------------------------


@dataclass
class DualState:
    psi: np.ndarray  # (U, N)
    theta: np.ndarray  # (U, N, S, S)
    gamma: np.ndarray  # (U,)
    phi: np.ndarray  # (U,)
    nu: np.ndarray  # (B,)

    @classmethod
    def zeros(cls, U, N, S, B):
        return cls(np.zeros((U, N)), np.zeros((U, N, S, S), complex), np.zeros(U), np.zeros(U), np.zeros(B))

    def copy(self):
        return DualState(*(np.array(x, copy=True) for x in (self.psi, self.theta, self.gamma, self.phi, self.nu)))


@dataclass
class Problem:
    """One TTI worth of inputs to the engine."""

    H: np.ndarray  # (B, U, N, N_R, N_T)
    serving: np.ndarray  # (U,)
    p_budget: np.ndarray  # (B,)
    S: int
    sigma2: float = 1.0
    beta: np.ndarray | None = None
    r_min: np.ndarray | None = None  # per-user, engine rate units
    cap: np.ndarray | None = None  # per-user, engine rate units (inf = uncapped)
    active: np.ndarray | None = None

    def __post_init__(self):
        B, U, N, NR, NT = self.H.shape
        self.serving = np.asarray(self.serving, dtype=int)
        self.p_budget = np.broadcast_to(np.asarray(self.p_budget, dtype=float), (B,)).copy()
        if self.serving.shape != (U,) or self.serving.max(initial=0) >= B:
            raise ValueError("serving must map each user to a BS index")
        if self.S > min(NR, NT):
            raise ValueError("S must not exceed min(N_R, N_T)")
        self.beta = np.ones(U) if self.beta is None else np.asarray(self.beta, dtype=float)
        self.r_min = np.zeros(U) if self.r_min is None else np.asarray(self.r_min, dtype=float)
        self.cap = np.full(U, np.inf) if self.cap is None else np.asarray(self.cap, dtype=float)
        self.active = np.ones(U, bool) if self.active is None else np.asarray(self.active, dtype=bool)

    @property
    def dims(self):
        B, U, N, NR, NT = self.H.shape
        return B, U, N, NR, NT, self.S

    def served_users(self, b):
        return np.flatnonzero(self.serving == b)

    def usable(self) -> np.ndarray:
        """Active users with a non-zero serving channel."""
        own = self.H[self.serving, np.arange(self.H.shape[1])]
        return self.active & np.any(own != 0, axis=(1, 2, 3))


@dataclass(frozen=True)
class IterateSnapshot:
    outer: int
    inner: int
    r_hat: np.ndarray  # (U, N), surrogate rates of this iterate's beamformers
    rate: np.ndarray  # (U, N), achievable rates of the new transmit beamformers
    objective: float  # weighted sum of r_hat over usable users
    weighted_rate: float  # weighted sum of true rates over usable users
    constraint_violation: float
    power: np.ndarray  # (B,)
    nu: np.ndarray  # (B,)


@dataclass
class SolveResult:
    tx: np.ndarray
    rx: np.ndarray
    duals: DualState
    trace: list
    e: np.ndarray | None = None  # MSE of the last measured iterate
    e_ref: np.ndarray | None = None
    r_hat: np.ndarray | None = None
    converged: bool = False
    tx_info: list = field(default_factory=list)

    @property
    def beamformers(self):
        return bf.BeamformerSet(self.tx, self.rx)

    @property
    def objective(self) -> float:
        return self.trace[-1].objective if self.trace else 0.0

    @property
    def weighted_rate(self) -> float:
        return self.trace[-1].weighted_rate if self.trace else 0.0


# -- helpers shared with the message-passing nodes ---------------------------


def initial_tx(H_own: np.ndarray, n_active: int, p_budget: float, S: int) -> np.ndarray:
    """Matched-filter start: top-``S`` right singular vectors of each serving
    channel at an equal power split ``p_budget / (n_active N S)``.

    ``H_own`` is ``(U_b, N, N_R, N_T)``; rows of all-zero channels stay zero.
    """
    Ub, N, NR, NT = H_own.shape
    out = np.zeros((Ub, N, NT, S), complex)
    if n_active == 0:
        return out
    _, _, vh = np.linalg.svd(H_own)
    scale = math.sqrt(p_budget / (n_active * N * S))
    out[:] = herm(vh)[..., :S] * scale
    return out


def violation(rsum, r_min, cap, mask) -> float:
    v = np.maximum(r_min - rsum, 0.0)
    over = np.where(np.isinf(cap), 0.0, np.maximum(rsum - np.where(np.isinf(cap), 0.0, cap), 0.0))
    v = np.maximum(v, over)
    return float(np.max(v[mask])) if np.any(mask) else 0.0


def relative_spread(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return math.inf
    scale = max(float(np.max(np.abs(v))), 1e-12)
    return float(np.max(v) - np.min(v)) / scale


def _guard(value, what, **state):
    if not np.all(np.isfinite(value)):
        raise SolverError(f"{what} is not finite", state)


# -- the engine --------------------------------------------------------------


def run_centralized(problem: Problem, cfg: SolverConfig, duals: DualState | None = None,
                    baseline: bool | None = None) -> SolveResult:
    """Centralized primal-dual SCA with global CSI.

    ``duals`` warm-starts gamma / phi (theta always restarts from zero) and is
    updated in place.  With ``baseline`` (or ``cfg.mode == 'wmmse_baseline'``)
    every user with a non-zero channel is served, gamma = phi = 0 are frozen and
    rate targets / caps are ignored.
    """
    B, U, N, NR, NT, S = problem.dims
    if baseline is None:
        baseline = cfg.mode == "wmmse_baseline"
    if baseline:
        problem = Problem(problem.H, problem.serving, problem.p_budget, S, problem.sigma2,
                          problem.beta, np.zeros(U), np.full(U, np.inf), np.ones(U, bool))
    duals = DualState.zeros(U, N, S, B) if duals is None else duals
    if baseline:
        duals.gamma[:] = 0.0
        duals.phi[:] = 0.0
    duals.theta[:] = 0.0
    H, serving, sigma2 = problem.H, problem.serving, problem.sigma2
    usable = problem.usable()
    weights = np.where(usable, problem.beta, 0.0)

    tx = np.zeros((U, N, NT, S), complex)
    rx = np.zeros((U, N, NR, S), complex)
    if not np.any(usable):
        duals.psi[:] = 0.0
        duals.nu[:] = 0.0
        return SolveResult(tx, rx, duals, [], converged=True)

    for b in range(B):
        own = problem.served_users(b)
        act = own[usable[own]]
        tx[act] = initial_tx(H[b, act], act.size, problem.p_budget[b], S)

    F = bf.effective_channels(H, serving, tx)
    D, I = bf.split_effective(F)
    trace: list[IterateSnapshot] = []
    prev_outer = None
    e = e_ref = r_hat = None
    infos = []
    converged = False
    k_global = 0
    for outer in range(cfg.max_outer):
        rx = bf.mmse_from_effective(D, I, sigma2)
        e_ref = bf.mse_from_effective(D, I, rx, sigma2)
        objs = []
        for inner in range(cfg.max_inner):
            step = cfg.dual_step(k_global)
            duals.psi = np.where(usable[:, None], update_psi(weights, duals.gamma, duals.phi)[:, None], 0.0) \
                * np.ones((1, N))
            duals.theta = update_theta(duals.theta, duals.psi, e_ref, cfg.theta_step_at(k_global))
            G = bf.uplink_effective(H, rx)
            infos = _solve_all(G, duals.theta, problem, tx, cfg.power_tol)
            duals.nu = np.array([i.nu for i in infos])
            F = bf.effective_channels(H, serving, tx)
            D, I = bf.split_effective(F)
            e = bf.mse_from_effective(D, I, rx, sigma2)
            r_hat = np.where(usable[:, None], update_rhat(e, e_ref), 0.0)
            _guard(r_hat, "surrogate rate", outer=outer, inner=inner)
            if not baseline:
                g, p = update_gamma_phi(duals.gamma, duals.phi, r_hat.sum(axis=1), problem.r_min, problem.cap, step)
                duals.gamma = np.where(usable, g, duals.gamma)
                duals.phi = np.where(usable, p, duals.phi)
            e_ref = e
            rate = bf.rate_from_effective(D, I, sigma2)
            snap = _snapshot(outer, inner, r_hat, rate, weights, problem, usable, tx, duals)
            trace.append(snap)
            objs.append(snap.objective)
            k_global += 1
            if len(objs) >= 3 and relative_spread(objs[-3:]) < cfg.converge_tol:
                break
        wr = trace[-1].weighted_rate
        if prev_outer is not None and outer + 1 >= cfg.min_outer:
            if abs(wr - prev_outer) <= cfg.converge_tol * max(abs(wr), 1e-12):
                converged = True
                break
        prev_outer = wr
    return SolveResult(tx, rx, duals, trace, e, e_ref, r_hat, converged, infos)


def _solve_all(G, theta, problem, tx, power_tol):
    """Solve every BS, writing into ``tx``; batched when cells are equally loaded."""
    B = G.shape[0]
    counts = np.bincount(problem.serving, minlength=B)
    if np.all(counts == counts[0]):
        own = np.stack([problem.served_users(b) for b in range(B)])
        tx_all, infos = solve_tx_batch(G, theta, own, problem.p_budget, power_tol)
        tx[own] = tx_all
        return infos
    infos = []
    for b in range(B):
        own = problem.served_users(b)
        tx[own], info = solve_tx_from_uplink(G[b], theta, own, problem.p_budget[b], power_tol)
        infos.append(info)
    return infos


def _snapshot(outer, inner, r_hat, rate, weights, problem, usable, tx, duals):
    objective = float(np.sum(weights[:, None] * r_hat))
    weighted_rate = float(np.sum(weights[:, None] * rate))
    _guard(objective, "objective", outer=outer, inner=inner, gamma=duals.gamma.max(), phi=duals.phi.max())
    power = np.bincount(problem.serving, weights=np.sum(np.abs(tx) ** 2, axis=(1, 2, 3)),
                        minlength=problem.H.shape[0])
    viol = violation(r_hat.sum(axis=1), problem.r_min, problem.cap, usable)
    return IterateSnapshot(outer, inner, r_hat.copy(), rate.copy(), objective, weighted_rate,
                           viol, power, duals.nu.copy())


def run_wmmse_baseline(problem: Problem, cfg: SolverConfig) -> SolveResult:
    """Full-buffer weighted sum-rate maximization without rate targets or caps."""
    return run_centralized(problem, cfg, baseline=True)


def outer_final(trace) -> list[IterateSnapshot]:
    """Last snapshot of every outer (receiver) iteration."""
    out = {}
    for s in trace:
        out[s.outer] = s
    return [out[k] for k in sorted(out)]


def kkt_residuals(problem: Problem, result: SolveResult, cfg: SolverConfig) -> dict:
    """Residuals of the fixed-point conditions at the returned iterate.

    ``tightness``: |r_hat - taylor bound| with the bound evaluated at the MSE
    re-measured at the final beamformers, around the returned linearization
    point ``result.e_ref``; ``stationarity``: max entry of ``(Q + nu I) M - H^H W theta``;
    ``slackness``: max over BSs of ``nu (P - power)``.
    """
    B, U, N, NR, NT, S = problem.dims
    usable = problem.usable()
    if not np.any(usable):
        return {"tightness": 0.0, "stationarity": 0.0, "slackness": 0.0}
    D, I = bf.split_effective(bf.effective_channels(problem.H, problem.serving, result.tx))
    e_now = bf.mse_from_effective(D, I, result.rx, problem.sigma2)
    bound = bf.taylor_rate_bound(e_now[usable], result.e_ref[usable])
    tight = float(np.max(np.abs(result.r_hat[usable] - bound)))
    G = bf.uplink_effective(problem.H, result.rx)
    stat = 0.0
    slack = 0.0
    for b in range(B):
        own = problem.served_users(b)
        gt = G[b] @ result.duals.theta
        Q = _gram(gt[None], G[b][None])[0]
        nu = result.duals.nu[b]
        r = (Q[None] + nu * np.eye(NT)) @ result.tx[own] - gt[own]
        stat = max(stat, float(np.max(np.abs(r))))
        power = float(np.sum(np.abs(result.tx[own]) ** 2))
        slack = max(slack, abs(nu * (problem.p_budget[b] - power)))
    return {"tightness": tight, "stationarity": stat, "slackness": slack}
