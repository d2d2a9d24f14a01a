"""Time-correlated multicell MIMO channels and imperfect CSI.

Channels are i.i.d. Rayleigh in space and frequency, scaled by a log-distance
pathloss per (BS, user) link, and evolve across TTIs as a first-order
Gauss-Markov process.  All arrays use the layout ``h[b, u, n]`` with one
``(N_R, N_T)`` matrix per BS / user / sub-channel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ScenarioConfig


@dataclass
class ChannelState:
    h: np.ndarray  # (B, U, N, N_R, N_T) complex
    pathloss: np.ndarray  # (B, U) linear power gain
    tti: int = 0

    @property
    def shape(self):
        return self.h.shape


@dataclass
class CsiEstimate:
    h_hat: np.ndarray
    reliability: float
    pathloss: np.ndarray
    tti: int = 0

    @property
    def h(self):
        return self.h_hat


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def site_positions(B: int, isd: float) -> np.ndarray:
    """First ``B`` sites of a hexagonal lattice, spiralling out from the origin."""
    pts = [(0.0, 0.0)]
    ring = 1
    while len(pts) < B:
        for k in range(6):
            a0 = math.pi / 3 * k
            a1 = math.pi / 3 * (k + 1)
            c0 = np.array([math.cos(a0), math.sin(a0)]) * ring * isd
            c1 = np.array([math.cos(a1), math.sin(a1)]) * ring * isd
            for j in range(ring):
                p = c0 + (c1 - c0) * j / ring
                pts.append((float(p[0]), float(p[1])))
        ring += 1
    return np.array(pts[:B])


def drop_users(cfg: ScenarioConfig, rng: np.random.Generator):
    """Uniform user drops in a disc of radius ISD/2 around the serving site.

    Returns ``(bs_xy, ue_xy)``.
    """
    bs_xy = site_positions(cfg.B, cfg.isd_m)
    radius = cfg.isd_m / 2
    r_min = min(cfg.min_distance_m, radius)
    # area-uniform radius on the annulus [r_min, radius]
    r = np.sqrt(rng.uniform(r_min**2, radius**2, size=cfg.U))
    phi = rng.uniform(0, 2 * math.pi, size=cfg.U)
    ue_xy = bs_xy[cfg.serving_bs()] + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    return bs_xy, ue_xy


def pathloss_gains(cfg: ScenarioConfig, bs_xy: np.ndarray, ue_xy: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(bs_xy[:, None, :] - ue_xy[None, :, :], axis=-1)
    d = np.maximum(d, cfg.min_distance_m)
    loss_db = cfg.pathloss_ref_db + 10 * cfg.pathloss_exponent * np.log10(d)
    return 10 ** (-loss_db / 10)


def generate_channel(
    cfg: ScenarioConfig,
    rng: np.random.Generator,
    tti: int,
    previous: ChannelState | None = None,
    pathloss: np.ndarray | None = None,
) -> ChannelState:
    """Draw the channel for ``tti``.

    Without ``previous`` a fresh realization is drawn (and, if ``pathloss`` is
    not given, a fresh user drop).  With ``previous`` the Gauss-Markov update
    ``h_t = a h_{t-1} + sqrt(1 - a^2) w_t`` is applied, ``a`` being
    ``cfg.gauss_markov_coef``.
    """
    shape = (cfg.B, cfg.U, cfg.N, cfg.N_R, cfg.N_T)
    if previous is not None:
        if previous.h.shape != shape:
            raise ConfigError(f"previous channel has shape {previous.h.shape}, expected {shape}")
        pathloss = previous.pathloss
    elif pathloss is None:
        pathloss = pathloss_gains(cfg, *drop_users(cfg, rng))
    pathloss = np.asarray(pathloss, dtype=float)
    if pathloss.shape != (cfg.B, cfg.U) or np.any(pathloss <= 0):
        raise ConfigError("pathloss must be a positive (B, U) array")

    scale = np.sqrt(pathloss)[:, :, None, None, None]
    if previous is None:
        return ChannelState(scale * crandn(rng, shape), pathloss, tti)

    a = cfg.gauss_markov_coef
    if a == 1.0:
        return ChannelState(previous.h.copy(), pathloss, tti)
    innovation = scale * crandn(rng, shape)
    return ChannelState(a * previous.h + math.sqrt(1 - a * a) * innovation, pathloss, tti)


def corrupt_csi(ch: ChannelState, reliability: float, rng: np.random.Generator) -> CsiEstimate:
    """MMSE-style CSI error: ``h_hat = r h + sqrt(1 - r^2) g``.

    The error ``g`` has unit variance relative to the link's pathloss, i.e. it
    is unit-variance in the pathloss-normalized channel.
    """
    if not 0 <= reliability <= 1:
        raise ValueError(f"reliability must lie in [0, 1], got {reliability}")
    if reliability == 1:
        return CsiEstimate(ch.h.copy(), 1.0, ch.pathloss, ch.tti)
    scale = np.sqrt(ch.pathloss)[:, :, None, None, None]
    err = scale * crandn(rng, ch.h.shape)
    h_hat = reliability * ch.h + math.sqrt(1 - reliability**2) * err
    return CsiEstimate(h_hat, float(reliability), ch.pathloss, ch.tti)


def reliability_for_nmse(nmse: float) -> float:
    """Reliability giving normalized estimation MSE ``nmse`` (= 2 (1 - r))."""
    if not 0 <= nmse <= 2:
        raise ValueError("normalized MSE must lie in [0, 2]")
    return 1 - nmse / 2


def nmse_db_to_reliability(nmse_db: float) -> float:
    return reliability_for_nmse(10 ** (nmse_db / 10))


def dump_channel_csv(path, states) -> None:
    """Write channel states as rows ``(tti, b, u, n, row, col, re, im)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tti", "b", "u", "n", "row", "col", "re", "im"])
        for st in states:
            for idx in np.ndindex(st.h.shape):
                v = st.h[idx]
                w.writerow([st.tti, *idx, repr(float(v.real)), repr(float(v.imag))])
