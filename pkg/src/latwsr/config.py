"""Scenario, traffic and solver parameters.

Defaults follow the evaluation setup used throughout the package: 35 dBm per
BS, 180 kHz sub-channels, 1 ms TTIs, xi = 0.05, d_max = 20 TTIs, 9600-bit
mean packets and a 250 m inter-site distance.

Configs can be loaded from a TOML file with ``[scenario]``, ``[traffic]`` and
``[solver]`` sections; every dataclass field is a valid key.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class PoissonTrafficParams:
    lam: float = 0.07  # packets per TTI per user
    mean_size_bits: float = 9600.0
    kind: str = "poisson"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.mean_size_bits <= 0:
            raise ConfigError("mean_size_bits must be positive")

    # Inputs to the minimum-rate transform.
    @property
    def qos_lambda(self) -> float:
        return self.lam

    @property
    def qos_mean_size_bits(self) -> float:
        return self.mean_size_bits


@dataclass
class BurstyTrafficParams:
    """Semi-Markov ON-OFF source: Pareto ON periods, exponential OFF periods.

    ``off_rate`` is the rate (per TTI) of the exponential OFF duration, so the
    mean OFF period is ``1 / off_rate`` TTIs.
    """

    pareto_shape: float = 2.0
    pareto_scale: float = 10.0
    off_rate: float = 0.01
    burst_packet_bits: float = 1600.0
    kind: str = "bursty"

    def __post_init__(self):
        if self.pareto_shape <= 1:
            raise ConfigError("pareto_shape must be > 1")
        if self.pareto_scale < 1:
            raise ConfigError("pareto_scale must be >= 1 TTI")
        if self.off_rate <= 0 or self.burst_packet_bits <= 0:
            raise ConfigError("off_rate and burst_packet_bits must be positive")

    # One packet per TTI while ON.
    @property
    def qos_lambda(self) -> float:
        return 1.0

    @property
    def qos_mean_size_bits(self) -> float:
        return self.burst_packet_bits


@dataclass
class SolverConfig:
    """Primal-dual SCA engine settings.

    ``step_size`` drives the dual (gamma, phi) subgradient steps and, unless
    ``theta_step`` is given, also the theta smoothing step.
    """

    step_size: float = 0.01
    max_outer: int = 5
    max_inner: int = 10
    power_tol: float = 1e-9
    converge_tol: float = 1e-5
    mode: str = "proposed"  # proposed | wmmse_baseline
    theta_step: float | None = None
    diminishing: bool = False
    min_outer: int = 1

    def __post_init__(self):
        if not 0 < self.step_size < 1:
            raise ConfigError("step_size must lie in (0, 1)")
        if self.theta_step is not None and not 0 < self.theta_step <= 1:
            raise ConfigError("theta_step must lie in (0, 1]")
        if self.power_tol <= 0 or self.converge_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration caps must be >= 1")
        if self.mode not in ("proposed", "wmmse_baseline"):
            raise ConfigError(f"unknown solver mode {self.mode!r}")

    def dual_step(self, k: int) -> float:
        if self.diminishing:
            return self.step_size / math.sqrt(k + 1)
        return self.step_size

    def theta_step_at(self, k: int) -> float:
        if self.theta_step is not None:
            return self.theta_step
        return self.dual_step(k)


ALGORITHMS = ("centralized", "decentralized", "wmmse_baseline")


@dataclass
class ScenarioConfig:
    B: int = 4
    U_b: int = 4
    N: int = 4
    N_T: int = 8
    N_R: int = 2
    S: int | None = None  # defaults to min(N_R, N_T)
    p_dbm: float = 35.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    beta: list[float] | None = None  # per-user weights, or one entry per BS slot
    d_max: int = 20
    xi: float = 0.05
    tti_s: float = 1e-3
    subchannel_bw_hz: float = 180e3
    traffic: PoissonTrafficParams | BurstyTrafficParams = field(default_factory=PoissonTrafficParams)
    csi_reliability: float = 1.0
    seeds: list[int] = field(default_factory=lambda: [0])
    ttis: int = 300
    algorithm: str = "decentralized"
    solver: SolverConfig = field(default_factory=SolverConfig)
    # geometry and propagation
    isd_m: float = 250.0
    min_distance_m: float = 10.0
    # Loss at 1 m. 65 dB folds penetration and shadowing margins into a single
    # log-distance term; at 35 dBm the per-antenna SNR at the cell edge is about 3 dB.
    pathloss_ref_db: float = 65.0
    pathloss_exponent: float = 3.76
    speed_kmh: float = 3.0
    carrier_hz: float = 2e9
    time_corr: float | None = None  # Gauss-Markov coefficient; None -> Jakes J0(2 pi f_d T)
    continue_on_infeasible: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.S is None:
            self.S = min(self.N_R, self.N_T)
        for name in ("B", "U_b", "N", "N_T", "N_R", "S", "d_max", "ttis"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.S > min(self.N_R, self.N_T):
            raise ConfigError("S must not exceed min(N_R, N_T)")
        if not 0 < self.xi < 1:
            raise ConfigError("xi must lie in (0, 1)")
        if not 0 <= self.csi_reliability <= 1:
            raise ConfigError("csi_reliability must lie in [0, 1]")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.time_corr is not None and not 0 <= self.time_corr <= 1:
            raise ConfigError("time_corr must lie in [0, 1]")
        if self.beta is not None and len(self.beta) not in (self.U, self.U_b):
            raise ConfigError(f"beta needs {self.U} or {self.U_b} entries")
        if self.beta is not None and min(self.beta) <= 0:
            raise ConfigError("user weights must be positive")

    @property
    def U(self) -> int:
        return self.B * self.U_b

    @property
    def p_watts(self) -> float:
        return 10 ** ((self.p_dbm - 30) / 10)

    @property
    def sigma2(self) -> float:
        """Noise power per sub-channel in watts."""
        dbm = self.noise_psd_dbm_hz + 10 * math.log10(self.subchannel_bw_hz) + self.noise_figure_db
        return 10 ** ((dbm - 30) / 10)

    @property
    def bits_per_rate_unit(self) -> float:
        """Bits delivered in one TTI by 1 bit/s/Hz on one sub-channel."""
        return self.subchannel_bw_hz * self.tti_s

    @property
    def gauss_markov_coef(self) -> float:
        if self.time_corr is not None:
            return self.time_corr
        from scipy.special import j0

        f_d = self.speed_kmh / 3.6 * self.carrier_hz / 299_792_458.0
        return float(j0(2 * math.pi * f_d * self.tti_s))

    def serving_bs(self):
        import numpy as np

        return np.repeat(np.arange(self.B), self.U_b)

    def user_weights(self):
        """Weights per user. A U_b-long list repeats across cells."""
        import numpy as np

        if self.beta is None:
            return np.ones(self.U)
        w = np.asarray(self.beta, dtype=float)
        if w.size == self.U_b and self.U != self.U_b:
            w = np.tile(w, self.B)
        return w

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def _traffic_from_dict(d: dict[str, Any]):
    d = dict(d)
    kind = d.pop("kind", "poisson")
    if kind == "poisson":
        return PoissonTrafficParams(**d)
    if kind == "bursty":
        return BurstyTrafficParams(**d)
    raise ConfigError(f"unknown traffic kind {kind!r}")


def config_from_dict(d: dict[str, Any]) -> ScenarioConfig:
    d = dict(d)
    scenario = dict(d.pop("scenario", {}))
    traffic = d.pop("traffic", None)
    solver = d.pop("solver", None)
    if d:
        raise ConfigError(f"unknown config sections: {sorted(d)}")
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(scenario) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        if traffic is not None:
            scenario["traffic"] = _traffic_from_dict(traffic)
        if solver is not None:
            scenario["solver"] = SolverConfig(**solver)
        return ScenarioConfig(**scenario)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomli.load(fh))


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    d = dataclasses.asdict(cfg)
    return {
        "traffic": d.pop("traffic"),
        "solver": {k: v for k, v in d.pop("solver").items() if v is not None},
        "scenario": {k: v for k, v in d.items() if v is not None},
    }
