"""Shared domain types, unit conversions and derived cell quantities.

All quantities are SI: metres, watts, hertz, bits/s, users per m^2.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Literal

import numpy as np

from .errors import ConfigError


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) / 1000.0


def watts_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w * 1000.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Physical and protocol constants of one cell.

    Defaults are the reference cell of the bundled scenario, in SI units.
    The noise PSD is the -174 dBm/Hz thermal floor and is configurable.
    """

    r_cell: float = 200.0
    L_d: float = 20.0
    L_w: float = 25.0
    P_C: float = dbm_to_watts(17.0)
    P_D: float = dbm_to_watts(10.0)
    P_W: float = dbm_to_watts(23.0)
    B_l: float = 40e6
    B_u: float = 500e6
    alpha: float = 4.0
    P_th_CU: float = dbm_to_watts(-62.0)
    P_th_DU: float = dbm_to_watts(-62.0)
    P_th_W: float = dbm_to_watts(-62.0)
    R_th_C: float = 100e6
    R_th_D: float = 100e6
    R_th_W: float = 54e6
    noise_psd: float = 3.98e-21  # -174 dBm/Hz
    tau: float = 0.01

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{f.name} must be a finite number, got {v!r}")
            if v <= 0:
                raise ConfigError(f"{f.name} must be strictly positive, got {v!r}")
        if self.L_d >= self.r_cell or self.L_w >= self.r_cell:
            raise ConfigError("L_d and L_w must be smaller than r_cell")
        if self.P_D >= self.P_C:
            raise ConfigError("P_D must be smaller than P_C")
        if not 2.0 < self.alpha <= 6.0:
            raise ConfigError(f"alpha must lie in (2, 6], got {self.alpha}")

    @property
    def S_cell(self) -> float:
        return math.pi * self.r_cell**2

    def with_(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class DensityVector:
    """Decision densities [lambda_C, lambda_D, lambda_CU, lambda_DU] plus the
    (fixed, non-decision) Wi-Fi AP density."""

    lambda_C: float = 0.0
    lambda_D: float = 0.0
    lambda_CU: float = 0.0
    lambda_DU: float = 0.0
    lambda_W: float = 0.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{f.name} must be finite and >= 0, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda_C, self.lambda_D, self.lambda_CU, self.lambda_DU])

    @classmethod
    def from_array(cls, x, lambda_W: float = 0.0) -> "DensityVector":
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]), float(lambda_W))

    def with_(self, **changes) -> "DensityVector":
        return replace(self, **changes)


RATE_FIELDS = ("R_C", "R_D", "R_CU", "R_DU", "R_W")
MAP_FIELDS = ("p_CU", "p_DU", "p_W")


@dataclass(frozen=True)
class ThroughputReport:
    R_C: float
    R_D: float
    R_CU: float
    R_DU: float
    R_W: float
    p_CU: float
    p_DU: float
    p_W: float
    R_total: float
    densities: DensityVector
    source: Literal["analytic", "montecarlo"] = "analytic"
    ci_halfwidth: dict = field(default_factory=dict)
    # montecarlo only: classes with no users in any trial
    absent: tuple = ()

    def recomputed_total(self, cfg: NetworkConfig) -> float:
        return total_from_rates(cfg, self.densities, self.R_C, self.R_D, self.R_CU, self.R_DU)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["densities"] = asdict(self.densities)
        d["absent"] = list(self.absent)
        return d


def total_from_rates(cfg: NetworkConfig, lam: DensityVector, R_C, R_D, R_CU, R_DU) -> float:
    return cfg.S_cell * (
        lam.lambda_C * R_C + lam.lambda_D * R_D + lam.lambda_CU * R_CU + lam.lambda_DU * R_DU
    )


@dataclass(frozen=True)
class Derived:
    S_cell: float
    K_l: float
    K_u: float
    B_l_sub: float
    B_u_sub: float
    sigma2_l: float
    sigma2_u: float
    sigma2_w: float


def derived_quantities(cfg: NetworkConfig, lam: DensityVector) -> Derived:
    """Subchannel counts, bandwidths and per-band noise powers.

    Subchannel counts are continuous and clamped below at one so that the
    subchannel bandwidth stays defined for an empty class.
    """
    S = cfg.S_cell
    K_l = max(1.0, lam.lambda_C * S)
    K_u = max(1.0, lam.lambda_CU * S)
    B_l_sub = cfg.B_l / K_l
    B_u_sub = cfg.B_u / K_u
    return Derived(
        S_cell=S,
        K_l=K_l,
        K_u=K_u,
        B_l_sub=B_l_sub,
        B_u_sub=B_u_sub,
        sigma2_l=cfg.noise_psd * B_l_sub,
        sigma2_u=cfg.noise_psd * B_u_sub,
        sigma2_w=cfg.noise_psd * cfg.B_u,
    )


def signaling_overhead(cfg: NetworkConfig, lam: DensityVector, M_si: float, M_sa: float) -> dict:
    """Control-channel message counts for unlicensed users (sensing reports
    and subchannel allocations)."""
    if M_si < 0 or M_sa < 0:
        raise ConfigError("message counts must be non-negative")
    n_unlicensed = (lam.lambda_CU + lam.lambda_DU) * cfg.S_cell
    return {"inform": M_si * n_unlicensed, "allocate": M_sa * n_unlicensed}
