"""Per-class throughput of the two-band network by numerical quadrature.

Every class rate is a bandwidth prefactor times

    vartheta = int_0^inf e^{-s sigma2}/ln2 * Ybar(s) * Rbar(s) ds

where Ybar is the receiver-position average of an interference kernel K(s, y)
(a product of PPP Laplace factors Q and, for D2D receivers, the factor of the
single co-channel LTE user) and Rbar is the link-length average of
1/(s + r^alpha/P).

Both inner averages reduce to the disk exponent

    G(t, l) = int over the cell disk of  x / (1 + H^{alpha/2}/t)  dx dtheta,

with the interferers at (x, theta), a receiver at distance l from the centre,
and t = sP.  G is evaluated in receiver-centred polar coordinates, where the
radial integral has a closed form, so only the angle needs quadrature.
Q = exp(-lambda G) and A1 = 1 - G/S_cell.

The s, y and angle grids are fixed per configuration and refinement level and
cached, so once the G tables exist a throughput evaluation is a handful of
vectorised exp/dot operations.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy import special

from .errors import NumericalFailure
from .mac import MapSet, compute_maps
from .model import (
    DensityVector,
    NetworkConfig,
    ThroughputReport,
    derived_quantities,
    total_from_rates,
)
from .quadrature import gauss_panels

LN2 = math.log(2.0)
DEFAULT_TOL = 1e-4
MAX_LEVEL = 5

# s-grid: panels of width 2^(1-level) in u = ln s, anchored at u = 0, with
# GAUSS_S nodes each; the grid starts where s P / L^alpha = S_LO_REL and ends
# where e^{-s sigma2} = e^{-S_HI_EXP}
GAUSS_S = 8
S_LO_REL = 1e-12
S_HI_EXP = 60.0
# receiver-position grid in v = (y/R)^2, graded toward the cell edge
V_BREAKS = (0.0, 0.5, 0.75, 0.9, 0.97, 1.0)
GAUSS_V0 = 4
GAUSS_PHI = 16


# ---------------------------------------------------------------------------
# geometry primitives

def hcore_dist_sq(x, theta, l):
    """Squared distance between a point at polar (x, theta) and a point at
    distance l on the theta = 0 axis."""
    out = np.asarray(x) ** 2 + np.asarray(l) ** 2 - 2.0 * np.asarray(x) * np.asarray(l) * np.cos(theta)
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def radial_partial(rho, t, alpha: float):
    """int_0^rho x / (1 + x^alpha / t) dx, broadcasting over rho and t."""
    rho = np.asarray(rho, dtype=float)
    t = np.asarray(t, dtype=float)
    if alpha == 4.0:
        st = np.sqrt(t)
        return 0.5 * st * np.arctan(rho * rho / st)
    d = 2.0 / alpha
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        z = rho**alpha / t
        frac = np.where(np.isinf(z), 1.0, z / (1.0 + z))
    return t**d * (d * math.pi / (2.0 * math.sin(math.pi * d))) * special.betainc(d, 1.0 - d, frac)


def _radial_full(t, alpha: float):
    """Limit of radial_partial as rho -> infinity."""
    d = 2.0 / alpha
    return np.asarray(t, dtype=float) ** d * (d * math.pi / (2.0 * math.sin(math.pi * d)))


@lru_cache(maxsize=512)
def _phi_rule(l_over_R: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Angle nodes on [0, pi] graded around pi/2, where the chord length to the
    disk boundary changes fastest when the receiver sits near the edge."""
    w = max(math.sqrt(max(1.0 - l_over_R * l_over_R, 0.0)), 1e-9)
    half = math.pi / 2.0
    breaks = {0.0, half, math.pi}
    k = w
    while k < half:
        breaks.add(half - k)
        breaks.add(half + k)
        k *= 3.0
    nodes, weights = gauss_panels(sorted(breaks), n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def disk_exponent(t, l: float, R: float, alpha: float, n: int = GAUSS_PHI) -> np.ndarray:
    """G(t, l) for a vector of t = sP values and one receiver offset l <= R."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if l < 0 or l > R * (1 + 1e-12):
        raise ValueError(f"receiver offset {l} outside [0, {R}]")
    if l == 0.0:
        return 2.0 * math.pi * radial_partial(R, t, alpha)
    phi, w = _phi_rule(min(l / R, 1.0), n)
    rmax = np.sqrt(np.maximum(R * R - (l * np.sin(phi)) ** 2, 0.0)) - l * np.cos(phi)
    return 2.0 * (w @ radial_partial(rmax[:, None], t[None, :], alpha))


def _disk_exponent_checked(t: float, l: float, cfg: NetworkConfig, what: str) -> float:
    a = float(disk_exponent(t, l, cfg.r_cell, cfg.alpha)[0])
    b = float(disk_exponent(t, l, cfg.r_cell, cfg.alpha, n=GAUSS_PHI + 8)[0])
    if abs(a - b) > 1e-9 * max(abs(b), 1e-300):
        raise NumericalFailure(what, b, abs(a - b))
    return b


def laplace_factor_Q(s: float, lam: float, P: float, l: float, cfg: NetworkConfig) -> float:
    """E exp(-s I) for a PPP of density lam, power P, over the cell disk,
    seen by a receiver at distance l from the centre."""
    if s < 0 or lam < 0 or P <= 0:
        raise ValueError("need s >= 0, lam >= 0, P > 0")
    if lam == 0.0 or s == 0.0:
        return 1.0
    return math.exp(-lam * _disk_exponent_checked(s * P, l, cfg, "Q disk integral"))


def single_lte_factor_A1(s: float, y: float, cfg: NetworkConfig) -> float:
    """E 1/(1 + s P_C d^-alpha) for one LTE interferer uniform in the cell and
    a receiver at distance y from the centre."""
    if s < 0:
        raise ValueError("s must be >= 0")
    if s == 0.0:
        return 1.0
    G = _disk_exponent_checked(s * cfg.P_C, y, cfg, "A1 disk integral")
    return min(1.0, max(0.0, 1.0 - G / cfg.S_cell))


def gated_lte_factor_A2(s: float, y: float, p_CU: float, cfg: NetworkConfig) -> float:
    if not 0.0 <= p_CU <= 1.0:
        raise ValueError("p_CU must lie in [0, 1]")
    if p_CU == 0.0:
        return 1.0
    return p_CU * single_lte_factor_A1(s, y, cfg) + (1.0 - p_CU)


# ---------------------------------------------------------------------------
# weights and kernels

@dataclass(frozen=True)
class RadialWeight:
    """Distribution of a distance: a point mass at zero, or the distance of a
    uniform point in a disk, f(r) = 2r/radius^2."""

    kind: Literal["dirac", "uniform"]
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirac", "uniform"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "uniform" and not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("uniform weight needs a positive radius")

    @classmethod
    def dirac(cls) -> "RadialWeight":
        return cls("dirac")

    @classmethod
    def uniform(cls, radius: float) -> "RadialWeight":
        return cls("uniform", float(radius))

    def pdf(self, r):
        if self.kind == "dirac":
            raise ValueError("point mass has no density")
        r = np.asarray(r, dtype=float)
        return np.where((r >= 0) & (r <= self.radius), 2.0 * r / self.radius**2, 0.0)


@dataclass(frozen=True)
class InterferenceKernel:
    """K(s, y) = (c A1 + 1 - c) * prod_i Q(lam_i, P_i, y).

    `q_terms` holds (density, power) pairs of PPP interferer sets over the
    cell; `lte_presence` = c is the probability that the single co-channel
    LTE user of the subchannel transmits (0 drops the factor).
    """

    q_terms: tuple = ()
    lte_presence: float = 0.0

    def __post_init__(self):
        for lam, P in self.q_terms:
            if lam < 0 or P <= 0:
                raise ValueError("kernel terms need density >= 0 and power > 0")
        if not 0.0 <= self.lte_presence <= 1.0:
            raise ValueError("lte_presence must lie in [0, 1]")

    def __call__(self, s: float, y: float, cfg: NetworkConfig) -> float:
        val = 1.0
        if self.lte_presence > 0.0:
            val = gated_lte_factor_A2(s, y, self.lte_presence, cfg)
        for lam, P in self.q_terms:
            val *= laplace_factor_Q(s, lam, P, y, cfg)
        return val

    def active_terms(self) -> tuple:
        return tuple((lam, P) for lam, P in self.q_terms if lam > 0.0)


# ---------------------------------------------------------------------------
# cached quadrature plan

class _Plan:
    """Nodes and lazily built G tables for one (config, level, s-range)."""

    def __init__(self, cfg: NetworkConfig, level: int, u_lo: float, u_hi: float):
        self.cfg = cfg
        self.level = level
        h = 2.0 ** (1 - level)
        breaks = np.arange(u_lo, u_hi + 0.5 * h, h)
        u, wu = gauss_panels(breaks, GAUSS_S)
        self.s = np.exp(u)
        self.ws = wu * self.s
        self.s_lo = math.exp(u_lo)
        v, wv = gauss_panels(V_BREAKS, GAUSS_V0 * 2**level)
        self.v = v
        self.wv = wv
        self._tables: dict = {}
        self._lock = threading.Lock()

    def _get(self, key, build):
        tab = self._tables.get(key)
        if tab is None:
            tab = build()
            tab.setflags(write=False)
            with self._lock:
                self._tables.setdefault(key, tab)
        return tab

    def G0(self, P: float) -> np.ndarray:
        cfg = self.cfg
        return self._get(("G0", P), lambda: 2.0 * math.pi * radial_partial(cfg.r_cell, self.s * P, cfg.alpha))

    def G(self, P: float, radius: float) -> np.ndarray:
        """(n_s, n_v) table of G(sP, y_v) with y_v = radius sqrt(v)."""
        cfg = self.cfg

        def build():
            ys = radius * np.sqrt(self.v)
            cols = [disk_exponent(self.s * P, min(y, cfg.r_cell), cfg.r_cell, cfg.alpha) for y in ys]
            return np.stack(cols, axis=1)

        return self._get(("G", P, radius), build)

    def radial(self, P: float, L: float) -> np.ndarray:
        """Rbar(s) = int f(r)/(s + r^alpha/P) dr for f uniform on [0, L]."""
        cfg = self.cfg
        return self._get(("R", P, L), lambda: 2.0 / (self.s * L * L) * radial_partial(L, self.s * P, cfg.alpha))


def _bucket_lo(u: float) -> float:
    return 8.0 * math.floor(u / 8.0)


def _bucket_hi(u: float) -> float:
    return 8.0 * math.ceil(u / 8.0)


@lru_cache(maxsize=64)
def _plan(cfg: NetworkConfig, level: int, u_lo: float, u_hi: float) -> _Plan:
    return _Plan(cfg, level, u_lo, u_hi)


def clear_caches() -> None:
    _plan.cache_clear()


def _kernel_average(plan: _Plan, K: InterferenceKernel, g: RadialWeight) -> np.ndarray:
    cfg = plan.cfg
    c = K.lte_presence
    terms = K.active_terms()
    if g.kind == "dirac":
        expo = np.zeros_like(plan.s)
        for lam, P in terms:
            expo += lam * plan.G0(P)
        val = np.exp(-expo)
        if c > 0.0:
            val *= c * np.clip(1.0 - plan.G0(cfg.P_C) / cfg.S_cell, 0.0, 1.0) + 1.0 - c
        return val
    expo = np.zeros((plan.s.size, plan.v.size))
    for lam, P in terms:
        expo += lam * plan.G(P, g.radius)
    val = np.exp(-expo)
    if c > 0.0:
        val *= c * np.clip(1.0 - plan.G(cfg.P_C, g.radius) / cfg.S_cell, 0.0, 1.0) + 1.0 - c
    return val @ plan.wv


def _vartheta_at(plan: _Plan, P: float, K: InterferenceKernel, g: RadialWeight,
                 f: RadialWeight, sigma2: float) -> float:
    alpha = plan.cfg.alpha
    Y = _kernel_average(plan, K, g)
    Rb = plan.radial(P, f.radius)
    body = float(np.sum(plan.ws * np.exp(-plan.s * sigma2) * Y * Rb))
    # below s_lo the kernel and noise factors are flat and F(L; sP) ~ c (sP)^delta
    d = 2.0 / alpha
    s0 = plan.s_lo
    tail = Y[0] * 2.0 * float(_radial_full(P, alpha)) / (f.radius**2) * s0**d / d
    return (body + tail) / LN2


def _s_range(cfg: NetworkConfig, P: float, f: RadialWeight, sigma2: float) -> tuple[float, float]:
    lo = min(
        math.log(S_LO_REL * L**cfg.alpha / p)
        for L in (cfg.L_d, cfg.L_w, cfg.r_cell, f.radius)
        for p in (cfg.P_C, cfg.P_D, cfg.P_W, P)
    )
    hi = math.log(S_HI_EXP / sigma2)
    return _bucket_lo(lo), _bucket_hi(max(hi, lo + 8.0))


def vartheta(P: float, K: InterferenceKernel, g: RadialWeight, f: RadialWeight, sigma2: float,
             cfg: NetworkConfig, *, tol: float = DEFAULT_TOL, level: int | None = None) -> float:
    """Spectral efficiency (bit/s/Hz) of a Rayleigh link with transmit power P,
    link length ~ f, receiver offset ~ g and interference kernel K.

    With `level=None` the grids are refined until two successive levels agree
    to `tol` (relative); a fixed `level` skips the check, which keeps the value
    a smooth function of the densities for finite differences.
    """
    if P <= 0:
        raise ValueError("P must be positive")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if f.kind != "uniform":
        raise ValueError("the link-length weight must be a uniform disk")
    u_lo, u_hi = _s_range(cfg, P, f, sigma2)
    if level is not None:
        return _vartheta_at(_plan(cfg, level, u_lo, u_hi), P, K, g, f, sigma2)
    prev = cur = _vartheta_at(_plan(cfg, 0, u_lo, u_hi), P, K, g, f, sigma2)
    for lev in range(1, MAX_LEVEL + 1):
        cur = _vartheta_at(_plan(cfg, lev, u_lo, u_hi), P, K, g, f, sigma2)
        if abs(cur - prev) <= tol * abs(cur):
            return cur
        prev = cur
    raise NumericalFailure("vartheta s-integral", cur, abs(cur - prev), f"after level {MAX_LEVEL}")


# ---------------------------------------------------------------------------
# class throughputs

def _self_excluded(lam: float, S: float) -> float:
    # the tagged user is part of its own class; clamp when the class is sparse
    return max(0.0, lam - 1.0 / S)


def lte_kernel(lam: DensityVector, cfg: NetworkConfig) -> InterferenceKernel:
    d = derived_quantities(cfg, lam)
    return InterferenceKernel(((lam.lambda_D / d.K_l, cfg.P_D),))


def d2d_kernel(lam: DensityVector, cfg: NetworkConfig) -> InterferenceKernel:
    d = derived_quantities(cfg, lam)
    # fewer LTE users than one per subchannel: the co-channel user exists with
    # probability lambda_C S (identical to the one-user factor once K_l >= 1)
    presence = min(1.0, lam.lambda_C * d.S_cell)
    return InterferenceKernel(((_self_excluded(lam.lambda_D, d.S_cell) / d.K_l, cfg.P_D),), presence)


def lteu_kernel(lam: DensityVector, maps: MapSet, cfg: NetworkConfig) -> InterferenceKernel:
    d = derived_quantities(cfg, lam)
    return InterferenceKernel((
        (maps.p_DU * lam.lambda_DU / d.K_u, cfg.P_D),
        (maps.p_W * lam.lambda_W, cfg.P_W),
    ))


def d2du_kernel(lam: DensityVector, maps: MapSet, cfg: NetworkConfig) -> InterferenceKernel:
    d = derived_quantities(cfg, lam)
    presence = maps.p_CU * min(1.0, lam.lambda_CU * d.S_cell)
    return InterferenceKernel((
        (maps.p_DU * _self_excluded(lam.lambda_DU, d.S_cell) / d.K_u, cfg.P_D),
        (maps.p_W * lam.lambda_W, cfg.P_W),
    ), presence)


def wifi_kernel(lam: DensityVector, maps: MapSet, cfg: NetworkConfig) -> InterferenceKernel:
    S = cfg.S_cell
    return InterferenceKernel((
        (maps.p_CU * lam.lambda_CU, cfg.P_C),
        (maps.p_DU * lam.lambda_DU, cfg.P_D),
        (maps.p_W * _self_excluded(lam.lambda_W, S), cfg.P_W),
    ))


def throughput_lte(lam: DensityVector, cfg: NetworkConfig, *, tol: float = DEFAULT_TOL,
                   level: int | None = None) -> float:
    d = derived_quantities(cfg, lam)
    eff = vartheta(cfg.P_C, lte_kernel(lam, cfg), RadialWeight.dirac(), RadialWeight.uniform(cfg.r_cell),
                   d.sigma2_l, cfg, tol=tol, level=level)
    return d.B_l_sub * eff


def throughput_d2d(lam: DensityVector, cfg: NetworkConfig, *, tol: float = DEFAULT_TOL,
                   level: int | None = None) -> float:
    d = derived_quantities(cfg, lam)
    eff = vartheta(cfg.P_D, d2d_kernel(lam, cfg), RadialWeight.uniform(cfg.r_cell), RadialWeight.uniform(cfg.L_d),
                   d.sigma2_l, cfg, tol=tol, level=level)
    return d.B_l_sub * eff


def throughput_lteu(lam: DensityVector, maps: MapSet, cfg: NetworkConfig, *, tol: float = DEFAULT_TOL,
                    level: int | None = None) -> float:
    d = derived_quantities(cfg, lam)
    eff = vartheta(cfg.P_C, lteu_kernel(lam, maps, cfg), RadialWeight.dirac(), RadialWeight.uniform(cfg.r_cell),
                   d.sigma2_u, cfg, tol=tol, level=level)
    return maps.p_CU * d.B_u_sub * eff


def throughput_d2du(lam: DensityVector, maps: MapSet, cfg: NetworkConfig, *, tol: float = DEFAULT_TOL,
                    level: int | None = None) -> float:
    d = derived_quantities(cfg, lam)
    eff = vartheta(cfg.P_D, d2du_kernel(lam, maps, cfg), RadialWeight.uniform(cfg.r_cell),
                   RadialWeight.uniform(cfg.L_d), d.sigma2_u, cfg, tol=tol, level=level)
    return maps.p_DU * d.B_u_sub * eff


def throughput_wifi(lam: DensityVector, maps: MapSet, cfg: NetworkConfig, *, tol: float = DEFAULT_TOL,
                    level: int | None = None) -> float:
    d = derived_quantities(cfg, lam)
    eff = vartheta(cfg.P_W, wifi_kernel(lam, maps, cfg), RadialWeight.uniform(cfg.r_cell),
                   RadialWeight.uniform(cfg.L_w), d.sigma2_w, cfg, tol=tol, level=level)
    return maps.p_W * cfg.B_u * eff


def analytic_report(lam: DensityVector, cfg: NetworkConfig, *, tol: float = DEFAULT_TOL,
                    level: int | None = None) -> ThroughputReport:
    maps = compute_maps(lam, cfg)
    kw = dict(tol=tol, level=level)
    R_C = throughput_lte(lam, cfg, **kw)
    R_D = throughput_d2d(lam, cfg, **kw)
    R_CU = throughput_lteu(lam, maps, cfg, **kw)
    R_DU = throughput_d2du(lam, maps, cfg, **kw)
    R_W = throughput_wifi(lam, maps, cfg, **kw)
    return ThroughputReport(
        R_C=R_C, R_D=R_D, R_CU=R_CU, R_DU=R_DU, R_W=R_W,
        p_CU=maps.p_CU, p_DU=maps.p_DU, p_W=maps.p_W,
        R_total=total_from_rates(cfg, lam, R_C, R_D, R_CU, R_DU),
        densities=lam,
        source="analytic",
        ci_halfwidth={k: 0.0 for k in ("R_C", "R_D", "R_CU", "R_DU", "R_W")},
    )


def required_level(lam: DensityVector, cfg: NetworkConfig, tol: float = DEFAULT_TOL) -> int:
    """Smallest grid level whose five class rates agree with the next level to tol."""
    prev = cur = analytic_report(lam, cfg, level=0)
    worst = math.inf
    for lev in range(1, MAX_LEVEL + 1):
        cur = analytic_report(lam, cfg, level=lev)
        worst = max(abs(getattr(cur, k) - getattr(prev, k)) / max(abs(getattr(cur, k)), 1.0)
                    for k in ("R_C", "R_D", "R_CU", "R_DU", "R_W"))
        if worst <= tol:
            return lev
        prev = cur
    raise NumericalFailure("vartheta s-integral", cur.R_total, worst, f"after level {MAX_LEVEL}")


def total_throughput(lam: DensityVector, cfg: NetworkConfig, *, tol: float = DEFAULT_TOL,
                     level: int | None = None) -> float:
    """Sum rate (bits/s) of the cell's LTE, D2D, LTE-U and D2D-U users; Wi-Fi
    is not part of the objective."""
    if lam.lambda_C == lam.lambda_D == lam.lambda_CU == lam.lambda_DU == 0.0:
        return 0.0
    return analytic_report(lam, cfg, tol=tol, level=level).R_total
