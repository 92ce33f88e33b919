"""Medium-access probabilities of contending unlicensed users.

Contention winners are modelled as a hard-core thinning of the contender
PPPs: a node transmits when the power it senses from contenders with an
earlier back-off expiry stays below its energy-detection threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .model import DensityVector, NetworkConfig, derived_quantities
from .errors import NumericalFailure
from .quadrature import gauss_panels, oscillatory_halfline


@dataclass(frozen=True)
class MapSet:
    p_CU: float
    p_DU: float
    p_W: float
    lambda_act_CU: float
    lambda_act_DU: float
    lambda_act_W: float


def idle_fraction(b: np.ndarray, alpha: float) -> np.ndarray:
    """int_0^1 exp(-b * eps**(-alpha/2)) d(eps), evaluated in closed form.

    Substituting u = eps**(-alpha/2) turns the integral into an upper
    incomplete gamma function with negative order, which the recurrence
    Gamma(a, b) = (Gamma(a+1, b) - b**a e**-b) / a brings back to order
    1 - 2/alpha in (0, 1).
    """
    b = np.asarray(b, dtype=float)
    a1 = 1.0 - 2.0 / alpha
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        out = np.exp(-b) - b ** (2.0 / alpha) * special.gamma(a1) * special.gammaincc(a1, b)
    out = np.where(b <= 0.0, 1.0, out)
    out = np.where(np.isinf(b), 0.0, out)
    return np.clip(out, 0.0, 1.0)


def log_idle_fraction(b: np.ndarray, alpha: float) -> np.ndarray:
    """log of idle_fraction, switching to the large-b asymptotic series
    (1/beta) e**-b / b * (1 - c1/b + c1 c2/b**2 - ...) where it would underflow."""
    b = np.asarray(b, dtype=float)
    beta = alpha / 2.0
    big = b >= 50.0
    out = np.empty_like(b)
    with np.errstate(divide="ignore"):
        out[~big] = np.log(idle_fraction(b[~big], alpha))
    bb = b[big]
    c1 = 1.0 / beta + 1.0
    series = 1.0 - c1 / bb + c1 * (c1 + 1) / bb**2 - c1 * (c1 + 1) * (c1 + 2) / bb**3
    out[big] = -bb - np.log(beta * bb) + np.log(series)
    return out


def _kernel_raw(P_th: float, weighted_density: float, alpha: float) -> float:
    S = math.sin(2.0 * math.pi / alpha)
    C = math.cos(2.0 * math.pi / alpha)
    beta = alpha / 2.0
    # exponent of the inner integrand is b(z) * eps**(-alpha/2), b = P_th (z*scale)**beta
    scale = alpha * S / (2.0 * math.pi**2 * weighted_density)
    half_period = math.pi / S
    z_cut = (1.0 / P_th) ** (1.0 / beta) / scale     # b(z_cut) = 1
    z_end = 60.0 ** (1.0 / beta) * z_cut             # envelope < e**-60 beyond

    def integrand(z):
        z = np.asarray(z, dtype=float)
        b = P_th * (z * scale) ** beta
        return np.sin(z * S) / z * np.exp(-z * C + log_idle_fraction(b, alpha))

    if C < 0:
        # exp(-zC) grows until the envelope takes over; the result is O(1), so a
        # large peak means the sum is lost to cancellation
        zs = np.geomspace(1e-6 * z_end, z_end, 400)
        peak = float(np.max(-zs * C + log_idle_fraction(P_th * (zs * scale) ** beta, alpha)))
        if peak > math.log(1e8):
            raise NumericalFailure(
                "MAP z-integral", float("nan"), math.exp(min(peak, 700.0)) * 1e-16,
                f"integrand peaks at e^{peak:.1f}; cancellation for alpha={alpha}")
    if z_end <= 400.0 * half_period:
        # envelope dies within a few hundred windows: composite rule fine enough
        # to resolve both the oscillation and the cutoff
        width = min(0.5 * half_period, z_cut / 8.0)
        n_panels = max(1, int(math.ceil(z_end / width)))
        nodes, weights = gauss_panels(np.linspace(0.0, z_end, n_panels + 1), 16)
        vals = integrand(nodes)
        busy = float(np.dot(weights, vals))
    else:
        busy = oscillatory_halfline(integrand, half_period, name="MAP z-integral")
    return 1.0 - alpha / (2.0 * math.pi) * busy


@lru_cache(maxsize=4096)
def _kernel_cached(P_th: float, weighted_density: float, alpha: float) -> float:
    return _kernel_raw(P_th, weighted_density, alpha)


def weighted_contender_density(lam1: float, lam2: float, lam3: float, cfg: NetworkConfig) -> float:
    e = 2.0 / cfg.alpha
    return lam1 * cfg.P_C**e + lam2 * cfg.P_D**e + lam3 * cfg.P_W**e


def map_kernel(P_th: float, lam1: float, lam2: float, lam3: float, cfg: NetworkConfig,
               *, clamp: bool = True) -> float:
    """Probability that a contender with threshold P_th wins the channel
    against LTE-U (lam1), D2D-U (lam2) and Wi-Fi (lam3) contenders."""
    if P_th <= 0:
        raise ValueError("P_th must be positive")
    if min(lam1, lam2, lam3) < 0:
        raise ValueError("densities must be non-negative")
    dens = weighted_contender_density(lam1, lam2, lam3, cfg)
    if dens == 0.0:
        # nothing is ever sensed
        return 1.0
    value = _kernel_cached(float(P_th), float(dens), float(cfg.alpha))
    return min(1.0, max(0.0, value)) if clamp else value


def compute_maps(lam: DensityVector, cfg: NetworkConfig) -> MapSet:
    d = derived_quantities(cfg, lam)
    # LTE-U and D2D-U sense their own subchannel, Wi-Fi the whole band
    sub_cu = lam.lambda_CU / d.K_u
    sub_du = lam.lambda_DU / d.K_u
    p_cu = map_kernel(cfg.P_th_CU, sub_cu, sub_du, lam.lambda_W, cfg)
    p_du = map_kernel(cfg.P_th_DU, sub_cu, sub_du, lam.lambda_W, cfg)
    p_w = map_kernel(cfg.P_th_W, lam.lambda_CU, lam.lambda_DU, lam.lambda_W, cfg)
    return MapSet(
        p_CU=p_cu,
        p_DU=p_du,
        p_W=p_w,
        lambda_act_CU=p_cu * lam.lambda_CU,
        lambda_act_DU=p_du * lam.lambda_DU,
        lambda_act_W=p_w * lam.lambda_W,
    )
