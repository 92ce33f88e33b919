"""Throughput regions and the tangent linear program over them.

Three sweeps are provided.  sweep_region_C splits a fixed LTE budget between
the licensed and unlicensed bands.  sweep_region_D does the same for a D2D
budget.  sweep_region_system moves the total licensed and unlicensed
densities (lambda_l, lambda_u) at fixed LTE shares kappa_l and kappa_u.
solve_p3 then picks the boundary point with the largest sum rate.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import DEFAULT_TOL, throughput_d2d, throughput_d2du, throughput_lte, throughput_lteu
from .errors import ConfigError, NumericalFailure
from .mac import compute_maps
from .model import DensityVector, NetworkConfig

log = logging.getLogger(__name__)

CSV_COLUMNS = ("param_t", "lambda_l", "lambda_u", "R_first_bps", "R_second_bps",
               "lam_C", "lam_D", "lam_CU", "lam_DU")


@dataclass(frozen=True)
class RegionPoint:
    R_first: float          # bits/s per cell
    R_second: float
    densities: DensityVector
    param_t: float = float("nan")
    lambda_l: float = float("nan")
    lambda_u: float = float("nan")

    @property
    def total(self) -> float:
        return self.R_first + self.R_second


@dataclass
class RegionBoundary:
    kind: str                                  # "C" | "D" | "system"
    points: list                               # boundary, ordered
    params: dict = field(default_factory=dict)
    cloud: list = field(default_factory=list)  # every swept point (system kind)
    skipped: list = field(default_factory=list)
    diagnostic: str = ""

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([p.R_first for p in self.points]),
                np.array([p.R_second for p in self.points]))


def _licensed(lam: DensityVector, cfg: NetworkConfig, tol: float) -> tuple[float, float]:
    return throughput_lte(lam, cfg, tol=tol), throughput_d2d(lam, cfg, tol=tol)


def _unlicensed(lam: DensityVector, cfg: NetworkConfig, tol: float) -> tuple[float, float]:
    maps = compute_maps(lam, cfg)
    return throughput_lteu(lam, maps, cfg, tol=tol), throughput_d2du(lam, maps, cfg, tol=tol)


def _meets_floors(lam: DensityVector, rates: dict, cfg: NetworkConfig) -> bool:
    floors = {"C": cfg.R_th_C, "CU": cfg.R_th_C, "D": cfg.R_th_D, "DU": cfg.R_th_D}
    dens = {"C": lam.lambda_C, "CU": lam.lambda_CU, "D": lam.lambda_D, "DU": lam.lambda_DU}
    return all(dens[k] <= 0 or rates[k] >= floors[k] for k in rates)


def _split_sweep(kind: str, lambda_all: float, fixed: DensityVector, cfg: NetworkConfig,
                 n_points: int, tol: float, qos: bool) -> RegionBoundary:
    if n_points < 2:
        raise ConfigError("n_points must be at least 2")
    if not math.isfinite(lambda_all) or lambda_all < 0:
        raise ConfigError(f"budget must be finite and >= 0, got {lambda_all!r}")
    S = cfg.S_cell
    pts, skipped = [], []
    for t in np.linspace(0.0, 1.0, n_points):
        t = float(t)
        lic, unl = t * lambda_all, (1.0 - t) * lambda_all
        if t == 1.0:
            unl = 0.0
        if kind == "C":
            lam = fixed.with_(lambda_C=lic, lambda_CU=unl)
        else:
            lam = fixed.with_(lambda_D=lic, lambda_DU=unl)
        try:
            rc, rd = _licensed(lam, cfg, tol)
            rcu, rdu = _unlicensed(lam, cfg, tol)
        except NumericalFailure as exc:
            log.warning("region %s: t=%g skipped: %s", kind, t, exc)
            skipped.append(float(t))
            continue
        if qos and not _meets_floors(lam, {"C": rc, "D": rd, "CU": rcu, "DU": rdu}, cfg):
            skipped.append(float(t))
            continue
        if kind == "C":
            first, second = S * lam.lambda_C * rc, S * lam.lambda_CU * rcu
        else:
            first, second = S * lam.lambda_D * rd, S * lam.lambda_DU * rdu
        pts.append(RegionPoint(float(first), float(second), lam, param_t=t))
    return RegionBoundary(kind, pts, {"lambda_all": lambda_all}, skipped=skipped)


def sweep_region_C(lambda_all_C: float, lambda_D: float, lambda_DU: float, lambda_W: float,
                   cfg: NetworkConfig, n_points: int = 64, *, tol: float = DEFAULT_TOL,
                   qos: bool = False) -> RegionBoundary:
    """(LTE cell rate, LTE-U cell rate) as the LTE budget moves from the
    unlicensed band (t = 0) to the licensed band (t = 1)."""
    fixed = DensityVector(0.0, lambda_D, 0.0, lambda_DU, lambda_W)
    return _split_sweep("C", lambda_all_C, fixed, cfg, n_points, tol, qos)


def sweep_region_D(lambda_all_D: float, lambda_C: float, lambda_CU: float, lambda_W: float,
                   cfg: NetworkConfig, n_points: int = 64, *, tol: float = DEFAULT_TOL,
                   qos: bool = False) -> RegionBoundary:
    """(D2D cell rate, D2D-U cell rate); the D2D counterpart of sweep_region_C."""
    fixed = DensityVector(lambda_C, 0.0, lambda_CU, 0.0, lambda_W)
    return _split_sweep("D", lambda_all_D, fixed, cfg, n_points, tol, qos)


def pareto_front(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Indices of the non-dominated points (maximising both coordinates),
    ordered by increasing first coordinate."""
    first = np.asarray(first, dtype=float)
    second = np.asarray(second, dtype=float)
    order = np.lexsort((-second, -first))     # first descending, ties by second descending
    keep = []
    best_second = -np.inf
    for i in order:
        if second[i] > best_second:
            keep.append(i)
            best_second = second[i]
    return np.array(keep[::-1], dtype=int)


def sweep_region_system(lambda_all_C: float, lambda_all_D: float, kappa_l: float, kappa_u: float,
                        lambda_W: float, cfg: NetworkConfig, grid: int = 64, *,
                        tol: float = DEFAULT_TOL, qos: bool = False) -> RegionBoundary:
    """Sweep (lambda_l, lambda_u) with lambda_C = kappa_l lambda_l,
    lambda_D = (1 - kappa_l) lambda_l, lambda_CU = kappa_u lambda_u and
    lambda_DU = (1 - kappa_u) lambda_u, keeping both user budgets.

    Each axis is sampled on `grid` points from 0 to the largest value its
    band alone can hold.  Licensed rates depend only on lambda_l and
    unlicensed rates only on lambda_u, so each band is evaluated once per
    axis value.
    """
    for name, k in (("kappa_l", kappa_l), ("kappa_u", kappa_u)):
        if not (0.0 <= k <= 1.0) or not math.isfinite(k):
            raise ConfigError(f"{name} must lie in [0, 1], got {k!r}")
    if grid < 2:
        raise ConfigError("grid must be at least 2")
    params = {"lambda_all_C": lambda_all_C, "lambda_all_D": lambda_all_D,
              "kappa_l": kappa_l, "kappa_u": kappa_u, "lambda_W": lambda_W, "grid": grid}

    def axis_max(k):
        lims = []
        if k > 0:
            lims.append(lambda_all_C / k)
        if k < 1:
            lims.append(lambda_all_D / (1.0 - k))
        return min(lims)

    S = cfg.S_cell
    l_axis = np.linspace(0.0, axis_max(kappa_l), grid)
    u_axis = np.linspace(0.0, axis_max(kappa_u), grid)
    lic = np.full(grid, np.nan)
    unl = np.full(grid, np.nan)
    skipped = []
    for i, ll in enumerate(l_axis):
        lam = DensityVector(kappa_l * ll, (1.0 - kappa_l) * ll, 0.0, 0.0, lambda_W)
        try:
            rc, rd = _licensed(lam, cfg, tol)
        except NumericalFailure as exc:
            log.warning("system region: lambda_l=%g skipped: %s", ll, exc)
            skipped.append(("lambda_l", float(ll)))
            continue
        if qos and not _meets_floors(lam, {"C": rc, "D": rd}, cfg):
            continue
        lic[i] = S * (lam.lambda_C * rc + lam.lambda_D * rd)
    for j, lu in enumerate(u_axis):
        lam = DensityVector(0.0, 0.0, kappa_u * lu, (1.0 - kappa_u) * lu, lambda_W)
        try:
            rcu, rdu = _unlicensed(lam, cfg, tol)
        except NumericalFailure as exc:
            log.warning("system region: lambda_u=%g skipped: %s", lu, exc)
            skipped.append(("lambda_u", float(lu)))
            continue
        if qos and not _meets_floors(lam, {"CU": rcu, "DU": rdu}, cfg):
            continue
        unl[j] = S * (lam.lambda_CU * rcu + lam.lambda_DU * rdu)

    L, U = np.meshgrid(l_axis, u_axis, indexing="ij")
    slack = 1e-12 * max(lambda_all_C, lambda_all_D, 1e-300)
    ok = ((kappa_l * L + kappa_u * U <= lambda_all_C + slack)
          & ((1 - kappa_l) * L + (1 - kappa_u) * U <= lambda_all_D + slack)
          & np.isfinite(lic)[:, None] & np.isfinite(unl)[None, :])
    cloud = []
    for i, j in zip(*np.nonzero(ok)):
        ll, lu = float(l_axis[i]), float(u_axis[j])
        lam = DensityVector(kappa_l * ll, (1 - kappa_l) * ll, kappa_u * lu, (1 - kappa_u) * lu, lambda_W)
        cloud.append(RegionPoint(float(lic[i]), float(unl[j]), lam, lambda_l=ll, lambda_u=lu))
    if not cloud:
        return RegionBoundary("system", [], params, [], skipped, diagnostic="no grid point satisfies the budgets")
    idx = pareto_front(np.array([p.R_first for p in cloud]), np.array([p.R_second for p in cloud]))
    return RegionBoundary("system", [cloud[i] for i in idx], params, cloud, skipped)


@dataclass(frozen=True)
class P3Solution:
    R_l: float
    R_u: float
    densities: DensityVector
    lambda_l: float
    lambda_u: float

    @property
    def R_total(self) -> float:
        return self.R_l + self.R_u

    @property
    def rho(self) -> float:
        """Share of users on the licensed band, lambda_l / (lambda_l + lambda_u)."""
        tot = self.lambda_l + self.lambda_u
        return self.lambda_l / tot if tot > 0 else float("nan")


def solve_p3(boundary: RegionBoundary) -> P3Solution:
    """Boundary point maximising R_first + R_second, i.e. where a line of
    slope -1 touches the region."""
    if not boundary.points:
        raise ConfigError("boundary is empty" + (f": {boundary.diagnostic}" if boundary.diagnostic else ""))
    best = max(boundary.points, key=lambda p: p.total)
    d = best.densities
    ll = best.lambda_l if math.isfinite(best.lambda_l) else d.lambda_C + d.lambda_D
    lu = best.lambda_u if math.isfinite(best.lambda_u) else d.lambda_CU + d.lambda_DU
    return P3Solution(best.R_first, best.R_second, d, ll, lu)


def write_region_csv(boundary: RegionBoundary, path, *, include_cloud: bool = False) -> None:
    rows = boundary.cloud if include_cloud and boundary.cloud else boundary.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for p in rows:
            d = p.densities
            w.writerow([repr(float(v)) for v in (p.param_t, p.lambda_l, p.lambda_u, p.R_first, p.R_second,
                                                 d.lambda_C, d.lambda_D, d.lambda_CU, d.lambda_DU)])
