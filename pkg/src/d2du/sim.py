"""Monte Carlo oracle: sampled deployments, subchannel plans, listen-before-talk
contention, fading and per-class SINR.

Per trial the cell is populated with independent PPPs, LTE and LTE-U users get
distinct subchannels, D2D and D2D-U pairs pick one at random, unlicensed
contenders are thinned by a mark-ordered energy-detection rule, and one tagged
user per class is scored.  Per-user means are ratio estimates (sum of
count * tagged rate over sum of counts), which is the typical-user average.

Every trial draws from its own streams derived from (seed, trial, stage), so
results are bit-identical for a given seed regardless of how trials are
grouped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .model import (
    DensityVector,
    NetworkConfig,
    ThroughputReport,
    derived_quantities,
    total_from_rates,
)

Z99 = 2.5758293035489004
CLASSES = ("C", "D", "CU", "DU", "W")
UNLICENSED = ("CU", "DU", "W")
STAGES = {"place": 0, "assign": 1, "contend": 2, "fade": 3}

ContentionRule = Literal["all_lower", "active_lower"]


def _rng(seed, *key) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    halfwidth_99: float
    trials: int


def _mean_ci(x: np.ndarray) -> McEstimate:
    x = np.asarray(x, dtype=float)
    n = x.size
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    return McEstimate(float(np.mean(x)), Z99 * sd / math.sqrt(n), n)


def _ratio_ci(y: np.ndarray, n: np.ndarray) -> McEstimate:
    """Ratio estimate sum(y)/sum(n) with a delta-method 99% interval."""
    T = y.size
    tot = float(n.sum())
    if tot == 0:
        return McEstimate(float("nan"), float("nan"), T)
    r = float(y.sum()) / tot
    if T < 2:
        return McEstimate(r, 0.0, T)
    resid = y - r * n
    var = float(np.var(resid, ddof=1)) / (T * (tot / T) ** 2)
    return McEstimate(r, Z99 * math.sqrt(var), T)


# ---------------------------------------------------------------------------
# placement

def uniform_disk(n: int, radius: float, rng: np.random.Generator, inner: float = 0.0) -> np.ndarray:
    """n i.i.d. points uniform on the annulus inner <= |x| <= radius."""
    r = np.sqrt(inner**2 + (radius**2 - inner**2) * rng.random(n))
    th = 2.0 * math.pi * rng.random(n)
    return np.column_stack((r * np.cos(th), r * np.sin(th)))


def sample_ppp_disk(lam: float, r_cell: float, seed) -> np.ndarray:
    """Homogeneous PPP of intensity lam on the disk of radius r_cell."""
    if lam < 0:
        raise ValueError("intensity must be non-negative")
    rng = _rng(seed)
    n = rng.poisson(lam * math.pi * r_cell**2) if lam > 0 else 0
    return uniform_disk(n, r_cell, rng)


def _partners(anchor: np.ndarray, reach: float, r_cell: float, rng: np.random.Generator) -> np.ndarray:
    """A point uniform within `reach` of each anchor, redrawn until inside the cell."""
    out = anchor + uniform_disk(len(anchor), reach, rng)
    bad = np.hypot(out[:, 0], out[:, 1]) > r_cell
    while bad.any():
        out[bad] = anchor[bad] + uniform_disk(int(bad.sum()), reach, rng)
        bad = np.hypot(out[:, 0], out[:, 1]) > r_cell
    return out


@dataclass
class NodeSet:
    """Nodes of one class.  tx/rx are (n, 2) coordinates; the BS sits at the
    origin.  Nodes with in_cell False live in the contention guard ring and
    only take part in sensing."""

    tx: np.ndarray
    rx: np.ndarray
    in_cell: np.ndarray
    sub: np.ndarray = None
    served: np.ndarray = None
    mark: np.ndarray = None
    active: np.ndarray = None

    def __len__(self) -> int:
        return len(self.tx)


@dataclass
class ScenarioRealization:
    lam: DensityVector
    K_l: int
    K_u: int
    guard_radius: float
    nodes: dict
    queued: dict = field(default_factory=lambda: {"C": 0, "CU": 0})


def sample_realization(lam: DensityVector, cfg: NetworkConfig, seed, *, guard_radius: float | None = None) -> ScenarioRealization:
    """Place every class in the cell; unlicensed contenders are also placed
    on the ring r_cell < |x| <= guard_radius."""
    rng = _rng(seed)
    R = cfg.r_cell
    Rg = 5.0 * R if guard_radius is None else max(float(guard_radius), R)
    origin = lambda n: np.zeros((n, 2))

    def count(l, area):
        return int(rng.poisson(l * area)) if l > 0 else 0

    S = cfg.S_cell
    ring_area = math.pi * (Rg**2 - R**2)
    nodes = {}
    # uplink cellular links end at the BS
    for name, l in (("C", lam.lambda_C), ("CU", lam.lambda_CU)):
        tx = uniform_disk(count(l, S), R, rng)
        nodes[name] = NodeSet(tx=tx, rx=origin(len(tx)), in_cell=np.ones(len(tx), bool))
    # D2D pairs: receiver uniform in the cell, transmitter within L_d of it
    for name, l in (("D", lam.lambda_D), ("DU", lam.lambda_DU)):
        rx = uniform_disk(count(l, S), R, rng)
        nodes[name] = NodeSet(tx=_partners(rx, cfg.L_d, R, rng), rx=rx, in_cell=np.ones(len(rx), bool))
    # Wi-Fi: the user transmits to its AP
    ap = uniform_disk(count(lam.lambda_W, S), R, rng)
    nodes["W"] = NodeSet(tx=_partners(ap, cfg.L_w, R, rng), rx=ap, in_cell=np.ones(len(ap), bool))
    if Rg > R:
        for name, l, reach in (("CU", lam.lambda_CU, 0.0), ("DU", lam.lambda_DU, cfg.L_d), ("W", lam.lambda_W, cfg.L_w)):
            ring = uniform_disk(count(l, ring_area), Rg, rng, inner=R)
            ns = nodes[name]
            ns.tx = np.vstack((ns.tx, ring))
            ns.rx = np.vstack((ns.rx, ring))
            ns.in_cell = np.concatenate((ns.in_cell, np.zeros(len(ring), bool)))
    return ScenarioRealization(lam=lam, K_l=0, K_u=0, guard_radius=Rg, nodes=nodes)


def subchannel_count(K: float) -> int:
    return max(1, int(round(K)))


def assign_subchannels(real: ScenarioRealization, K_l: float, K_u: float, seed) -> ScenarioRealization:
    """LTE (LTE-U) users in the cell get distinct subchannels of their band;
    users beyond the subchannel count are queued out and counted.  D2D, D2D-U
    and guard-ring LTE-U nodes each take one subchannel uniformly at random."""
    if K_l < 1 or K_u < 1:
        raise ValueError("subchannel counts must be >= 1")
    rng = _rng(seed)
    kl, ku = subchannel_count(K_l), subchannel_count(K_u)
    real.K_l, real.K_u = kl, ku
    for name, K in (("C", kl), ("CU", ku)):
        ns = real.nodes[name]
        n_in = int(ns.in_cell.sum())
        sub = np.full(len(ns), -1)
        served = np.zeros(len(ns), bool)
        order = rng.permutation(n_in)
        take = order[:K]
        idx_in = np.flatnonzero(ns.in_cell)
        sub[idx_in[take]] = rng.permutation(K)[: len(take)]
        served[idx_in[take]] = True
        real.queued[name] = n_in - len(take)
        ring = ~ns.in_cell
        sub[ring] = rng.integers(0, K, int(ring.sum()))
        served[ring] = True
        ns.sub, ns.served = sub, served
    for name, K in (("D", kl), ("DU", ku)):
        ns = real.nodes[name]
        ns.sub = rng.integers(0, K, len(ns))
        ns.served = np.ones(len(ns), bool)
    ns = real.nodes["W"]
    ns.sub = np.full(len(ns), -1)
    ns.served = np.ones(len(ns), bool)
    return real


# ---------------------------------------------------------------------------
# contention

def outer_gain(points: np.ndarray, radius: float, alpha: float, n: int = 48) -> np.ndarray:
    """int_{|x| > radius} |x - p|^-alpha dx for each point p inside the disk."""
    rho = np.hypot(points[:, 0], points[:, 1])
    x, w = np.polynomial.legendre.leggauss(n)
    phi = 0.5 * math.pi * (x + 1.0)
    w = 0.5 * math.pi * w
    sin, cos = np.sin(phi), np.cos(phi)
    reach = np.sqrt(radius**2 - (rho[:, None] * sin) ** 2) - rho[:, None] * cos
    return 2.0 * (reach ** (2.0 - alpha) / (alpha - 2.0)) @ w


def _contenders(real: ScenarioRealization, cfg: NetworkConfig):
    pos, power, thr, sub, wifi, mark_owner = [], [], [], [], [], []
    table = {"CU": (cfg.P_C, cfg.P_th_CU), "DU": (cfg.P_D, cfg.P_th_DU), "W": (cfg.P_W, cfg.P_th_W)}
    for name in UNLICENSED:
        ns = real.nodes[name]
        idx = np.flatnonzero(ns.served)
        P, th = table[name]
        pos.append(ns.tx[idx])
        power.append(np.full(idx.size, P))
        thr.append(np.full(idx.size, th))
        sub.append(ns.sub[idx])
        wifi.append(np.full(idx.size, name == "W"))
        mark_owner.extend((name, int(i)) for i in idx)
    return (np.vstack(pos), np.concatenate(power), np.concatenate(thr), np.concatenate(sub),
            np.concatenate(wifi), mark_owner)


def lbt_contention(real: ScenarioRealization, cfg: NetworkConfig, seed, *,
                   rule: ContentionRule = "all_lower", sensing: str = "instantaneous") -> ScenarioRealization:
    """Mark-ordered energy-detection thinning of the unlicensed contenders.

    Every contender draws a uniform mark (its back-off draw).  A node senses
    the summed received power of the coupled contenders with smaller marks and
    transmits when that power is below its class threshold.  Two nodes are
    coupled when either is Wi-Fi (whole-band sensing) or both sit on the same
    unlicensed subchannel.

    rule="all_lower" counts every lower-mark contender (Matern type II); this
    is the thinning whose access probability the analytic kernel computes,
    including the mean power of contenders beyond the guard radius.
    rule="active_lower" counts only lower-mark nodes that themselves won,
    processed sequentially over the whole contention disk.
    sensing="mean" replaces the sensing fading draws by their mean.
    """
    if rule not in ("all_lower", "active_lower"):
        raise ValueError(f"unknown contention rule {rule!r}")
    if sensing not in ("instantaneous", "mean"):
        raise ValueError(f"unknown sensing mode {sensing!r}")
    rng = _rng(seed)
    for name in UNLICENSED:
        ns = real.nodes[name]
        ns.mark = rng.random(len(ns))
        ns.active = np.zeros(len(ns), bool)
    pos, power, thr, sub, wifi, owners = _contenders(real, cfg)
    n = len(owners)
    if n == 0:
        return real
    marks = np.array([real.nodes[c].mark[i] for c, i in owners])
    in_cell = np.array([real.nodes[c].in_cell[i] for c, i in owners])
    a = cfg.alpha

    def gains(rows: np.ndarray) -> np.ndarray:
        diff = pos[rows, None, :] - pos[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        with np.errstate(divide="ignore"):
            g = power[None, :] * d2 ** (-a / 2.0)
        if sensing == "instantaneous":
            g = g * rng.exponential(1.0, g.shape)
        coupled = wifi[rows, None] | wifi[None, :] | (sub[rows, None] == sub[None, :])
        coupled[np.arange(rows.size), rows] = False
        return np.where(coupled, g, 0.0)

    if rule == "all_lower":
        rows = np.flatnonzero(in_cell)
        g = gains(rows)
        lower = marks[None, :] < marks[rows, None]
        sensed = np.where(lower, g, 0.0).sum(axis=1)
        if real.guard_radius > cfg.r_cell:
            lam = real.lam
            per_sub = lam.lambda_CU * cfg.P_C / real.K_u + lam.lambda_DU * cfg.P_D / real.K_u + lam.lambda_W * cfg.P_W
            whole = lam.lambda_CU * cfg.P_C + lam.lambda_DU * cfg.P_D + lam.lambda_W * cfg.P_W
            far = np.where(wifi[rows], whole, per_sub) * outer_gain(pos[rows], real.guard_radius, a)
            sensed = sensed + marks[rows] * far
        won = sensed < thr[rows]
        for k, r in enumerate(rows):
            c, i = owners[r]
            real.nodes[c].active[i] = won[k]
        return real

    g = gains(np.arange(n))
    order = np.argsort(marks)
    active = np.zeros(n, bool)
    for r in order:
        active[r] = g[r, active].sum() < thr[r]
    for r, (c, i) in enumerate(owners):
        real.nodes[c].active[i] = active[r]
    return real


# ---------------------------------------------------------------------------
# scoring

def _interference(at: np.ndarray, src: np.ndarray, P: float, alpha: float, rng: np.random.Generator) -> float:
    if len(src) == 0:
        return 0.0
    d2 = np.sum((src - at) ** 2, axis=1)
    return float(np.sum(P * rng.exponential(1.0, len(src)) * d2 ** (-alpha / 2.0)))


def _score(real: ScenarioRealization, cfg: NetworkConfig, rng: np.random.Generator) -> dict:
    """Per class: (users counted, tagged-user rate, active users)."""
    d = derived_quantities(cfg, real.lam)
    a = cfg.alpha
    N = real.nodes
    out = {}

    def members(name):
        ns = N[name]
        return np.flatnonzero(ns.in_cell & ns.served)

    def on(name, sub=None, active=True, exclude=None):
        ns = N[name]
        m = ns.in_cell & ns.served
        if active and ns.active is not None:
            m = m & ns.active
        if sub is not None:
            m = m & (ns.sub == sub)
        if exclude is not None:
            m[exclude] = False
        return ns.tx[m]

    def rate(name, k, bw, P, sigma2, interferers):
        ns = N[name]
        dist = math.dist(ns.tx[k], ns.rx[k])
        I = sum(_interference(ns.rx[k], src, Pi, a, rng) for src, Pi in interferers)
        sig = P * rng.exponential(1.0) * dist ** (-a)
        return bw * math.log2(1.0 + sig / (sigma2 + I))

    spec = {
        "C": (d.B_l_sub, cfg.P_C, d.sigma2_l, lambda k, s: [(on("D", s, False), cfg.P_D)]),
        "D": (d.B_l_sub, cfg.P_D, d.sigma2_l,
              lambda k, s: [(on("D", s, False, exclude=k), cfg.P_D), (on("C", s, False), cfg.P_C)]),
        "CU": (d.B_u_sub, cfg.P_C, d.sigma2_u,
               lambda k, s: [(on("DU", s), cfg.P_D), (on("W"), cfg.P_W)]),
        "DU": (d.B_u_sub, cfg.P_D, d.sigma2_u,
               lambda k, s: [(on("DU", s, exclude=k), cfg.P_D), (on("CU", s), cfg.P_C), (on("W"), cfg.P_W)]),
        "W": (cfg.B_u, cfg.P_W, d.sigma2_w,
              lambda k, s: [(on("CU"), cfg.P_C), (on("DU"), cfg.P_D), (on("W", exclude=k), cfg.P_W)]),
    }
    for name in CLASSES:
        idx = members(name)
        n = idx.size
        if n == 0:
            out[name] = (0, 0.0, 0)
            continue
        ns = N[name]
        n_act = int(ns.active[idx].sum()) if name in UNLICENSED else n
        k = int(idx[rng.integers(n)])
        if name in UNLICENSED and not ns.active[k]:
            out[name] = (n, 0.0, n_act)
            continue
        bw, P, sigma2, interferers = spec[name]
        out[name] = (n, rate(name, k, bw, P, sigma2, interferers(k, ns.sub[k])), n_act)
    return out


def simulate_trial(lam: DensityVector, cfg: NetworkConfig, seed: int, trial: int, *,
                   guard_radius: float | None = None, rule: ContentionRule = "all_lower",
                   sensing: str = "instantaneous") -> tuple[ScenarioRealization, dict]:
    d = derived_quantities(cfg, lam)
    real = sample_realization(lam, cfg, _rng(seed, trial, STAGES["place"]), guard_radius=guard_radius)
    assign_subchannels(real, d.K_l, d.K_u, _rng(seed, trial, STAGES["assign"]))
    lbt_contention(real, cfg, _rng(seed, trial, STAGES["contend"]), rule=rule, sensing=sensing)
    return real, _score(real, cfg, _rng(seed, trial, STAGES["fade"]))


@dataclass(frozen=True)
class SimulationResult:
    report: ThroughputReport
    estimates: dict          # field name -> McEstimate
    queued: dict             # class -> users queued out, summed over trials


def estimate_throughputs(lam: DensityVector, cfg: NetworkConfig, trials: int, seed: int = 0, *,
                         guard_radius: float | None = None, rule: ContentionRule = "all_lower",
                         sensing: str = "instantaneous") -> SimulationResult:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = {c: np.zeros(trials) for c in CLASSES}
    y = {c: np.zeros(trials) for c in CLASSES}
    act = {c: np.zeros(trials) for c in UNLICENSED}
    queued = {"C": 0, "CU": 0}
    for t in range(trials):
        real, sc = simulate_trial(lam, cfg, seed, t, guard_radius=guard_radius, rule=rule, sensing=sensing)
        for c in CLASSES:
            cnt, r, na = sc[c]
            n[c][t] = cnt
            y[c][t] = cnt * r
            if c in act:
                act[c][t] = na
        for c in queued:
            queued[c] += real.queued[c]
    est = {f"R_{c}": _ratio_ci(y[c], n[c]) for c in CLASSES}
    for c in UNLICENSED:
        est[f"p_{c}"] = _ratio_ci(act[c], n[c])
    absent = tuple(f"R_{c}" for c in CLASSES if n[c].sum() == 0)
    rates = {k: est[k].mean for k in est}
    total_terms = {k: (0.0 if math.isnan(v) else v) for k, v in rates.items()}
    report = ThroughputReport(
        R_C=rates["R_C"], R_D=rates["R_D"], R_CU=rates["R_CU"], R_DU=rates["R_DU"], R_W=rates["R_W"],
        p_CU=rates["p_CU"], p_DU=rates["p_DU"], p_W=rates["p_W"],
        R_total=total_from_rates(cfg, lam, total_terms["R_C"], total_terms["R_D"],
                                 total_terms["R_CU"], total_terms["R_DU"]),
        densities=lam,
        source="montecarlo",
        ci_halfwidth={k: e.halfwidth_99 for k, e in est.items()},
        absent=absent,
    )
    return SimulationResult(report=report, estimates=est, queued=queued)


# ---------------------------------------------------------------------------
# component oracles

def estimate_laplace(s: float, lam: float, P: float, l: float, cfg: NetworkConfig, trials: int,
                     seed: int = 0) -> McEstimate:
    """E exp(-s sum_i P h_i d_i^-alpha) over a PPP of intensity lam on the cell
    disk, seen from a receiver at distance l from the centre."""
    if s < 0:
        raise ValueError("s must be non-negative")
    if s == 0 or lam == 0:
        return McEstimate(1.0, 0.0, trials)
    rng = _rng(seed)
    counts = rng.poisson(lam * cfg.S_cell, trials)
    pts = uniform_disk(int(counts.sum()), cfg.r_cell, rng)
    d2 = (pts[:, 0] - l) ** 2 + pts[:, 1] ** 2
    contrib = P * rng.exponential(1.0, len(pts)) * d2 ** (-cfg.alpha / 2.0)
    I = np.bincount(np.repeat(np.arange(trials), counts), weights=contrib, minlength=trials)
    return _mean_ci(np.exp(-s * I))


def estimate_single_lte_factor(s: float, y: float, cfg: NetworkConfig, trials: int, seed: int = 0) -> McEstimate:
    """E 1/(1 + s P_C d^-alpha) for one interferer uniform in the cell and a
    receiver at distance y from the centre."""
    rng = _rng(seed)
    pts = uniform_disk(trials, cfg.r_cell, rng)
    d2 = (pts[:, 0] - y) ** 2 + pts[:, 1] ** 2
    return _mean_ci(1.0 / (1.0 + s * cfg.P_C * d2 ** (-cfg.alpha / 2.0)))


def empirical_map(P_th: float, lam1: float, lam2: float, lam3: float, cfg: NetworkConfig, trials: int,
                  seed: int = 0, *, radius: float | None = None, chunk: int = 2000) -> McEstimate:
    """Access probability of a typical contender under all-lower-mark sensing.

    The tagged node sits at the origin with a uniform mark m; contenders of
    power P_C, P_D and P_W form PPPs of intensity lam1, lam2, lam3, of which
    those with a smaller mark (a PPP of intensity m * lam) are sensed with
    Rayleigh fading.  Contenders beyond `radius` contribute their mean power.
    """
    if P_th <= 0 or min(lam1, lam2, lam3) < 0:
        raise ValueError("need P_th > 0 and non-negative densities")
    rng = _rng(seed)
    Rb = 10.0 * cfg.r_cell if radius is None else float(radius)
    a = cfg.alpha
    powers = (cfg.P_C, cfg.P_D, cfg.P_W)
    lams = (lam1, lam2, lam3)
    far_per_mark = sum(l * P for l, P in zip(lams, powers)) * 2.0 * math.pi * Rb ** (2.0 - a) / (a - 2.0)
    won = np.zeros(trials, bool)
    area = math.pi * Rb**2
    for start in range(0, trials, chunk):
        m = rng.random(min(chunk, trials - start))
        sensed = m * far_per_mark
        for l, P in zip(lams, powers):
            if l == 0:
                continue
            counts = rng.poisson(l * m * area)
            pts = uniform_disk(int(counts.sum()), Rb, rng)
            contrib = P * rng.exponential(1.0, len(pts)) * np.sum(pts**2, axis=1) ** (-a / 2.0)
            sensed = sensed + np.bincount(np.repeat(np.arange(m.size), counts), weights=contrib, minlength=m.size)
        won[start:start + m.size] = sensed < P_th
    return _mean_ci(won.astype(float))


def dump_realization_csv(real: ScenarioRealization, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "x_m", "y_m", "subchannel", "mark", "active", "in_cell"])
        for name in CLASSES:
            ns = real.nodes[name]
            for i in range(len(ns)):
                mark = "" if ns.mark is None else f"{ns.mark[i]:.6f}"
                active = "" if ns.active is None else int(ns.active[i])
                sub = "" if ns.sub is None else int(ns.sub[i])
                w.writerow([name, f"{ns.tx[i, 0]:.3f}", f"{ns.tx[i, 1]:.3f}", sub, mark, active, int(ns.in_cell[i])])
