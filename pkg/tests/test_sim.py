import math

import numpy as np
import pytest
from scipy import stats

from d2du import analytic as A
from d2du import sim
from d2du.model import DensityVector, NetworkConfig

CFG = NetworkConfig()


def test_ppp_count_mean_and_radial_law():
    lam = 1e-4  # 4 pi expected points in the 200 m cell
    counts, radii = [], []
    for seed in range(2000):
        pts = sim.sample_ppp_disk(lam, CFG.r_cell, seed)
        counts.append(len(pts))
        radii.append(np.hypot(pts[:, 0], pts[:, 1]))
    mean = lam * CFG.S_cell
    assert abs(np.mean(counts) - mean) <= 3 * math.sqrt(mean / len(counts))
    r = np.concatenate(radii)
    assert r.max() <= CFG.r_cell
    # (r/R)^2 is uniform for a homogeneous disk process
    assert stats.kstest((r / CFG.r_cell) ** 2, "uniform").pvalue > 0.01


def test_subchannel_assignment():
    lam = DensityVector(lambda_C=4 / CFG.S_cell * 3, lambda_D=4e-4)
    share, distinct = np.zeros(4), True
    for seed in range(200):
        real = sim.sample_realization(lam, CFG, seed, guard_radius=CFG.r_cell)
        sim.assign_subchannels(real, 4.0, 1.0, seed + 10_000)
        share += np.bincount(real.nodes["D"].sub, minlength=4)
        c = real.nodes["C"]
        used = c.sub[c.served]
        distinct &= len(set(used)) == len(used) and len(used) == min(4, len(c))
        assert real.queued["C"] == max(0, len(c) - 4)
    share /= share.sum()
    assert distinct
    assert np.all(np.abs(share - 0.25) <= 0.02)


def test_determinism():
    lam = DensityVector(5e-5, 5e-5, 1e-4, 1e-4, 3e-5)
    a = sim.estimate_throughputs(lam, CFG, 8, seed=42).report
    b = sim.estimate_throughputs(lam, CFG, 8, seed=42).report
    c = sim.estimate_throughputs(lam, CFG, 8, seed=43).report
    assert a.to_dict() == b.to_dict()
    assert a.R_W != c.R_W


@pytest.mark.parametrize("s,lam,l", [(1e9, 1e-4, 0.0), (1e10, 5e-5, 120.0), (3e8, 3e-4, 199.0)])
def test_laplace_estimate_brackets_analytic(s, lam, l):
    est = sim.estimate_laplace(s, lam, CFG.P_D, l, CFG, 20_000, seed=7)
    q = A.laplace_factor_Q(s, lam, CFG.P_D, l, CFG)
    assert abs(est.mean - q) <= est.halfwidth_99 + 1e-12


@pytest.mark.parametrize("s,y", [(1e9, 0.0), (1e10, 150.0), (1e11, 30.0)])
def test_single_lte_factor_brackets_analytic(s, y):
    est = sim.estimate_single_lte_factor(s, y, CFG, 50_000, seed=3)
    assert abs(est.mean - A.single_lte_factor_A1(s, y, CFG)) <= est.halfwidth_99


def test_ci_shrinks_with_trials():
    small = sim.estimate_laplace(1e10, 1e-4, CFG.P_D, 0.0, CFG, 4_000, seed=1)
    big = sim.estimate_laplace(1e10, 1e-4, CFG.P_D, 0.0, CFG, 16_000, seed=2)
    assert 0.4 <= big.halfwidth_99 / small.halfwidth_99 <= 0.6


def test_contention_marks_and_activity():
    lam = DensityVector(0, 0, 2e-4, 2e-4, 1e-4)
    real, _ = sim.simulate_trial(lam, CFG, 5, 0, guard_radius=CFG.r_cell)
    for name in sim.UNLICENSED:
        ns = real.nodes[name]
        served = ns.served
        assert np.all(ns.mark[served] >= 0) and np.all(ns.mark[served] <= 1)
        assert ns.active.dtype == bool
    # without a guard ring the globally smallest mark senses nothing and transmits
    best = min(((real.nodes[n].mark[real.nodes[n].served].min(), n) for n in sim.UNLICENSED
                if real.nodes[n].served.any()))
    ns = real.nodes[best[1]]
    i = np.flatnonzero(ns.served)[np.argmin(ns.mark[ns.served])]
    assert ns.active[i]


def test_realization_csv(tmp_path):
    lam = DensityVector(5e-5, 5e-5, 1e-4, 1e-4, 3e-5)
    real, _ = sim.simulate_trial(lam, CFG, 0, 0)
    p = tmp_path / "r.csv"
    sim.dump_realization_csv(real, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "class,x_m,y_m,subchannel,mark,active,in_cell"
    assert len(lines) - 1 == sum(len(ns) for ns in real.nodes.values())


def test_invalid_trials():
    with pytest.raises(ValueError):
        sim.estimate_throughputs(DensityVector(), CFG, 0)
