import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from d2du import analytic as A
from d2du.model import DensityVector, NetworkConfig, derived_quantities

CFG = NetworkConfig()

# G(t, l) over the R = 200 disk by scipy dblquad in polar coordinates around
# the receiver; frozen as (alpha, t, l, G)
G_ORACLE = [
    (4.0, 0.01, 0.0, 0.49347943465630456), (4.0, 0.01, 50.0, 0.4934793264459098),
    (4.0, 0.01, 199.5, 0.4629620509923787), (4.0, 1e7, 0.0, 14821.446730245376),
    (4.0, 1e7, 50.0, 14714.919356462173), (4.0, 1e7, 199.5, 6878.962214269093),
    (4.0, 1e14, 0.0, 125663.03594359287), (4.0, 1e14, 50.0, 125662.77677181241),
    (4.0, 1e14, 199.5, 125657.04499283955),
    (3.0, 0.01, 0.0, 0.35233635483501274), (3.0, 0.01, 50.0, 0.3523207098855924),
    (3.0, 0.01, 199.5, 0.3127023241818084), (3.0, 1e7, 0.0, 98316.9735530951),
    (3.0, 1e7, 50.0, 95464.30212887481), (3.0, 1e7, 199.5, 63368.04686595182),
    (3.0, 1e14, 0.0, 125663.70212235332), (3.0, 1e14, 50.0, 125663.70116885028),
    (3.0, 1e14, 199.5, 125663.68440047352),
    (5.0, 0.01, 0.0, 0.6578901883248252), (5.0, 0.01, 50.0, 0.6578901876171525),
    (5.0, 0.01, 199.5, 0.6246600311705874), (5.0, 1e7, 0.0, 2616.490061312491),
    (5.0, 1e7, 50.0, 2615.7824932936514), (5.0, 1e7, 199.5, 1283.7962554121016),
    (5.0, 1e14, 0.0, 125549.02759507271), (5.0, 1e14, 50.0, 125483.02976295938),
    (5.0, 1e14, 199.5, 123631.4991516913),
]


def noise_only_oracle(P, L, sigma2, alpha=4.0):
    """Rayleigh link, no interference, receiver-transmitter distance uniform
    in a disk of radius L: E log2(1 + SNR) = E e^{1/snr} E1(1/snr) / ln 2."""
    def h(r):
        x = sigma2 * r**alpha / P
        core = special.exp1(x) * math.exp(x) if x < 700 else 1 / x - 1 / x**2 + 2 / x**3
        return 2 * r / L**2 * core / math.log(2)
    return integrate.quad(h, 0, L, limit=400, epsabs=0, epsrel=1e-11, points=[L / 100, L / 10])[0]


def test_hcore_dist_sq():
    assert A.hcore_dist_sq(3.0, 0.0, 1.0) == pytest.approx(4.0)
    assert A.hcore_dist_sq(3.0, math.pi, 1.0) == pytest.approx(16.0)
    assert A.hcore_dist_sq(2.0, math.pi / 2, 2.0) == pytest.approx(8.0)
    assert A.hcore_dist_sq(1.0, 0.0, 1.0) == 0.0


@pytest.mark.parametrize("alpha,t,l,G", G_ORACLE)
def test_disk_exponent_matches_dblquad(alpha, t, l, G):
    assert float(A.disk_exponent(t, l, 200.0, alpha)[0]) == pytest.approx(G, rel=1e-9)


def test_radial_partial_general_formula_matches_alpha4_branch():
    rho = np.array([1.0, 30.0, 200.0])
    for t in (1e-3, 1.0, 1e6):
        fast = A.radial_partial(rho, t, 4.0)
        # the general incomplete-beta route, evaluated just off alpha = 4
        slow = A.radial_partial(rho, t, 4.0 + 1e-9)
        ref = [integrate.quad(lambda x: x / (1 + x**4 / t), 0, r, epsrel=1e-12, limit=200)[0] for r in rho]
        assert fast == pytest.approx(ref, rel=1e-9)
        assert slow == pytest.approx(ref, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-14, 1e-6), st.floats(0, 1e-3), st.floats(0, 1e-3), st.floats(0, 200))
def test_q_factor_bounds_and_additivity(s, l1, l2, y):
    q1 = A.laplace_factor_Q(s, l1, CFG.P_D, y, CFG)
    q2 = A.laplace_factor_Q(s, l2, CFG.P_D, y, CFG)
    q12 = A.laplace_factor_Q(s, l1 + l2, CFG.P_D, y, CFG)
    assert 0.0 <= q12 <= 1.0
    assert q12 == pytest.approx(q1 * q2, rel=1e-10, abs=1e-300)
    assert A.laplace_factor_Q(2 * s, l1, CFG.P_D, y, CFG) <= q1 + 1e-15


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-14, 1e-6), st.floats(0, 200), st.floats(0, 1))
def test_a1_a2_bounds(s, y, p):
    a1 = A.single_lte_factor_A1(s, y, CFG)
    assert 0.0 <= a1 <= 1.0
    assert A.single_lte_factor_A1(2 * s, y, CFG) <= a1 + 1e-15
    a2 = A.gated_lte_factor_A2(s, y, p, CFG)
    assert a2 == pytest.approx(p * a1 + 1 - p, abs=1e-15)
    assert a1 - 1e-15 <= a2 <= 1.0


@pytest.mark.parametrize("P,L,sigma2", [(CFG.P_C, 200.0, 2.5e-11), (CFG.P_D, 20.0, 2.5e-11), (CFG.P_W, 25.0, 1.99e-12)])
def test_vartheta_noise_only_matches_exponential_integral(P, L, sigma2):
    got = A.vartheta(P, A.InterferenceKernel(), A.RadialWeight.dirac(), A.RadialWeight.uniform(L), sigma2, CFG, tol=1e-8)
    assert got == pytest.approx(noise_only_oracle(P, L, sigma2), rel=1e-6)


def test_vartheta_tolerance_self_consistency(ref_densities):
    from d2du.mac import compute_maps
    maps = compute_maps(ref_densities, CFG)
    K = A.wifi_kernel(ref_densities, maps, CFG)
    args = (CFG.P_W, K, A.RadialWeight.uniform(CFG.r_cell), A.RadialWeight.uniform(CFG.L_w), CFG.noise_psd * CFG.B_u, CFG)
    coarse = A.vartheta(*args, tol=1e-4)
    fine = A.vartheta(*args, tol=1e-5)
    assert coarse == pytest.approx(fine, rel=1e-3)


def test_zero_densities_give_zero_total():
    assert A.total_throughput(DensityVector(), CFG) == 0.0
    assert A.total_throughput(DensityVector(lambda_W=3e-5), CFG) == 0.0


def test_single_pair_sees_no_d2d_interference():
    lam = DensityVector(lambda_D=1.0 / CFG.S_cell)
    K = A.d2d_kernel(lam, CFG)
    assert K.active_terms() == () and K.lte_presence == 0.0
    d = derived_quantities(CFG, lam)
    noise = A.vartheta(CFG.P_D, A.InterferenceKernel(), A.RadialWeight.uniform(CFG.r_cell),
                       A.RadialWeight.uniform(CFG.L_d), d.sigma2_l, CFG)
    assert A.throughput_d2d(lam, CFG) == pytest.approx(d.B_l_sub * noise, rel=1e-12)


def test_reference_point_rates(cfg, ref_densities):
    r = A.analytic_report(ref_densities, cfg)
    for k in ("R_C", "R_D", "R_CU", "R_DU", "R_W"):
        assert getattr(r, k) > 0
    assert r.recomputed_total(cfg) == pytest.approx(r.R_total, rel=1e-12)
    # more D2D pairs only add licensed interference to LTE
    r2 = A.analytic_report(ref_densities.with_(lambda_D=1e-4), cfg)
    assert r2.R_C < r.R_C


def test_numerical_failure_names_integral(monkeypatch):
    from d2du.errors import NumericalFailure
    monkeypatch.setattr(A, "MAX_LEVEL", 0)
    with pytest.raises(NumericalFailure, match="vartheta"):
        A.vartheta(CFG.P_C, A.InterferenceKernel(((1e-3, CFG.P_D),)), A.RadialWeight.dirac(),
                   A.RadialWeight.uniform(200.0), 2.5e-11, CFG, tol=1e-15)
