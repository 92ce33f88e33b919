import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from d2du import optimize as O
from d2du.model import DensityVector, NetworkConfig

CFG = NetworkConfig()
S = CFG.S_cell


def test_fd_exact_on_linear_and_quadratic():
    a = np.array([1.5, -2.0, 0.25, 3.0])
    x = np.array([0.7, 1.3, 2.0, 5.0])
    J = O.fd_jacobian(lambda z: np.array([a @ z]), x)
    assert np.allclose(J[0], a, atol=1e-8)
    M = np.array([[2.0, 0.5, 0, 0], [0.5, 1.0, 0, 0], [0, 0, 3.0, 0.1], [0, 0, 0.1, 4.0]])
    J = O.fd_jacobian(lambda z: np.array([0.5 * z @ M @ z]), x, lower=np.array([0.7, 0, 0, 0]))
    assert np.allclose(J[0], M @ x, atol=1e-6)


def test_fd_reports_non_finite_component():
    with pytest.raises(FloatingPointError, match="qos_W"):
        O.fd_jacobian(lambda z: np.array([0.0, np.nan]), np.ones(2), names=("f", "qos_W"))


def test_fd_gradient_matches_finer_differences(ref_densities):
    inst = O.P1Instance(CFG, 1e-4, 1e-4, ref_densities.lambda_W)
    x = ref_densities
    level = 3
    grad, _ = O.fd_gradient(x, inst, level=level)
    base = x.as_array()
    for i in range(4):
        h = 1e-5 * base[i]
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        fu = O.eval_p1(DensityVector.from_array(up, x.lambda_W), inst, level=level).f
        fd = O.eval_p1(DensityVector.from_array(dn, x.lambda_W), inst, level=level).f
        assert grad[i] == pytest.approx((fu - fd) / (2 * h), rel=0.01)


def test_eval_p1_examples(ref_densities):
    inst = O.P1Instance(CFG, 1e-4, 1e-4, 3e-5)
    ev0 = O.eval_p1(DensityVector(), inst)
    assert ev0.f == 0.0 and ev0.g[0] < 0 and ev0.g[1] < 0
    assert not ev0.applies[[2, 3, 4, 5]].any() and ev0.applies[6]
    over = O.eval_p1(DensityVector(8e-5, 0, 8e-5, 0), inst)
    assert over.g[0] == pytest.approx(6e-5)
    ev = O.eval_p1(DensityVector(2e-5, 1e-5, 2e-5, 5e-5), inst)
    assert ev.f < 0 and ev.max_violation() == 0.0
    assert len(ev.g) == len(O.CONSTRAINT_NAMES)


def quad_prob(c):
    def prob(x):
        f = 0.5 * float((x - c) @ (x - c))
        return f, -np.ones(len(O.CONSTRAINT_NAMES)), np.ones(len(O.CONSTRAINT_NAMES), bool), None
    return prob


def test_line_search_takes_full_newton_step_on_quadratic():
    c = np.array([3.0, 2.0, 1.0, 4.0])
    x = np.ones(4)
    prob = quad_prob(c)
    f, g, app, _ = prob(x)
    st_ = O.SqpState(x=x, H=np.eye(4), f=f, g=g, applies=app, grad=x - c, jac=np.zeros((len(g), 4)))
    ls = O.line_search(st_, c - x, prob)
    assert ls.ok and ls.beta == 1.0 and np.allclose(ls.x, c)
    assert ls.merit_after < ls.merit_before


def test_line_search_failure_is_reported():
    prob = quad_prob(np.zeros(4))
    x = np.ones(4)
    f, g, app, _ = prob(x)
    st_ = O.SqpState(x=x, H=np.eye(4), f=f, g=g, applies=app, grad=x, jac=np.zeros((len(g), 4)))
    ls = O.line_search(st_, np.ones(4), prob)       # ascent direction
    assert not ls.ok and ls.beta == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bfgs_secant_when_curvature_positive(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 4))
    H = M @ M.T + np.eye(4)
    dx = rng.normal(size=4)
    dq = H @ dx + 0.1 * rng.normal(size=4)
    if dq @ dx < 0.2 * dx @ H @ dx:
        dq = dq + (0.2 * dx @ H @ dx - dq @ dx + 1.0) * dx / (dx @ dx)
    Hn = O.bfgs_update(H, dx, dq)
    assert np.allclose(Hn, Hn.T)
    assert np.allclose(Hn @ dx, dq, atol=1e-10 * max(1.0, np.abs(dq).max()))


def test_bfgs_damping_keeps_positive_definite():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        M = rng.normal(size=(4, 4))
        H = M @ M.T + 1e-3 * np.eye(4)
        dx = rng.normal(size=4)
        dq = -np.abs(rng.normal()) * (H @ dx) + rng.normal(size=4)   # curvature violated
        Hn = O.bfgs_update(H, dx, dq)
        assert np.allclose(Hn, Hn.T)
        assert np.linalg.eigvalsh(Hn)[0] >= 1e-8 * (1 - 1e-9)


def test_bfgs_recovers_quadratic_hessian():
    rng = np.random.default_rng(5)
    M = rng.normal(size=(4, 4))
    A = M @ M.T + np.eye(4)
    # A-conjugate steps: exact BFGS reproduces A after n of them
    _, V = np.linalg.eigh(A)
    H = np.eye(4)
    for i in range(4):
        dx = V[:, i]
        H = O.bfgs_update(H, dx, A @ dx, damping=0.0)
    assert np.allclose(H, A, atol=1e-8)


def test_greedy_zero_budget_and_first_user():
    assert O.greedy_init(O.P1Instance(CFG, 0.0, 0.0, 1e-5)).as_array().tolist() == [0.0] * 4
    one = O.greedy_init(O.P1Instance(CFG, 1 / S, 1 / S, 1e-5))
    # the first LTE user and first D2D pair go to the unlicensed band
    assert one.lambda_CU == pytest.approx(1 / S) and one.lambda_DU == pytest.approx(1 / S)
    assert one.lambda_C == 0.0 and one.lambda_D == 0.0


def test_greedy_is_feasible_and_improves():
    inst = O.P1Instance(CFG, 1e-4, 1e-4, 1e-5)
    x = O.greedy_init(inst)
    ev = O.eval_p1(x, inst, tol=O.OPT_TOL)
    assert ev.max_violation() <= 1e-6 and ev.f <= 0.0
    assert x.lambda_C + x.lambda_CU <= 1e-4 * (1 + 1e-12)


def test_baseline_equal_proportion():
    x, R = O.baseline_equal_proportion(O.P1Instance(CFG, 2e-5, 2e-5, 1e-5))
    assert x.as_array() == pytest.approx([1e-5] * 4, rel=1e-12) and R > 0
    x0, R0 = O.baseline_equal_proportion(O.P1Instance(CFG, 0.0, 0.0, 1e-5))
    assert x0.as_array().tolist() == [0.0] * 4 and R0 == 0.0


def test_infeasible_instance_is_reported():
    # Wi-Fi floor fails with no cellular users at all
    sol = O.solve_p1(O.P1Instance(CFG, 1e-4, 1e-4, 3e-3))
    assert sol.status == "infeasible" and sol.report is None and sol.message


def test_instance_validation():
    from d2du.errors import ConfigError
    with pytest.raises(ConfigError):
        O.P1Instance(CFG, -1e-5, 1e-5, 1e-5)


@pytest.fixture(scope="module")
def small_solution():
    return O.solve_p1(O.P1Instance(CFG, 5e-5, 5e-5, 1e-5))


def test_solve_is_deterministic(small_solution):
    again = O.solve_p1(O.P1Instance(CFG, 5e-5, 5e-5, 1e-5))
    assert again.densities == small_solution.densities
    assert [r.f for r in again.trajectory] == [r.f for r in small_solution.trajectory]


def test_solution_is_feasible_and_kkt(small_solution):
    sol = small_solution
    assert sol.status == "optimal"
    inst = O.P1Instance(CFG, 5e-5, 5e-5, 1e-5)
    assert O.eval_p1(sol.densities, inst).max_violation() <= 1e-6 * CFG.R_th_C
    assert sol.kkt["stationarity"] <= 1e-4 and sol.kkt["complementarity"] <= 1e-6
    accepted = [r for r in sol.trajectory if r.accepted]
    assert all(r.merit_after < r.merit_before for r in accepted)


def test_trajectory_csv(tmp_path, small_solution):
    p = tmp_path / "t.csv"
    O.write_trajectory_csv(small_solution, p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["iter", "f", "step_norm", "beta", "max_violation"]
    assert len(rows) == 1 + len(small_solution.trajectory)
