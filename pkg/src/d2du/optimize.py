"""Density optimisation: maximise the cell sum rate over the four user
densities under per-band user budgets and per-class rate floors.

The solver is an SQP method: each iteration solves a QP built from a
quasi-Newton model of the objective and linearised constraints, takes a
backtracking step on an l1 merit function and updates the model by damped
BFGS.  It stops once the objective changes by less than cfg.tau (in Mbps).

Internally the densities are scaled to users per cell (x = lambda * S_cell),
the objective to Mbps and the rate floors to relative shortfalls, which keeps
every quantity O(1)-O(1e4).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .analytic import MAX_LEVEL, analytic_report, required_level, throughput_d2d, throughput_lte
from .analytic import throughput_d2du, throughput_lteu, throughput_wifi
from .errors import ConfigError
from .mac import compute_maps
from .model import DensityVector, NetworkConfig, ThroughputReport
from .qp import solve_qp

MBPS = 1e6
OPT_TOL = 1e-5
CONSTRAINT_NAMES = (
    "budget_C", "budget_D",
    "qos_C", "qos_CU", "qos_D", "qos_DU", "qos_W",
    "nonneg_C", "nonneg_D", "nonneg_CU", "nonneg_DU",
)
# rate-floor constraint -> index of the density it belongs to (W is always present)
QOS_CLASS = {2: 0, 3: 2, 4: 1, 5: 3}


@dataclass(frozen=True)
class P1Instance:
    cfg: NetworkConfig
    lambda_all_C: float
    lambda_all_D: float
    lambda_W: float

    def __post_init__(self):
        for name in ("lambda_all_C", "lambda_all_D", "lambda_W"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v!r}")

    @property
    def budgets_users(self) -> tuple[float, float]:
        S = self.cfg.S_cell
        return self.lambda_all_C * S, self.lambda_all_D * S


@dataclass(frozen=True)
class P1Eval:
    """Objective and constraint residuals at one density vector (SI units).

    f = -R_total in bits/s.  g follows CONSTRAINT_NAMES; a point is feasible
    when every residual with applies[i] True is <= 0.  Rate floors of an
    empty class do not apply.
    """

    f: float
    g: np.ndarray
    applies: np.ndarray
    report: ThroughputReport

    def max_violation(self) -> float:
        return float(np.max(np.where(self.applies, self.g, -np.inf).clip(min=0.0)))


def _floors(cfg: NetworkConfig) -> np.ndarray:
    return np.array([cfg.R_th_C, cfg.R_th_C, cfg.R_th_D, cfg.R_th_D, cfg.R_th_W])


def eval_p1(x: DensityVector, inst: P1Instance, *, tol: float = OPT_TOL, level: int | None = None) -> P1Eval:
    cfg = inst.cfg
    lam = x.with_(lambda_W=inst.lambda_W)
    rep = analytic_report(lam, cfg, tol=tol, level=level)
    rates = np.array([rep.R_C, rep.R_CU, rep.R_D, rep.R_DU, rep.R_W])
    dens = lam.as_array()
    g = np.concatenate((
        [lam.lambda_C + lam.lambda_CU - inst.lambda_all_C, lam.lambda_D + lam.lambda_DU - inst.lambda_all_D],
        _floors(cfg) - rates,
        -dens,
    ))
    applies = np.ones(len(CONSTRAINT_NAMES), bool)
    for i, k in QOS_CLASS.items():
        applies[i] = dens[k] > 0.0
    return P1Eval(f=-rep.R_total, g=g, applies=applies, report=rep)


# ---------------------------------------------------------------------------
# scaled problem

class _Scaled:
    """Memoised scaled evaluation at a pinned quadrature level."""

    def __init__(self, inst: P1Instance, level: int):
        self.inst = inst
        self.level = level
        self.S = inst.cfg.S_cell
        self.floors = _floors(inst.cfg)
        self._memo: dict = {}
        self.evaluations = 0

    def density(self, x) -> DensityVector:
        return DensityVector.from_array(np.asarray(x) / self.S, self.inst.lambda_W)

    def __call__(self, x) -> tuple[float, np.ndarray, np.ndarray, P1Eval]:
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        key = tuple(x.tolist())
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        ev = eval_p1(self.density(x), self.inst, level=self.level)
        self.evaluations += 1
        bC, bD = self.inst.budgets_users
        g = np.concatenate((
            [x[0] + x[2] - bC, x[1] + x[3] - bD],
            ev.g[2:7] / self.floors,
            -x,
        ))
        out = (ev.f / MBPS, g, ev.applies, ev)
        if len(self._memo) > 4096:
            self._memo.clear()
        self._memo[key] = out
        return out

    def vector(self, x) -> np.ndarray:
        f, g, _, _ = self(x)
        return np.concatenate(([f], g))


def fd_jacobian(fun, x: np.ndarray, *, lower: np.ndarray | None = None, names=None) -> np.ndarray:
    """Finite-difference Jacobian of a vector function.

    Central differences with step max(1e-8, 1e-4 |x_i|); forward differences
    where the central stencil would cross a lower bound.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(f0)):
        bad = int(np.flatnonzero(~np.isfinite(f0))[0])
        raise FloatingPointError(f"non-finite value in component {names[bad] if names else bad}")
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = max(1e-8, 1e-4 * abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        if lower is not None and x[i] - h < lower[i]:
            fp = np.asarray(fun(x + e), dtype=float)
            fpp = np.asarray(fun(x + 2 * e), dtype=float)
            J[:, i] = (-3 * f0 + 4 * fp - fpp) / (2 * h)
        else:
            fp = np.asarray(fun(x + e), dtype=float)
            fm = np.asarray(fun(x - e), dtype=float)
            J[:, i] = (fp - fm) / (2 * h)
        if not np.all(np.isfinite(J[:, i])):
            bad = int(np.flatnonzero(~np.isfinite(J[:, i]))[0])
            raise FloatingPointError(
                f"non-finite derivative of {names[bad] if names else bad} w.r.t. variable {i}")
    return J


def fd_gradient(x: DensityVector, inst: P1Instance, *, level: int | None = None):
    """Gradient of f = -R_total (bits/s per user/m^2) and Jacobian of the
    constraint residuals with respect to the four densities."""
    if level is None:
        level = required_level(x.with_(lambda_W=inst.lambda_W), inst.cfg, OPT_TOL)
    prob = _Scaled(inst, level)
    S = prob.S
    J = fd_jacobian(prob.vector, x.as_array() * S, lower=np.zeros(4), names=("f",) + CONSTRAINT_NAMES)
    # undo scaling: d/dlambda = S d/dx; f in Mbps, rate floors relative
    J = J * S
    J[0] *= MBPS
    J[3:8] *= prob.floors[:, None]
    J[1:3] /= S
    J[8:] /= S
    return J[0], J[1:]


# ---------------------------------------------------------------------------
# SQP pieces

@dataclass
class SqpState:
    x: np.ndarray                 # users per cell
    H: np.ndarray
    f: float                      # Mbps, minimised
    g: np.ndarray
    applies: np.ndarray
    grad: np.ndarray
    jac: np.ndarray
    k: int = 0
    mu: float = 10.0              # l1 penalty weight

    def violation(self) -> float:
        return _violation(self.g, self.applies)


def _violation(g, applies) -> float:
    return float(np.sum(np.clip(g[applies], 0.0, None)))


def qp_subproblem(state: SqpState):
    """Search direction from the QP model.  Returns (S, multipliers per
    constraint row, QpResult).

    The rate floor of a class with x_k = 0 binds only through its first user:
    it is linearised in the form x_k * g_k <= 0, i.e. a bound keeping the
    class empty when g_k > 0 and nothing otherwise (the bound x_k >= 0 is
    already present)."""
    rows, rhs, tags = [], [], []
    locked = []
    for i in range(len(CONSTRAINT_NAMES)):
        k = QOS_CLASS.get(i)
        if k is not None and state.x[k] <= 0.0:
            if state.g[i] > 0.0:
                locked.append(k)
                e = np.zeros(4)
                e[k] = 1.0
                rows.append(e)
                rhs.append(0.0)
                tags.append(i)
            continue
        rows.append(state.jac[i])
        rhs.append(-state.g[i])
        tags.append(i)
    A = np.array(rows)
    b = np.array(rhs)
    res = solve_qp(state.H, state.grad, A, b)
    step = res.s.copy()
    # round-off must not make a locked class marginally present
    step[locked] = 0.0
    mult = np.zeros(len(CONSTRAINT_NAMES))
    for r, i in enumerate(tags):
        mult[i] += res.multipliers[r]
    return step, mult, res


def bfgs_update(H: np.ndarray, dx: np.ndarray, dq: np.ndarray, damping: float = 0.2) -> np.ndarray:
    """BFGS update of the Hessian model with Powell damping."""
    Hs = H @ dx
    sHs = float(dx @ Hs)
    if sHs <= 0.0:
        return H
    sq = float(dx @ dq)
    if sq < damping * sHs:
        theta = (1.0 - damping) * sHs / (sHs - sq)
        dq = theta * dq + (1.0 - theta) * Hs
        sq = float(dx @ dq)
    Hn = H + np.outer(dq, dq) / sq - np.outer(Hs, Hs) / sHs
    Hn = 0.5 * (Hn + Hn.T)
    w = np.linalg.eigvalsh(Hn)
    if w[0] < 1e-8:
        Hn = Hn + (1e-8 - w[0]) * np.eye(len(dx))
    return Hn


@dataclass(frozen=True)
class LineSearchResult:
    beta: float
    x: np.ndarray
    merit_before: float
    merit_after: float
    ok: bool


def _snap(x: np.ndarray, scale: float) -> np.ndarray:
    """Project onto x >= 0 and zero out densities below round-off."""
    x = np.maximum(x, 0.0)
    x[x < 1e-9 * max(1.0, scale)] = 0.0
    return x


def line_search(state: SqpState, S: np.ndarray, prob, *, c1: float = 1e-4, min_exp: int = 20) -> LineSearchResult:
    """Backtracking Armijo search on f + mu * sum(max(0, g_i))."""
    phi0 = state.f + state.mu * state.violation()
    slope = float(state.grad @ S) - state.mu * state.violation()
    slope = min(slope, -1e-12)
    beta = 1.0
    for _ in range(min_exp + 1):
        xn = _snap(state.x + beta * S, float(np.max(state.x, initial=1.0)))
        f, g, applies, _ = prob(xn)
        phi = f + state.mu * _violation(g, applies)
        if phi <= phi0 + c1 * beta * slope:
            return LineSearchResult(beta, xn, phi0, phi, True)
        beta *= 0.5
    return LineSearchResult(0.0, state.x, phi0, phi0, False)


# ---------------------------------------------------------------------------
# initialisation and baselines

def _feasible(prob, x, tol=1e-9) -> bool:
    _, g, applies, _ = prob(x)
    return bool(np.all(g[applies] <= tol))


def greedy_init(inst: P1Instance, step: float | None = None, *, level: int | None = None,
                exclude: frozenset = frozenset()) -> DensityVector:
    """Admit users one increment at a time, alternating LTE and D2D users.

    Each admitted user takes the band (licensed or unlicensed) that yields the
    larger sum rate among placements that keep every constraint satisfied and
    do not lower the sum rate; a user class stops once no placement qualifies
    or its budget is spent.  Density indices in `exclude` never receive users.
    """
    S = inst.cfg.S_cell
    step_users = 1.0 if step is None else step * S
    if step_users <= 0:
        raise ValueError("step must be positive")
    if level is None:
        level = required_level(DensityVector(lambda_W=inst.lambda_W), inst.cfg, OPT_TOL)
    prob = _Scaled(inst, level)
    bC, bD = inst.budgets_users
    x = np.zeros(4)
    f_cur = prob(x)[0]
    # (budget, licensed index, unlicensed index, open)
    groups = [[bC, 0, 2, True], [bD, 1, 3, True]]
    while any(gr[3] for gr in groups):
        for gr in groups:
            budget, il, iu, open_ = gr
            if not open_:
                continue
            inc = min(step_users, budget - x[il] - x[iu])
            if inc <= 1e-12 * max(1.0, budget):
                gr[3] = False
                continue
            best = None
            for idx in (il, iu):
                if idx in exclude:
                    continue
                xn = x.copy()
                xn[idx] += inc
                fn = prob(xn)[0]
                if fn <= f_cur and _feasible(prob, xn) and (best is None or fn < best[0]):
                    best = (fn, xn)
            if best is None:
                gr[3] = False
            else:
                f_cur, x = best
    return prob.density(x)


def baseline_equal_proportion(inst: P1Instance, *, n_scale: int = 200, level: int | None = None):
    """Half of each budget on each band, shrunk uniformly until feasible.
    Returns (densities, R_total in bits/s)."""
    if level is None:
        level = required_level(DensityVector(lambda_W=inst.lambda_W), inst.cfg, OPT_TOL)
    prob = _Scaled(inst, level)
    bC, bD = inst.budgets_users
    full = np.array([bC / 2, bD / 2, bC / 2, bD / 2])
    for t in np.linspace(1.0, 0.0, n_scale + 1):
        x = t * full
        if _feasible(prob, x):
            return prob.density(x), -prob(x)[0] * MBPS
    return prob.density(np.zeros(4)), -prob(np.zeros(4))[0] * MBPS


@dataclass(frozen=True)
class GridSearchResult:
    densities: DensityVector
    R_total: float
    points: int


def grid_search(inst: P1Instance, n: int = 20, *, level: int | None = None) -> GridSearchResult:
    """Brute-force optimum over an n^4 grid on [0, budget] per density.

    Licensed rates depend only on (lambda_C, lambda_D) and unlicensed ones
    only on (lambda_CU, lambda_DU, lambda_W), so each band is tabulated on its
    own n x n grid and the budgets couple the two tables.
    """
    cfg = inst.cfg
    if level is None:
        level = required_level(DensityVector(lambda_W=inst.lambda_W), cfg, OPT_TOL)
    S = cfg.S_cell
    gC = np.linspace(0.0, inst.lambda_all_C, n)
    gD = np.linspace(0.0, inst.lambda_all_D, n)
    lic = np.full((n, n), -np.inf)
    unl = np.full((n, n), -np.inf)
    for i, lc in enumerate(gC):
        for j, ld in enumerate(gD):
            lam = DensityVector(lc, ld, 0.0, 0.0, inst.lambda_W)
            rc = throughput_lte(lam, cfg, level=level)
            rd = throughput_d2d(lam, cfg, level=level)
            if (lc > 0 and rc < cfg.R_th_C) or (ld > 0 and rd < cfg.R_th_D):
                continue
            lic[i, j] = S * (lc * rc + ld * rd)
    for i, lcu in enumerate(gC):
        for j, ldu in enumerate(gD):
            lam = DensityVector(0.0, 0.0, lcu, ldu, inst.lambda_W)
            maps = compute_maps(lam, cfg)
            rcu = throughput_lteu(lam, maps, cfg, level=level)
            rdu = throughput_d2du(lam, maps, cfg, level=level)
            rw = throughput_wifi(lam, maps, cfg, level=level)
            if (lcu > 0 and rcu < cfg.R_th_C) or (ldu > 0 and rdu < cfg.R_th_D) or rw < cfg.R_th_W:
                continue
            unl[i, j] = S * (lcu * rcu + ldu * rdu)
    # licensed index (a, b) pairs with unlicensed (c, d) when a + c <= n-1 and b + d <= n-1
    idx = np.arange(n)
    okC = (idx[:, None] + idx[None, :]) <= n - 1 + 1e-9
    tot = lic[:, :, None, None] + unl[None, None, :, :]
    mask = okC[:, None, :, None] & okC[None, :, None, :]
    tot = np.where(mask, tot, -np.inf)
    a, b, c, d = np.unravel_index(int(np.argmax(tot)), tot.shape)
    best = float(tot[a, b, c, d])
    if not math.isfinite(best):
        return GridSearchResult(DensityVector(lambda_W=inst.lambda_W), float("nan"), n**4)
    return GridSearchResult(DensityVector(gC[a], gD[b], gC[c], gD[d], inst.lambda_W), best, n**4)


# ---------------------------------------------------------------------------
# driver

@dataclass
class TrajectoryRow:
    iter: int
    f: float            # Mbps, minimised (-R_total)
    step_norm: float
    beta: float
    max_violation: float
    merit_before: float
    merit_after: float
    accepted: bool


@dataclass
class P1Solution:
    status: str                       # "optimal" | "iteration_limit" | "infeasible"
    densities: DensityVector
    report: ThroughputReport | None
    trajectory: list = field(default_factory=list)
    iterations: int = 0
    initial: DensityVector | None = None
    kkt: dict = field(default_factory=dict)
    message: str = ""

    @property
    def R_total(self) -> float:
        return self.report.R_total if self.report is not None else float("nan")


def kkt_residuals(prob: _Scaled, x: np.ndarray, *, active_tol: float = 1e-6) -> dict:
    """First-order optimality measures at x in the scaled problem.

    Multipliers are the non-negative least-squares fit of -grad f on the
    gradients of the active constraints (including bounds keeping an empty
    class empty); stationarity is reported relative to max(1, |grad f|).
    """
    J = fd_jacobian(prob.vector, x, lower=np.zeros(4))
    grad, jac = J[0], J[1:]
    _, g, applies, _ = prob(x)
    rows, gvals = [], []
    for i in range(len(CONSTRAINT_NAMES)):
        k = QOS_CLASS.get(i)
        if k is not None and x[k] <= 0.0:
            continue
        if applies[i] and g[i] >= -active_tol * max(1.0, abs(x).max()):
            rows.append(jac[i])
            gvals.append(g[i])
    if rows:
        Aa = np.array(rows).T
        mu, _ = nnls(Aa, -grad)
        r = grad + Aa @ mu
        comp = float(np.max(np.abs(mu * np.array(gvals)))) if len(mu) else 0.0
    else:
        r = grad
        comp = 0.0
    return {
        "stationarity": float(np.max(np.abs(r)) / max(1.0, float(np.max(np.abs(grad))))),
        "complementarity": comp,
        "max_violation": float(np.max(np.clip(g[applies], 0.0, None))),
    }


def _sqp_run(prob: _Scaled, x0: np.ndarray, max_iter: int, tau: float):
    """One SQP descent from x0.  Returns (status, best feasible x or None,
    trajectory, iterations)."""
    zero = np.zeros(4)
    x = x0.copy()
    f, g, applies, _ = prob(x)
    J = fd_jacobian(prob.vector, x, lower=zero)
    st = SqpState(x=x, H=np.eye(4), f=f, g=g, applies=applies, grad=J[0], jac=J[1:])
    best = (f, x.copy()) if _feasible(prob, x) else (math.inf, None)
    traj: list[TrajectoryRow] = []
    status = "iteration_limit"
    failures = 0
    for k in range(1, max_iter + 1):
        st.k = k
        S, mult, _ = qp_subproblem(st)
        if np.linalg.norm(S) <= 1e-10 * max(1.0, np.linalg.norm(st.x)):
            traj.append(TrajectoryRow(k, float(st.f), 0.0, 0.0, st.violation(), st.f, st.f, False))
            status = "optimal"
            break
        st.mu = max(st.mu, 1.5 * float(np.max(mult)) + 1e-6)
        ls = line_search(st, S, prob)
        if not ls.ok:
            traj.append(TrajectoryRow(k, float(st.f), float(np.linalg.norm(S)), 0.0, st.violation(),
                                      ls.merit_before, ls.merit_after, False))
            failures += 1
            if failures >= 2:
                # no descent even from a fresh model: stationary to FD accuracy
                status = "optimal"
                break
            st.H = np.eye(4)
            continue
        failures = 0
        f_new, g_new, app_new, _ = prob(ls.x)
        Jn = fd_jacobian(prob.vector, ls.x, lower=zero)
        dx = ls.x - st.x
        if np.linalg.norm(dx) > 0:
            st.H = bfgs_update(st.H, dx, Jn[0] - st.grad)
        df = f_new - st.f
        st.x, st.f, st.g, st.applies, st.grad, st.jac = ls.x, f_new, g_new, app_new, Jn[0], Jn[1:]
        traj.append(TrajectoryRow(k, float(f_new), float(np.linalg.norm(S)), ls.beta, st.violation(),
                                  ls.merit_before, ls.merit_after, True))
        if _feasible(prob, st.x) and f_new < best[0]:
            best = (f_new, st.x.copy())
        if abs(df) < tau:
            status = "optimal"
            break
    return status, best[1], traj, st.k


def solve_p1(inst: P1Instance, *, max_iter: int = 200, tau: float | None = None,
             x0: DensityVector | None = None, level: int | None = None,
             restarts: int = 8) -> P1Solution:
    """Maximise R_total by SQP from the greedy start.

    Which classes are present splits the feasible set into pieces that a
    descent method cannot move between (a rate floor that fails for the
    first user of a class keeps that class empty).  With restarts > 0 the
    descent is repeated from greedy starts that exclude classes present in
    earlier results, up to `restarts` extra runs, and the best run is kept.
    """
    cfg = inst.cfg
    tau = cfg.tau if tau is None else tau
    if level is None:
        probe = DensityVector(inst.lambda_all_C / 2, inst.lambda_all_D / 2, inst.lambda_all_C / 2,
                              inst.lambda_all_D / 2, inst.lambda_W)
        level = max(required_level(probe, cfg, OPT_TOL),
                    required_level(DensityVector(lambda_W=inst.lambda_W), cfg, OPT_TOL))
    prob = _Scaled(inst, level)
    zero = np.zeros(4)
    if not _feasible(prob, zero):
        return P1Solution("infeasible", prob.density(zero), None,
                          message="rate floor of the Wi-Fi users fails even with no cellular users")
    if x0 is not None:
        runs = [(x0, frozenset())]
    else:
        runs = [(greedy_init(inst, level=level), frozenset())]
    seen = {frozenset()}
    best = None
    n_extra = 0
    while runs:
        start, excl = runs.pop(0)
        status, xb, traj, iters = _sqp_run(prob, start.as_array() * prob.S, max_iter, tau)
        if xb is not None and (best is None or prob(xb)[0] < prob(best[1])[0] - 1e-9):
            best = (status, xb, traj, iters, start)
        if x0 is not None or xb is None:
            continue
        for k in np.flatnonzero(xb > 0):
            nxt = excl | {int(k)}
            if nxt in seen or n_extra >= restarts:
                continue
            seen.add(nxt)
            n_extra += 1
            runs.append((greedy_init(inst, level=level, exclude=nxt), nxt))
    if best is None:
        return P1Solution("infeasible", prob.density(zero), None, message="no feasible iterate found")
    status, xb, traj, iters, start = best
    ev = prob(xb)[3]
    sol = P1Solution(status, prob.density(xb), ev.report, traj, iters, start, kkt_residuals(prob, xb))
    bC, bD = inst.budgets_users
    if np.all(xb == 0.0) and (bC > 0 or bD > 0):
        sol.status = "infeasible"
        sol.message = "no positive density satisfies the rate floors"
    return sol


def write_trajectory_csv(sol: P1Solution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "f", "step_norm", "beta", "max_violation"])
        for r in sol.trajectory:
            w.writerow([r.iter, repr(r.f), repr(r.step_norm), repr(r.beta), repr(r.max_violation)])
