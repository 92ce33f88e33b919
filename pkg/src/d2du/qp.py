"""Small dense convex QP solver (primal active set).

    minimize  c^T s + 1/2 s^T H s   subject to  A s <= b

H must be symmetric positive definite.  A feasible start comes from a phase-1
LP; when the constraints are inconsistent the right-hand side is relaxed by
the smallest elastic slack that restores feasibility and the result is
flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


@dataclass(frozen=True)
class QpResult:
    s: np.ndarray
    multipliers: np.ndarray   # one per row of A, zero for inactive rows
    active: tuple
    iterations: int
    relaxed: bool = False
    slack: np.ndarray | None = None


def _phase1(A: np.ndarray, b: np.ndarray, x0: np.ndarray | None):
    n = A.shape[1]
    if x0 is not None and np.all(A @ x0 <= b + 1e-12):
        return x0.copy(), None
    lp = linprog(np.zeros(n), A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    if lp.status == 0:
        return lp.x, None
    # elastic: minimise total violation sum(t), A s - t <= b, t >= 0
    m = A.shape[0]
    c = np.concatenate((np.zeros(n), np.ones(m)))
    A_el = np.hstack((A, -np.eye(m)))
    bounds = [(None, None)] * n + [(0, None)] * m
    lp = linprog(c, A_ub=A_el, b_ub=b, bounds=bounds, method="highs")
    if lp.status != 0:
        raise RuntimeError(f"phase-1 LP failed: {lp.message}")
    return lp.x[:n], lp.x[n:]


def _eqp_solve(H, g, Aw):
    """Minimise g^T p + 1/2 p^T H p subject to Aw p = 0 by null-space
    projection, which keeps Aw p = 0 to round-off even when H is badly
    conditioned.  Returns the step and the multipliers of the rows of Aw."""
    n = H.shape[0]
    if Aw.shape[0] == 0:
        return np.linalg.solve(H, -g), np.zeros(0)
    _, sv, Vt = np.linalg.svd(Aw)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    Z = Vt[rank:].T
    if Z.shape[1] == 0:
        p = np.zeros(n)
    else:
        p = Z @ np.linalg.solve(Z.T @ H @ Z, -Z.T @ g)
    # Aw^T mu = -(g + H p)
    mu = -np.linalg.lstsq(Aw.T, g + H @ p, rcond=None)[0]
    return p, mu


def solve_qp(H: np.ndarray, c: np.ndarray, A: np.ndarray, b: np.ndarray, *,
             x0: np.ndarray | None = None, max_iter: int = 500, tol: float = 1e-10) -> QpResult:
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.size
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float)
    m = A.shape[0]
    if m == 0:
        s = np.linalg.solve(H, -c)
        return QpResult(s, np.zeros(0), (), 0)
    s, slack = _phase1(A, b, x0)
    relaxed = slack is not None
    if relaxed:
        b = b + slack
    scale = np.maximum(np.linalg.norm(A, axis=1), 1e-300)
    resid = b - A @ s
    work: list[int] = []
    for i in np.argsort(resid / scale):
        if resid[i] <= tol * max(1.0, abs(b[i])) * scale[i] and len(work) < n:
            cand = work + [int(i)]
            if np.linalg.matrix_rank(A[cand]) == len(cand):
                work = cand
    stalls = 0
    for it in range(1, max_iter + 1):
        g = c + H @ s
        Aw = A[work] if work else np.zeros((0, n))
        p, mu = _eqp_solve(H, g, Aw)
        if np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(s)):
            neg = [j for j in range(len(work)) if mu[j] < -tol * max(1.0, np.abs(mu).max())]
            if neg:
                # after zero-length steps drop the lowest-index constraint (Bland) to avoid cycling
                j = min(neg, key=lambda j: work[j]) if stalls > n else min(neg, key=lambda j: mu[j])
                work.pop(j)
                continue
            mu_full = np.zeros(m)
            for idx, val in zip(work, mu):
                mu_full[idx] = max(val, 0.0)
            return QpResult(s, mu_full, tuple(work), it, relaxed, slack)
        step = 1.0
        block = None
        Ap = A @ p
        pn = np.linalg.norm(p)
        for i in range(m):
            if i in work or Ap[i] <= tol * scale[i] * pn:
                continue
            t = max((b[i] - A[i] @ s) / Ap[i], 0.0)
            if t < step or (t == step and block is not None and i < block):
                step, block = t, i
        s = s + step * p
        stalls = stalls + 1 if step == 0.0 else 0
        if block is not None:
            work.append(block)
    raise RuntimeError("active-set QP did not converge")
