"""Small quadrature toolkit: composite Gauss-Legendre rules, Wynn epsilon
acceleration and an oscillatory half-line integrator."""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalFailure


@lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_panels(breaks: Sequence[float], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of an n-point Gauss-Legendre rule on every panel
    [breaks[i], breaks[i+1]]."""
    b = np.asarray(breaks, dtype=float)
    x, w = _leggauss(n)
    half = 0.5 * np.diff(b)
    mid = 0.5 * (b[1:] + b[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def geometric_breaks(a: float, b: float, first: float, ratio: float = 4.0) -> np.ndarray:
    """Breakpoints on [a, b] that grade geometrically from width `first` at a."""
    out = [a]
    step = first
    while out[-1] + step < b:
        out.append(out[-1] + step)
        step *= ratio
    out.append(b)
    return np.array(out)


def wynn_epsilon(partial_sums: Sequence[float]) -> float:
    """Wynn's epsilon extrapolation of a sequence of partial sums.

    Returns the highest-order even-column entry that is defined.
    """
    s = [float(v) for v in partial_sums]
    n = len(s)
    if n < 3:
        return s[-1]
    prev = [0.0] * (n + 1)
    cur = s[:]
    best = s[-1]
    k = 0
    while len(cur) > 1:
        nxt = []
        for i in range(len(cur) - 1):
            d = cur[i + 1] - cur[i]
            if d == 0.0:
                # converged column; keep best estimate
                return cur[i + 1] if k % 2 == 0 else best
            nxt.append(prev[i + 1] + 1.0 / d)
        prev, cur = cur, nxt
        k += 1
        if k % 2 == 0 and cur:
            best = cur[-1]
    return best


def oscillatory_halfline(
    f: Callable[[np.ndarray], np.ndarray],
    half_period: float,
    *,
    nodes_per_window: int = 24,
    rtol: float = 1e-8,
    max_windows: int = 4000,
    name: str = "oscillatory integral",
) -> float:
    """Integrate f over [0, inf) where f oscillates with the given half period.

    The half line is cut into windows of one half period each.  Windows are
    summed directly until a window contributes less than `rtol` of the running
    total; when the envelope decays too slowly for that, the partial sums are
    extrapolated with Wynn's epsilon algorithm and accepted once successive
    extrapolations agree to `rtol`.
    """
    x, w = _leggauss(nodes_per_window)
    h = 0.5 * half_period
    total = 0.0
    partial: list[float] = []
    last_extrap = None
    stable = 0
    for k in range(max_windows):
        mid = (k + 0.5) * half_period
        term = float(np.dot(w, f(mid + h * x)) * h)
        total += term
        partial.append(total)
        if k >= 3 and abs(term) <= rtol * max(abs(total), 1e-300):
            return total
        if k >= 8 and k % 2 == 0:
            extrap = wynn_epsilon(partial[-min(len(partial), 40):])
            if last_extrap is not None and abs(extrap - last_extrap) <= rtol * max(abs(extrap), 1e-12):
                stable += 1
                if stable >= 2:
                    return extrap
            else:
                stable = 0
            last_extrap = extrap
    raise NumericalFailure(name, total, abs(partial[-1] - partial[-2]), f"{max_windows} windows")
