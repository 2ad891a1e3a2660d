"""Convex-duality utilities: turning a scaled cumulant-generating function
q(lambda) into a rate function J(u) = sup_lambda (lambda u - q(lambda)).

The supremum is located by safeguarded Newton iteration on q'(lambda) = u
inside a finite lambda box, falling back to bisection whenever the Newton
step leaves the current bracket.  Outside the closure of the range of q'
over the box, J is +inf.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError

__all__ = ["RateFunction", "legendre_transform"]


@dataclass(frozen=True)
class RateFunction:
    """Sampled rate function together with its generating data.

    lambdas / q_values tabulate q on an adaptively refined grid (diagnostic;
    the transform itself always queries the exact callback).  For each u in
    u_grid, j_values holds J(u) (+inf outside [u_min, u_max]) and multipliers
    the maximizing lambda (nan where J is infinite).
    """

    lambdas: np.ndarray
    q_values: np.ndarray
    u_grid: np.ndarray
    j_values: np.ndarray
    multipliers: np.ndarray
    u_min: float
    u_max: float

    def j_at(self, u: float) -> float:
        """J at the closest tabulated u (convenience accessor)."""
        idx = int(np.argmin(np.abs(self.u_grid - u)))
        return float(self.j_values[idx])


class _Memo:
    def __init__(self, fn: Callable[[float], float]):
        self.fn = fn
        self.cache: dict[float, float] = {}

    def __call__(self, lam: float) -> float:
        lam = float(lam)
        if lam not in self.cache:
            self.cache[lam] = float(self.fn(lam))
        return self.cache[lam]


def _fd_prime(q: Callable[[float], float], lam: float) -> float:
    h = 1e-5 * max(1.0, abs(lam))
    return (q(lam + h) - q(lam - h)) / (2.0 * h)


def _fd_second(q: Callable[[float], float], lam: float) -> float:
    h = 1e-4 * max(1.0, abs(lam))
    return (q(lam + h) - 2.0 * q(lam) + q(lam - h)) / (h * h)


def _refine_grid(q, lam_lo, lam_hi, base: int, max_pts: int) -> np.ndarray:
    """Adaptive lambda table: bisect panels where the second difference of q
    is large (high curvature) until the budget is spent."""
    grid = list(np.linspace(lam_lo, lam_hi, base))
    while len(grid) < max_pts:
        vals = [q(x) for x in grid]
        worst, worst_gap = None, 0.0
        for i in range(1, len(grid) - 1):
            bend = abs(vals[i + 1] - 2 * vals[i] + vals[i - 1])
            gap = grid[i + 1] - grid[i - 1]
            score = bend * gap
            if score > worst_gap:
                worst, worst_gap = i, score
        if worst is None or worst_gap < 1e-10:
            break
        grid.insert(worst + 1, 0.5 * (grid[worst] + grid[worst + 1]))
        grid.insert(worst, 0.5 * (grid[worst - 1] + grid[worst]))
        grid = sorted(set(grid))
    return np.array(sorted(set(grid)))


def legendre_transform(
    q: Callable[[float], float],
    u_grid=None,
    *,
    lam_lo: float = -20.0,
    lam_hi: float = 20.0,
    q_prime: Callable[[float], float] | None = None,
    grid_points: int = 33,
    max_grid_points: int = 129,
    tol: float = 1e-10,
) -> RateFunction:
    """Build the rate function J(u) = sup over lambda of (lambda u - q(lambda)).

    q must be convex with q(0) = 0 (checked to 1e-10).  q_prime, when given,
    is used for the Newton iteration; otherwise central differences are used.
    """
    q = _Memo(q)
    if abs(q(0.0)) > 1e-10:
        raise ValidationError("q(0) must vanish")
    if not (lam_lo < 0.0 < lam_hi):
        raise ValidationError("the lambda box must contain 0")

    qp = q_prime if q_prime is not None else (lambda lam: _fd_prime(q, lam))
    u_min = float(qp(lam_lo))
    u_max = float(qp(lam_hi))

    lam_table = _refine_grid(q, lam_lo, lam_hi, grid_points, max_grid_points)
    q_table = np.array([q(x) for x in lam_table])

    if u_grid is None:
        pad = 1e-9 * max(1.0, abs(u_max - u_min))
        u_grid = np.linspace(u_min + pad, u_max - pad, 101)
    u_grid = np.asarray(u_grid, dtype=np.float64)

    j_values = np.empty_like(u_grid)
    multipliers = np.full_like(u_grid, np.nan)
    edge_tol = tol * max(1.0, abs(u_min), abs(u_max))
    lam_warm = 0.0
    for i, u in enumerate(u_grid):
        if u < u_min - edge_tol or u > u_max + edge_tol:
            j_values[i] = np.inf
            continue
        if u <= u_min:
            lam_star = lam_lo
        elif u >= u_max:
            lam_star = lam_hi
        else:
            lam_star = _solve_prime(q, qp, float(u), lam_lo, lam_hi, lam_warm, tol)
            lam_warm = lam_star
        jv = lam_star * u - q(lam_star)
        if jv < 0.0:
            if jv < -1e-9:
                raise ValidationError(
                    "supremum came out negative; q is not a valid convex "
                    "normalized input"
                )
            jv = 0.0
        j_values[i] = jv
        multipliers[i] = lam_star

    return RateFunction(
        lambdas=lam_table,
        q_values=q_table,
        u_grid=u_grid,
        j_values=j_values,
        multipliers=multipliers,
        u_min=u_min,
        u_max=u_max,
    )


def _solve_prime(q, qp, u, lo, hi, start, tol) -> float:
    """Safeguarded Newton on q'(lam) = u with a maintained bracket."""
    g_lo = qp(lo) - u
    g_hi = qp(hi) - u
    if g_lo > 0.0:
        return lo
    if g_hi < 0.0:
        return hi
    lam = min(max(start, lo), hi)
    scale = max(1.0, abs(u))
    for _ in range(100):
        g = qp(lam) - u
        if abs(g) <= tol * scale:
            return lam
        if g < 0.0:
            lo = lam
        else:
            hi = lam
        curv = _fd_second(q, lam)
        step_ok = curv > 0.0 and np.isfinite(curv)
        lam_new = lam - g / curv if step_ok else 0.5 * (lo + hi)
        if not (lo < lam_new < hi):
            lam_new = 0.5 * (lo + hi)
        if hi - lo <= 1e-13 * max(1.0, abs(lam)):
            return 0.5 * (lo + hi)
        lam = lam_new
    return lam
