"""Perron-root machinery for small nonnegative matrices.

Everything here is deliberately dependency-free (no dense eigensolvers): the
spectral radius is computed by power iteration with sup-norm normalization,
using the classical min/max Rayleigh-type ratio bounds as the stopping rule.
Dense eigensolvers appear only in the test suite, as an independent oracle.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NonConvergence, NotIrreducible, TooLarge

#: Policy cap on matrix order: these routines target small alphabets, and the
#: quadratic/cubic costs elsewhere in the package assume modest M.
MAX_ORDER = 64


def _reachable(mask: np.ndarray, start: int) -> np.ndarray:
    """Vertices reachable from ``start`` in the digraph ``mask`` (boolean adjacency)."""
    n = mask.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        nxt = mask[frontier].any(axis=0) & ~seen
        frontier = list(np.nonzero(nxt)[0])
        seen |= nxt
    return seen


def is_strongly_connected(mask: np.ndarray) -> bool:
    return bool(_reachable(mask, 0).all() and _reachable(mask.T, 0).all())


def graph_period(mask: np.ndarray) -> int:
    """Period of a strongly connected digraph: gcd of (level[u] + 1 - level[v])
    over all edges u -> v, with levels from a BFS tree."""
    n = mask.shape[0]
    level = np.full(n, -1, dtype=np.int64)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.nonzero(mask[u])[0]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u, v in zip(*np.nonzero(mask)):
        g = math.gcd(g, int(level[u]) + 1 - int(level[v]))
    return abs(g) if g else 1


def perron(
    matrix: np.ndarray,
    *,
    tol: float = 1e-12,
    max_iter: int = 500_000,
    check_irreducible: bool = True,
) -> tuple[float, np.ndarray]:
    """Perron root and right eigenvector of an irreducible nonnegative matrix.

    Power iteration runs on A + cI (c = max row sum), which is primitive
    whenever A is irreducible, so the iteration cannot cycle.  At each step
    the ratios (Ax)_i / x_i bracket the root from both sides; the loop stops
    when the bracket has collapsed to the relative tolerance.  For a
    stochastic matrix the very first bracket already collapses and the root
    comes out as exactly 1.0.

    Returns ``(root, vector)`` with the vector normalized to unit sup-norm.
    Raises NotIrreducible / TooLarge / NonConvergence.
    """
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix expected")
    n = A.shape[0]
    if n > MAX_ORDER:
        raise TooLarge(f"matrix order {n} exceeds the cap of {MAX_ORDER}")
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise ValueError("entries must be finite and nonnegative")
    if n == 1:
        return float(A[0, 0]), np.ones(1)
    if check_irreducible and not is_strongly_connected(A > 0):
        raise NotIrreducible("positivity pattern is not strongly connected")

    shift = float(A.sum(axis=1).max())
    if shift == 0.0:
        return 0.0, np.ones(n)
    x = np.ones(n)
    for _ in range(max_iter):
        y = A @ x + shift * x
        ratios = y / x
        r_lo = float(ratios.min())
        r_hi = float(ratios.max())
        if r_hi - r_lo <= tol * r_hi:
            root = r_lo if r_lo == r_hi else 0.5 * (r_lo + r_hi)
            return root - shift, x / x.max()
        x = y / y.max()
    raise NonConvergence(
        f"power iteration did not stagnate within {max_iter} iterations"
    )


def spectral_radius(matrix: np.ndarray, *, tol: float = 1e-12) -> float:
    """Spectral radius of an irreducible nonnegative matrix."""
    root, _ = perron(matrix, tol=tol)
    return root
