"""Growth rates of potential-weighted Markov transition operators, and the
matching variational (occupation-measure) rate functional.

The central object is the weighted matrix R(x, y) = P(x, y) * Wh(y), where
Wh = exp of the arity-1 exponential reduction of a multi-symbol potential.
Its Perron root r gives Q(W) = log r, the limiting normalized log-moment of
the progression sums; Q pairs by convex duality with a level-2 rate
functional I over probability tensors on symbol tuples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import spectral
from .errors import NotErgodic, ValidationError
from .model import (
    Observable,
    ProbVector,
    StochasticMatrix,
    _log_mean_last_axis,
    reduce_observable,
)
from .rates import RateFunction, legendre_transform

__all__ = [
    "TransferMatrix",
    "transfer_operator",
    "spectral_radius",
    "q_functional",
    "finite_n_log_moment",
    "rate_function_markov",
    "DVRate",
    "dv_rate",
    "DualityReport",
    "duality_check",
]


@dataclass(frozen=True)
class TransferMatrix:
    """Transition matrix with destination states reweighted by a positive
    potential vector: matrix[x, y] = P[x, y] * weight[y]."""

    matrix: np.ndarray
    weight: np.ndarray


def transfer_operator(
    P: StochasticMatrix, mu: ProbVector, W: Observable
) -> TransferMatrix:
    """Weight each transition by the exponential mu-reduction of W."""
    if W.alphabet_size != P.size or mu.size != P.size:
        raise ValidationError("alphabet sizes of P, mu and W must agree")
    wh = np.exp(reduce_observable(W, mu, 1, "log").values)
    return TransferMatrix(matrix=P.rows * wh[None, :], weight=wh)


def spectral_radius(T, *, tol: float = 1e-12) -> float:
    """Perron root of a transfer matrix (or any irreducible nonnegative one)."""
    matrix = T.matrix if isinstance(T, TransferMatrix) else np.asarray(T)
    return spectral.spectral_radius(matrix, tol=tol)


def q_functional(P: StochasticMatrix, mu: ProbVector, W: Observable) -> float:
    """Limiting normalized log-moment: log of the Perron root of the
    W-weighted transition matrix.  Requires an ergodic P."""
    if not P.is_ergodic():
        raise NotErgodic("transition matrix must be irreducible and aperiodic")
    return math.log(spectral_radius(transfer_operator(P, mu, W)))


def finite_n_log_moment(
    P: StochasticMatrix, mu: ProbVector, W: Observable, N: int, x0: int = 0
) -> float:
    """(1/N) log E_x0 exp(sum of the reduced potential along N steps).

    Computed exactly by N rescaled mat-vec products with the weighted
    transition matrix; converges to q_functional at rate O(1/N).
    """
    if N < 1:
        raise ValidationError("N must be >= 1")
    if not (0 <= x0 < P.size):
        raise ValidationError("x0 outside the alphabet")
    R = transfer_operator(P, mu, W).matrix
    v = np.ones(P.size)
    log_scale = 0.0
    for _ in range(N):
        v = R @ v
        peak = v.max()
        v /= peak
        log_scale += math.log(peak)
    return (log_scale + math.log(v[x0])) / N


def rate_function_markov(
    P: StochasticMatrix,
    mu: ProbVector,
    F: Observable,
    u_grid=None,
    **kwargs,
) -> RateFunction:
    """Rate function of the progression averages driven by an ergodic chain."""
    return legendre_transform(lambda lam: q_functional(P, mu, F * lam), u_grid, **kwargs)


# ---------------------------------------------------------------------------
# variational rate over occupation tensors


def _check_eta(eta, size: int, arity: int) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (size,) * arity:
        raise ValidationError(f"eta must have shape {(size,) * arity}")
    if np.any(eta < 0) or abs(eta.sum() - 1.0) > 1e-10:
        raise ValidationError("eta must be a probability tensor")
    return eta


def _log_tail_mean(v: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """log of the mu-mean of exp(v) over all trailing axes (keeps axis 0)."""
    out = v
    while out.ndim > 1:
        out = _log_mean_last_axis(out, weights)
    return out


class _DVProblem:
    """min over v of D(v) = sum_x eta(x) [log h(x1) - v(x)], where
    h(x1) = sum_y P(x1, y) * mean_mu exp(v(y, .)).  -min D is the rate."""

    def __init__(self, eta: np.ndarray, P: np.ndarray, mu: np.ndarray):
        self.eta = eta
        self.P = P
        self.mu = mu
        self.shape = eta.shape
        axes = tuple(range(1, eta.ndim))
        self.eta1 = eta.sum(axis=axes) if axes else eta
        with np.errstate(divide="ignore"):
            log_mu = np.log(mu)
        tail = np.zeros(self.shape[1:]) if eta.ndim > 1 else np.zeros(())
        for axis, _ in enumerate(self.shape[1:]):
            shp = [1] * (eta.ndim - 1)
            shp[axis] = len(mu)
            tail = tail + log_mu.reshape(shp)
        self.log_mu_tail = tail  # log of the product weights on trailing axes

    def value_grad(self, v_flat: np.ndarray):
        v = v_flat.reshape(self.shape)
        log_ubar = _log_tail_mean(v, self.mu)                      # (M,)
        shift = log_ubar.max()
        hv = self.P @ np.exp(log_ubar - shift)                     # (M,)
        log_h = np.log(hv) + shift
        D = float(np.sum(self.eta * (log_h.reshape((-1,) + (1,) * (v.ndim - 1)) - v)))
        # a(x1, y): transition responsibilities; rows sum to 1
        a = self.P * np.exp(log_ubar[None, :] - log_h[:, None])
        w = self.eta1 @ a                                          # (M,)
        with np.errstate(invalid="ignore"):
            p = np.exp(
                v + self.log_mu_tail[None, ...] - log_ubar.reshape((-1,) + (1,) * (v.ndim - 1))
            )
        grad = w.reshape((-1,) + (1,) * (v.ndim - 1)) * p - self.eta
        return D, grad.ravel()


@dataclass(frozen=True)
class DVRate:
    """Variational rate value with solver diagnostics."""

    value: float
    converged: bool
    minimizer: np.ndarray
    objective: float


def dv_rate(
    eta,
    P: StochasticMatrix,
    mu: ProbVector,
    *,
    restarts: int = 8,
    seed: int = 0,
    gtol: float = 1e-10,
) -> DVRate:
    """Rate of an occupation tensor eta: the negated infimum over positive
    test functions u of the mean log-ratio (averaged kernel action on u) / u.

    Optimized over v = log u (unconstrained, convex in v) by quasi-Newton
    descent from v = 0 plus random restarts; returns the best value found and
    a convergence flag.
    """
    arity = np.asarray(eta).ndim
    eta = _check_eta(eta, P.size, arity)
    problem = _DVProblem(eta, P.rows, mu.weights)
    dim = eta.size
    rng = np.random.default_rng(seed)

    best = None
    starts = [np.zeros(dim)] + [0.5 * rng.standard_normal(dim) for _ in range(restarts)]
    for x0 in starts:
        res = optimize.minimize(
            problem.value_grad, x0, jac=True, method="L-BFGS-B",
            options={"maxiter": 2000, "ftol": 1e-15, "gtol": gtol},
        )
        if best is None or res.fun < best.fun:
            best = res
    converged = bool(best.success) or float(np.abs(best.jac).max()) < 1e-7
    value = -float(best.fun)
    if -1e-12 < value < 0.0:
        value = 0.0
    return DVRate(
        value=value,
        converged=converged,
        minimizer=best.x.reshape(eta.shape),
        objective=float(best.fun),
    )


@dataclass(frozen=True)
class DualityReport:
    """Two sides of the convex pairing sup_eta (<W, eta> - I(eta)) = Q(W)."""

    q_value: float
    pairing: float
    gap: float
    eta: np.ndarray
    rate_value: float
    converged: bool


def duality_check(
    W: Observable,
    P: StochasticMatrix,
    mu: ProbVector,
    *,
    restarts: int = 2,
    seed: int = 0,
) -> DualityReport:
    """Maximize <W, eta> - I(eta) over probability tensors (softmax ascent
    with envelope gradients) and report the gap against Q(W)."""
    q_value = q_functional(P, mu, W)
    shape = (P.size,) * W.arity
    dim = int(np.prod(shape))
    Wv = W.values.ravel()
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu.weights)
    theta0 = np.zeros(dim)
    for axis in range(W.arity):
        shp = [1] * W.arity
        shp[axis] = P.size
        theta0 = theta0 + np.broadcast_to(log_mu.reshape(shp), shape).ravel()

    warm = {"v": np.zeros(dim)}

    def neg_objective(theta):
        t = theta - theta.max()
        eta_flat = np.exp(t)
        eta_flat /= eta_flat.sum()
        eta = eta_flat.reshape(shape)
        problem = _DVProblem(eta, P.rows, mu.weights)
        res = optimize.minimize(
            problem.value_grad, warm["v"], jac=True, method="L-BFGS-B",
            options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-11},
        )
        warm["v"] = res.x
        v = res.x.reshape(shape)
        log_ubar = _log_tail_mean(v, mu.weights)
        shift = log_ubar.max()
        log_h = np.log(P.rows @ np.exp(log_ubar - shift)) + shift
        c_v = (log_h.reshape((-1,) + (1,) * (W.arity - 1)) - v).ravel()
        g_eta = Wv + c_v                       # envelope gradient of the pairing
        obj = float(eta_flat @ g_eta)          # <W,eta> + min_v D = <W,eta> - I
        grad_theta = eta_flat * (g_eta - obj)
        return -obj, -grad_theta

    rng = np.random.default_rng(seed)
    best = None
    ok = False
    for trial in range(restarts + 1):
        start = theta0 if trial == 0 else theta0 + 0.5 * rng.standard_normal(dim)
        warm["v"] = np.zeros(dim)
        res = optimize.minimize(
            neg_objective, start, jac=True, method="BFGS",
            options={"maxiter": 500, "gtol": 1e-9},
        )
        if best is None or res.fun < best.fun:
            best = res
        ok = ok or bool(res.success) or np.abs(res.jac).max() < 1e-6
    t = best.x - best.x.max()
    eta_best = np.exp(t)
    eta_best /= eta_best.sum()
    eta_best = eta_best.reshape(shape)
    pairing = -float(best.fun)
    rate = dv_rate(eta_best, P, mu, restarts=2, seed=seed)
    return DualityReport(
        q_value=q_value,
        pairing=pairing,
        gap=q_value - pairing,
        eta=eta_best,
        rate_value=rate.value,
        converged=ok and rate.converged,
    )
