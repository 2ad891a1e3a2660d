"""Continuous-time counterpart: jump chains driven by generator matrices,
several coordinates moving at different speeds, and the slow/fast limit.

The exponential growth rate of E exp(integral of V along the coordinates) is
governed by the principal eigenvalue of the generator perturbed by a diagonal
potential.  With speeds alpha_1 < ... the trailing coordinates equilibrate
infinitely faster than the first, so V enters through its plain (linear)
stationary average over those coordinates:

    Q(V) = lambda_max(alpha_1 L + diag(v_hat)).

Sampling uses per-replicate uniform tapes in a fixed consumption order (one
pair per event attempt) so results are reproducible bit for bit across kernel
backends and thread counts.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import kernels
from .errors import (
    Degenerate,
    NonConvergence,
    NonconvError,
    NotIrreducible,
    StepUnstable,
    ValidationError,
)
from .markov import DualityReport, DVRate
from .model import AlphaSchedule, Observable, ProbVector, reduce_observable
from .rates import RateFunction, legendre_transform
from .rng import substream
from .spectral import is_strongly_connected, perron

_PAIRS_PER_TAPE = 4096


# ---------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class GeneratorMatrix:
    """Conservative jump-rate matrix: nonnegative off-diagonal, zero row sums."""

    rates: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.rates, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("rates must form a square matrix")
        if not np.all(np.isfinite(A)):
            raise ValidationError("rates must be finite")
        off = A.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0):
            raise ValidationError("off-diagonal rates must be nonnegative")
        sums = [math.fsum(row.tolist()) for row in A]
        if max(abs(s) for s in sums) > 1e-12:
            raise ValidationError("generator rows must sum to 0 within 1e-12")
        A = A.copy()
        A.flags.writeable = False
        object.__setattr__(self, "rates", A)

    @property
    def size(self) -> int:
        return self.rates.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return np.clip(-np.diag(self.rates), 0.0, None)

    def is_irreducible(self) -> bool:
        off = self.rates.copy()
        np.fill_diagonal(off, 0.0)
        return is_strongly_connected(off > 0)

    def jump_cdf(self) -> np.ndarray:
        """Row CDFs of the embedded jump chain; absorbing rows are all-ones
        placeholders (the integrator never consults them)."""
        M = self.size
        exit_rates = self.exit_rates
        cdf = np.ones((M, M))
        off = self.rates.copy()
        np.fill_diagonal(off, 0.0)
        live = exit_rates > 0
        cdf[live] = np.cumsum(off[live] / exit_rates[live, None], axis=1)
        return cdf


def stationary_law(L: GeneratorMatrix) -> ProbVector:
    """The unique law annihilated by the generator (irreducible case)."""
    if not L.is_irreducible():
        raise NotIrreducible("generator jump graph is not strongly connected")
    M = L.size
    A = L.rates.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(M)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if float(np.abs(pi @ L.rates).max()) > 1e-10:
        raise NonconvError("stationary solve residual exceeded 1e-10")
    return ProbVector(pi)


def principal_pair(A: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """(lambda_max, right vector, left vector) of a matrix with nonnegative
    off-diagonal entries, via a diagonal shift and the Perron iteration."""
    A = np.asarray(A, dtype=np.float64)
    off = A.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        raise ValidationError("matrix must have nonnegative off-diagonal entries")
    shift = max(0.0, -float(A.diagonal().min())) + 1.0
    B = A + shift * np.eye(A.shape[0])
    root, h = perron(B)
    _, u = perron(B.T)
    return root - shift, h, u


def principal_eigenvalue(A: np.ndarray) -> float:
    return principal_pair(A)[0]


# ---------------------------------------------------------------------------
# moment growth rate and its conjugate


@dataclass(frozen=True)
class QContResult:
    value: float
    reduced: np.ndarray
    alpha1: float


def _reduce_linear(V: Observable, L: GeneratorMatrix, mu) -> np.ndarray:
    if V.alphabet_size != L.size:
        raise ValidationError("observable and generator use different alphabets")
    if mu is None:
        mu = stationary_law(L)
    elif not isinstance(mu, ProbVector):
        mu = ProbVector(np.asarray(mu, dtype=np.float64))
    return reduce_observable(V, mu, 1, mode="linear").values


def q_cont(
    V: Observable,
    L: GeneratorMatrix,
    alphas: AlphaSchedule | float = 1.0,
    mu=None,
) -> QContResult:
    """Growth rate of the exponential moment of the running integral.

    The trailing coordinates are averaged linearly against ``mu`` (the
    stationary law by default) and the result is the principal eigenvalue of
    alpha_1 L + diag of the reduced observable.
    """
    alpha1 = alphas.alphas[0] if isinstance(alphas, AlphaSchedule) else float(alphas)
    if alpha1 <= 0:
        raise ValidationError("the base speed must be positive")
    v_hat = _reduce_linear(V, L, mu)
    value = principal_eigenvalue(alpha1 * L.rates + np.diag(v_hat))
    return QContResult(value=value, reduced=v_hat, alpha1=alpha1)


def rate_function_cont(
    V: Observable,
    L: GeneratorMatrix,
    alphas: AlphaSchedule | float = 1.0,
    u_grid=None,
    mu=None,
    **legendre_kwargs,
) -> RateFunction:
    """Convex conjugate of lam -> Q(lam V), with the eigenvalue derivative
    supplied analytically (left vector, diagonal perturbation, right vector)."""
    alpha1 = alphas.alphas[0] if isinstance(alphas, AlphaSchedule) else float(alphas)
    if alpha1 <= 0:
        raise ValidationError("the base speed must be positive")
    v_hat = _reduce_linear(V, L, mu)
    base = alpha1 * L.rates

    def q(lam: float) -> float:
        return principal_eigenvalue(base + lam * np.diag(v_hat))

    def q_prime(lam: float) -> float:
        _, h, u = principal_pair(base + lam * np.diag(v_hat))
        return float((u * v_hat * h).sum() / (u * h).sum())

    return legendre_transform(q, u_grid, q_prime=q_prime, **legendre_kwargs)


# ---------------------------------------------------------------------------
# occupation-measure rate and duality


class _ContDVProblem:
    def __init__(self, eta: np.ndarray, L: GeneratorMatrix):
        self.eta = eta
        self.L = L.rates
        self.M = L.size

    def value_grad(self, v: np.ndarray):
        # f(v) = sum_x eta_x sum_y L_xy exp(v_y - v_x); convex in v
        E = np.exp(v[None, :] - v[:, None])
        T = self.L * E
        row = T.sum(axis=1)
        f = float(self.eta @ row)
        col = (self.eta[:, None] * T).sum(axis=0)
        grad = col - self.eta * row
        return f, grad


def dv_rate_cont(
    eta,
    L: GeneratorMatrix,
    restarts: int = 8,
    seed: int = 0,
    gtol: float = 1e-10,
) -> DVRate:
    """Occupation-measure rate -inf_{u>0} sum eta (L u)/u, minimized in ln u.

    The objective is convex in ln u, so the restarts only guard against
    flat-direction stalls.
    """
    if not isinstance(eta, ProbVector):
        eta = ProbVector(np.asarray(eta, dtype=np.float64))
    if eta.size != L.size:
        raise ValidationError("law and generator sizes differ")
    problem = _ContDVProblem(eta.weights, L)
    rng = substream(seed, 0)
    best = None
    starts = [np.zeros(L.size)] + [
        0.5 * rng.standard_normal(L.size) for _ in range(restarts)
    ]
    for x0 in starts:
        res = optimize.minimize(
            problem.value_grad,
            x0,
            jac=True,
            method="L-BFGS-B",
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
        minimizer=np.asarray(best.x),
        objective=float(best.fun),
    )


def duality_check_cont(
    v_obs,
    L: GeneratorMatrix,
    restarts: int = 2,
    seed: int = 0,
) -> DualityReport:
    """sup_eta [<v, eta> - I(eta)] against lambda_max(L + diag v).

    The supremum is searched in softmax coordinates with the envelope
    gradient v + (L u*)/u* from the inner minimizer.
    """
    if isinstance(v_obs, Observable):
        if v_obs.arity != 1:
            raise ValidationError("duality needs a one-coordinate observable")
        v_obs = v_obs.values
    v_obs = np.asarray(v_obs, dtype=np.float64)
    if v_obs.shape != (L.size,):
        raise ValidationError("observable and generator sizes differ")
    q_value = principal_eigenvalue(L.rates + np.diag(v_obs))

    warm = {"v": np.zeros(L.size)}

    def inner(eta: np.ndarray):
        problem = _ContDVProblem(eta, L)
        res = optimize.minimize(
            problem.value_grad,
            warm["v"],
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-11},
        )
        warm["v"] = np.asarray(res.x)
        vstar = np.asarray(res.x)
        E = np.exp(vstar[None, :] - vstar[:, None])
        c = (L.rates * E).sum(axis=1)  # (L u*)/u*
        return float(res.fun), c

    def neg_obj(theta: np.ndarray):
        shifted = theta - theta.max()
        eta = np.exp(shifted)
        eta /= eta.sum()
        f_min, c = inner(eta)
        obj = float(eta @ v_obs) - (-f_min)
        g = v_obs + c
        grad_theta = eta * (g - float(eta @ g))
        return -obj, -grad_theta

    rng = substream(seed, 1)
    best = None
    starts = [np.zeros(L.size)] + [
        0.5 * rng.standard_normal(L.size) for _ in range(restarts)
    ]
    for theta0 in starts:
        res = optimize.minimize(
            neg_obj,
            theta0,
            jac=True,
            method="BFGS",
            options={"maxiter": 500, "gtol": 1e-9},
        )
        if best is None or res.fun < best.fun:
            best = res
    pairing = -float(best.fun)
    shifted = best.x - best.x.max()
    eta = np.exp(shifted)
    eta /= eta.sum()
    rate = dv_rate_cont(ProbVector(eta), L, restarts=0, seed=seed)
    return DualityReport(
        q_value=q_value,
        pairing=pairing,
        gap=q_value - pairing,
        eta=eta,
        rate_value=rate.value,
        converged=bool(best.success) and rate.converged,
    )


# ---------------------------------------------------------------------------
# piecewise-constant slow field


@dataclass(frozen=True)
class FieldCell:
    """One homogeneous stretch of the field: a generator, an exponent weight,
    and an affine drift b(z, x) = drift[x] + drift_linear[x] @ z."""

    duration: float
    generator: GeneratorMatrix
    weight: np.ndarray | None = None
    drift: np.ndarray | None = None
    drift_linear: np.ndarray | None = None

    def __post_init__(self):
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValidationError("cell duration must be positive and finite")
        M = self.generator.size
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=np.float64)
            if w.shape != (M,) or not np.all(np.isfinite(w)):
                raise ValidationError("weight must be a finite vector over the states")
            object.__setattr__(self, "weight", w)
        if self.drift is not None:
            d = np.asarray(self.drift, dtype=np.float64)
            if d.ndim != 2 or d.shape[0] != M or not np.all(np.isfinite(d)):
                raise ValidationError("drift must be (states, dim) and finite")
            object.__setattr__(self, "drift", d)
        if self.drift_linear is not None:
            if self.drift is None:
                raise ValidationError("drift_linear needs a constant drift part")
            dim = self.drift.shape[1]
            A = np.asarray(self.drift_linear, dtype=np.float64)
            if A.shape != (M, dim, dim) or not np.all(np.isfinite(A)):
                raise ValidationError("drift_linear must be (states, dim, dim)")
            object.__setattr__(self, "drift_linear", A)


@dataclass(frozen=True)
class SlowField:
    """A sequence of cells traversed in order; all share one state space."""

    cells: tuple[FieldCell, ...]

    def __post_init__(self):
        if not self.cells:
            raise ValidationError("field needs at least one cell")
        sizes = {c.generator.size for c in self.cells}
        if len(sizes) != 1:
            raise ValidationError("all cells must share one state space")
        dims = {c.drift.shape[1] for c in self.cells if c.drift is not None}
        if len(dims) > 1:
            raise ValidationError("all cells must share one slow dimension")

    @property
    def n_states(self) -> int:
        return self.cells[0].generator.size

    @property
    def dim(self) -> int | None:
        for c in self.cells:
            if c.drift is not None:
                return c.drift.shape[1]
        return None

    @property
    def total_duration(self) -> float:
        return math.fsum(c.duration for c in self.cells)


def _integrate_cell(kern, rng, state, t_now, t_end, exit_rates, cum_jump, occupancy):
    """Run one kernel over [t_now, t_end], refilling the uniform tape in
    fixed-size blocks.  Consumption counts are backend-independent because
    this wrapper is shared by both."""
    while True:
        tape = rng.random(2 * _PAIRS_PER_TAPE)
        _, state, t_now, done = kern(
            tape, state, t_now, t_end, exit_rates, cum_jump, occupancy
        )
        if done:
            return state, t_now


def _gillespie_segments(rng, state, t_end, exit_rates, cum_jump):
    """Constant-state segments [(state, t0, t1), ...] covering [0, t_end].

    Consumes uniforms exactly like _integrate_cell (same tape blocks, one
    pair per event attempt), so occupation times accumulated from these
    segments reproduce the kernel's bit for bit.
    """
    M = exit_rates.shape[0]
    segments = []
    t = 0.0
    while t < t_end:
        tape = rng.random(2 * _PAIRS_PER_TAPE)
        used = 0
        while t < t_end and used < _PAIRS_PER_TAPE:
            rate = exit_rates[state]
            if rate <= 0.0:
                segments.append((state, t, t_end))
                t = t_end
                break
            u1 = tape[2 * used]
            u2 = tape[2 * used + 1]
            dt = -math.log1p(-u1) / rate
            used += 1
            if t + dt >= t_end:
                segments.append((state, t, t_end))
                t = t_end
                break
            segments.append((state, t, t + dt))
            t = t + dt
            j = 0
            while j < M - 1 and u2 >= cum_jump[state, j]:
                j += 1
            state = j
    return segments, state


def _resolve_threads(threads) -> int:
    if threads is None:
        threads = os.environ.get("NONCONV_THREADS", "1")
    threads = int(threads)
    if threads < 1:
        raise ValidationError("thread count must be >= 1")
    return threads


def _per_replicate(fn, replicates: int, threads: int) -> list:
    if threads == 1:
        return [fn(r) for r in range(replicates)]
    out = [None] * replicates
    chunks = np.array_split(np.arange(replicates), threads)

    def work(chunk):
        for r in chunk:
            out[int(r)] = fn(int(r))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, chunks))
    return out


@dataclass(frozen=True)
class ExpMomentCheck:
    """Sampled functional vs its eigenvalue prediction."""

    lhs: float
    rhs: float
    stderr: float
    epsilon: float
    replicates: int


def exp_moment_functional(
    field: SlowField,
    epsilon: float,
    replicates: int,
    seed: int = 0,
    initial_state: int = 0,
    threads=None,
) -> ExpMomentCheck:
    """epsilon * ln E exp((1/epsilon) * integral of w along the fast chain),
    against the cell-by-cell eigenvalue sum.

    Over one cell of slow duration D the fast chain runs for D/epsilon of its
    own time, so the exponent contribution is the plain fast-time integral of
    the cell weight; the limit of the whole expression is
    sum_cells D * lambda_max(L + diag w).
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if any(c.weight is None for c in field.cells):
        raise ValidationError("every cell needs a weight vector")
    if not (0 <= initial_state < field.n_states):
        raise ValidationError("initial state out of range")
    M = field.n_states
    prepared = [
        (c.duration / epsilon, c.generator.exit_rates, c.generator.jump_cdf(), c.weight)
        for c in field.cells
    ]
    kern = kernels.ctmc_integrate

    def one(rep: int) -> float:
        rng = substream(seed, rep)
        state = initial_state
        exponent = []
        for horizon, exit_rates, cum_jump, w in prepared:
            occupancy = np.zeros(M)
            state, _ = _integrate_cell(
                kern, rng, state, 0.0, horizon, exit_rates, cum_jump, occupancy
            )
            exponent.append(math.fsum((occupancy * w).tolist()))
        return math.fsum(exponent)

    exps = np.array(_per_replicate(one, replicates, _resolve_threads(threads)))
    shift = float(exps.max())
    e = np.exp(exps - shift)
    mean = float(e.mean())
    lhs = epsilon * (shift + math.log(mean))
    stderr = epsilon * float(e.std(ddof=1)) / (math.sqrt(replicates) * mean)
    rhs = math.fsum(
        c.duration
        * principal_eigenvalue(c.generator.rates + np.diag(c.weight))
        for c in field.cells
    )
    return ExpMomentCheck(
        lhs=lhs,
        rhs=rhs,
        stderr=stderr,
        epsilon=float(epsilon),
        replicates=int(replicates),
    )


# ---------------------------------------------------------------------------
# slow motion


def _rk4_step(f, z: np.ndarray, h: float) -> np.ndarray:
    k1 = f(z)
    k2 = f(z + 0.5 * h * k1)
    k3 = f(z + 0.5 * h * k2)
    k4 = f(z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _cell_drift(cell: FieldCell):
    const = cell.drift
    lin = cell.drift_linear

    def b(z: np.ndarray, x: int) -> np.ndarray:
        out = const[x]
        if lin is not None:
            out = out + lin[x] @ z
        return out

    return b


def _averaged_drift(cell: FieldCell):
    pi = stationary_law(cell.generator).weights
    const = pi @ cell.drift
    lin = None
    if cell.drift_linear is not None:
        lin = np.tensordot(pi, cell.drift_linear, axes=(0, 0))

    def b(z: np.ndarray) -> np.ndarray:
        out = const
        if lin is not None:
            out = out + lin @ z
        return out

    return b


def _check_state(z: np.ndarray, bound: float):
    if not np.all(np.isfinite(z)) or float(np.abs(z).max()) > bound:
        raise StepUnstable("slow trajectory left the stability region")


def _integrate_piecewise(f, z: np.ndarray, t0: float, t1: float, rk_step: float,
                         record: dict, grid: np.ndarray, bound: float):
    """March z from t0 to t1 with RK4, landing exactly on every grid time in
    between and storing the value there."""
    t = t0
    gi = int(np.searchsorted(grid, t0 + 1e-15))
    while t < t1 - 1e-15:
        target = t1
        if gi < grid.size and grid[gi] < t1 - 1e-15:
            target = float(grid[gi])
        while t < target - 1e-15:
            h = min(rk_step, target - t)
            z = _rk4_step(f, z, h)
            t += h
            _check_state(z, bound)
        t = target
        if gi < grid.size and abs(t - grid[gi]) <= 1e-12:
            record[gi] = z.copy()
            gi += 1
    return z, t


@dataclass(frozen=True)
class SlowMotion:
    """Averaged trajectory plus per-replicate sup distances to it."""

    times: np.ndarray
    averaged: np.ndarray
    sup_distances: np.ndarray
    epsilon: float

    @property
    def mean_sup_distance(self) -> float:
        return float(self.sup_distances.mean())


def simulate_slow_motion(
    field: SlowField,
    epsilon: float,
    z0,
    replicates: int,
    seed: int = 0,
    rk_step: float = 1e-2,
    grid_points: int = 257,
    threads=None,
) -> SlowMotion:
    """Integrate dz/dt = b(z, X_{t/epsilon}) against the averaged equation
    dz/dt = sum_x pi(x) b(z, x) and report sup_t |z_eps - z_bar| per replicate.

    The fast path is piecewise constant between its jumps, so within one jump
    segment the slow equation is integrated by plain RK4 steps; grid times are
    landed on exactly in both integrations.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if any(c.drift is None for c in field.cells):
        raise ValidationError("every cell needs a drift")
    z0 = np.atleast_1d(np.asarray(z0, dtype=np.float64))
    if z0.shape != (field.dim,):
        raise ValidationError(f"z0 must have dimension {field.dim}")
    T = field.total_duration
    grid = np.linspace(0.0, T, grid_points)
    bound = 1e6 * (1.0 + float(np.abs(z0).max()))

    # averaged trajectory
    averaged = np.empty((grid_points, z0.size))
    averaged[0] = z0
    record: dict[int, np.ndarray] = {}
    z = z0.copy()
    t = 0.0
    for cell in field.cells:
        z, t = _integrate_piecewise(
            _averaged_drift(cell), z, t, t + cell.duration, rk_step, record, grid, bound
        )
    record[grid_points - 1] = z.copy()
    for gi, zv in record.items():
        averaged[gi] = zv
    missing = set(range(grid_points)) - set(record.keys()) - {0}
    if missing:
        raise NonconvError("internal error: averaged path missed grid times")

    # stochastic replicates
    boundaries = np.concatenate([[0.0], np.cumsum([c.duration for c in field.cells])])
    prepared = [
        (c, _cell_drift(c), c.generator.exit_rates, c.generator.jump_cdf())
        for c in field.cells
    ]

    def one(rep: int) -> float:
        rng = substream(seed, rep)
        state = 0
        z = z0.copy()
        t = 0.0
        values = np.empty((grid_points, z0.size))
        values[0] = z0
        rec: dict[int, np.ndarray] = {}
        for (cell, drift, exit_rates, cum_jump), t_cell in zip(
            prepared, boundaries[:-1]
        ):
            fast_horizon = cell.duration / epsilon
            segments, state = _gillespie_segments(
                rng, state, fast_horizon, exit_rates, cum_jump
            )
            for seg_state, f0, f1 in segments:
                s1 = t_cell + epsilon * f1
                if s1 <= t:
                    continue
                z, t = _integrate_piecewise(
                    lambda zz, x=seg_state: drift(zz, x),
                    z,
                    t,
                    s1,
                    rk_step,
                    rec,
                    grid,
                    bound,
                )
        rec[grid_points - 1] = z.copy()
        for gi, zv in rec.items():
            values[gi] = zv
        if set(range(grid_points)) - set(rec.keys()) - {0}:
            raise NonconvError("internal error: sampled path missed grid times")
        diffs = np.abs(values - averaged).max(axis=1)
        return float(diffs.max())

    sups = np.array(_per_replicate(one, replicates, _resolve_threads(threads)))
    return SlowMotion(
        times=grid,
        averaged=averaged,
        sup_distances=sups,
        epsilon=float(epsilon),
    )


# ---------------------------------------------------------------------------
# path action for occupation-measure trajectories


def _project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    cond = u - css / idx > 0
    rho = int(idx[cond][-1])
    tau = css[rho - 1] / rho
    return np.clip(y - tau, 0.0, None)


@dataclass(frozen=True)
class ActionEstimate:
    value: float
    segment_values: np.ndarray
    feasible: np.ndarray


def action_functional(
    L: GeneratorMatrix,
    gammas,
    times,
    penalties: tuple[float, ...] = (1e-2, 1e-4, 1e-6),
    unbounded_norm: float = 50.0,
) -> ActionEstimate:
    """Action of a piecewise-linear occupation-measure path.

    Per segment, with gamma the (projected) midpoint and beta the slope, the
    local cost is  sup_v [<beta, v> - sum_x gamma_x e^{-v_x} (L e^v)_x],
    nonnegative and zero exactly on the averaged flow.  Slopes that cannot be
    written as a feasible flow on the generator's edge set (a linear program)
    cost +inf, as do drains out of states the midpoint gives no mass
    (detected by the maximizer norm escaping; the sup is approached through a
    vanishing quadratic penalty that also fixes the all-ones flat direction).
    """
    gammas = np.asarray(gammas, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if gammas.ndim != 2 or gammas.shape[1] != L.size:
        raise ValidationError("gammas must be (points, states)")
    if times.shape != (gammas.shape[0],) or np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing, one per point")
    if gammas.shape[0] < 2:
        raise ValidationError("need at least two path points")
    pts = np.array([_project_simplex(g) for g in gammas])

    off_mask = L.rates > 0
    np.fill_diagonal(off_mask, False)
    edges = np.argwhere(off_mask)
    M = L.size

    # flow feasibility LP: beta_x = sum_in j - sum_out j on the edge set
    A_eq = np.zeros((M, len(edges)))
    for e, (x, y) in enumerate(edges):
        A_eq[y, e] += 1.0
        A_eq[x, e] -= 1.0

    n_seg = gammas.shape[0] - 1
    seg_vals = np.empty(n_seg)
    feasible = np.ones(n_seg, dtype=bool)

    for i in range(n_seg):
        dt = float(times[i + 1] - times[i])
        beta = (pts[i + 1] - pts[i]) / dt
        gamma = _project_simplex(0.5 * (pts[i] + pts[i + 1]))
        if len(edges) == 0:
            ok = bool(np.abs(beta).max() < 1e-12)
        else:
            lp = optimize.linprog(
                c=np.zeros(len(edges)),
                A_eq=A_eq,
                b_eq=beta,
                bounds=[(0, None)] * len(edges),
                method="highs",
            )
            ok = bool(lp.status == 0)
        if not ok:
            feasible[i] = False
            seg_vals[i] = math.inf
            continue

        Lr = L.rates

        def neg_g(v: np.ndarray, delta: float):
            E = np.exp(v[None, :] - v[:, None])
            T = Lr * E
            row = T.sum(axis=1)
            g = float(beta @ v) - float(gamma @ row)
            col = (gamma[:, None] * T).sum(axis=0)
            grad = beta - (col - gamma * row)
            return -(g - delta * float(v @ v)), -(grad - 2.0 * delta * v)

        v = np.zeros(M)
        for delta in penalties:
            res = optimize.minimize(
                neg_g,
                v,
                args=(delta,),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-11},
            )
            v = np.asarray(res.x)
        if float(np.abs(v).max()) > unbounded_norm:
            feasible[i] = False
            seg_vals[i] = math.inf
            continue
        E = np.exp(v[None, :] - v[:, None])
        seg_vals[i] = max(
            float(beta @ v) - float(gamma @ (Lr * E).sum(axis=1)), 0.0
        )

    if np.any(~feasible):
        total = math.inf
    else:
        total = math.fsum(
            float(seg_vals[i]) * float(times[i + 1] - times[i])
            for i in range(n_seg)
        )
    return ActionEstimate(value=total, segment_values=seg_vals, feasible=feasible)
