"""Core model types: alphabets, probability vectors, transition matrices,
observables on symbol tuples, and index schedules.

An observable of arity m is a real tensor indexed by m symbols.  The two
reductions that matter downstream are the exponential average

    V -> log E exp(V)   over trailing coordinates, one axis at a time,

and the plain linear average; both integrate the trailing coordinates against
a fixed probability vector and leave a lower-arity observable behind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NoDoeblinWithinHorizon,
    NonconvError,
    NotErgodic,
    ValidationError,
)
from .spectral import graph_period, is_strongly_connected

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class FiniteAlphabet:
    """Ordered finite alphabet; symbols are referred to by index everywhere."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValidationError("alphabet must be nonempty")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("alphabet labels must be distinct")

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class ProbVector:
    """Probability vector: nonnegative weights summing to 1 within 1e-12."""

    weights: np.ndarray

    def __post_init__(self):
        w = _as_float_array(self.weights, "weights")
        if w.ndim != 1:
            raise ValidationError("weights must be one-dimensional")
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
        if abs(math.fsum(w.tolist()) - 1.0) > _SUM_TOL:
            raise ValidationError("weights must sum to 1 within 1e-12")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True)
class StochasticMatrix:
    """Row-stochastic matrix: nonnegative rows summing to 1 within 1e-12."""

    rows: np.ndarray

    def __post_init__(self):
        p = _as_float_array(self.rows, "rows")
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValidationError("rows must form a square matrix")
        if np.any(p < 0):
            raise ValidationError("transition probabilities must be nonnegative")
        sums = [math.fsum(row.tolist()) for row in p]
        if max(abs(s - 1.0) for s in sums) > _SUM_TOL:
            raise ValidationError("each row must sum to 1 within 1e-12")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "rows", p)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def is_irreducible(self) -> bool:
        return is_strongly_connected(self.rows > 0)

    def is_ergodic(self) -> bool:
        mask = self.rows > 0
        return is_strongly_connected(mask) and graph_period(mask) == 1


@dataclass(frozen=True)
class DoeblinCertificate:
    """Witness (n0, C, nu) that the n0-step kernel is squeezed between
    C^-1 nu and C nu entrywise."""

    n0: int
    C: float
    nu: ProbVector

    def __post_init__(self):
        if self.n0 < 1:
            raise ValidationError("n0 must be a positive integer")
        if not (self.C >= 1.0 and math.isfinite(self.C)):
            raise ValidationError("C must be finite and >= 1")

    def holds_for(self, P: StochasticMatrix, slack: float = 1e-12) -> bool:
        Pn = np.linalg.matrix_power(P.rows, self.n0)
        nu = self.nu.weights
        lo = Pn >= nu / self.C - slack
        hi = Pn <= nu * self.C + slack
        return bool(lo.all() and hi.all())


@dataclass(frozen=True)
class Observable:
    """Real tensor over symbol tuples of a fixed arity."""

    values: np.ndarray

    def __post_init__(self):
        v = _as_float_array(self.values, "observable values")
        if v.ndim == 0:
            raise ValidationError("observable must have arity >= 1")
        sizes = set(v.shape)
        if len(sizes) != 1:
            raise ValidationError("all axes must range over the same alphabet")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def arity(self) -> int:
        return self.values.ndim

    @property
    def alphabet_size(self) -> int:
        return self.values.shape[0]

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def __mul__(self, scalar: float) -> "Observable":
        return Observable(self.values * float(scalar))

    __rmul__ = __mul__

    def __add__(self, scalar: float) -> "Observable":
        return Observable(self.values + float(scalar))

    @staticmethod
    def indicator(alphabet_size: int, pattern, value: float = 1.0) -> "Observable":
        """Observable equal to ``value`` on one symbol tuple and 0 elsewhere."""
        pattern = tuple(int(p) for p in pattern)
        if not pattern:
            raise ValidationError("indicator pattern must be nonempty")
        if any(p < 0 or p >= alphabet_size for p in pattern):
            raise ValidationError(
                f"pattern {pattern} uses symbols outside the alphabet of size {alphabet_size}"
            )
        values = np.zeros((alphabet_size,) * len(pattern))
        values[pattern] = value
        return Observable(values)


# ---------------------------------------------------------------------------
# index schedules


def _eval_int_poly(coeffs, n: int) -> int:
    """Evaluate an integer-coefficient polynomial at an integer (exact)."""
    acc = 0
    for c in reversed(coeffs):
        acc = acc * n + int(c)
    return acc


@dataclass(frozen=True)
class QSchedule:
    """Index progression q_1..q_ell over integer times.

    The first k progressions are the arithmetic ones q_j(n) = j*n; each entry
    of ``tail`` is an integer coefficient list (constant term first) for one
    of the remaining, faster-growing progressions q_{k+1}..q_ell.
    """

    k: int
    ell: int
    tail: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        if not (1 <= self.k <= self.ell):
            raise ValidationError("need 1 <= k <= ell")
        tail = tuple(tuple(int(c) for c in poly) for poly in self.tail)
        if len(tail) != self.ell - self.k:
            raise ValidationError(
                f"expected {self.ell - self.k} tail polynomials, got {len(tail)}"
            )
        for poly in tail:
            if not poly or all(c == 0 for c in poly):
                raise ValidationError("tail polynomials must be nonzero")
        object.__setattr__(self, "tail", tail)

    def q(self, j: int, n: int) -> int:
        """Value of the j-th progression at integer time n >= 1."""
        if not (1 <= j <= self.ell):
            raise ValidationError(f"j must lie in 1..{self.ell}")
        if j <= self.k:
            return j * n
        return _eval_int_poly(self.tail[j - self.k - 1], n)

    def index_arrays(self, n_max: int) -> list[np.ndarray]:
        """[q_j(1..n_max) for j in 1..ell] as int64 arrays; validates first."""
        self.validate(n_max)
        ns = np.arange(1, n_max + 1, dtype=np.int64)
        out = [j * ns for j in range(1, self.k + 1)]
        for poly in self.tail:
            vals = np.zeros(n_max, dtype=np.int64)
            for c in reversed(poly):
                vals = vals * ns + int(c)
            out.append(vals)
        return out

    def validate(self, n_max: int) -> None:
        """Check the progression contract on the horizon 1..n_max:
        each q_j is positive and strictly increasing with nondecreasing
        increments, and q_j(n) > q_{j-1}(n) for j > k."""
        if n_max < 1:
            raise ValidationError("horizon must be >= 1")
        # exact endpoint check so int64 arithmetic below cannot overflow
        for poly in self.tail:
            if abs(_eval_int_poly(poly, n_max)) > 2**62:
                raise ValidationError("progression exceeds the 2^62 index cap")
        prev = self.k * np.arange(1, n_max + 1, dtype=np.int64)
        for idx, poly in enumerate(self.tail):
            ns = np.arange(1, n_max + 1, dtype=np.int64)
            vals = np.zeros(n_max, dtype=np.int64)
            for c in reversed(poly):
                vals = vals * ns + int(c)
            j = self.k + 1 + idx
            if vals[0] < 1:
                raise ValidationError(f"q_{j}(1) must be >= 1")
            if np.any(vals <= prev):
                raise ValidationError(
                    f"q_{j} must dominate q_{j-1} on the whole horizon"
                )
            if n_max >= 2:
                inc = np.diff(vals)
                if np.any(inc <= 0):
                    raise ValidationError(f"q_{j} must be strictly increasing")
                if np.any(np.diff(inc) < 0):
                    raise ValidationError(
                        f"q_{j} must have nondecreasing increments"
                    )
            prev = vals


@dataclass(frozen=True)
class AlphaSchedule:
    """Continuous-time analogue of QSchedule: q_j(t) = alpha_j * t for j <= k,
    then real-coefficient polynomials (constant term first) for j > k."""

    alphas: tuple[float, ...]
    ell: int
    tail: tuple[tuple[float, ...], ...] = field(default=())

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ValidationError("need at least one linear speed")
        if any(a <= 0 for a in alphas):
            raise ValidationError("speeds must be positive")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValidationError("speeds must be strictly increasing")
        tail = tuple(tuple(float(c) for c in poly) for poly in self.tail)
        if len(tail) != self.ell - len(alphas):
            raise ValidationError("tail length must equal ell - k")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "tail", tail)

    @property
    def k(self) -> int:
        return len(self.alphas)

    def q(self, j: int, t: float) -> float:
        if not (1 <= j <= self.ell):
            raise ValidationError(f"j must lie in 1..{self.ell}")
        if j <= self.k:
            return self.alphas[j - 1] * t
        acc = 0.0
        for c in reversed(self.tail[j - self.k - 1]):
            acc = acc * t + c
        return acc

    def validate(self, t_max: float, grid: int = 512) -> None:
        ts = np.linspace(0.0, float(t_max), grid)
        prev = self.alphas[-1] * ts
        for idx in range(len(self.tail)):
            j = self.k + 1 + idx
            vals = np.array([self.q(j, t) for t in ts])
            if np.any(np.diff(vals) <= 0):
                raise ValidationError(f"q_{j} must be strictly increasing")
            if np.any(vals[1:] <= prev[1:]):
                raise ValidationError(f"q_{j} must dominate q_{j-1} for t > 0")
            if vals[0] < 0:
                raise ValidationError(f"q_{j}(0) must be >= 0")
            prev = vals


# ---------------------------------------------------------------------------
# operations


def stationary_distribution(P: StochasticMatrix) -> ProbVector:
    """Unique stationary vector of an irreducible aperiodic transition matrix.

    Solved as a dense linear system; the residual ||mu P - mu||_inf is checked
    against 1e-12 before returning.
    """
    if not P.is_ergodic():
        raise NotErgodic("transition matrix must be irreducible and aperiodic")
    m = P.size
    A = P.rows.T - np.eye(m)
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    mu = np.linalg.solve(A, b)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if float(np.abs(mu @ P.rows - mu).max()) > _SUM_TOL:
        raise NonconvError("stationary solve residual exceeded 1e-12")
    return ProbVector(mu)


def doeblin_check(P: StochasticMatrix, n_max: int = 64) -> DoeblinCertificate:
    """Smallest n0 <= n_max whose n0-step kernel admits a two-sided squeeze
    C^-1 nu <= P^n0(x, .) <= C nu.

    nu is the normalized columnwise minimum of P^n0 and C is the smallest
    constant feasible for that nu (the extreme entrywise ratio).  A column
    must be either all positive or identically zero for the squeeze to exist.
    """
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    Pn = np.eye(P.size)
    for n0 in range(1, n_max + 1):
        Pn = Pn @ P.rows
        col_min = Pn.min(axis=0)
        col_max = Pn.max(axis=0)
        if np.any((col_max > 0) & (col_min <= 0)):
            continue
        total = col_min.sum()
        if total <= 0:
            continue
        nu = col_min / total
        support = nu > 0
        ratios_up = Pn[:, support] / nu[support]
        C = float(max(ratios_up.max(), (1.0 / ratios_up).max()))
        C = max(C, 1.0)
        cert = DoeblinCertificate(n0=n0, C=C, nu=ProbVector(nu))
        if not cert.holds_for(P):
            raise NonconvError("internal error: certificate failed its own check")
        if P.is_ergodic():
            mu = stationary_distribution(P).weights
            ratio = mu[support] / nu[support]
            if ratio.max() > C * (1 + 1e-9) or ratio.min() < (1 - 1e-9) / C:
                raise NonconvError(
                    "internal error: stationary ratio bound violated"
                )
        return cert
    raise NoDoeblinWithinHorizon(
        f"no power up to {n_max} admits a two-sided squeeze"
    )


def _log_mean_last_axis(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """log of the weighted mean of exp(values) over the last axis, stabilized."""
    shift = np.max(values, axis=-1, keepdims=True)
    finite = np.isfinite(shift)
    safe = np.where(finite, shift, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(values - safe) @ weights) + safe[..., 0]
    return np.where(finite[..., 0], out, -np.inf)


def reduce_observable(
    V: Observable, mu: ProbVector, m: int, mode: str = "log"
) -> Observable:
    """Integrate the trailing arity(V) - m coordinates of V against mu.

    mode "log": exponential average, log E exp(V), one trailing axis at a
    time (numerically stabilized).  mode "linear": plain weighted average.
    The result is an observable of arity m; m = arity(V) returns V itself.
    """
    if V.alphabet_size != mu.size:
        raise ValidationError("observable and weights use different alphabets")
    if not (1 <= m <= V.arity):
        raise ValidationError(f"m must lie in 1..{V.arity}")
    if mode not in ("log", "linear"):
        raise ValidationError("mode must be 'log' or 'linear'")
    if m == V.arity:
        return V
    values = V.values
    for _ in range(V.arity - m):
        if mode == "log":
            values = _log_mean_last_axis(values, mu.weights)
        else:
            values = values @ mu.weights
    return Observable(values)


def product_mean(V: Observable, mu: ProbVector) -> float:
    """Mean of V when every coordinate is drawn independently from mu."""
    if V.alphabet_size != mu.size:
        raise ValidationError("observable and weights use different alphabets")
    values = V.values
    for _ in range(V.arity):
        values = values @ mu.weights
    return float(values)
