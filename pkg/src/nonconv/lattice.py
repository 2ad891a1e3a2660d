"""Multiplicative index structure for sums along arithmetic progressions.

With k progressions n, 2n, ..., kn over an i.i.d. sequence, the indices that
ever interact are tied together by the primes up to k.  Writing every index
as a * s with a coprime to those primes and s built from them, the sum splits
into independent blocks ("chains"), one per coprime base a, and the block at
base a only depends on how many smooth multiples of a fit under the horizon
(its level).  The exponential growth rate of the moment generating function
is then a weighted series over levels

    q = r * sum_l w(l) * ln R_l,
    w(l) = 1/s_l - 1/s_{l+1},   r = prod_i (1 - 1/r_i),

where s_1 < s_2 < ... enumerates the smooth numbers and R_l is the partition
function of the canonical level-l chain.  Everything in this module is about
computing the pieces of that formula, bounding the truncation error, and
cross-checking against direct enumeration.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import (
    Degenerate,
    NonconvError,
    TooLarge,
    ValidationError,
    WrongK,
)
from .model import Observable, ProbVector, product_mean
from .rates import RateFunction, legendre_transform
from .rng import substream

_LN2 = math.log(2.0)
_DEFAULT_CONFIG_CAP = 1 << 24
_DEFAULT_SAMPLES = 200_000


# ---------------------------------------------------------------------------
# primes, smooth numbers, levels


@dataclass(frozen=True)
class PrimeBasis:
    """The primes r_1 < ... < r_m up to the progression count k."""

    k: int
    primes: tuple[int, ...]

    @property
    def m(self) -> int:
        return len(self.primes)

    @property
    def density(self) -> float:
        """Asymptotic density of the integers coprime to every basis prime."""
        out = 1.0
        for p in self.primes:
            out *= 1.0 - 1.0 / p
        return out

    def factor(self, j: int) -> tuple[int, ...]:
        """Exponents of j over the basis primes; j must factor completely."""
        if j < 1:
            raise ValidationError("can only factor positive integers")
        exps = []
        for p in self.primes:
            e = 0
            while j % p == 0:
                j //= p
                e += 1
            exps.append(e)
        if j != 1:
            raise ValidationError("integer has a prime factor outside the basis")
        return tuple(exps)

    def is_coprime(self, a: int) -> bool:
        return all(a % p for p in self.primes)


def prime_basis(k: int) -> PrimeBasis:
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    if k > 64:
        raise TooLarge("progression count above 64 is not supported")
    sieve = np.ones(k + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, k + 1):
        if sieve[p]:
            sieve[2 * p :: p] = False
    return PrimeBasis(k=int(k), primes=tuple(int(p) for p in np.flatnonzero(sieve)))


def _smooth_ascending(primes: tuple[int, ...], count: int) -> list[int]:
    """First ``count`` integers whose prime factors all lie in ``primes``.

    Exact integer arithmetic throughout; the values grow quickly (for a single
    prime 2 the level-l number is 2**(l-1)) so Python ints are mandatory.
    """
    if not primes:
        return [1] * min(count, 1)
    out: list[int] = []
    heap = [1]
    seen = {1}
    while len(out) < count:
        v = heapq.heappop(heap)
        out.append(v)
        for p in primes:
            w = v * p
            if w not in seen:
                seen.add(w)
                heapq.heappush(heap, w)
    return out


def _smooth_upto(primes: tuple[int, ...], bound: int) -> list[int]:
    """All smooth numbers <= bound, ascending."""
    if bound < 1:
        return []
    if not primes:
        return [1]
    out: list[int] = []
    heap = [1]
    seen = {1}
    while heap and heap[0] <= bound:
        v = heapq.heappop(heap)
        out.append(v)
        for p in primes:
            w = v * p
            if w <= bound and w not in seen:
                seen.add(w)
                heapq.heappush(heap, w)
    return out


@dataclass(frozen=True)
class SmoothLevels:
    """Smooth numbers s_1..s_{l_max+1} with the level weights they induce.

    ``weight(l) = 1/s_l - 1/s_{l+1}`` is the density (within the coprime
    residues, after normalization by ``basis.density``) of bases whose chain
    has exactly l nodes.  With no primes at all there is a single level of
    weight 1.
    """

    basis: PrimeBasis
    numbers: tuple[int, ...]

    @property
    def l_max(self) -> int:
        return len(self.numbers) if self.basis.m == 0 else len(self.numbers) - 1

    def rho_min(self, l: int) -> float:
        self._check_level(l)
        return math.log(self.numbers[l - 1])

    def rho_max(self, l: int) -> float:
        self._check_level(l)
        if self.basis.m == 0:
            return math.inf
        return math.log(self.numbers[l])

    def weight(self, l: int) -> float:
        self._check_level(l)
        if self.basis.m == 0:
            return 1.0
        return 1.0 / self.numbers[l - 1] - 1.0 / self.numbers[l]

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.weight(l) for l in range(1, self.l_max + 1)])

    def _check_level(self, l: int) -> None:
        if not (1 <= l <= self.l_max):
            raise ValidationError(f"level must lie in 1..{self.l_max}")


def smooth_levels(basis: PrimeBasis, l_max: int) -> SmoothLevels:
    if l_max < 1:
        raise ValidationError("l_max must be >= 1")
    if basis.m == 0:
        return SmoothLevels(basis=basis, numbers=(1,))
    numbers = _smooth_ascending(basis.primes, l_max + 1)
    return SmoothLevels(basis=basis, numbers=tuple(numbers))


def smooth_tail_sum(l_max: int, m: int, power: int) -> float:
    """Upper bound for sum_{l > l_max} l**power * exp(-rho_min(l)).

    Since the number of smooth values <= x is at most (1 + ln x / ln 2)**m,
    rho_min(l) >= (l**(1/m) - 1) ln 2, so each term is at most
    2 * l**power * 2**(-l**(1/m)).  The majorant is summed explicitly past
    its mode and the rest is an incomplete-gamma integral.
    """
    if m == 0:
        return 0.0
    if l_max < 1 or power < 0:
        raise ValidationError("need l_max >= 1 and power >= 0")

    def g(l: float) -> float:
        return l**power * math.exp(-_LN2 * l ** (1.0 / m))

    # g decreases once l^(1/m) > power*m/ln2
    l_mono = int(math.ceil((power * m / _LN2) ** m)) + 1
    l_stop = max(l_max + 1, l_mono)
    explicit = math.fsum(g(l) for l in range(l_max + 1, l_stop))
    s = m * (power + 1)
    a = _LN2 * l_stop ** (1.0 / m)
    integral = (
        m
        * _LN2 ** (-s)
        * math.exp(special.gammaln(s))
        * float(special.gammaincc(s, a))
    )
    return 2.0 * (explicit + g(l_stop) + integral)


# ---------------------------------------------------------------------------
# chains


@dataclass(frozen=True)
class ChainGraph:
    """The block of indices tied to one coprime base under a horizon.

    ``nodes`` are the progression start points a*s (s smooth); each node b
    contributes the tuple (b, 2b, ..., kb), whose entries beyond the horizon
    land in ``boundary``.  ``hat`` is the sorted union and ``tuple_positions``
    gives, per node, the k positions of its tuple inside ``hat``.
    """

    a: int
    k: int
    nodes: tuple[int, ...]
    boundary: tuple[int, ...]
    hat: tuple[int, ...]
    tuple_positions: tuple[tuple[int, ...], ...]

    @property
    def level(self) -> int:
        return len(self.nodes)

    @property
    def edges(self) -> tuple[tuple[int, int, int], ...]:
        """(node, multiplier, node*multiplier) for multipliers 2..k."""
        return tuple(
            (b, j, j * b) for b in self.nodes for j in range(2, self.k + 1)
        )


def chain_graph(a: int, horizon: int, basis: PrimeBasis) -> ChainGraph:
    if a < 1 or horizon < a:
        raise ValidationError("need 1 <= a <= horizon")
    if not basis.is_coprime(a):
        raise ValidationError(f"base {a} shares a factor with the basis primes")
    nodes = [a * s for s in _smooth_upto(basis.primes, horizon // a)]
    node_set = set(nodes)
    hat_set = set(nodes)
    for b in nodes:
        for j in range(2, basis.k + 1):
            hat_set.add(j * b)
    hat = sorted(hat_set)
    index = {v: i for i, v in enumerate(hat)}
    positions = tuple(
        tuple(index[j * b] for j in range(1, basis.k + 1)) for b in nodes
    )
    return ChainGraph(
        a=a,
        k=basis.k,
        nodes=tuple(nodes),
        boundary=tuple(sorted(hat_set - node_set)),
        hat=tuple(hat),
        tuple_positions=positions,
    )


def canonical_chain(basis: PrimeBasis, level: int) -> ChainGraph:
    """The level-l chain at base 1: nodes are the first l smooth numbers."""
    if level < 1:
        raise ValidationError("level must be >= 1")
    if basis.m == 0 and level != 1:
        raise ValidationError("a basis without primes only has level 1")
    horizon = _smooth_ascending(basis.primes, level)[-1]
    return chain_graph(1, horizon, basis)


# ---------------------------------------------------------------------------
# census of bases by level


@dataclass(frozen=True)
class CensusReport:
    n: int
    basis: PrimeBasis
    counts: np.ndarray  # counts[l] = number of coprime bases at level l
    total: int
    density: float
    deviation: float
    representatives: dict[int, int]  # level -> smallest base at that level


def lattice_census(n: int, basis: PrimeBasis) -> CensusReport:
    """Classify every coprime base a <= n by its chain level under horizon n.

    Also verifies two exact combinatorial facts: the coprime count matches
    the density r within 2**m / n, and no chain exceeds the lattice-point
    bound (1 + ln(n/a)/ln 2)**m nodes.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValidationError("n must be a positive integer")
    if n > 50_000_000:
        raise TooLarge("census horizon above 5e7 is not supported")
    mask = np.ones(n + 1, dtype=bool)
    mask[0] = False
    for p in basis.primes:
        mask[p::p] = False
    bases = np.flatnonzero(mask).astype(np.int64)
    smooth = np.array(_smooth_upto(basis.primes, n), dtype=np.int64)
    quotients = n // bases
    levels = np.searchsorted(smooth, quotients, side="right")

    if basis.m > 0:
        bound = (1.0 + np.log(quotients.astype(np.float64)) / _LN2) ** basis.m
        if np.any(levels > bound + 1e-9):
            raise NonconvError("internal error: node-count bound violated")

    total = int(bases.size)
    density = basis.density
    deviation = abs(total / n - density)
    if deviation > (2.0**basis.m) / n + 1e-12:
        raise NonconvError("internal error: coprime count outside 2^m/n band")

    counts = np.bincount(levels)
    uniq, first = np.unique(levels, return_index=True)
    representatives = {int(l): int(bases[i]) for l, i in zip(uniq, first)}
    return CensusReport(
        n=int(n),
        basis=basis,
        counts=counts,
        total=total,
        density=density,
        deviation=deviation,
        representatives=representatives,
    )


# ---------------------------------------------------------------------------
# configuration enumeration / sampling over a chain

# shared by the exact partition function, the brute-force moment, and the
# whole-sequence oracle: log sum over symbol configurations of
#     exp(lam * S(config)) * prod_i mu[config_i],
# where S adds F over the given index tuples.  Returned alongside, when
# requested, is d/dlam of the log (the weighted mean of S).


def _tuple_values(digits: np.ndarray, positions: tuple[int, ...], M: int) -> np.ndarray:
    flat = digits[positions[0]].astype(np.int64)
    for p in positions[1:]:
        flat = flat * M + digits[p]
    return flat


def _config_log_stats(
    positions,
    n_vars: int,
    F_flat: np.ndarray,
    lam: float,
    log_mu: np.ndarray,
    M: int,
    config_cap: int | None = _DEFAULT_CONFIG_CAP,
    chunk: int = 1 << 16,
    want_prime: bool = False,
):
    total = M**n_vars
    if config_cap is not None and total > config_cap:
        raise TooLarge(
            f"{M}^{n_vars} configurations exceed the cap {config_cap}; "
            "use the sampling strategy"
        )
    powers = np.array([M ** (n_vars - 1 - i) for i in range(n_vars)], dtype=np.int64)
    run_max = -np.inf
    den = 0.0
    num = 0.0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = np.empty((n_vars, idx.size), dtype=np.int64)
        for i in range(n_vars):
            digits[i] = (idx // powers[i]) % M
        logw = np.zeros(idx.size)
        for i in range(n_vars):
            logw += log_mu[digits[i]]
        S = np.zeros(idx.size)
        for pos in positions:
            S += F_flat[_tuple_values(digits, pos, M)]
        vals = lam * S + logw
        peak = float(vals.max())
        if peak == -np.inf:
            continue
        if peak > run_max:
            if run_max > -np.inf:
                rescale = math.exp(run_max - peak)
                den *= rescale
                num *= rescale
            run_max = peak
        e = np.exp(vals - run_max)
        den += float(e.sum())
        if want_prime:
            num += float((S * e).sum())
    if den <= 0.0:
        raise NonconvError("every configuration has zero probability")
    value = run_max + math.log(den)
    return (value, num / den) if want_prime else (value, None)


def _mc_log_stats(
    positions,
    n_vars: int,
    F_flat: np.ndarray,
    lam: float,
    mu: np.ndarray,
    M: int,
    samples: int,
    rng: np.random.Generator,
    chunk: int = 1 << 16,
    want_prime: bool = False,
):
    """Sampling estimate of the same log-mean, with a standard error for it."""
    cum = np.cumsum(mu)
    run_max = -np.inf
    den = 0.0
    sq = 0.0
    num = 0.0
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        u = rng.random((n_vars, b))
        digits = np.minimum(np.searchsorted(cum, u.ravel(), side="right"), M - 1)
        digits = digits.reshape(n_vars, b)
        S = np.zeros(b)
        for pos in positions:
            S += F_flat[_tuple_values(digits, pos, M)]
        vals = lam * S
        peak = float(vals.max())
        if peak > run_max:
            if run_max > -np.inf:
                rescale = math.exp(run_max - peak)
                den *= rescale
                sq *= rescale * rescale
                num *= rescale
            run_max = peak
        e = np.exp(vals - run_max)
        den += float(e.sum())
        sq += float((e * e).sum())
        if want_prime:
            num += float((S * e).sum())
        done += b
    mean = den / samples
    var = max(sq / samples - mean * mean, 0.0) * samples / max(samples - 1, 1)
    value = run_max + math.log(mean)
    stderr = math.sqrt(var / samples) / mean
    return value, stderr, (num / den if want_prime else None)


# ---------------------------------------------------------------------------
# chain partition functions


@dataclass(frozen=True)
class LogPartition:
    """ln R_l for one canonical chain, with how it was obtained."""

    level: int
    value: float
    stderr: float
    strategy: str
    n_vars: int


def _transfer_log_partition(
    F2: np.ndarray, lam: float, mu: np.ndarray, level: int, want_prime: bool
):
    """ln mu^T K^level 1 for K(x,y) = exp(lam F2[x,y]) mu[y], with optional
    derivative in lam propagated through the product."""
    K = np.exp(lam * F2) * mu[None, :]
    FK = F2 * K
    v = np.ones(mu.size)
    dv = np.zeros(mu.size)
    scale = 0.0
    for _ in range(level):
        v_new = K @ v
        if want_prime:
            dv = FK @ v + K @ dv
        v = v_new
        peak = float(v.max())
        if peak <= 0.0 or not math.isfinite(peak):
            raise NonconvError("transfer product degenerated")
        v /= peak
        dv /= peak
        scale += math.log(peak)
    R = float(mu @ v)
    value = scale + math.log(R)
    prime = float(mu @ dv) / R if want_prime else None
    return value, prime


def _resolve_mu(mu) -> np.ndarray:
    if isinstance(mu, ProbVector):
        return mu.weights
    return ProbVector(np.asarray(mu, dtype=np.float64)).weights


def _chain_log_partition(
    V: Observable,
    mu: np.ndarray,
    level: int,
    strategy: str,
    samples: int,
    seed: int,
    config_cap: int,
    lam: float = 1.0,
    want_prime: bool = False,
) -> tuple[LogPartition, float | None]:
    k = V.arity
    M = V.alphabet_size
    basis = prime_basis(k)
    chain = canonical_chain(basis, level)
    n_vars = len(chain.hat)

    if strategy == "auto":
        if k == 2:
            strategy = "transfer"
        elif M**n_vars <= config_cap:
            strategy = "exact"
        else:
            strategy = "montecarlo"

    if strategy == "transfer":
        if k != 2:
            raise WrongK("the transfer strategy needs exactly two progressions")
        value, prime = _transfer_log_partition(
            V.values, lam, mu, level, want_prime
        )
        part = LogPartition(level, value, 0.0, "transfer", n_vars)
    elif strategy == "exact":
        with np.errstate(divide="ignore"):
            log_mu = np.log(mu)
        value, prime = _config_log_stats(
            chain.tuple_positions,
            n_vars,
            V.values.ravel(),
            lam,
            log_mu,
            M,
            config_cap=config_cap,
            want_prime=want_prime,
        )
        part = LogPartition(level, value, 0.0, "exact", n_vars)
    elif strategy == "montecarlo":
        value, stderr, prime = _mc_log_stats(
            chain.tuple_positions,
            n_vars,
            V.values.ravel(),
            lam,
            mu,
            M,
            samples,
            substream(seed, level),
            want_prime=want_prime,
        )
        part = LogPartition(level, value, stderr, "montecarlo", n_vars)
    else:
        raise ValidationError(f"unknown strategy {strategy!r}")

    # surely-true bound |ln R_l| <= l * sup|lam V|; a violation is a bug
    cap = level * abs(lam) * V.sup_norm + 1e-8
    if abs(part.value) > cap:
        raise NonconvError("partition value escaped its a priori bound")
    return part, prime


def chain_partition_function(
    V: Observable,
    mu,
    level: int,
    strategy: str = "auto",
    samples: int = _DEFAULT_SAMPLES,
    seed: int = 0,
    config_cap: int = _DEFAULT_CONFIG_CAP,
) -> LogPartition:
    """ln R_l for the canonical level-l chain of V's progression structure.

    Strategies: "transfer" (two progressions only; matrix products along the
    doubling chain), "exact" (full configuration enumeration, capped), and
    "montecarlo" (i.i.d. sampling with a delta-method standard error);
    "auto" picks transfer when it applies, then exact while it fits.
    """
    mu = _resolve_mu(mu)
    if mu.size != V.alphabet_size:
        raise ValidationError("observable and weights use different alphabets")
    part, _ = _chain_log_partition(
        V, mu, level, strategy, samples, seed, config_cap
    )
    return part


# ---------------------------------------------------------------------------
# the level series for q and its derivative


@dataclass(frozen=True)
class QSeriesResult:
    value: float
    tail_bound: float
    mc_stderr: float
    log_partitions: np.ndarray
    weights: np.ndarray
    density: float
    l_max: int
    strategies: tuple[str, ...]


def q_series(
    V: Observable,
    mu,
    l_max: int = 40,
    strategy: str = "auto",
    samples: int = _DEFAULT_SAMPLES,
    seed: int = 0,
    config_cap: int = _DEFAULT_CONFIG_CAP,
) -> QSeriesResult:
    """The level series  r * sum_{l<=l_max} w(l) ln R_l  with a truncation bound.

    The bound charges each dropped level its worst case l * sup|V| against the
    super-exponentially small weight w(l) <= exp(-rho_min(l)).  A single
    progression collapses to the one-level exact formula log E exp(V).
    """
    mu_arr = _resolve_mu(mu)
    if mu_arr.size != V.alphabet_size:
        raise ValidationError("observable and weights use different alphabets")
    k = V.arity
    basis = prime_basis(k)

    if basis.m == 0:
        vals = V.values
        shift = float(vals.max())
        value = shift + math.log(float(np.exp(vals - shift) @ mu_arr))
        return QSeriesResult(
            value=value,
            tail_bound=0.0,
            mc_stderr=0.0,
            log_partitions=np.array([value]),
            weights=np.array([1.0]),
            density=1.0,
            l_max=1,
            strategies=("exact",),
        )

    levels = smooth_levels(basis, l_max)
    parts = []
    for l in range(1, l_max + 1):
        part, _ = _chain_log_partition(
            V, mu_arr, l, strategy, samples, seed, config_cap
        )
        parts.append(part)
    weights = levels.weights
    density = basis.density
    value = density * math.fsum(
        w * p.value for w, p in zip(weights, parts)
    )
    tail = density * V.sup_norm * smooth_tail_sum(l_max, basis.m, 1)
    stderr = density * math.sqrt(
        math.fsum((w * p.stderr) ** 2 for w, p in zip(weights, parts))
    )
    return QSeriesResult(
        value=value,
        tail_bound=tail,
        mc_stderr=stderr,
        log_partitions=np.array([p.value for p in parts]),
        weights=weights,
        density=density,
        l_max=l_max,
        strategies=tuple(p.strategy for p in parts),
    )


def _q_series_scalar(
    F: Observable,
    mu: np.ndarray,
    lam: float,
    l_max: int,
    strategy: str,
    samples: int,
    seed: int,
    config_cap: int,
) -> tuple[float, float]:
    """(q(lam), q'(lam)) of the level series for lam * F, termwise."""
    basis = prime_basis(F.arity)
    if basis.m == 0:
        vals = lam * F.values
        shift = float(vals.max())
        e = np.exp(vals - shift) * mu
        den = float(e.sum())
        return shift + math.log(den), float((F.values * e).sum()) / den
    levels = smooth_levels(basis, l_max)
    acc_v, acc_p = [], []
    for l in range(1, l_max + 1):
        part, prime = _chain_log_partition(
            F, mu, l, strategy, samples, seed, config_cap,
            lam=lam, want_prime=True,
        )
        acc_v.append(part.value)
        acc_p.append(prime)
    w = levels.weights
    r = basis.density
    value = r * math.fsum(wi * vi for wi, vi in zip(w, acc_v))
    prime = r * math.fsum(wi * pi for wi, pi in zip(w, acc_p))
    return value, prime


def rate_function_iid(
    F: Observable,
    mu,
    u_grid=None,
    l_max: int = 40,
    strategy: str = "auto",
    samples: int = _DEFAULT_SAMPLES,
    seed: int = 0,
    config_cap: int = _DEFAULT_CONFIG_CAP,
    **legendre_kwargs,
) -> RateFunction:
    """Convex conjugate of the level series lam -> q(lam F).

    The derivative needed by the conjugate's stationarity condition is
    computed termwise through each chain partition function rather than by
    finite differences.
    """
    mu_arr = _resolve_mu(mu)
    if mu_arr.size != F.alphabet_size:
        raise ValidationError("observable and weights use different alphabets")

    @lru_cache(maxsize=None)
    def pair(lam: float) -> tuple[float, float]:
        return _q_series_scalar(
            F, mu_arr, lam, l_max, strategy, samples, seed, config_cap
        )

    return legendre_transform(
        lambda lam: pair(float(lam))[0],
        u_grid,
        q_prime=lambda lam: pair(float(lam))[1],
        **legendre_kwargs,
    )


# ---------------------------------------------------------------------------
# brute force over a finite horizon


def full_sequence_log_moment(
    V: Observable, mu, n: int, config_cap: int = _DEFAULT_CONFIG_CAP
) -> float:
    """(1/n) ln E exp(sum over the whole horizon), by enumerating every
    configuration of all k*n sequence entries.  Exponentially expensive in
    k*n; exists purely as an oracle for the factorized computation."""
    mu_arr = _resolve_mu(mu)
    k = V.arity
    M = V.alphabet_size
    if mu_arr.size != M:
        raise ValidationError("observable and weights use different alphabets")
    if n < 1:
        raise ValidationError("horizon must be >= 1")
    n_vars = k * n
    if M**n_vars > config_cap:
        raise TooLarge(
            f"{M}^{n_vars} whole-sequence configurations exceed the cap"
        )
    positions = [
        tuple(j * t - 1 for j in range(1, k + 1)) for t in range(1, n + 1)
    ]
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu_arr)
    value, _ = _config_log_stats(
        positions, n_vars, V.values.ravel(), 1.0, log_mu, M,
        config_cap=config_cap,
    )
    return value / n


def brute_force_log_moment(
    V: Observable,
    mu,
    n: int,
    config_cap: int = _DEFAULT_CONFIG_CAP,
    cross_check: bool | None = None,
) -> float:
    """(1/n) ln E exp(S_n) by exact enumeration, factorized across chains.

    Splits the horizon into independent chains (one per coprime base),
    enumerates each chain's configurations exactly, and adds the logs.  When
    ``cross_check`` is true (default: automatically, while the whole-sequence
    enumeration stays below ~2^24 configurations) the unfactorized oracle is
    run as well and must agree to 1e-10.
    """
    mu_arr = _resolve_mu(mu)
    k = V.arity
    M = V.alphabet_size
    if mu_arr.size != M:
        raise ValidationError("observable and weights use different alphabets")
    if n < 1:
        raise ValidationError("horizon must be >= 1")
    basis = prime_basis(k)
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu_arr)
    F_flat = V.values.ravel()

    terms = []
    for a in range(1, n + 1):
        if not basis.is_coprime(a):
            continue
        chain = chain_graph(a, n, basis)
        value, _ = _config_log_stats(
            chain.tuple_positions,
            len(chain.hat),
            F_flat,
            1.0,
            log_mu,
            M,
            config_cap=config_cap,
        )
        terms.append(value)
    total = math.fsum(terms) / n

    if cross_check is None:
        cross_check = M ** (k * n) <= _DEFAULT_CONFIG_CAP
    if cross_check:
        oracle = full_sequence_log_moment(V, mu_arr, n, config_cap=config_cap)
        if abs(oracle - total) > 1e-10:
            raise NonconvError(
                f"factorized moment {total!r} disagrees with the "
                f"whole-sequence enumeration {oracle!r}"
            )
    return total


# ---------------------------------------------------------------------------
# second-order (moderate deviation) coefficients


def _pair_expectation(
    pos1: tuple[int, ...],
    pos2: tuple[int, ...],
    Vt_flat: np.ndarray,
    mu: np.ndarray,
    M: int,
) -> float:
    """E[ Vt(tuple1) * Vt(tuple2) ] over i.i.d. symbols on the tuple union.

    Positions are indices into the union of the two tuples, so the value only
    depends on the overlap pattern; callers cache on (pos1, pos2).
    """
    n_vars = max(max(pos1), max(pos2)) + 1
    total = M**n_vars
    idx = np.arange(total, dtype=np.int64)
    digits = np.empty((n_vars, total), dtype=np.int64)
    acc = idx
    for i in range(n_vars - 1, -1, -1):
        digits[i] = acc % M
        acc = acc // M
    w = np.ones(total)
    for i in range(n_vars):
        w *= mu[digits[i]]
    f1 = Vt_flat[_tuple_values(digits, pos1, M)]
    f2 = Vt_flat[_tuple_values(digits, pos2, M)]
    return float((w * f1 * f2).sum())


def _upsilon_exact(Vt: Observable, mu: np.ndarray, level: int) -> float:
    """E[(sum over the canonical level-l chain of Vt)^2] by enumerating the
    whole chain.  Quadratic-cost oracle for the pairwise expansion."""
    basis = prime_basis(Vt.arity)
    chain = canonical_chain(basis, level)
    n_vars = len(chain.hat)
    M = Vt.alphabet_size
    total = M**n_vars
    if total > _DEFAULT_CONFIG_CAP:
        raise TooLarge("chain too large for the direct second-moment oracle")
    idx = np.arange(total, dtype=np.int64)
    digits = np.empty((n_vars, total), dtype=np.int64)
    acc = idx
    for i in range(n_vars - 1, -1, -1):
        digits[i] = acc % M
        acc = acc // M
    w = np.ones(total)
    for i in range(n_vars):
        w *= mu[digits[i]]
    S = np.zeros(total)
    Vt_flat = Vt.values.ravel()
    for pos in chain.tuple_positions:
        S += Vt_flat[_tuple_values(digits, pos, M)]
    return float((w * S * S).sum())


def _upsilon_pairwise(
    Vt: Observable, mu: np.ndarray, level: int, cache: dict
) -> float:
    """Pairwise expansion of the chain second moment.

    Tuples with disjoint index sets contribute nothing (the observable is
    centered and blocks of distinct indices are independent), and each
    overlapping pair reduces to an expectation over at most 2k symbols,
    keyed by the overlap pattern alone.
    """
    basis = prime_basis(Vt.arity)
    chain = canonical_chain(basis, level)
    k = Vt.arity
    M = Vt.alphabet_size
    acc = []
    for b in chain.nodes:
        t1 = tuple(j * b for j in range(1, k + 1))
        s1 = set(t1)
        for c in chain.nodes:
            t2 = tuple(j * c for j in range(1, k + 1))
            if not (s1 & set(t2)):
                continue
            union = sorted(s1 | set(t2))
            where = {v: i for i, v in enumerate(union)}
            key = (
                tuple(where[v] for v in t1),
                tuple(where[v] for v in t2),
            )
            if key not in cache:
                cache[key] = _pair_expectation(
                    key[0], key[1], Vt.values.ravel(), mu, M
                )
            acc.append(cache[key])
    return math.fsum(acc)


@dataclass(frozen=True)
class MdpCoefficients:
    """Variance-scale constant for the centered sums and its level data.

    ``lambda_inv`` is the limit of E[S_n^2] / n; the second-order rate of a
    displacement u is then u^2 / (2 lambda_inv).
    """

    lambda_inv: float
    upsilons: np.ndarray
    weights: np.ndarray
    density: float
    tail_bound: float
    l_max: int

    def rate(self, u: float) -> float:
        return float(u) ** 2 / (2.0 * self.lambda_inv)


def mdp_coefficients(
    V: Observable,
    mu,
    l_max: int = 40,
) -> MdpCoefficients:
    """Level-by-level second moments of the centered observable and their
    weighted sum lambda_inv = r * sum w(l) upsilon_l.

    Raises Degenerate when the centered observable vanishes (the variance
    scale would be zero and the quadratic rate undefined).
    """
    mu_arr = _resolve_mu(mu)
    if mu_arr.size != V.alphabet_size:
        raise ValidationError("observable and weights use different alphabets")
    mean = product_mean(V, ProbVector(mu_arr))
    Vt = Observable(V.values - mean)
    scale = max(1.0, V.sup_norm)
    if Vt.sup_norm <= 1e-14 * scale:
        raise Degenerate("observable is almost surely constant after centering")

    basis = prime_basis(V.arity)
    if basis.m == 0:
        ups = float((mu_arr * Vt.values**2).sum())
        if ups <= 0.0:
            raise Degenerate("centered observable has zero variance")
        return MdpCoefficients(
            lambda_inv=ups,
            upsilons=np.array([ups]),
            weights=np.array([1.0]),
            density=1.0,
            tail_bound=0.0,
            l_max=1,
        )

    levels = smooth_levels(basis, l_max)
    cache: dict = {}
    ups = []
    for l in range(1, l_max + 1):
        u_l = _upsilon_pairwise(Vt, mu_arr, l, cache)
        if u_l < -1e-10 * scale**2 * l**2:
            raise NonconvError("internal error: negative chain second moment")
        ups.append(max(u_l, 0.0))
    ups = np.array(ups)
    w = levels.weights
    lambda_inv = basis.density * math.fsum(wi * ui for wi, ui in zip(w, ups))
    tail = basis.density * Vt.sup_norm**2 * smooth_tail_sum(
        l_max, basis.m, 2
    )
    if lambda_inv <= 0.0:
        raise Degenerate("variance scale vanished across every level")
    return MdpCoefficients(
        lambda_inv=lambda_inv,
        upsilons=ups,
        weights=w,
        density=basis.density,
        tail_bound=tail,
        l_max=l_max,
    )
