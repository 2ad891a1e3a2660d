"""Monte Carlo for sums that read one random sequence at several
progressions of indices simultaneously.

The horizon n <= N touches the sequence only at the union of the
progression values, so paths are sampled just there: the needed indices are
collected, sorted and deduplicated once, and a Markov source is advanced
between consecutive needed indices by the corresponding power of its
transition matrix (exact in law, one uniform consumed per needed index).
Replicate r always draws from the Philox substream keyed (seed, r), and the
per-path sum is assembled with exact float summation — together this makes
every estimate bit-identical across thread counts and kernel backends.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import HorizonOverflow, TooLarge, ValidationError
from .model import (
    Observable,
    ProbVector,
    QSchedule,
    StochasticMatrix,
    product_mean,
    stationary_distribution,
)
from .rng import substream

_NEEDED_CAP = 1 << 27


@dataclass(frozen=True)
class IIDSource:
    """Independent draws from a fixed law at every index."""

    mu: ProbVector

    @property
    def n_symbols(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class MarkovSource:
    """A homogeneous chain; ``initial`` defaults to the stationary law."""

    P: StochasticMatrix
    initial: ProbVector | None = None

    def __post_init__(self):
        if self.initial is not None and self.initial.size != self.P.size:
            raise ValidationError("initial law and matrix sizes differ")

    @property
    def n_symbols(self) -> int:
        return self.P.size

    def initial_law(self) -> ProbVector:
        if self.initial is not None:
            return self.initial
        return stationary_distribution(self.P)


def needed_indices(schedule: QSchedule, n_steps: int) -> np.ndarray:
    """Sorted distinct sequence indices the horizon will ever read."""
    schedule.validate(n_steps)
    arrays = schedule.index_arrays(n_steps)
    needed = np.unique(np.concatenate(arrays))
    if needed.size > _NEEDED_CAP:
        raise HorizonOverflow(
            f"{needed.size} needed indices exceed the cap {_NEEDED_CAP}"
        )
    return needed


def _renormalize_rows(P: np.ndarray) -> np.ndarray:
    P = np.clip(P, 0.0, None)
    return P / P.sum(axis=1, keepdims=True)


def _stochastic_power(P: np.ndarray, exponent: int) -> np.ndarray:
    """P**exponent, renormalized after every product so the result stays a
    transition kernel even across very large exponents."""
    if exponent < 0:
        raise ValidationError("exponent must be nonnegative")
    result = np.eye(P.shape[0])
    base = P
    e = exponent
    while e:
        if e & 1:
            result = _renormalize_rows(result @ base)
        e >>= 1
        if e:
            base = _renormalize_rows(base @ base)
    return result


class _MarkovSampler:
    """Per-gap transition CDFs for one (source, needed indices) pair."""

    def __init__(self, source: MarkovSource, needed: np.ndarray):
        P = source.P.rows
        law = source.initial_law().weights
        first = int(needed[0])
        if first > 1:
            law = law @ _stochastic_power(P, first - 1)
        self.cum_init = np.cumsum(law)
        gaps = np.diff(needed)
        uniq, inverse = np.unique(gaps, return_inverse=True)
        stack = np.empty((uniq.size, P.shape[0], P.shape[0]))
        for i, g in enumerate(uniq):
            stack[i] = np.cumsum(_stochastic_power(P, int(g)), axis=1)
        self.cum_stack = stack
        self.gap_class = inverse.astype(np.int64)
        self.n_needed = int(needed.size)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.n_needed)
        return kernels.markov_scan(u, self.cum_init, self.cum_stack, self.gap_class)


def _iid_sampler(cum: np.ndarray, n_needed: int):
    M = cum.size

    def sample(rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n_needed)
        return np.minimum(
            np.searchsorted(cum, u, side="right"), M - 1
        ).astype(np.int64)

    return sample


def _make_sampler(source, needed: np.ndarray):
    if isinstance(source, IIDSource):
        return _iid_sampler(np.cumsum(source.mu.weights), needed.size)
    if isinstance(source, MarkovSource):
        return _MarkovSampler(source, needed).sample
    raise ValidationError(f"unknown source type {type(source).__name__}")


def sample_path(source, schedule: QSchedule, n_steps: int, seed: int, replicate: int):
    """(needed indices, symbols there) for one replicate."""
    needed = needed_indices(schedule, n_steps)
    sampler = _make_sampler(source, needed)
    return needed, sampler(substream(seed, replicate))


@dataclass(frozen=True)
class _SumPlan:
    needed: np.ndarray
    positions: np.ndarray  # (ell, n_steps) index of q_j(n) inside needed
    powers: np.ndarray  # (ell,) mixed-radix multipliers into V's flat values


def _prepare(V: Observable, source, schedule: QSchedule, n_steps: int) -> _SumPlan:
    if V.arity != schedule.ell:
        raise ValidationError(
            f"observable arity {V.arity} does not match ell={schedule.ell}"
        )
    if V.alphabet_size != source.n_symbols:
        raise ValidationError("observable and source use different alphabets")
    needed = needed_indices(schedule, n_steps)
    arrays = schedule.index_arrays(n_steps)
    positions = np.stack([np.searchsorted(needed, arr) for arr in arrays])
    M = V.alphabet_size
    powers = np.array(
        [M ** (schedule.ell - 1 - j) for j in range(schedule.ell)], dtype=np.int64
    )
    return _SumPlan(needed, positions, powers)


def _path_terms(symbols: np.ndarray, plan: _SumPlan, V_flat: np.ndarray) -> np.ndarray:
    flat = (symbols[plan.positions] * plan.powers[:, None]).sum(axis=0)
    return V_flat[flat]


def _resolve_threads(threads) -> int:
    if threads is None:
        threads = os.environ.get("NONCONV_THREADS", "1")
    threads = int(threads)
    if threads < 1:
        raise ValidationError("thread count must be >= 1")
    return threads


def _per_replicate(fn, replicates: int, threads: int) -> list:
    """fn(replicate) for each replicate, order-stable regardless of threads."""
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


def run_sums(
    V: Observable,
    source,
    schedule: QSchedule,
    n_steps: int,
    replicates: int,
    seed: int = 0,
    threads=None,
) -> np.ndarray:
    """One progression sum per replicate, as a (replicates,) float array.

    Each replicate's sum is the exact float64 rounding of its term total
    (fsum), so the result does not depend on gather order, thread count or
    kernel backend.
    """
    if replicates < 1:
        raise ValidationError("need at least one replicate")
    plan = _prepare(V, source, schedule, n_steps)
    sampler = _make_sampler(source, plan.needed)
    V_flat = V.values.ravel()

    def one(rep: int) -> float:
        symbols = sampler(substream(seed, rep))
        return math.fsum(_path_terms(symbols, plan, V_flat))

    values = _per_replicate(one, replicates, _resolve_threads(threads))
    return np.array(values)


@dataclass(frozen=True)
class LogMomentEstimate:
    """Monte Carlo value of (1/N) ln E exp(lam * S_N) with its standard error."""

    value: float
    stderr: float
    lam: float
    n_steps: int
    replicates: int


def log_moment_estimate(
    V: Observable,
    source,
    schedule: QSchedule,
    n_steps: int,
    replicates: int,
    lam: float = 1.0,
    seed: int = 0,
    threads=None,
) -> LogMomentEstimate:
    sums = run_sums(V, source, schedule, n_steps, replicates, seed, threads)
    z = lam * sums
    shift = float(z.max())
    e = np.exp(z - shift)
    mean = float(e.mean())
    value = (shift + math.log(mean)) / n_steps
    stderr = float(e.std(ddof=1)) / (math.sqrt(replicates) * mean) / n_steps
    return LogMomentEstimate(
        value=value,
        stderr=stderr,
        lam=float(lam),
        n_steps=int(n_steps),
        replicates=int(replicates),
    )


def occupation_measure(
    source,
    schedule: QSchedule,
    n_steps: int,
    replicates: int,
    n_symbols: int | None = None,
    seed: int = 0,
    threads=None,
) -> np.ndarray:
    """Empirical tuple frequencies: the (M,)*ell tensor of how often each
    symbol tuple appeared across the horizon and the replicates."""
    M = source.n_symbols if n_symbols is None else int(n_symbols)
    ell = schedule.ell
    if M**ell > 100_000_000:
        raise TooLarge("tuple histogram would not fit in memory")
    counter = Observable(np.zeros((M,) * ell))  # shape/validation only
    plan = _prepare(counter, source, schedule, n_steps)
    sampler = _make_sampler(source, plan.needed)
    counts = np.zeros(M**ell, dtype=np.int64)

    def one(rep: int):
        symbols = sampler(substream(seed, rep))
        flat = (symbols[plan.positions] * plan.powers[:, None]).sum(axis=0)
        return np.bincount(flat, minlength=M**ell)

    for c in _per_replicate(one, replicates, _resolve_threads(threads)):
        counts += c
    freq = counts / (n_steps * replicates)
    return freq.reshape((M,) * ell)


@dataclass(frozen=True)
class EmpiricalRate:
    """Estimated decay exponent of P(S_N >= threshold * N)."""

    probability: float
    rate: float
    stderr: float
    censored: bool
    method: str
    threshold: float
    n_steps: int
    replicates: int


def empirical_rate(
    V: Observable,
    source,
    schedule: QSchedule,
    n_steps: int,
    replicates: int,
    threshold: float,
    tilt: float | None = None,
    seed: int = 0,
    threads=None,
) -> EmpiricalRate:
    """-(1/N) ln P(S_N >= threshold N), by direct counting or by exponential
    tilting.

    Tilted sampling reweights each path by exp(-tilt * S + N q(tilt)) under
    the tilted symbol law; it is only available for a single linear
    progression, where tilting the symbol law tilts the sum exactly.  When
    direct counting sees no exceedances the estimate is censored: the
    reported probability is the Bayes-flavored 1/(replicates+1) upper bound
    and the rate is only a lower bound.
    """
    level = float(threshold) * n_steps - 1e-9
    if tilt is None:
        sums = run_sums(V, source, schedule, n_steps, replicates, seed, threads)
        hits = int((sums >= level).sum())
        if hits == 0:
            prob = 1.0 / (replicates + 1)
            return EmpiricalRate(
                probability=prob,
                rate=-math.log(prob) / n_steps,
                stderr=math.nan,
                censored=True,
                method="direct",
                threshold=float(threshold),
                n_steps=int(n_steps),
                replicates=int(replicates),
            )
        prob = hits / replicates
        se_p = math.sqrt(prob * (1.0 - prob) / replicates)
        return EmpiricalRate(
            probability=prob,
            rate=-math.log(prob) / n_steps,
            stderr=se_p / (prob * n_steps),
            censored=False,
            method="direct",
            threshold=float(threshold),
            n_steps=int(n_steps),
            replicates=int(replicates),
        )

    if not isinstance(source, IIDSource) or schedule.ell != 1 or schedule.k != 1:
        raise ValidationError(
            "tilted sampling needs an independent source and a single linear progression"
        )
    lam = float(tilt)
    mu = source.mu.weights
    vals = V.values
    tilted = mu * np.exp(lam * vals)
    norm = float(tilted.sum())  # exp(q(lam)) for one step
    tilted /= norm
    cum = np.cumsum(tilted)
    M = mu.size
    log_norm = math.log(norm)

    def one(rep: int):
        rng = substream(seed, rep)
        u = rng.random(n_steps)
        symbols = np.minimum(np.searchsorted(cum, u, side="right"), M - 1)
        S = math.fsum(vals[symbols])
        log_weight = -lam * S + n_steps * log_norm
        return S, log_weight

    pairs = _per_replicate(one, replicates, _resolve_threads(threads))
    S = np.array([p[0] for p in pairs])
    logw = np.array([p[1] for p in pairs])
    indicator = S >= level
    shift = float(logw.max())
    w = np.exp(logw - shift) * indicator
    mean = float(w.mean())
    if mean <= 0.0:
        prob = 1.0 / (replicates + 1)
        return EmpiricalRate(
            probability=prob,
            rate=-math.log(prob) / n_steps,
            stderr=math.nan,
            censored=True,
            method="tilted",
            threshold=float(threshold),
            n_steps=int(n_steps),
            replicates=int(replicates),
        )
    prob = mean * math.exp(shift)
    se = float(w.std(ddof=1)) / math.sqrt(replicates)
    return EmpiricalRate(
        probability=prob,
        rate=-math.log(prob) / n_steps,
        stderr=se / mean / n_steps,
        censored=False,
        method="tilted",
        threshold=float(threshold),
        n_steps=int(n_steps),
        replicates=int(replicates),
    )


@dataclass(frozen=True)
class MdpEstimate:
    """Empirical variance scale E[(S_N - E S_N)^2] / N."""

    second_moment: float
    stderr: float
    n_steps: int
    replicates: int


def mdp_empirical(
    V: Observable,
    source: IIDSource,
    schedule: QSchedule,
    n_steps: int,
    replicates: int,
    seed: int = 0,
    threads=None,
) -> MdpEstimate:
    """Centered second moment of the progression sum, per unit horizon.

    The centering uses the product mean, which is the exact per-step mean
    because the indices inside one tuple are always distinct.
    """
    if not isinstance(source, IIDSource):
        raise ValidationError("the variance-scale estimate needs an independent source")
    mean = product_mean(V, source.mu)
    sums = run_sums(V, source, schedule, n_steps, replicates, seed, threads)
    centered = sums - n_steps * mean
    v = centered**2 / n_steps
    return MdpEstimate(
        second_moment=float(v.mean()),
        stderr=float(v.std(ddof=1)) / math.sqrt(replicates),
        n_steps=int(n_steps),
        replicates=int(replicates),
    )
