"""Topological Markov shifts: pressure, Gibbs measures, and the growth rate
of exponential moments phrased through pressure differences.

A shift is specified by a 0/1 transition matrix that must be primitive (some
power strictly positive).  The pressure of a two-symbol potential is the log
Perron root of the weighted transition matrix; the associated Gibbs measure
is the Markov chain obtained from the Perron eigenvector similarity, and the
moment growth rate of a multi-symbol observable equals the pressure increment
produced by attaching its one-symbol exponential reduction to the potential.
That increment coincides exactly with the spectral-radius formulation on the
Gibbs chain — the two routes differ by a diagonal similarity only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotPrimitive, NonconvError, ValidationError
from .model import Observable, ProbVector, StochasticMatrix, reduce_observable
from .spectral import perron


@dataclass(frozen=True)
class SFTSpec:
    """Primitive 0/1 transition structure on a finite symbol set."""

    adjacency: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.adjacency)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("adjacency must be a square matrix")
        vals = np.unique(A)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValidationError("adjacency entries must be 0 or 1")
        A = A.astype(np.int64)
        # primitivity: some power is strictly positive; for a 0/1 matrix of
        # size M it suffices to look up to (M-1)^2 + 1
        M = A.shape[0]
        cap = (M - 1) ** 2 + 1
        reach = A > 0
        power = reach.copy()
        ok = power.all()
        for _ in range(cap - 1):
            if ok:
                break
            power = (power.astype(np.int64) @ reach.astype(np.int64)) > 0
            ok = power.all()
        if not ok:
            raise NotPrimitive(
                f"no power up to {cap} of the adjacency is strictly positive"
            )
        A = A.copy()
        A.flags.writeable = False
        object.__setattr__(self, "adjacency", A)

    @property
    def n_symbols(self) -> int:
        return self.adjacency.shape[0]

    def count_words(self, length: int) -> int:
        """Number of admissible words of the given length (exact integer)."""
        if length < 1:
            raise ValidationError("word length must be >= 1")
        M = self.n_symbols
        if length == 1:
            return M
        total = np.ones(M, dtype=object)
        for _ in range(length - 1):
            total = self.adjacency.astype(object) @ total
        return int(total.sum())


def _weighted_matrix(spec: SFTSpec, potential: Observable | None) -> np.ndarray:
    A = spec.adjacency.astype(np.float64)
    if potential is None:
        return A
    if potential.alphabet_size != spec.n_symbols:
        raise ValidationError("potential and shift use different alphabets")
    if potential.arity == 1:
        return A * np.exp(potential.values)[:, None]
    if potential.arity == 2:
        return A * np.exp(potential.values)
    raise ValidationError("potential arity must be 1 or 2")


def sft_pressure(spec: SFTSpec, potential: Observable | None = None) -> float:
    """log of the Perron root of adjacency * exp(potential).

    A one-symbol potential weights by its value at the source symbol; no
    potential at all gives the topological entropy.
    """
    root, _ = perron(_weighted_matrix(spec, potential))
    return math.log(root)


@dataclass(frozen=True)
class GibbsMarkov:
    """The Markov chain equivalent to a Gibbs state of a two-symbol potential."""

    matrix: StochasticMatrix
    stationary: ProbVector
    pressure: float


def gibbs_markov_measure(
    spec: SFTSpec, potential: Observable | None = None
) -> GibbsMarkov:
    """Markov presentation of the Gibbs state: with B = adjacency * exp(phi),
    Perron root lam and right vector h, the chain moves by
    P[i, j] = B[i, j] h[j] / (lam h[i]) and its stationary law is the
    normalized product of the left and right Perron vectors."""
    B = _weighted_matrix(spec, potential)
    lam, h = perron(B)
    _, u = perron(B.T)
    P = B * h[None, :] / (lam * h[:, None])
    residual = float(np.abs(P.sum(axis=1) - 1.0).max())
    if residual > 1e-9:
        raise NonconvError("Gibbs chain rows failed to normalize")
    P = P / P.sum(axis=1, keepdims=True)
    pi = u * h
    pi = pi / pi.sum()
    if float(np.abs(pi @ P - pi).max()) > 1e-10:
        raise NonconvError("Gibbs stationary vector failed its fixed-point check")
    return GibbsMarkov(
        matrix=StochasticMatrix(P),
        stationary=ProbVector(pi),
        pressure=math.log(lam),
    )


def q_dynamical(
    W: Observable, spec: SFTSpec, potential: Observable | None = None
) -> float:
    """Moment growth rate of W as a pressure increment.

    W is reduced to one symbol by exponential averaging of its trailing
    coordinates against the Gibbs stationary law, the log-reduction is added
    to the potential on the source symbol, and the result is the pressure
    difference.  Equal (exactly, via a diagonal similarity) to the log
    spectral radius of the weighted transition operator of the Gibbs chain.
    """
    if W.alphabet_size != spec.n_symbols:
        raise ValidationError("observable and shift use different alphabets")
    gibbs = gibbs_markov_measure(spec, potential)
    what = reduce_observable(W, gibbs.stationary, 1, mode="log")
    B = _weighted_matrix(spec, potential)
    weighted = np.exp(what.values)[:, None] * B
    root, _ = perron(weighted)
    return math.log(root) - gibbs.pressure
