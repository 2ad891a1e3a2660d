"""Pure-Python reference kernels.

These are the semantics the compiled extension must reproduce bit for bit:
the same uniforms consumed in the same order, the same inverse-CDF
convention (right-sided search, clipped to the last symbol), and the same
sequential floating-point operations.  They are slow on purpose — every
loop here is a spec, not an optimization target.
"""
from __future__ import annotations

import math

import numpy as np


def markov_scan(uniforms, cum_init, cum_stack, gap_class):
    """Drive one skip-ahead chain path through its needed indices.

    uniforms : (T,) one uniform per needed index, in index order
    cum_init : (M,) CDF of the law of the first needed index
    cum_stack: (G, M, M) row CDFs of the per-gap transition powers
    gap_class: (T-1,) which stack entry carries step t-1 -> t

    Returns the (T,) int64 symbol path.
    """
    T = uniforms.shape[0]
    M = cum_init.shape[0]
    out = np.empty(T, dtype=np.int64)
    x = int(min(np.searchsorted(cum_init, uniforms[0], side="right"), M - 1))
    out[0] = x
    for t in range(1, T):
        row = cum_stack[gap_class[t - 1], x]
        x = int(min(np.searchsorted(row, uniforms[t], side="right"), M - 1))
        out[t] = x
    return out


def ctmc_integrate(uniforms, state, t_now, t_end, exit_rates, cum_jump, occupancy):
    """Advance one continuous-time path until t_end or the tape runs out.

    Each event attempt consumes one uniform pair (holding draw, jump draw);
    the pair is consumed even when the holding time overshoots t_end.
    Occupation time per state accumulates into ``occupancy`` in place.

    Returns (pairs_used, state, t_now, finished).
    """
    n_pairs = uniforms.shape[0] // 2
    M = exit_rates.shape[0]
    used = 0
    state = int(state)
    t_now = float(t_now)
    t_end = float(t_end)
    while t_now < t_end:
        rate = exit_rates[state]
        if rate <= 0.0:
            occupancy[state] += t_end - t_now
            t_now = t_end
            break
        if used >= n_pairs:
            break
        u1 = uniforms[2 * used]
        u2 = uniforms[2 * used + 1]
        dt = -math.log1p(-u1) / rate
        used += 1
        if t_now + dt >= t_end:
            occupancy[state] += t_end - t_now
            t_now = t_end
            break
        occupancy[state] += dt
        t_now = t_now + dt
        j = 0
        while j < M - 1 and u2 >= cum_jump[state, j]:
            j += 1
        state = j
    return used, state, t_now, t_now >= t_end
