# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the reference kernels in _kernels_py.

Same uniforms, same order, same float64 operation sequence; outputs must be
bit-identical to the pure-Python versions.
"""
import numpy as np

from libc.math cimport log1p


def markov_scan(double[::1] uniforms, double[::1] cum_init,
                double[:, :, ::1] cum_stack, long long[::1] gap_class):
    cdef Py_ssize_t T = uniforms.shape[0]
    cdef Py_ssize_t M = cum_init.shape[0]
    out = np.empty(T, dtype=np.int64)
    cdef long long[::1] o = out
    cdef Py_ssize_t t
    cdef long long x, g
    cdef double u
    with nogil:
        u = uniforms[0]
        x = 0
        while x < M - 1 and u >= cum_init[x]:
            x += 1
        o[0] = x
        for t in range(1, T):
            u = uniforms[t]
            g = gap_class[t - 1]
            x = 0
            while x < M - 1 and u >= cum_stack[g, o[t - 1], x]:
                x += 1
            o[t] = x
    return out


def ctmc_integrate(double[::1] uniforms, long long state, double t_now,
                   double t_end, double[::1] exit_rates,
                   double[:, ::1] cum_jump, double[::1] occupancy):
    cdef Py_ssize_t n_pairs = uniforms.shape[0] // 2
    cdef Py_ssize_t M = exit_rates.shape[0]
    cdef Py_ssize_t used = 0
    cdef long long x = state
    cdef long long j
    cdef double rate, u1, u2, dt
    with nogil:
        while t_now < t_end:
            rate = exit_rates[x]
            if rate <= 0.0:
                occupancy[x] += t_end - t_now
                t_now = t_end
                break
            if used >= n_pairs:
                break
            u1 = uniforms[2 * used]
            u2 = uniforms[2 * used + 1]
            dt = -log1p(-u1) / rate
            used += 1
            if t_now + dt >= t_end:
                occupancy[x] += t_end - t_now
                t_now = t_end
                break
            occupancy[x] += dt
            t_now = t_now + dt
            j = 0
            while j < M - 1 and u2 >= cum_jump[x, j]:
                j += 1
            x = j
    return used, int(x), t_now, t_now >= t_end
