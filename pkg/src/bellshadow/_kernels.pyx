# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: counter-based uniforms and binomial inversion.

Both functions mirror ``bellshadow._fallback`` operation for operation so
the two backends return the same integers for the same inputs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, floor
from libc.stdint cimport uint64_t, int64_t
from scipy.special.cython_special cimport bdtr, gammaln, ndtri

cnp.import_array()

cdef uint64_t SEED_SALT = 0x243F6A8885A308D3ULL
cdef uint64_t UNIT_MULT = 0x9E3779B97F4A7C15ULL
cdef uint64_t RUN_MULT = 0xD1B54A32D192ED03ULL
cdef uint64_t DRAW_MULT = 0x9E3779B97F4A7C15ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double SEARCH_FROM_ZERO_MEAN = 48.0


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def counter_uniforms(uint64_t seed, unit_ids, Py_ssize_t n_runs, Py_ssize_t n_draws):
    cdef cnp.uint64_t[::1] units = np.ascontiguousarray(unit_ids, dtype=np.uint64)
    cdef Py_ssize_t n_units = units.shape[0]
    out = np.empty((n_units, n_runs, n_draws), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef uint64_t k1 = _mix(seed ^ SEED_SALT)
    cdef uint64_t k2, k3
    cdef Py_ssize_t i, r, d
    with nogil:
        for i in range(n_units):
            k2 = _mix(k1 + units[i] * UNIT_MULT)
            for r in range(n_runs):
                k3 = _mix(k2 + <uint64_t>r * RUN_MULT)
                for d in range(n_draws):
                    o[i, r, d] = <double>(_mix(k3 + <uint64_t>(d + 1) * DRAW_MULT) >> 11) * TWO_M53
    return out


cdef inline double _pmf(int64_t k, int64_t n, double p) nogil:
    return exp(gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)
               + k * log(p) + (n - k) * log1p(-p))


cdef inline int64_t _binom_ppf_one(double u, int64_t n, double p) nogil:
    cdef double q, mu, sd, f, g, pmf, ratio, anchor
    cdef int64_t k
    if n <= 0 or p <= 0.0 or u <= 0.0:
        return 0
    if p >= 1.0 or u >= 1.0:
        return n
    q = 1.0 - p
    mu = n * p
    ratio = p / q
    if mu < SEARCH_FROM_ZERO_MEAN:
        # sequential search: O(mu) steps, no incomplete beta needed
        pmf = exp(n * log1p(-p))
        if pmf > 1e-280:
            k = 0
            f = pmf
            while f < u and k < n:
                pmf = pmf * (n - k) / (k + 1.0) * ratio
                k += 1
                f += pmf
            return k
    sd = sqrt(mu * q)
    k = <int64_t>floor(mu + sd * ndtri(u))
    if k < 0:
        k = 0
    elif k > n:
        k = n
    f = bdtr(<double>k, <int>n, p)
    pmf = _pmf(k, n, p)
    # an underflowed pmf stays zero under the recursion; refresh it from logs
    if f >= u:
        anchor = f
        while k > 0:
            g = f - pmf
            if g < 1e-3 * anchor:
                # subtraction has eaten the leading digits; re-anchor on the exact cdf
                g = bdtr(<double>(k - 1), <int>n, p)
                anchor = g
            if g < u:
                break
            f = g
            pmf = pmf * k / ((n - k + 1.0) * ratio)
            k -= 1
            if pmf == 0.0:
                pmf = _pmf(k, n, p)
    else:
        while f < u and k < n:
            pmf = pmf * (n - k) / (k + 1.0) * ratio
            k += 1
            if pmf == 0.0:
                pmf = _pmf(k, n, p)
            f += pmf
    return k


def binom_ppf(u, n, p):
    u_a, n_a, p_a = np.broadcast_arrays(np.asarray(u, dtype=np.float64),
                                        np.asarray(n, dtype=np.int64),
                                        np.asarray(p, dtype=np.float64))
    shape = u_a.shape
    cdef double[::1] uu = np.ascontiguousarray(u_a).ravel()
    cdef cnp.int64_t[::1] nn = np.ascontiguousarray(n_a).ravel()
    cdef double[::1] pp = np.ascontiguousarray(p_a).ravel()
    out = np.empty(uu.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(uu.shape[0]):
            o[i] = _binom_ppf_one(uu[i], nn[i], pp[i])
    return out.reshape(shape)
