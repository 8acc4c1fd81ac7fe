# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Gillespie direct method for Lotka-Volterra and the
banded MA(2) Gaussian log-likelihood.

Both kernels mirror ``_pycore`` operation for operation so the two backends
produce bit-identical results from the same random stream.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log, sqrt, INFINITY
from numpy.random cimport bitgen_t

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef const char *CAPSULE_NAME = "BitGenerator"


def ssa_lv(double c1, double c2, double c3, long long x1, long long x2,
           double[::1] grid, long long max_events, bit_generator):
    """Returns (values[T, 2], n_events, exploded)."""
    cdef Py_ssize_t ngrid = grid.shape[0]
    out = np.empty((ngrid, 2), dtype=np.float64)
    cdef double[:, ::1] vals = out
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, CAPSULE_NAME)
    cdef Py_ssize_t gi = 0
    cdef long long events = 0
    cdef bint exploded = False
    cdef double t = 0.0, a1, a2, a3, a0, u, tnext, r

    with bit_generator.lock, nogil:
        while True:
            a1 = c1 * x1
            a2 = c2 * x1 * x2
            a3 = c3 * x2
            a0 = a1 + a2 + a3
            if a0 <= 0.0:
                break
            u = rng.next_double(rng.state)
            tnext = t - log(1.0 - u) / a0
            while gi < ngrid and grid[gi] < tnext:
                vals[gi, 0] = x1
                vals[gi, 1] = x2
                gi += 1
            if gi == ngrid:
                break
            if events >= max_events:
                exploded = True
                break
            r = rng.next_double(rng.state) * a0
            if r < a1:
                x1 += 1
            elif r < a1 + a2:
                x1 -= 1
                x2 += 1
            else:
                x2 -= 1
            t = tnext
            events += 1
        while gi < ngrid:
            vals[gi, 0] = x1
            vals[gi, 1] = x2
            gi += 1
    return out, events, exploded


cdef double _ma2_loglik(double th1, double th2, const double[::1] x) noexcept nogil:
    cdef Py_ssize_t p = x.shape[0], i
    cdef double g0 = 1.0 + th1 * th1 + th2 * th2
    cdef double g1 = th1 * (1.0 + th2)
    cdef double g2 = th2
    # rolling Cholesky entries: d = L[i,i], e = L[i,i-1], f = L[i,i-2]
    cdef double d1 = 0.0, d2 = 0.0, e1 = 0.0
    cdef double z1 = 0.0, z2 = 0.0
    cdef double d, e, f, z, s
    cdef double logdet = 0.0, quad = 0.0
    for i in range(p):
        f = 0.0
        e = 0.0
        if i >= 2:
            f = g2 / d2
        if i >= 1:
            e = (g1 - f * e1) / d1
        s = g0 - e * e - f * f
        if not s > 0.0:
            return -INFINITY
        d = sqrt(s)
        z = (x[i] - e * z1 - f * z2) / d
        logdet += log(d)
        quad += z * z
        d2 = d1
        d1 = d
        e1 = e
        z2 = z1
        z1 = z
    return -0.5 * p * log(2.0 * 3.141592653589793) - logdet - 0.5 * quad


def ma2_loglik_banded(double th1, double th2, x):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    return _ma2_loglik(th1, th2, xv)
