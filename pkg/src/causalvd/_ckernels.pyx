# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-row reductions for the eight variance components."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    NTERMS = 8


cdef inline void _nadd(double* s, double* c, double x) noexcept nogil:
    # Neumaier compensated summation
    cdef double t = s[0] + x
    if fabs(s[0]) >= fabs(x):
        c[0] += (s[0] - t) + x
    else:
        c[0] += (x - t) + s[0]
    s[0] = t


cdef double _row_terms(const double* m, const double* pA, const double* pZ, const double* v,
                       Py_ssize_t J, Py_ssize_t K, double* t, double* mu_z, double* mu_zdot,
                       double* tau) noexcept nogil:
    """Fill t[0..7] for one row (arrays are row-major J x K); return mu(X)."""
    cdef Py_ssize_t a, z, zs
    cdef double acc, mu_dd, pz, pa, d_ind, d_dir, pbar, taubar, tsq, tsq_pz, tsq_pa_pz, dev, mm
    for a in range(NTERMS):
        t[a] = 0.0
    for z in range(K):
        mu_zdot[z] = 0.0
        for zs in range(K):
            acc = 0.0
            for a in range(J):
                acc = acc + m[a * K + z] * pA[a * K + zs]
            if zs == z:
                mu_z[z] = acc
            mu_zdot[z] = mu_zdot[z] + acc * pZ[zs]
    mu_dd = 0.0
    for z in range(K):
        mu_dd = mu_dd + mu_z[z] * pZ[z]
    for z in range(K):
        pz = pZ[z]
        d_ind = mu_z[z] - mu_zdot[z]
        d_dir = mu_zdot[z] - mu_dd
        t[0] += d_ind * d_ind * pz
        t[1] += d_dir * d_dir * pz
        t[2] += 2.0 * d_ind * d_dir * pz
        for a in range(J):
            tau[a * K + z] = m[a * K + z] - mu_z[z]
    for a in range(J):
        pbar = 0.0
        taubar = 0.0
        tsq_pz = 0.0
        tsq_pa_pz = 0.0
        for z in range(K):
            pz = pZ[z]
            pa = pA[a * K + z]
            tsq = tau[a * K + z] * tau[a * K + z]
            pbar = pbar + pa * pz
            taubar = taubar + tau[a * K + z] * pz
            tsq_pz = tsq_pz + tsq * pz
            tsq_pa_pz = tsq_pa_pz + tsq * pa * pz
        t[3] += taubar * taubar * pbar
        acc = 0.0
        for z in range(K):
            dev = tau[a * K + z] - taubar
            acc = acc + dev * dev * pZ[z]
        t[4] += acc * pbar
        t[5] += tsq_pa_pz - tsq_pz * pbar
    for z in range(K):
        pz = pZ[z]
        for a in range(J):
            pa = pA[a * K + z]
            mm = m[a * K + z] - mu_dd
            t[6] += v[a * K + z] * pa * pz
            t[7] += (mm * mm + v[a * K + z]) * pa * pz
    return mu_dd


cdef class _Scratch:
    cdef double* buf
    cdef Py_ssize_t size

    def __cinit__(self, Py_ssize_t size):
        self.buf = <double*> malloc(size * sizeof(double))
        if self.buf == NULL:
            raise MemoryError()
        self.size = size

    def __dealloc__(self):
        free(self.buf)


def reduce_components(const double[:, :, ::1] m, const double[:, :, ::1] pA, const double[:, ::1] pZ,
                      const double[:, :, ::1] v, const double[::1] w):
    """Weighted row sums of the seven averaged components and the within-X variance.

    Returns ``(sums, mux)`` with ``sums`` ordered as (w1, w2, w3, w4, w5, w6,
    w8, within) and ``mux`` the per-row standardized mean.
    """
    cdef Py_ssize_t n = m.shape[0], J = m.shape[1], K = m.shape[2]
    cdef Py_ssize_t i, k
    cdef double s[NTERMS]
    cdef double c[NTERMS]
    cdef double t[NTERMS]
    cdef _Scratch scratch = _Scratch(2 * K + J * K + 1)
    cdef double* mu_z = scratch.buf
    cdef double* mu_zdot = scratch.buf + K
    cdef double* tau = scratch.buf + 2 * K
    mux_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mux = mux_arr

    for k in range(NTERMS):
        s[k] = 0.0
        c[k] = 0.0
    if n == 0:
        return np.zeros(NTERMS), mux_arr
    with nogil:
        for i in range(n):
            mux[i] = _row_terms(&m[i, 0, 0], &pA[i, 0, 0], &pZ[i, 0], &v[i, 0, 0], J, K,
                                t, mu_z, mu_zdot, tau)
            for k in range(NTERMS):
                _nadd(&s[k], &c[k], w[i] * t[k])
    sums = np.empty(NTERMS, dtype=np.float64)
    for k in range(NTERMS):
        sums[k] = s[k] + c[k]
    return sums, mux_arr


def reduce_standard(const double[::1] base, const double[:, ::1] offset, const double[:, ::1] hbase,
                    const double[:, ::1] zoff, const double[:, ::1] glin, bint logit, double sigma2,
                    const double[::1] w):
    """Same reduction, building the cells row by row from structured linear predictors.

    Outcome linear predictor is ``base[i] + offset[a, z]``; hospital level
    ``a >= 2`` has ``hbase[i, a-2] + zoff[a-2, z]``; group level ``z >= 2``
    has ``glin[i, z-2]``. Reference levels have linear predictor 0.
    ``sigma2`` is the residual variance used when ``logit`` is false.
    """
    cdef Py_ssize_t n = base.shape[0], J = offset.shape[0], K = offset.shape[1]
    cdef Py_ssize_t i, k, a, z, JK = J * K
    cdef double s[NTERMS]
    cdef double c[NTERMS]
    cdef double t[NTERMS]
    cdef double eta, mx, den, mi
    cdef _Scratch scratch = _Scratch(4 * JK + 3 * K + 1)
    cdef double* m = scratch.buf
    cdef double* pA = m + JK
    cdef double* v = pA + JK
    cdef double* tau = v + JK
    cdef double* pZ = tau + JK
    cdef double* mu_z = pZ + K
    cdef double* mu_zdot = mu_z + K
    mux_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mux = mux_arr

    for k in range(NTERMS):
        s[k] = 0.0
        c[k] = 0.0
    if n == 0:
        return np.zeros(NTERMS), mux_arr
    with nogil:
        for i in range(n):
            for a in range(J):
                for z in range(K):
                    eta = base[i] + offset[a, z]
                    if logit:
                        if eta >= 0:
                            mi = 1.0 / (1.0 + exp(-eta))
                        else:
                            mi = exp(eta)
                            mi = mi / (1.0 + mi)
                        m[a * K + z] = mi
                        v[a * K + z] = mi * (1.0 - mi)
                    else:
                        m[a * K + z] = eta
                        v[a * K + z] = sigma2
            # hospital probabilities, one softmax per group column
            for z in range(K):
                mx = 0.0
                for a in range(1, J):
                    eta = hbase[i, a - 1] + zoff[a - 1, z]
                    pA[a * K + z] = eta
                    if eta > mx:
                        mx = eta
                pA[z] = exp(-mx)
                den = pA[z]
                for a in range(1, J):
                    pA[a * K + z] = exp(pA[a * K + z] - mx)
                    den = den + pA[a * K + z]
                for a in range(J):
                    pA[a * K + z] = pA[a * K + z] / den
            mx = 0.0
            for z in range(1, K):
                if glin[i, z - 1] > mx:
                    mx = glin[i, z - 1]
            pZ[0] = exp(-mx)
            den = pZ[0]
            for z in range(1, K):
                pZ[z] = exp(glin[i, z - 1] - mx)
                den = den + pZ[z]
            for z in range(K):
                pZ[z] = pZ[z] / den
            mux[i] = _row_terms(m, pA, pZ, v, J, K, t, mu_z, mu_zdot, tau)
            for k in range(NTERMS):
                _nadd(&s[k], &c[k], w[i] * t[k])
    sums = np.empty(NTERMS, dtype=np.float64)
    for k in range(NTERMS):
        sums[k] = s[k] + c[k]
    return sums, mux_arr
