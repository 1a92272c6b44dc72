# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled torus-average quadrature kernels (hot loop of the support solve).

Same contract as oscidamp._kernels._pure: every entry point returns
(H, dH_da0, dS, dH_daq) for the layered mean of |a0 sin t + offset-sum|.
"""

from libc.math cimport asin, fabs, sin, sqrt, M_PI

import numpy as np


cdef double TWO_OVER_PI = 2.0 / M_PI

_SIN_TABLES = {}


def _sin_table(n):
    tab = _SIN_TABLES.get(n)
    if tab is None:
        tab = np.sin(2.0 * np.pi * np.arange(n) / n)
        if len(_SIN_TABLES) < 64:
            _SIN_TABLES[n] = tab
    return tab


cdef inline void _phi(double a0, double s, double* out) nogil:
    # out: phi, dphi/da0, dphi/ds
    cdef double t = s / a0
    if t > 1.0:
        t = 1.0
    elif t < -1.0:
        t = -1.0
    cdef double asin_t = asin(t)
    cdef double sq = sqrt(max(0.0, 1.0 - t * t))
    out[0] = TWO_OVER_PI * (s * asin_t + a0 * sq)
    out[1] = TWO_OVER_PI * sq
    out[2] = TWO_OVER_PI * asin_t


cdef inline void _kadd(double* acc, double* comp, double term) nogil:
    # Kahan-compensated accumulation
    cdef double y = term - comp[0]
    cdef double t = acc[0] + y
    comp[0] = (t - acc[0]) - y
    acc[0] = t


def trap_q1(double a0, double a1, Py_ssize_t n):
    cdef double[::1] sin_t = _sin_table(n)
    cdef double H = 0, dA0 = 0, dS = 0, d1 = 0
    cdef double cH = 0, c0 = 0, cS = 0, c1 = 0
    cdef double vals[3]
    cdef Py_ssize_t k
    with nogil:
        for k in range(n):
            _phi(a0, a1 * sin_t[k], vals)
            _kadd(&H, &cH, vals[0])
            _kadd(&dA0, &c0, vals[1])
            _kadd(&dS, &cS, vals[2])
            _kadd(&d1, &c1, vals[2] * sin_t[k])
    return H / n, dA0 / n, dS / n, np.array([d1 / n])


def trap_q1_pair(double a0, double a1, Py_ssize_t n):
    """One pass over the n-grid returning the (n/2, n) evaluation pair.

    The even-index nodes of the n-grid are exactly the n/2-grid, so the
    refinement comparison costs a single sweep.
    """
    cdef double[::1] sin_t = _sin_table(n)
    cdef double H = 0, dA0 = 0, dS = 0, d1 = 0
    cdef double He = 0, dA0e = 0, dSe = 0, d1e = 0
    cdef double cH = 0, c0 = 0, cS = 0, c1 = 0
    cdef double vals[3]
    cdef Py_ssize_t k
    cdef Py_ssize_t half = n // 2
    with nogil:
        for k in range(n):
            _phi(a0, a1 * sin_t[k], vals)
            _kadd(&H, &cH, vals[0])
            _kadd(&dA0, &c0, vals[1])
            _kadd(&dS, &cS, vals[2])
            _kadd(&d1, &c1, vals[2] * sin_t[k])
            if k % 2 == 0:
                He += vals[0]
                dA0e += vals[1]
                dSe += vals[2]
                d1e += vals[2] * sin_t[k]
    return (
        (He / half, dA0e / half, dSe / half, np.array([d1e / half])),
        (H / n, dA0 / n, dS / n, np.array([d1 / n])),
    )


def trap_q2(double a0, double a1, double a2, Py_ssize_t n):
    cdef double[::1] sin_t = _sin_table(n)
    cdef double H = 0, dA0 = 0, dS = 0, d1 = 0, d2 = 0
    cdef double cH = 0, c0 = 0, cS = 0, c1 = 0, c2 = 0
    cdef double rH, r0, rS, r2, off
    cdef double vals[3]
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(n):
            off = a1 * sin_t[i]
            rH = r0 = rS = r2 = 0
            for k in range(n):
                _phi(a0, off + a2 * sin_t[k], vals)
                rH += vals[0]
                r0 += vals[1]
                rS += vals[2]
                r2 += vals[2] * sin_t[k]
            _kadd(&H, &cH, rH)
            _kadd(&dA0, &c0, r0)
            _kadd(&dS, &cS, rS)
            _kadd(&d1, &c1, rS * sin_t[i])
            _kadd(&d2, &c2, r2)
    cdef double m = <double>n * <double>n
    return H / m, dA0 / m, dS / m, np.array([d1 / m, d2 / m])


cdef Py_ssize_t _breaks(double r_hi, double r_lo, double* out) nogil:
    # angles in [0, 2pi] where sin(theta) hits r_hi or r_lo, plus interval ends
    cdef Py_ssize_t cnt = 0
    cdef double t
    out[cnt] = 0.0; cnt += 1
    if fabs(r_hi) <= 1.0:
        t = asin(r_hi)
        out[cnt] = t if t >= 0.0 else t + 2.0 * M_PI; cnt += 1
        out[cnt] = M_PI - t; cnt += 1
    if fabs(r_lo) <= 1.0:
        t = asin(r_lo)
        out[cnt] = t if t >= 0.0 else t + 2.0 * M_PI; cnt += 1
        out[cnt] = M_PI - t; cnt += 1
    out[cnt] = 2.0 * M_PI; cnt += 1
    # insertion sort (cnt <= 6)
    cdef Py_ssize_t i, j
    for i in range(1, cnt):
        t = out[i]
        j = i
        while j > 0 and out[j - 1] > t:
            out[j] = out[j - 1]
            j -= 1
        out[j] = t
    return cnt


def legendre_q1(double a0, double a1, double[::1] ref_x, double[::1] ref_w):
    # theta = mid + half*sin(pi/2 * xi): quadratic endpoint clustering keeps
    # Gauss-Legendre spectral despite square-root kinks at piece boundaries
    cdef double[::1] sx = np.sin(0.5 * np.pi * np.asarray(ref_x))
    cdef double[::1] sw = np.asarray(ref_w) * 0.5 * np.pi * np.cos(0.5 * np.pi * np.asarray(ref_x))
    cdef double br[6]
    cdef Py_ssize_t nbr = _breaks(a0 / a1, -a0 / a1, br)
    cdef double H = 0, dA0 = 0, dS = 0, d1 = 0
    cdef double mid, half, th, w, st
    cdef double vals[3]
    cdef Py_ssize_t p, k, m = ref_x.shape[0]
    with nogil:
        for p in range(nbr - 1):
            half = 0.5 * (br[p + 1] - br[p])
            if half <= 0.0:
                continue
            mid = 0.5 * (br[p + 1] + br[p])
            for k in range(m):
                th = mid + half * sx[k]
                w = sw[k] * half / (2.0 * M_PI)
                st = sin(th)
                _phi(a0, a1 * st, vals)
                H += w * vals[0]
                dA0 += w * vals[1]
                dS += w * vals[2]
                d1 += w * vals[2] * st
    return H, dA0, dS, np.array([d1])


def legendre_q2(double a0, double a1, double a2,
                double[::1] ref_x, double[::1] ref_w):
    cdef double[::1] sx = np.sin(0.5 * np.pi * np.asarray(ref_x))
    cdef double[::1] sw = np.asarray(ref_w) * 0.5 * np.pi * np.cos(0.5 * np.pi * np.asarray(ref_x))
    cdef double obr[6]
    cdef double ibr[6]
    cdef Py_ssize_t nobr, nibr
    # outer splits where the inner breakpoint pattern changes
    cdef double H = 0, dA0 = 0, dS = 0, d1 = 0, d2 = 0
    cdef double mid1, half1, th1, w1, s1, c
    cdef double mid2, half2, th2, w2, s2
    cdef double rH, r0, rS, r2
    cdef double vals[3]
    cdef Py_ssize_t p, k, pp, kk, m = ref_x.shape[0]
    # two split families: c +- a2 = +-a0  ->  sin(th1) in these 4 ratios;
    # _breaks takes two at a time, so run it twice and merge.
    cdef double tmp[6]
    cdef double allbr[12]
    cdef Py_ssize_t cnt = 0, i, j
    nobr = _breaks((a0 - a2) / a1, (a0 + a2) / a1, tmp)
    for i in range(nobr):
        allbr[cnt] = tmp[i]; cnt += 1
    nobr = _breaks((-a0 + a2) / a1, (-a0 - a2) / a1, tmp)
    for i in range(nobr):
        allbr[cnt] = tmp[i]; cnt += 1
    # sort + dedupe
    cdef double t
    for i in range(1, cnt):
        t = allbr[i]
        j = i
        while j > 0 and allbr[j - 1] > t:
            allbr[j] = allbr[j - 1]
            j -= 1
        allbr[j] = t
    with nogil:
        for p in range(cnt - 1):
            half1 = 0.5 * (allbr[p + 1] - allbr[p])
            if half1 <= 0.0:
                continue
            mid1 = 0.5 * (allbr[p + 1] + allbr[p])
            for k in range(m):
                th1 = mid1 + half1 * sx[k]
                w1 = sw[k] * half1 / (2.0 * M_PI)
                s1 = sin(th1)
                c = a1 * s1
                nibr = _breaks((a0 - c) / a2, (-a0 - c) / a2, ibr)
                rH = r0 = rS = r2 = 0
                for pp in range(nibr - 1):
                    half2 = 0.5 * (ibr[pp + 1] - ibr[pp])
                    if half2 <= 0.0:
                        continue
                    mid2 = 0.5 * (ibr[pp + 1] + ibr[pp])
                    for kk in range(m):
                        th2 = mid2 + half2 * sx[kk]
                        w2 = sw[kk] * half2 / (2.0 * M_PI)
                        s2 = sin(th2)
                        _phi(a0, c + a2 * s2, vals)
                        rH += w2 * vals[0]
                        r0 += w2 * vals[1]
                        rS += w2 * vals[2]
                        r2 += w2 * vals[2] * s2
                H += w1 * rH
                dA0 += w1 * r0
                dS += w1 * rS
                d1 += w1 * rS * s1
                d2 += w1 * r2
    return H, dA0, dS, np.array([d1, d2])
