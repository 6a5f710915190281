# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. See ``_fallback`` for the reference semantics."""
import numpy as np
from libc.math cimport exp, log, fabs

NAME = "cython"


def mixture_moments(y, images, double tau, bint want_second=True):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] X = np.ascontiguousarray(images, dtype=np.float64)
    cdef Py_ssize_t P = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t s, i, j
    w_arr = np.empty(P)
    mean_arr = np.zeros(D)
    fvec_arr = np.zeros(D)
    xt_arr = np.empty(D)
    cdef double[::1] w = w_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] fvec = fvec_arr
    cdef double[::1] xt = xt_arr
    cdef double acc, top, z, proj, nrm, msq = 0.0, ws, diff
    cdef double inv2t = 1.0 / (2.0 * tau)

    top = -1e308
    for s in range(P):
        acc = 0.0
        for i in range(D):
            diff = yv[i] - X[s, i]
            acc += diff * diff
        w[s] = -acc * inv2t
        if w[s] > top:
            top = w[s]
    z = 0.0
    for s in range(P):
        w[s] = exp(w[s] - top)
        z += w[s]
    for s in range(P):
        w[s] /= z
        ws = w[s]
        for i in range(D):
            mean[i] += ws * X[s, i]

    second_arr = np.zeros((D, D)) if want_second else None
    cdef double[:, ::1] second
    if want_second:
        second = second_arr
    for s in range(P):
        ws = w[s]
        proj = 0.0
        nrm = 0.0
        for i in range(D):
            xt[i] = X[s, i] - mean[i]
            proj += (yv[i] - X[s, i]) * xt[i]
            nrm += xt[i] * xt[i]
        msq += ws * nrm
        for i in range(D):
            fvec[i] += ws * proj * xt[i]
        if want_second:
            for i in range(D):
                for j in range(i, D):
                    second[i, j] += ws * xt[i] * xt[j]
    if want_second:
        for i in range(D):
            for j in range(i):
                second[i, j] = second[j, i]
    return top + log(z), w_arr, mean_arr, second_arr, fvec_arr, msq


def stopped_walk(points, stopped, normals, scales, double R):
    cdef double[:, ::1] pts = points
    cdef unsigned char[::1] stp = stopped
    cdef const double[:, :, ::1] nz = np.ascontiguousarray(normals, dtype=np.float64)
    cdef const double[::1] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef Py_ssize_t nsub = nz.shape[0], n = nz.shape[1], D = nz.shape[2]
    cdef Py_ssize_t j, p, l
    cdef double v
    cdef bint out
    for p in range(n):
        if stp[p]:
            continue
        for j in range(nsub):
            out = False
            for l in range(D):
                v = pts[p, l] + sc[j] * nz[j, p, l]
                if v > R:
                    v = R
                    out = True
                elif v < -R:
                    v = -R
                    out = True
                pts[p, l] = v
            if out:
                stp[p] = 1
                break
    return points, stopped
