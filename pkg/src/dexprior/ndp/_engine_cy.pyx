# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout kernels: same recursions as _engine_py, C loops."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def rollout_core(double[:, ::1] f_all, double alpha, double beta, double dt,
                 double[::1] g, double[::1] y0, double[::1] z0):
    cdef Py_ssize_t steps = f_all.shape[0]
    cdef Py_ssize_t d = f_all.shape[1]
    ys_arr = np.empty((steps + 1, d), dtype=np.float64)
    cdef double[:, ::1] ys = ys_arr
    cdef double[::1] y = np.array(y0, dtype=np.float64)
    cdef double[::1] z = np.array(z0, dtype=np.float64)
    cdef Py_ssize_t t, i
    for i in range(d):
        ys[0, i] = y0[i]
    for t in range(steps):
        for i in range(d):
            z[i] = z[i] + dt * (alpha * (beta * (g[i] - y[i]) - z[i]) + f_all[t, i])
            y[i] = y[i] + dt * z[i]
            ys[t + 1, i] = y[i]
    return ys_arr


def vjp_core(double[:, ::1] upstream, double alpha, double beta, double dt):
    cdef Py_ssize_t steps = upstream.shape[0] - 1
    cdef Py_ssize_t d = upstream.shape[1]
    fbar_arr = np.empty((steps, d), dtype=np.float64)
    gbar_arr = np.zeros(d, dtype=np.float64)
    ybar_arr = np.array(upstream[steps], dtype=np.float64)
    zbar_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] fbar = fbar_arr
    cdef double[::1] gbar = gbar_arr
    cdef double[::1] ybar = ybar_arr
    cdef double[::1] zbar = zbar_arr
    cdef Py_ssize_t t, i
    for t in range(steps - 1, -1, -1):
        for i in range(d):
            zbar[i] = zbar[i] + dt * ybar[i]
            gbar[i] = gbar[i] + alpha * beta * dt * zbar[i]
            fbar[t, i] = dt * zbar[i]
            ybar[i] = ybar[i] - alpha * beta * dt * zbar[i]
            zbar[i] = (1.0 - alpha * dt) * zbar[i]
            ybar[i] = ybar[i] + upstream[t, i]
    return fbar_arr, gbar_arr, ybar_arr, zbar_arr
