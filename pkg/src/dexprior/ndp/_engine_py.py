"""Pure-numpy rollout kernels; reference implementation for the compiled core."""

from __future__ import annotations

import numpy as np


def rollout_core(f_all, alpha, beta, dt, g, y0, z0):
    """Semi-implicit Euler recursion, velocity first.

    f_all holds the forcing term per step, (steps, d).  Returns the state
    sequence (steps + 1, d) starting at y0.
    """
    steps, d = f_all.shape
    ys = np.empty((steps + 1, d))
    ys[0] = y0
    y = np.array(y0, dtype=float)
    z = np.array(z0, dtype=float)
    for t in range(steps):
        z = z + dt * (alpha * (beta * (g - y) - z) + f_all[t])
        y = y + dt * z
        ys[t + 1] = y
    return ys


def vjp_core(upstream, alpha, beta, dt):
    """Reverse-mode pass of rollout_core.

    The recursion is affine in (forcing, g, y0, z0), so no forward state is
    needed.  Returns (fbar, gbar, y0bar, z0bar) where fbar is the adjoint
    of the per-step forcing, (steps, d).
    """
    steps = upstream.shape[0] - 1
    d = upstream.shape[1]
    fbar = np.empty((steps, d))
    gbar = np.zeros(d)
    ybar = np.array(upstream[steps], dtype=float)
    zbar = np.zeros(d)
    for t in range(steps - 1, -1, -1):
        zbar = zbar + dt * ybar
        gbar += alpha * beta * dt * zbar
        fbar[t] = dt * zbar
        ybar = ybar - alpha * beta * dt * zbar
        zbar = (1.0 - alpha * dt) * zbar
        ybar = ybar + upstream[t]
    return fbar, gbar, ybar, zbar
