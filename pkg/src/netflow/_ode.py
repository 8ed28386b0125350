"""Compiled Dormand-Prince 5(4) integrator for expander branches.

The state is (x, y, theta) along arclength; the curvature of the branch is
<x, nu> with nu = (-sin theta, cos theta), which is the expander equation
k = x^perp written for the tangent angle.
"""

import numpy as np
from numba import njit

REACHED, TOO_LONG, REENTERED = 0, 1, 2

C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1 = 35 / 384 - 5179 / 57600
E3 = 500 / 1113 - 7571 / 16695
E4 = 125 / 192 - 393 / 640
E5 = -2187 / 6784 + 92097 / 339200
E6 = 11 / 84 - 187 / 2100
E7 = -1 / 40


@njit(cache=True)
def rhs(y, out):
    c = np.cos(y[2])
    s = np.sin(y[2])
    out[0] = c
    out[1] = s
    out[2] = -y[0] * s + y[1] * c


@njit(cache=True)
def dp_step(y, k1, h, ynew, k7, err):
    """One Dormand-Prince step; k1 is f(y) on entry, k7 = f(ynew) on exit."""
    n = 3
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    w = np.empty(n)
    for i in range(n):
        w[i] = y[i] + h * A21 * k1[i]
    rhs(w, k2)
    for i in range(n):
        w[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    rhs(w, k3)
    for i in range(n):
        w[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    rhs(w, k4)
    for i in range(n):
        w[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    rhs(w, k5)
    for i in range(n):
        w[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    rhs(w, k6)
    for i in range(n):
        ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    rhs(ynew, k7)
    for i in range(n):
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])


@njit(cache=True)
def _err_norm(y, ynew, err, rtol, atol):
    m = 0.0
    for i in range(3):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        v = abs(err[i]) / sc
        if v > m:
            m = v
    return m


@njit(cache=True)
def integrate(x0, y0, th0, r_max, rtol, atol, h_max, s_max):
    """Integrate from (x0, y0) with tangent angle th0 until |x| = r_max.

    Returns ``(nodes, status)`` with rows (s, x, y, theta) at accepted steps;
    the last row lies on the circle |x| = r_max when status is REACHED.
    """
    cap = 1024
    nodes = np.empty((cap, 4))
    y = np.array([x0, y0, th0])
    k1 = np.empty(3)
    rhs(y, k1)
    ynew = np.empty(3)
    k7 = np.empty(3)
    err = np.empty(3)
    s = 0.0
    nodes[0, 0] = 0.0
    nodes[0, 1:] = y
    n = 1
    r_start = np.hypot(x0, y0)
    left = False
    h = min(h_max, 0.01)
    status = TOO_LONG
    while s < s_max:
        dp_step(y, k1, h, ynew, k7, err)
        e = _err_norm(y, ynew, err, rtol, atol)
        if e > 1.0:
            h *= max(0.2, 0.9 * e ** (-0.2))
            continue
        r_new = np.hypot(ynew[0], ynew[1])
        if r_new >= r_max:
            # secant/bisection on the step length so that |x| hits r_max
            lo = 0.0
            hi = h
            r_lo = np.hypot(y[0], y[1])
            r_hi = r_new
            for it in range(60):
                hm = lo + (r_max - r_lo) * (hi - lo) / (r_hi - r_lo)
                if hm <= lo or hm >= hi:
                    hm = 0.5 * (lo + hi)
                dp_step(y, k1, hm, ynew, k7, err)
                rm = np.hypot(ynew[0], ynew[1])
                if abs(rm - r_max) < 1e-13 * r_max:
                    hi = hm
                    break
                if rm < r_max:
                    lo = hm
                    r_lo = rm
                else:
                    hi = hm
                    r_hi = rm
            h = hi if abs(np.hypot(ynew[0], ynew[1]) - r_max) < 1e-13 * r_max else hm
            s += h
            y[:] = ynew
            status = REACHED
        else:
            s += h
            y[:] = ynew
        k1[:] = k7
        if n == cap:
            grown = np.empty((2 * cap, 4))
            grown[:cap] = nodes
            nodes = grown
            cap *= 2
        nodes[n, 0] = s
        nodes[n, 1:] = y
        n += 1
        if status == REACHED:
            break
        r = np.hypot(y[0], y[1])
        if r > r_start + 1.0:
            left = True
        elif left and r < r_start:
            status = REENTERED
            break
        fac = 0.9 * e ** (-0.2) if e > 0 else 5.0
        h = min(h_max, h * min(5.0, max(0.2, fac)))
    return nodes[:n].copy(), status
