"""Compiled inner loops for the network flow.

Networks are packed into flat arrays (see ``flow._Packed``); node types are
``INTERIOR`` (moves by curvature plus tangential redistribution), ``PINNED``,
``JUNCTION`` (triple point, slaved to the balance condition) and ``FREE``
(an endpoint outside the fixed set, moving by its one-sided curvature).
"""

import numpy as np
from numba import njit

INTERIOR, PINNED, JUNCTION, FREE = 0, 1, 2, 3

ST_DONE, ST_REMESH, ST_COLLAPSE, ST_COLLISION, ST_NEWTON, ST_MAXSTEPS = 0, 1, 2, 3, 4, 5


@njit(cache=True)
def circle_kvec(px, py, ax, ay, bx, by):
    """Curvature vector at p of the circle through a (before), p, b (after)."""
    ux = ax - px
    uy = ay - py
    wx = bx - px
    wy = by - py
    uu = ux * ux + uy * uy
    ww = wx * wx + wy * wy
    d = 2.0 * (ux * wy - uy * wx)
    nx = wy * uu - uy * ww
    ny = ux * ww - wx * uu
    nn = nx * nx + ny * ny
    if nn == 0.0:
        return 0.0, 0.0
    return nx * d / nn, ny * d / nn


@njit(cache=True)
def fit_end(p0x, p0y, p1x, p1y, p2x, p2y):
    """First and second derivative at p0 of the chord-length quadratic through p0, p1, p2."""
    s1 = np.hypot(p1x - p0x, p1y - p0y)
    s2 = s1 + np.hypot(p2x - p1x, p2y - p1y)
    a0 = -(s1 + s2) / (s1 * s2)
    a1 = s2 / (s1 * (s2 - s1))
    a2 = -s1 / (s2 * (s2 - s1))
    b0 = 2.0 / (s1 * s2)
    b1 = -2.0 / (s1 * (s2 - s1))
    b2 = 2.0 / (s2 * (s2 - s1))
    return (a0 * p0x + a1 * p1x + a2 * p2x, a0 * p0y + a1 * p1y + a2 * p2y,
            b0 * p0x + b1 * p1x + b2 * p2x, b0 * p0y + b1 * p1y + b2 * p2y)


@njit(cache=True)
def end_kvec(p0x, p0y, p1x, p1y, p2x, p2y):
    d1x, d1y, d2x, d2y = fit_end(p0x, p0y, p1x, p1y, p2x, p2y)
    n2 = d1x * d1x + d1y * d1y
    n = np.sqrt(n2)
    tx = d1x / n
    ty = d1y / n
    dot = d2x * tx + d2y * ty
    return (d2x - dot * tx) / n2, (d2y - dot * ty) / n2


@njit(cache=True)
def balance_residual(qx, qy, pos, nb):
    """Sum of the three exterior unit tangents at a junction placed at q."""
    fx = 0.0
    fy = 0.0
    for b in range(3):
        m1 = nb[b, 0]
        m2 = nb[b, 1]
        d1x, d1y, _, _ = fit_end(qx, qy, pos[m1, 0], pos[m1, 1], pos[m2, 0], pos[m2, 1])
        n = np.hypot(d1x, d1y)
        fx -= d1x / n
        fy -= d1y / n
    return fx, fy


@njit(cache=True)
def newton_junction(pos, node, nb, tol, maxit):
    """Damped Newton in two unknowns for the balance condition; updates pos[node].

    Returns the final residual norm, or -1.0 on failure.
    """
    qx = pos[node, 0]
    qy = pos[node, 1]
    scale = 1e300
    for b in range(3):
        m1 = nb[b, 0]
        s = np.hypot(pos[m1, 0] - qx, pos[m1, 1] - qy)
        if s < scale:
            scale = s
    fx, fy = balance_residual(qx, qy, pos, nb)
    r = np.hypot(fx, fy)
    it = 0
    while r > tol:
        if it >= maxit:
            return -1.0
        it += 1
        eps = 1e-7 * scale
        gx1, gy1 = balance_residual(qx + eps, qy, pos, nb)
        gx2, gy2 = balance_residual(qx, qy + eps, pos, nb)
        j11 = (gx1 - fx) / eps
        j21 = (gy1 - fy) / eps
        j12 = (gx2 - fx) / eps
        j22 = (gy2 - fy) / eps
        det = j11 * j22 - j12 * j21
        if det == 0.0 or not np.isfinite(det):
            return -1.0
        dx = -(j22 * fx - j12 * fy) / det
        dy = -(-j21 * fx + j11 * fy) / det
        # keep the update well inside the first marker spacing
        dn = np.hypot(dx, dy)
        if dn > 0.5 * scale:
            dx *= 0.5 * scale / dn
            dy *= 0.5 * scale / dn
        lam = 1.0
        accepted = False
        while lam > 1e-4:
            nx = qx + lam * dx
            ny = qy + lam * dy
            hx, hy = balance_residual(nx, ny, pos, nb)
            rn = np.hypot(hx, hy)
            if rn < r:
                qx = nx
                qy = ny
                fx = hx
                fy = hy
                r = rn
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            if r <= tol * 10.0:
                break
            return -1.0
    pos[node, 0] = qx
    pos[node, 1] = qy
    return r


@njit(cache=True)
def solve_junctions(pos, jnode, jnb, tol, maxit):
    """Gauss-Seidel sweeps of per-junction Newton solves; returns max residual or -1."""
    nj = jnode.shape[0]
    if nj == 0:
        return 0.0
    worst = 0.0
    for sweep in range(20):
        worst = 0.0
        for j in range(nj):
            r = newton_junction(pos, jnode[j], jnb[j], tol, maxit)
            if r < 0.0:
                return -1.0
        for j in range(nj):
            fx, fy = balance_residual(pos[jnode[j], 0], pos[jnode[j], 1], pos, jnb[j])
            r = np.hypot(fx, fy)
            if r > worst:
                worst = r
        if worst <= tol:
            return worst
    return worst if worst <= 10.0 * tol else -1.0


@njit(cache=True)
def velocities(pos, prev, nxt, ntype, jnode, jnb, enode, enb, omega, out):
    m = pos.shape[0]
    for i in range(m):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
        if ntype[i] != INTERIOR:
            continue
        a = prev[i]
        b = nxt[i]
        kx, ky = circle_kvec(pos[i, 0], pos[i, 1], pos[a, 0], pos[a, 1], pos[b, 0], pos[b, 1])
        lu = np.hypot(pos[a, 0] - pos[i, 0], pos[a, 1] - pos[i, 1])
        lw = np.hypot(pos[b, 0] - pos[i, 0], pos[b, 1] - pos[i, 1])
        tx = pos[b, 0] - pos[a, 0]
        ty = pos[b, 1] - pos[a, 1]
        tn = np.hypot(tx, ty)
        lbar = 0.5 * (lu + lw)
        lam = omega * (lw - lu) / (lbar * lbar)
        out[i, 0] = kx + lam * tx / tn
        out[i, 1] = ky + lam * ty / tn
    for e in range(enode.shape[0]):
        i = enode[e]
        m1 = enb[e, 0]
        m2 = enb[e, 1]
        kx, ky = end_kvec(pos[i, 0], pos[i, 1], pos[m1, 0], pos[m1, 1], pos[m2, 0], pos[m2, 1])
        out[i, 0] = kx
        out[i, 1] = ky
    for j in range(jnode.shape[0]):
        q = jnode[j]
        a11 = 0.0
        a12 = 0.0
        a22 = 0.0
        rx = 0.0
        ry = 0.0
        for b in range(3):
            m1 = jnb[j, b, 0]
            m2 = jnb[j, b, 1]
            d1x, d1y, _, _ = fit_end(pos[q, 0], pos[q, 1], pos[m1, 0], pos[m1, 1], pos[m2, 0], pos[m2, 1])
            n = np.hypot(d1x, d1y)
            # normal of the branch (any orientation works for least squares)
            nx = -d1y / n
            ny = d1x / n
            kx, ky = end_kvec(pos[q, 0], pos[q, 1], pos[m1, 0], pos[m1, 1], pos[m2, 0], pos[m2, 1])
            w = kx * nx + ky * ny
            a11 += nx * nx
            a12 += nx * ny
            a22 += ny * ny
            rx += w * nx
            ry += w * ny
        det = a11 * a22 - a12 * a12
        if det != 0.0:
            out[q, 0] = (a22 * rx - a12 * ry) / det
            out[q, 1] = (-a12 * rx + a11 * ry) / det


@njit(cache=True)
def scan(pos, seg_ptr, seg_nodes, seg_can_shrink, h):
    """Per-segment lengths plus global min spacing and a remesh flag."""
    ns = seg_ptr.shape[0] - 1
    lengths = np.zeros(ns)
    hmin = 1e300
    remesh = False
    for s in range(ns):
        L = 0.0
        smin = 1e300
        smax = 0.0
        for k in range(seg_ptr[s], seg_ptr[s + 1] - 1):
            a = seg_nodes[k]
            b = seg_nodes[k + 1]
            d = np.hypot(pos[b, 0] - pos[a, 0], pos[b, 1] - pos[a, 1])
            L += d
            if d < smin:
                smin = d
            if d > smax:
                smax = d
        lengths[s] = L
        if smin < hmin:
            hmin = smin
        if smax > 2.0 * h or (seg_can_shrink[s] and smin < 0.5 * h):
            remesh = True
    return lengths, hmin, remesh


@njit(cache=True)
def advance(pos, prev, nxt, ntype, jnode, jnb, enode, enb, seg_ptr, seg_nodes, seg_can_shrink,
            coll_pairs, t, t_end, cfl, omega, h, collapse_tol, newton_tol, newton_maxit, max_steps):
    """Explicit Euler steps until ``t_end`` or an interrupting condition.

    Returns ``(t, status, info, nsteps, nrejects)``.
    """
    vel = np.zeros_like(pos)
    trial = np.empty_like(pos)
    nsteps = 0
    nrej = 0
    while True:
        if t >= t_end:
            return t, ST_DONE, -1, nsteps, nrej
        lengths, hmin, remesh = scan(pos, seg_ptr, seg_nodes, seg_can_shrink, h)
        for s in range(lengths.shape[0]):
            if lengths[s] < collapse_tol:
                return t, ST_COLLAPSE, s, nsteps, nrej
        for p in range(coll_pairs.shape[0]):
            a = coll_pairs[p, 0]
            b = coll_pairs[p, 1]
            if np.hypot(pos[a, 0] - pos[b, 0], pos[a, 1] - pos[b, 1]) < collapse_tol:
                return t, ST_COLLISION, p, nsteps, nrej
        if remesh:
            return t, ST_REMESH, -1, nsteps, nrej
        if nsteps >= max_steps:
            return t, ST_MAXSTEPS, -1, nsteps, nrej
        dt = cfl * hmin * hmin
        if t + dt > t_end:
            dt = t_end - t
        velocities(pos, prev, nxt, ntype, jnode, jnb, enode, enb, omega, vel)
        ok = False
        for attempt in range(9):
            for i in range(pos.shape[0]):
                trial[i, 0] = pos[i, 0] + dt * vel[i, 0]
                trial[i, 1] = pos[i, 1] + dt * vel[i, 1]
            r = solve_junctions(trial, jnode, jnb, newton_tol, newton_maxit)
            if r >= 0.0:
                ok = True
                break
            nrej += 1
            dt *= 0.5
        if not ok:
            return t, ST_NEWTON, -1, nsteps, nrej
        pos[:, :] = trial
        if t + dt >= t_end:
            t = t_end
        else:
            t += dt
        nsteps += 1
