"""Self-expanding networks: branches with k = x^perp, found by shooting.

A branch is integrated along arclength from a junction (or any start
point) until it reaches the circle of radius ``r_max``; its terminal tangent
angle is the asymptotic angle of the half-line it approaches.  Triods are
solved by Newton on (junction point, frame angle); four-ray trees by Newton
on (first junction, its frame angle, internal length).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import _ode
from .network import Network, Segment, Vertex

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class ExpanderError(RuntimeError):
    """Shooting failed from every seed."""


def wrap(a):
    """Angle difference folded into (-pi, pi]."""
    return np.angle(np.exp(1j * np.asarray(a, dtype=float)))


# ---------------------------------------------------------------------------
# branches


def _hermite_basis(t):
    t2, t3, t4, t5 = t * t, t**3, t**4, t**5
    b = np.stack([
        1 - 10 * t3 + 15 * t4 - 6 * t5,
        t - 6 * t3 + 8 * t4 - 3 * t5,
        0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
        0.5 * t3 - t4 + 0.5 * t5,
        -4 * t3 + 7 * t4 - 3 * t5,
        10 * t3 - 15 * t4 + 6 * t5,
    ])
    db = np.stack([
        -30 * t2 + 60 * t3 - 30 * t4,
        1 - 18 * t2 + 32 * t3 - 15 * t4,
        t - 4.5 * t2 + 6 * t3 - 2.5 * t4,
        1.5 * t2 - 4 * t3 + 2.5 * t4,
        -12 * t2 + 28 * t3 - 15 * t4,
        30 * t2 - 60 * t3 + 30 * t4,
    ])
    return b, db


@dataclass(frozen=True)
class Branch:
    """Integrated expander branch; ``nodes`` rows are (s, x, y, theta)."""

    nodes: np.ndarray
    status: int

    @property
    def reached(self) -> bool:
        return self.status == _ode.REACHED

    @property
    def non_asymptotic(self) -> bool:
        return self.status == _ode.REENTERED

    @property
    def end(self) -> np.ndarray:
        return self.nodes[-1, 1:3]

    @property
    def angle(self) -> float:
        """Terminal tangent angle in (-pi, pi]."""
        return float(wrap(self.nodes[-1, 3]))

    @property
    def length(self) -> float:
        return float(self.nodes[-1, 0])

    def _derivs(self):
        s, x, y, th = self.nodes.T
        c, sn = np.cos(th), np.sin(th)
        k = -x * sn + y * c
        pos = np.stack([x, y], axis=1)
        d1 = np.stack([c, sn], axis=1)
        d2 = k[:, None] * np.stack([-sn, c], axis=1)
        th1 = k
        th2 = -k * (x * c + y * sn)
        return s, pos, d1, d2, th, th1, th2

    def evaluate(self, s_query) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Quintic Hermite interpolation: position, tangent angle and its s-derivative."""
        s, pos, d1, d2, th, th1, th2 = self._derivs()
        sq = np.atleast_1d(np.asarray(s_query, dtype=float))
        i = np.clip(np.searchsorted(s, sq, side="right") - 1, 0, len(s) - 2)
        H = s[i + 1] - s[i]
        t = (sq - s[i]) / H
        b, db = _hermite_basis(t)
        P = (b[0][:, None] * pos[i] + (b[1] * H)[:, None] * d1[i] + (b[2] * H**2)[:, None] * d2[i]
             + (b[3] * H**2)[:, None] * d2[i + 1] + (b[4] * H)[:, None] * d1[i + 1] + b[5][:, None] * pos[i + 1])
        T = b[0] * th[i] + b[1] * H * th1[i] + b[2] * H**2 * th2[i] + b[3] * H**2 * th2[i + 1] + b[4] * H * th1[i + 1] + b[5] * th[i + 1]
        dT = (db[0] * th[i] + db[1] * H * th1[i] + db[2] * H**2 * th2[i] + db[3] * H**2 * th2[i + 1]
              + db[4] * H * th1[i + 1] + db[5] * th[i + 1]) / H
        return P, T, dT

    def residual(self) -> float:
        """sup |k - <x, nu>| of the interpolated branch at step midpoints and quarter points."""
        s = self.nodes[:, 0]
        if len(s) < 2:
            return 0.0
        q = np.concatenate([s[:-1] + f * np.diff(s) for f in (0.25, 0.5, 0.75)])
        P, T, dT = self.evaluate(q)
        defect = dT - (-P[:, 0] * np.sin(T) + P[:, 1] * np.cos(T))
        return float(np.max(np.abs(defect)))

    def sample(self, h: float, s_stop: float | None = None) -> np.ndarray:
        """Markers at arclength spacing close to ``h``; both ends included exactly."""
        L = self.length if s_stop is None else s_stop
        n = max(2, int(round(L / h)))
        sq = np.linspace(0.0, L, n + 1)
        P, _, _ = self.evaluate(sq)
        P[0] = self.nodes[0, 1:3]
        if s_stop is None:
            P[-1] = self.end
        return P


def branch_integrate(start, direction, r_max: float = 8.0, tol: float = 1e-10,
                     h_max: float = 0.1, s_max: float | None = None) -> Branch:
    """Integrate an expander branch from ``start`` in unit ``direction`` out to |x| = r_max.

    ``tol`` is used as both relative and absolute tolerance of the embedded
    Runge-Kutta pair.  The status flags branches that re-enter the ball of
    radius |start| after leaving it ("non-asymptotic") or never reach r_max.
    """
    start = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    if abs(np.hypot(*d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if not r_max > np.hypot(*start):
        raise ValueError("r_max must exceed |start|")
    if s_max is None:
        s_max = 10.0 * r_max + 20.0
    nodes, status = _ode.integrate(start[0], start[1], float(np.arctan2(d[1], d[0])),
                                   float(r_max), tol, tol, h_max, s_max)
    return Branch(nodes, int(status))


def _integrate_length(start, angle: float, length: float, tol: float) -> Branch:
    """Branch of prescribed arclength (used for the internal segment of a tree)."""
    nodes, status = _ode.integrate(float(start[0]), float(start[1]), float(angle), 1e300, tol, tol, 0.1, length)
    # trim the overshoot of the last step back to the exact length
    br = Branch(nodes, int(status))
    if nodes[-1, 0] > length:
        P, T, _ = br.evaluate([length])
        keep = nodes[nodes[:, 0] < length]
        last = np.array([[length, P[0, 0], P[0, 1], T[0]]])
        br = Branch(np.vstack([keep, last]), int(status))
    return br


# ---------------------------------------------------------------------------
# solutions


@dataclass
class ExpanderSolution:
    rays: np.ndarray
    junctions: np.ndarray  # (m, 2)
    branches: list  # outer branches in ray order
    internal: Branch | None = None
    topology: str | None = None
    r_max: float = 8.0
    residuals: dict = field(default_factory=dict)
    starts: list = field(default_factory=list)  # multi-start table
    decay: dict | None = None

    @property
    def angles(self) -> np.ndarray:
        return np.array([b.angle for b in self.branches])

    def network(self, h: float = 0.05) -> Network:
        """Polyline network: junctions are triple vertices, branch ends are endpoints."""
        verts = [Vertex(i, p, "triple") for i, p in enumerate(self.junctions)]
        segs = []
        nj = len(self.junctions)
        if self.internal is not None:
            pts = self.internal.sample(h)
            pts[0], pts[-1] = self.junctions[0], self.junctions[1]
            segs.append(Segment(0, 0, 1, pts))
        for j, br in enumerate(self.branches):
            owner = self._owner(j)
            pts = br.sample(h)
            pts[0] = self.junctions[owner]
            vid = nj + j
            verts.append(Vertex(vid, pts[-1], "endpoint"))
            segs.append(Segment(len(segs), owner, vid, pts))
        return Network(verts, segs, {"name": "expander", "rays": [float(a) for a in self.rays],
                                      "topology": self.topology, "r_max": self.r_max})

    def rotated(self, angle: float) -> "ExpanderSolution":
        """The same solution rotated about the origin (rays keep their branch order)."""
        c, s = np.cos(angle), np.sin(angle)
        R = np.array([[c, -s], [s, c]])

        def rot(b):
            if b is None:
                return None
            n = b.nodes.copy()
            n[:, 1:3] = b.nodes[:, 1:3] @ R.T
            n[:, 3] += angle
            return Branch(n, b.status)

        return ExpanderSolution(self.rays + angle, self.junctions @ R.T, [rot(b) for b in self.branches],
                                rot(self.internal), self.topology, self.r_max, dict(self.residuals),
                                list(self.starts), self.decay)

    def _owner(self, j: int) -> int:
        if self.internal is None:
            return 0
        first, _ = _pairing(self.topology)
        return 0 if j in first else 1

    def report(self) -> dict:
        return {
            "rays": [float(a) for a in self.rays],
            "topology": self.topology,
            "junctions": self.junctions.tolist(),
            "angles": self.angles.tolist(),
            "internal_length": None if self.internal is None else self.internal.length,
            "r_max": self.r_max,
            "residuals": self.residuals,
            "multi_start": self.starts,
            "decay": self.decay,
        }


def _frame_dirs(psi: float) -> np.ndarray:
    a = psi + TWO_PI * np.arange(3) / 3
    return np.stack([np.cos(a), np.sin(a)], axis=1)


def _sorted_rays(angles) -> np.ndarray:
    a = np.mod(np.asarray(angles, dtype=float), TWO_PI)
    a = np.sort(a)
    if len(a) > 1 and np.min(np.diff(np.concatenate([a, [a[0] + TWO_PI]]))) < 1e-9:
        raise ValueError("ray angles must be distinct")
    return a


def _damped_newton(F, z0, tol: float, max_iter: int = 40, eps: float = 1e-7):
    z = np.asarray(z0, dtype=float).copy()
    f = F(z)
    r = np.linalg.norm(f)
    for it in range(max_iter):
        if r <= tol:
            return z, r, it, True
        J = np.empty((len(f), len(z)))
        for i in range(len(z)):
            dz = np.zeros_like(z)
            dz[i] = eps
            J[:, i] = (F(z + dz) - F(z - dz)) / (2 * eps)
        try:
            step = -np.linalg.lstsq(J, f, rcond=None)[0]
        except np.linalg.LinAlgError:
            return z, r, it, False
        sn = np.linalg.norm(step)
        if sn > 0.5:
            step *= 0.5 / sn
        lam = 1.0
        while lam > 1e-6:
            zn = z + lam * step
            fn = F(zn)
            rn = np.linalg.norm(fn)
            if rn < r:
                z, f, r = zn, fn, rn
                break
            lam *= 0.5
        else:
            return z, r, it, r <= tol
    return z, r, max_iter, r <= tol


_PENALTY = np.pi


def _triod_branches(z, r_max, tol):
    p = z[:2]
    return [branch_integrate(p, d, r_max, tol) for d in _frame_dirs(z[2])]


def solve_triod_expander(angles, r_max: float = 8.0, tol: float = 1e-10, seeds=None,
                         newton_tol: float = 1e-11, agree_tol: float = 1e-6) -> ExpanderSolution:
    """Triod expander asymptotic to three half-lines.

    Unknowns are the junction point and the rotation of the balanced
    tangent frame.  Every seed is run; the solution returned is the one with
    the smallest residual and ``starts`` lists all converged seeds, so the
    spread of their junctions measures multi-start agreement.
    """
    rays = _sorted_rays(angles)
    if len(rays) != 3:
        raise ValueError("a triod needs three ray angles")

    def F(z):
        brs = _triod_branches(z, r_max, tol)
        if any(not b.reached for b in brs):
            return np.full(3, _PENALTY)
        return wrap(np.array([b.angle for b in brs]) - rays)

    if seeds is None:
        seeds = default_triod_seeds(rays)
    starts = []
    best = None
    for z0 in seeds:
        z, r, it, ok = _damped_newton(F, z0, newton_tol)
        starts.append({"seed": [float(v) for v in z0], "converged": bool(ok), "iterations": int(it),
                       "junction": [float(z[0]), float(z[1])], "frame": float(wrap(z[2])),
                       "angle_residual": float(r)})
        if ok and (best is None or r < best[1]):
            best = (z, r)
    if best is None:
        raise ExpanderError(f"no convergence for rays {rays.tolist()} from {len(seeds)} seeds; "
                            f"best residual {min(s['angle_residual'] for s in starts):.3e}")
    z, r = best
    brs = _triod_branches(z, r_max, tol)
    sol = ExpanderSolution(rays, z[None, :2].copy(), brs, r_max=r_max, starts=starts)
    sol.residuals = _residuals(sol, r, agree_tol)
    return sol


def default_triod_seeds(rays) -> list:
    """Junction at the rays' angular centroid scaled by 0, 1/2, 1; frame from each ray."""
    m = np.mean(np.stack([np.cos(rays), np.sin(rays)], axis=1), axis=0)
    out = []
    for c in (0.0, 0.5, 1.0):
        for j, a in enumerate(rays):
            out.append(np.array([c * m[0], c * m[1], a - TWO_PI * j / 3]))
    return out


def random_triod_seeds(rays, n: int, rng) -> list:
    base = default_triod_seeds(rays)
    out = []
    for i in range(n):
        z = base[i % len(base)].copy()
        z[:2] += rng.uniform(-0.3, 0.3, 2)
        z[2] += rng.uniform(-0.2, 0.2)
        out.append(z)
    return out


def _residuals(sol: ExpanderSolution, angle_res: float, agree_tol: float) -> dict:
    conv = [s for s in sol.starts if s["converged"]]
    spread = 0.0
    if conv:
        J = np.array([s["junction"] for s in conv])
        spread = float(np.max(np.hypot(*(J - J.mean(axis=0)).T)) * 2) if len(J) > 1 else 0.0
        if "junction_b" in conv[0]:
            JB = np.array([s["junction_b"] for s in conv])
            spread = max(spread, float(np.max(np.hypot(*(JB - JB.mean(axis=0)).T)) * 2) if len(JB) > 1 else 0.0)
    brs = list(sol.branches) + ([sol.internal] if sol.internal is not None else [])
    tangent_defects = []
    for j, p in enumerate(sol.junctions):
        ds = []
        for b in brs:
            if np.allclose(b.nodes[0, 1:3], p, atol=1e-12):
                ds.append(-np.array([np.cos(b.nodes[0, 3]), np.sin(b.nodes[0, 3])]))
            if b is sol.internal and j == 1:
                ds.append(np.array([np.cos(b.nodes[-1, 3]), np.sin(b.nodes[-1, 3])]))
        tangent_defects.append(float(np.hypot(*np.sum(ds, axis=0))))
    return {
        "sup_k_minus_xperp": max(b.residual() for b in brs),
        "angle_mismatch": float(np.max(np.abs(wrap(sol.angles - sol.rays)))),
        "newton_residual": float(angle_res),
        "junction_defect": max(tangent_defects) if tangent_defects else 0.0,
        "multi_start_spread": spread,
        "multi_start_agree": bool(spread <= agree_tol),
        "converged_starts": len(conv),
    }


# ---------------------------------------------------------------------------
# four-ray trees


def _pairing(topology: str):
    """``"01|23"`` -> ((0, 1), (2, 3)) indices into the sorted rays."""
    a, b = topology.split("|")
    return tuple(int(c) for c in a), tuple(int(c) for c in b)


def pairings() -> list:
    """The two tree topologies pairing cyclically adjacent rays."""
    return ["01|23", "12|30"]


def _tree_branches(z, first, second, r_max, tol):
    A = z[:2]
    psi, ell = z[2], z[3]
    if ell <= 0:
        return None
    internal = _integrate_length(A, psi, ell, tol)
    B = internal.nodes[-1, 1:3]
    back = internal.nodes[-1, 3] + np.pi
    outer = {}
    for k, j in enumerate(first):
        a = psi + TWO_PI * (k + 1) / 3
        outer[j] = branch_integrate(A, (np.cos(a), np.sin(a)), r_max, tol)
    for k, j in enumerate(second):
        a = back + TWO_PI * (k + 1) / 3
        if np.hypot(*B) >= r_max:
            return None
        outer[j] = branch_integrate(B, (np.cos(a), np.sin(a)), r_max, tol)
    return internal, [outer[j] for j in range(4)]


def solve_tree_expander(angles, topology: str = "01|23", r_max: float = 8.0, tol: float = 1e-10,
                        seeds=None, newton_tol: float = 1e-11, agree_tol: float = 1e-6) -> ExpanderSolution:
    """Four-ray tree expander with two junctions joined by one internal segment.

    ``topology`` names which sorted rays meet at the first junction, e.g.
    ``"01|23"``.  The internal branch is integrated from the first junction
    for the unknown length; the second junction and its frame follow from it,
    so four unknowns match the four asymptotic angles.
    """
    rays = _sorted_rays(angles)
    if len(rays) != 4:
        raise ValueError("a tree expander needs four ray angles")
    first, second = _pairing(topology)

    def F(z):
        out = _tree_branches(z, first, second, r_max, tol)
        if out is None:
            return np.full(4, _PENALTY)
        _, brs = out
        if any(not b.reached for b in brs):
            return np.full(4, _PENALTY)
        return wrap(np.array([b.angle for b in brs]) - rays)

    if seeds is None:
        seeds = default_tree_seeds(rays, topology)
    starts = []
    best = None
    for z0 in seeds:
        z, r, it, ok = _damped_newton(F, z0, newton_tol)
        out = _tree_branches(z, first, second, r_max, tol)
        B = out[0].nodes[-1, 1:3] if out is not None else np.full(2, np.nan)
        starts.append({"seed": [float(v) for v in z0], "converged": bool(ok), "iterations": int(it),
                       "junction": [float(z[0]), float(z[1])], "junction_b": [float(B[0]), float(B[1])],
                       "frame": float(wrap(z[2])), "internal_length": float(z[3]),
                       "angle_residual": float(r)})
        if ok and (best is None or r < best[1]):
            best = (z, r)
    if best is None:
        raise ExpanderError(f"no convergence for rays {rays.tolist()} topology {topology}")
    z, r = best
    internal, brs = _tree_branches(z, first, second, r_max, tol)
    junctions = np.array([z[:2], internal.nodes[-1, 1:3]])
    sol = ExpanderSolution(rays, junctions, brs, internal, topology, r_max, starts=starts)
    sol.residuals = _residuals(sol, r, agree_tol)
    return sol


def default_tree_seeds(rays, topology: str) -> list:
    first, _ = _pairing(topology)
    e = np.stack([np.cos(rays), np.sin(rays)], axis=1)
    bis = e[first[0]] + e[first[1]]
    bis /= np.hypot(*bis)
    psi = np.arctan2(-bis[1], -bis[0])
    return [np.array([c * bis[0], c * bis[1], psi, 2 * c]) for c in (0.3, 0.6, 1.0)]


def solve_tree_all(angles, **kw) -> list:
    """Solve both pairings; returns the converged solutions (possibly two, flagged by topology)."""
    out = []
    for top in pairings():
        try:
            out.append(solve_tree_expander(angles, top, **kw))
        except ExpanderError as exc:
            log.info("topology %s: %s", top, exc)
    return out


def solve_expander(angles, topology: str | None = None, **kw) -> ExpanderSolution:
    if len(angles) == 3:
        return solve_triod_expander(angles, **kw)
    if len(angles) == 4:
        return solve_tree_expander(angles, topology or "01|23", **kw)
    raise ValueError("expanders are implemented for 3 or 4 rays")


# ---------------------------------------------------------------------------
# graph profiles and decay


@dataclass(frozen=True)
class GraphProfile:
    alpha: float
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    blew_up: bool = False

    @property
    def d2u(self) -> np.ndarray:
        return (1 + self.du**2) * (self.u - self.x * self.du)


def graph_profile(alpha: float, x_start: float, u0: float, du0: float, x_end: float,
                  rtol: float = 1e-12, atol: float = 1e-14, n: int = 400) -> GraphProfile:
    """Integrate u'' = (1 + u'^2)(u - x u') from x_start to x_end.

    Flags ``blew_up`` when |u'| exceeds 1e6 or the integrator stops early,
    which happens for data off the decaying branch.
    """
    if x_start < 1:
        raise ValueError("x_start must be at least 1")

    def f(x, y):
        return [y[1], (1 + y[1] ** 2) * (y[0] - x * y[1])]

    def steep(x, y):
        return abs(y[1]) - 1e6

    steep.terminal = True
    xs = np.linspace(x_start, x_end, n)
    sol = solve_ivp(f, (x_start, x_end), [u0, du0], method="DOP853", rtol=rtol, atol=atol,
                    t_eval=xs, events=steep)
    blew = sol.status != 0 or len(sol.t) < n
    return GraphProfile(float(alpha), sol.t, sol.y[0], sol.y[1], bool(blew))


def branch_graph(branch: Branch, alpha: float | None = None, x_min: float = 1.0):
    """Rotate a branch so its asymptote is the positive x-axis; return graph samples.

    Samples (x, u, u', u'') are taken at the integrator nodes beyond the
    last point where the rotated branch stops being a graph, and beyond
    ``x_min``.
    """
    a = branch.angle if alpha is None else alpha
    c, s = np.cos(-a), np.sin(-a)
    x = c * branch.nodes[:, 1] - s * branch.nodes[:, 2]
    y = s * branch.nodes[:, 1] + c * branch.nodes[:, 2]
    th = wrap(branch.nodes[:, 3] - a)
    bad = np.flatnonzero(np.cos(th) <= 0.1)
    first = bad[-1] + 1 if bad.size else 0
    keep = np.arange(len(x)) >= first
    keep &= x >= x_min
    x, y, th = x[keep], y[keep], th[keep]
    du = np.tan(th)
    k = -branch.nodes[keep, 1] * np.sin(branch.nodes[keep, 3]) + branch.nodes[keep, 2] * np.cos(branch.nodes[keep, 3])
    d2u = k * (1 + du**2) ** 1.5
    return x, y, du, d2u


def verify_decay(sol: ExpanderSolution, floor: float = 1e-9, x_min: float = 1.0) -> dict:
    """Fit the decay constants of every outer branch as a graph over its asymptote.

    Reports C_u = sup |u| e^{x^2/2}, C_du = sup |u'| x e^{x^2/2} and
    C_d2u = sup |u''| e^{x^2/2} over samples where the respective quantity is
    above ``floor`` (below it integration noise dominates), the x where the
    first sup is attained, and the fraction of samples with u (u - x u') > 0.
    """
    per = []
    for j, br in enumerate(sol.branches):
        x, u, du, d2u = branch_graph(br, sol.rays[j], x_min)
        w = np.exp(x**2 / 2)
        fit = {}
        for name, v, wt in (("C_u", u, w), ("C_du", du, x * w), ("C_d2u", d2u, w)):
            m = np.abs(v) > floor
            fit[name] = float(np.max(np.abs(v[m]) * wt[m])) if m.any() else 0.0
            if name == "C_u":
                fit["x_sup"] = float(x[m][np.argmax(np.abs(v[m]) * wt[m])]) if m.any() else float("nan")
        m = np.abs(u) > floor
        fit["x_start"] = float(x[0]) if len(x) else float("nan")
        fit["tail_sign_fraction"] = float(np.mean(u[m] * (u[m] - x[m] * du[m]) > 0)) if m.any() else 1.0
        fit["tail_radius"] = tail_radius(fit["C_u"], x, threshold=1e-8)
        per.append(fit)
    out = {
        "branches": per,
        "C_u": max(f["C_u"] for f in per),
        "C_du": max(f["C_du"] for f in per),
        "C_d2u": max(f["C_d2u"] for f in per),
        "tail_radius": max(f["tail_radius"] for f in per),
    }
    sol.decay = out
    return out


def tail_radius(C: float, x=None, threshold: float = 1e-8) -> float:
    """Smallest radius beyond which C e^{-x^2/2} < threshold."""
    if C <= threshold:
        return 1.0
    return float(np.sqrt(2 * np.log(C / threshold)))
