"""Desingularizing a non-regular multiple point by gluing in a scaled expander.

Around the multiple point p every branch of the seed is a graph u^j over its
half-line.  The expander scaled by sqrt(2 s) is a graph v^j_s over the same
half-line outside a core ball, and on the annulus between the core and
2 s^{1/4} the glued branch is the graph of

    u^j_s = phi(s^{-1/4} x) v^j_s + (1 - phi(s^{-1/4} x)) u^j

with a C^2 cut-off phi equal to 1 on [0, 1] and 0 on [2, inf).  Outside
B_{2 s^{1/4}}(p) the seed markers are kept verbatim.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from . import diagnostics as dg
from .expander import ExpanderSolution, wrap
from .flow import FlowState, StepControls, evolve, junction_solve, snapshot_summary
from .network import (
    Network,
    NetworkError,
    Segment,
    Vertex,
    exterior_tangent,
    length_ratio,
    marker_tangents,
    validate,
)

log = logging.getLogger(__name__)


class GlueError(NetworkError):
    pass


def cutoff(u):
    """C^2 quintic step: 1 on [0, 1], 0 on [2, inf)."""
    return dg.smoothstep(np.asarray(u, dtype=float) - 1.0)


# ---------------------------------------------------------------------------
# cone data


@dataclass
class ConeBranch:
    segment: int
    from_start: bool  # the segment starts at the multiple point
    angle: float  # direction of the half-line
    x: np.ndarray  # graph coordinate of the markers, from p outwards
    u: np.ndarray
    graph_end: int  # markers [0, graph_end) form the graphical part


@dataclass
class ConeData:
    point: int
    position: np.ndarray
    branches: list
    r_graph: float
    C_u: float  # sup |u| / x^2
    C_du: float  # sup |u'| / x

    @property
    def angles(self) -> np.ndarray:
        return np.array([b.angle for b in self.branches])

    @property
    def tangents(self) -> np.ndarray:
        return -np.stack([np.cos(self.angles), np.sin(self.angles)], axis=1)

    @property
    def scale_to_five(self) -> float:
        """Factor that would stretch the graphical region to radius 5."""
        return 5.0 / self.r_graph

    def as_dict(self) -> dict:
        return {"point": self.point, "position": self.position.tolist(), "angles": self.angles.tolist(),
                "r_graph": self.r_graph, "C_u": self.C_u, "C_du": self.C_du,
                "scale_to_five": self.scale_to_five}


def _local_coords(pts, origin, angle):
    c, s = np.cos(angle), np.sin(angle)
    d = pts - origin
    return c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]


def extract_cone(net: Network, p: int, r_cap: float = 5.0) -> ConeData:
    """Tangent-cone data at a multiple point with 3 or 4 branches.

    Each branch is re-expressed as a graph over its half-line; ``r_graph``
    is the largest radius (at most ``r_cap``) up to which every branch stays
    single-valued over its half-line.
    """
    inc = net.incident(p)
    if len(inc) not in (3, 4):
        raise GlueError(f"vertex {p} has {len(inc)} branches; gluing handles 3 or 4")
    origin = net.vertex(p).position
    T = np.array([exterior_tangent(seg, at_start) for seg, at_start in inc])
    for i in range(len(T)):
        for j in range(i):
            if np.hypot(*(T[i] - T[j])) < 1e-6:
                raise GlueError(f"vertex {p}: branches {inc[j][0].id} and {inc[i][0].id} have coincident tangents")
    branches = []
    r_graph = r_cap
    for (seg, at_start), t in zip(inc, T):
        angle = float(np.arctan2(-t[1], -t[0]))
        pts = seg.points if at_start else seg.points[::-1]
        x, u = _local_coords(pts, origin, angle)
        dx = np.diff(x)
        bad = np.flatnonzero(dx <= 0)
        end = len(x) if bad.size == 0 else int(bad[0]) + 1
        if end < 3:
            raise GlueError(f"segment {seg.id}: not a graph over its half-line near the multiple point")
        r_graph = min(r_graph, float(x[end - 1]))
        branches.append(ConeBranch(seg.id, at_start, angle, x, u, end))
    C_u = C_du = 0.0
    for b in branches:
        m = (b.x > 0) & (b.x <= r_graph) & (np.arange(len(b.x)) < b.graph_end)
        xs, us = b.x[m], b.u[m]
        if len(xs):
            C_u = max(C_u, float(np.max(np.abs(us) / xs**2)))
        xm = 0.5 * (b.x[1:b.graph_end] + b.x[:b.graph_end - 1])
        du = np.diff(b.u[:b.graph_end]) / np.diff(b.x[:b.graph_end])
        k = (xm > 0) & (xm <= r_graph)
        if k.any():
            C_du = max(C_du, float(np.max(np.abs(du[k]) / xm[k])))
    return ConeData(p, origin.copy(), branches, r_graph, C_u, C_du)


# ---------------------------------------------------------------------------
# expander graphs


def graphical_radius(exp: ExpanderSolution, slope: float = 0.5) -> float:
    """Core radius of an expander.

    The smallest r such that the junctions and the internal segment lie in
    B_r and beyond graph coordinate r every outer branch is a graph over its
    ray whose tangent makes an angle with the ray of cosine above ``slope``.
    """
    r = float(np.max(np.hypot(*exp.junctions.T)))
    if exp.internal is not None:
        r = max(r, float(np.max(np.hypot(exp.internal.nodes[:, 1], exp.internal.nodes[:, 2]))))
    for br, a in zip(exp.branches, exp.rays):
        c, s = np.cos(-a), np.sin(-a)
        x = c * br.nodes[:, 1] - s * br.nodes[:, 2]
        ok = np.cos(wrap(br.nodes[:, 3] - a)) > slope
        ok &= x > 0
        bad = np.flatnonzero(~ok)
        first = bad[-1] + 1 if bad.size else 0
        r = max(r, float(x[min(first, len(x) - 1)]))
    return r


def _branch_graph_spline(br, angle):
    """Cubic spline of the branch's graph function over its ray (unscaled)."""
    s = np.linspace(0.0, br.length, max(200, int(br.length / 0.01)) + 1)
    P, T, _ = br.evaluate(s)
    c, sn = np.cos(angle), np.sin(angle)
    x = c * P[:, 0] + sn * P[:, 1]
    u = -sn * P[:, 0] + c * P[:, 1]
    ok = np.cos(wrap(T - angle)) > 0.1
    bad = np.flatnonzero(~ok | (np.diff(np.concatenate([[-np.inf], x])) <= 0))
    first = bad[-1] + 1 if bad.size else 0
    return CubicSpline(x[first:], u[first:]), float(x[first]), float(x[-1])


# ---------------------------------------------------------------------------
# gluing


def _match(cone: ConeData, exp: ExpanderSolution, tol: float = 1e-6) -> list:
    idx = []
    for b in cone.branches:
        d = np.abs(wrap(exp.rays - b.angle))
        i = int(np.argmin(d))
        if d[i] > tol:
            raise GlueError(f"cone angle {b.angle:.9f} has no expander ray within {tol:g}")
        idx.append(i)
    if len(set(idx)) != len(idx) or len(idx) != len(exp.rays):
        raise GlueError("cone branches and expander rays do not match one to one")
    return idx


def glue(seed: Network, p: int, exp: ExpanderSolution, s: float, h: float | None = None,
         r0: float | None = None, cone: ConeData | None = None, balance: bool = True) -> Network:
    """Replace the multiple point ``p`` of ``seed`` by the expander scaled by sqrt(2 s).

    ``h`` is the marker spacing of the generated parts (default: a tenth of
    sqrt(2 s), capped by the seed spacing).  ``r0`` is the expander's core
    radius (default :func:`graphical_radius`).  With ``balance`` the new
    junctions are moved (by far less than ``h``) so that the discrete
    tangents balance exactly; the largest move is stored in the metadata.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    cone = extract_cone(seed, p) if cone is None else cone
    order = _match(cone, exp)
    lam = np.sqrt(2.0 * s)
    r0 = graphical_radius(exp) if r0 is None else r0
    x_a = r0 * lam
    x_b = 2.0 * s**0.25
    if not x_a < s**0.25:
        raise GlueError(f"gluing annulus is empty: r0 sqrt(2s) = {x_a:.4g} >= s^(1/4) = {s ** 0.25:.4g}")
    if not x_b < cone.r_graph:
        raise GlueError(f"2 s^(1/4) = {x_b:.4g} exceeds the graphical radius {cone.r_graph:.4g} of the seed")
    if h is None:
        seed_h = min(float(np.median(seed.segment(b.segment).spacings())) for b in cone.branches)
        h = min(seed_h, 0.1 * lam)
    origin = cone.position

    next_vid = max(v.id for v in seed.vertices) + 1
    next_sid = max(sg.id for sg in seed.segments) + 1
    jids = list(range(next_vid, next_vid + len(exp.junctions)))
    junctions = origin + lam * exp.junctions
    verts = [v for v in seed.vertices if v.id != p]
    verts += [Vertex(j, q, "triple") for j, q in zip(jids, junctions)]
    touched = {b.segment for b in cone.branches}
    segs = [sg for sg in seed.segments if sg.id not in touched]
    if exp.internal is not None:
        pts = origin + lam * exp.internal.sample(h / lam)
        pts[0], pts[-1] = junctions[0], junctions[1]
        segs.append(Segment(next_sid, jids[0], jids[1], pts))

    for cb, i in zip(cone.branches, order):
        br = exp.branches[i]
        owner = jids[exp._owner(i)]
        spline, x_lo, x_hi = _branch_graph_spline(br, exp.rays[i])
        if x_lo > r0 + 1e-9:
            raise GlueError(f"expander branch {i} is not graphical beyond r0={r0:.4g}")
        # core part: the scaled branch up to graph coordinate r0
        s_core = _solve_arclength(br, exp.rays[i], r0) if r0 > 0 else 0.0
        core = origin + lam * br.sample(h / lam, s_stop=s_core) if s_core > 0 else junctions[exp._owner(i)][None, :]
        core[0] = junctions[exp._owner(i)]
        # annulus part: graph of the blended function over the half-line of the seed branch
        n_ann = max(2, int(np.ceil((x_b - x_a) / h)))
        xs = np.linspace(x_a, x_b, n_ann + 1)[1:-1]
        seed_seg = seed.segment(cb.segment)
        ge = cb.graph_end
        u_seed = CubicSpline(cb.x[:ge], cb.u[:ge]) if ge >= 4 else (lambda x, cb=cb, ge=ge: np.interp(x, cb.x[:ge], cb.u[:ge]))
        xt = xs / lam
        v = np.where(xt <= x_hi, lam * spline(np.minimum(xt, x_hi)), 0.0)
        phi = cutoff(xs / s**0.25)
        us = phi * v + (1.0 - phi) * u_seed(xs)
        c, sn = np.cos(cb.angle), np.sin(cb.angle)
        ann = origin + np.stack([c * xs - sn * us, sn * xs + c * us], axis=1)
        ann = ann[np.hypot(*(ann - origin).T) < x_b]
        # outer part: seed markers beyond x_b, verbatim
        pts_out = seed_seg.points if cb.from_start else seed_seg.points[::-1]
        first = int(np.flatnonzero(cb.x >= x_b)[0])
        outer = pts_out[first:]
        pts = np.vstack([core, ann, outer])
        far = seed_seg.end if cb.from_start else seed_seg.start
        segs.append(Segment(cb.segment, owner, far, pts))
    meta = dict(seed.metadata)
    meta.update({"glued_point": p, "center": cone.position.tolist(), "s": float(s), "r0": float(r0), "h": float(h),
                 "junction_ids": jids, "annulus": [float(x_a), float(x_b)]})
    out = Network(verts, segs, meta)
    if balance:
        moved = 0.0
        for _ in range(3):
            for j in jids:
                q0 = out.vertex(j).position
                q = junction_solve(out, j, tol=1e-12, carry=False)
                moved = max(moved, float(np.hypot(*(q - q0))))
                out = _move_vertex(out, j, q)
        out.metadata["junction_shift"] = moved
    return out


def _solve_arclength(br, angle, x_target):
    """Arclength where the branch's graph coordinate equals ``x_target``."""
    c, sn = np.cos(angle), np.sin(angle)
    lo, hi = 0.0, br.length
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        P, _, _ = br.evaluate([mid])
        if c * P[0, 0] + sn * P[0, 1] < x_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _move_vertex(net: Network, vid: int, q) -> Network:
    verts = [Vertex(v.id, q, v.kind) if v.id == vid else v for v in net.vertices]
    segs = []
    for sg in net.segments:
        pts = sg.points
        if sg.start == vid or sg.end == vid:
            pts = pts.copy()
            if sg.start == vid:
                pts[0] = q
            if sg.end == vid:
                pts[-1] = q
        segs.append(Segment(sg.id, sg.start, sg.end, pts) if pts is not sg.points else sg)
    return Network(verts, segs, dict(net.metadata))


# ---------------------------------------------------------------------------
# hypotheses


@dataclass
class HReport:
    s: float
    D1: float
    D2: float
    D3: float
    H3_distance: dict  # K -> sup distance of gamma^s / sqrt(2s) to the expander on B_K
    H3_angle: dict  # K -> sup tangent-angle distance on B_K
    regular: bool
    junction_separation: float

    def as_dict(self) -> dict:
        return {"s": self.s, "D1": self.D1, "D2": self.D2, "D3": self.D3,
                "H3_distance": {str(k): v for k, v in self.H3_distance.items()},
                "H3_angle": {str(k): v for k, v in self.H3_angle.items()},
                "regular": self.regular, "junction_separation": self.junction_separation}


@dataclass
class GlueFamily:
    seed: Network
    point: int
    expander: ExpanderSolution
    scales: list
    glued: list = field(default_factory=list)
    cone: ConeData | None = None
    r0: float | None = None
    h_rel: float = 0.1
    h_max: float = 0.02
    reports: list = field(default_factory=list)

    def spacing(self, s: float) -> float:
        return min(self.h_max, self.h_rel * np.sqrt(2.0 * s))

    def build(self) -> "GlueFamily":
        self.cone = extract_cone(self.seed, self.point)
        if self.r0 is None:
            self.r0 = graphical_radius(self.expander)
        self.glued = [glue(self.seed, self.point, self.expander, s, self.spacing(s), self.r0, self.cone)
                      for s in self.scales]
        return self


def make_family(seed: Network, point: int, expander: ExpanderSolution, scales=(1e-2, 4e-3, 1e-3, 4e-4),
                h_rel: float = 0.1, h_max: float = 0.02) -> GlueFamily:
    return GlueFamily(seed, point, expander, sorted(scales, reverse=True), h_rel=h_rel, h_max=h_max).build()


def _h4_constant(fam: GlueFamily, net: Network, s: float) -> float:
    worst = 0.0
    lam = np.sqrt(2 * s)
    x_lo = fam.r0 * lam
    x_hi = min(4.0, fam.cone.r_graph)
    for cb in fam.cone.branches:
        x, u = _local_coords(net.segment(cb.segment).points, fam.cone.position, cb.angle)
        m = (x >= x_lo) & (x <= x_hi)
        x, u = x[m], u[m]
        if len(x) < 5:
            continue
        du = np.gradient(u, x)
        d2u = np.gradient(du, x)
        lhs = np.abs(u) + x * np.abs(du) + x**2 * np.abs(d2u)
        rhs = x**2 + lam * np.exp(-(x**2) / (4 * s))
        worst = max(worst, float(np.max(lhs[2:-2] / rhs[2:-2])))
    return worst


def _h3(net: Network, exp: ExpanderSolution, s: float, K: float, h: float):
    lam = np.sqrt(2 * s)
    origin = np.asarray(net.metadata.get("origin", (0.0, 0.0)))
    scaled = net.translated(-origin).scaled(1.0 / lam)
    ref = exp.network(h=min(0.02, h / lam))
    dist = dg.hausdorff(scaled, ref, radius=K, step=0.25 * min(0.02, h / lam))
    # tangent-angle distance at markers of the scaled network inside B_K

    rp = np.concatenate([sg.points for sg in ref.segments])
    rt = np.concatenate([marker_tangents(sg) for sg in ref.segments])
    tree = cKDTree(rp)
    worst = 0.0
    for sg in scaled.segments:
        m = np.hypot(*sg.points.T) < K
        if not m.any():
            continue
        # several nearest references so that coincident junction markers of
        # different segments are all candidates
        _, j = tree.query(sg.points[m], k=4)
        t = marker_tangents(sg)[m][:, None, :]
        cross = np.abs(t[..., 0] * rt[j, 1] - t[..., 1] * rt[j, 0]).min(axis=1)
        worst = max(worst, float(np.max(np.arcsin(np.clip(cross, 0, 1)))))
    return dist, worst


def verify_hypotheses(fam: GlueFamily, Ks=(2, 4, 8)) -> list:
    """Measure the gluing-hypothesis constants of every glued network in the family."""
    reports = []
    for s, net in zip(fam.scales, fam.glued):
        h = fam.spacing(s)
        pts = np.concatenate([sg.points for sg in net.segments])
        centers = pts[np.hypot(*(pts - fam.cone.position).T) < 1.0][::7]
        D1 = length_ratio(net, centers=centers, radii=np.geomspace(2 * h, 2.0, 24))
        th = dg.theta_field(net)
        be = dg.beta_field(net)
        D2 = 0.0
        for sg in net.segments:
            d = sg.points - fam.cone.position
            r2 = np.einsum("ij,ij->i", d, d)
            D2 = max(D2, float(np.max((np.abs(th[sg.id]) + np.abs(be[sg.id])) / (r2 + 1))))
        d3 = _h4_constant(fam, net, s)
        dist, ang = {}, {}
        for K in Ks:
            net_c = Network(net.vertices, net.segments, {**net.metadata, "origin": fam.cone.position.tolist()})
            dist[K], ang[K] = _h3(net_c, fam.expander, s, K, h)
        rep = validate(net, angle_tol=1e-6)
        reports.append(HReport(float(s), float(D1), D2, d3, dist, ang, bool(rep.regular),
                               dg.junction_separation(net)))
    fam.reports = reports
    return reports


# ---------------------------------------------------------------------------
# family experiment


@dataclass
class FamilyRun:
    s: float
    h: float
    times: np.ndarray
    sup_k_sqrt_t: np.ndarray
    min_seg_over_sqrt_t: np.ndarray
    max_density: np.ndarray
    quadrature_slack: np.ndarray
    under_resolved: np.ndarray
    localized: list
    events: list
    snapshots: list

    def summary(self) -> dict:
        return {
            "s": self.s,
            "h": float(self.h),
            "sup_k_sqrt_t": float(np.max(self.sup_k_sqrt_t)),
            "min_seg_over_sqrt_t": float(np.min(self.min_seg_over_sqrt_t)),
            "max_density": float(np.max(self.max_density)),
            "quadrature_slack": float(np.max(self.quadrature_slack)),
            "events": [e.as_dict() for e in self.events],
            "annulus_max": float(max(v.annulus for v in self.localized)) if self.localized else 0.0,
        }


def density_grid(n: int = 9, radius: float = 1.0, center=(0.0, 0.0)) -> np.ndarray:
    g = np.linspace(-radius, radius, n)
    X, Y = np.meshgrid(g, g)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    return pts[np.hypot(*pts.T) <= radius + 1e-12] + np.asarray(center)


def run_family(fam: GlueFamily, T: float = 0.05, controls: StepControls | None = None,
               snap_times=None, tau: float = 0.1, grid: int = 9, t0_local: float | None = None) -> dict:
    """Evolve every glued network of ``fam`` to ``T``; see :func:`run_glued`."""
    return run_glued(fam.glued, fam.scales, [fam.spacing(s) for s in fam.scales], fam.cone.position,
                     T, controls, snap_times, tau, grid, t0_local)


def run_glued(nets, scales, spacings, center, T: float = 0.05, controls: StepControls | None = None,
              snap_times=None, tau: float = 0.1, grid: int = 9, t0_local: float | None = None) -> dict:
    """Evolve glued networks to ``T`` and measure the short-time estimates.

    For each snapshot: sup |k| sqrt(t), (shortest segment)/sqrt(t), and the
    largest Gaussian density over a grid in B_1(center) at scales r^2 in
    {tau t, tau t / 4}.  Trajectories of different s are compared on B_1 at
    the shared snapshot times; the last network is taken as the finest.
    """
    controls = controls or StepControls()
    center = np.asarray(center, dtype=float)
    if snap_times is None:
        snap_times = np.geomspace(T / 64, T, 13)
    t0_local = 2 * T if t0_local is None else t0_local
    centers = density_grid(grid) + center
    runs = []
    for s, net, h in zip(scales, nets, spacings):
        traj = evolve(FlowState(net, 0.0, h), T, controls, snap_times=list(snap_times))
        ts, kk, mm, dd, qs, ur, loc = [], [], [], [], [], [], []
        for snap in traj.snapshots[1:]:
            t = snap.t
            summ = snapshot_summary(snap)
            ts.append(t)
            kk.append(summ["sup_k"] * np.sqrt(t))
            mm.append(summ["min_segment_length"] / np.sqrt(t))
            radii = [np.sqrt(tau * t), np.sqrt(tau * t / 4)]
            flag = any(dg.under_resolved(snap.net, dg.DensityKernel(tuple(c), r)) for c in centers[:1] for r in radii)
            vals = np.array([[dg.polyline_density(snap.net, c, r) for r in radii] for c in centers])
            i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
            dd.append(float(vals[i, j]))
            # quadrature slack: exact polyline integral against the marker trapezoid rule
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", dg.UnderResolvedWarning)
                qs.append(abs(float(vals[i, j]) - dg.gaussian_density(snap.net, centers[i], radii[j])))
            ur.append(flag)
            try:
                loc.append(dg.localized_functional(snap.net, t, center, t0_local, center=center))
            except dg.NotTreeLike:
                pass
        runs.append(FamilyRun(float(s), h, np.array(ts), np.array(kk), np.array(mm), np.array(dd),
                              np.array(qs), np.array(ur), loc, list(traj.events), traj.snapshots))
    # pairwise distances on B_1 at matched times
    pair = {}
    finest = runs[-1]
    for r in runs[:-1]:
        common = sorted(set(np.round(r.times, 14)) & set(np.round(finest.times, 14)))
        ds = []
        for t in common:
            a = r.snapshots[1 + int(np.argmin(np.abs(r.times - t)))].net
            b = finest.snapshots[1 + int(np.argmin(np.abs(finest.times - t)))].net
            ds.append(dg.hausdorff(a, b, center=center, radius=1.0))
        pair[f"{r.s:g}"] = {"times": [float(t) for t in common], "hausdorff_to_finest": ds}
    return {"runs": runs, "per_s": [r.summary() for r in runs], "to_finest": pair,
            "finest_s": finest.s, "T": T}
