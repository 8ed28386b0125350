"""Curvature flow of regular networks.

Interior markers move with the curvature vector plus a tangential
redistribution velocity; triple junctions are slaved to the balance
condition (the exterior unit tangents sum to zero) through a damped Newton
solve after every step; endpoints are pinned unless excluded from the
fixed set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels as K
from .network import (
    Network,
    NetworkError,
    Segment,
    curvature_profile,
    exterior_tangent,
    junction_defect,
    one_sided_fit,
    to_graph,
)

log = logging.getLogger(__name__)

HALTING = ("segment-collapse", "loop-collapse", "junction-collision")


class FlowError(RuntimeError):
    """Numerical failure of the flow (junction Newton could not be rescued)."""


@dataclass(frozen=True)
class Event:
    kind: str
    time: float
    payload: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "time": float(self.time), "payload": dict(self.payload)}


@dataclass(frozen=True)
class StepControls:
    """Time-stepping parameters.

    ``cfl`` is the constant c in ``dt = c * h_min**2`` (explicit scheme) or
    ``dt = c * h_min`` (semi-implicit scheme).  ``omega`` scales the
    tangential redistribution.  ``fixed_endpoints=None`` pins every endpoint.
    """

    cfl: float = 0.25
    scheme: str = "explicit"
    omega: float = 1.0
    newton_tol: float = 1e-10
    newton_maxit: int = 25
    fixed_endpoints: frozenset | None = None
    collapse_tol: float | None = None
    angle_tol: float = 1e-3
    r_trunc: float = 20.0

    def __post_init__(self):
        if not 0 < self.cfl <= 0.5:
            raise ValueError("cfl must lie in (0, 0.5]")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.scheme not in ("explicit", "semi-implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.fixed_endpoints is not None:
            object.__setattr__(self, "fixed_endpoints", frozenset(self.fixed_endpoints))


@dataclass(frozen=True)
class FlowState:
    net: Network
    t: float = 0.0
    h: float = 0.05
    events: tuple = ()


@dataclass
class Trajectory:
    snapshots: list
    events: list

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> FlowState:
        return self.snapshots[-1]

    @property
    def halted(self) -> bool:
        return any(e.kind in HALTING for e in self.events)

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)


# ---------------------------------------------------------------------------
# packing


def _spline_resample(pts: np.ndarray, n_int: int, closed: bool) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    bc = "periodic" if closed and len(pts) > 3 else "not-a-knot"
    if len(pts) == 3 and not closed:
        cs = None
    else:
        cs = CubicSpline(s, pts, bc_type=bc)
    if cs is None:
        fine_s = np.linspace(0.0, s[-1], 64 * n_int + 1)
        fine = np.stack([np.interp(fine_s, s, pts[:, 0]), np.interp(fine_s, s, pts[:, 1])], axis=1)
    else:
        fine_s = np.linspace(0.0, s[-1], 16 * n_int + 1)
        fine = cs(fine_s)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(fine, axis=0).T))])
    targets = np.interp(np.linspace(0.0, arc[-1], n_int + 1), arc, fine_s)
    out = fine[0:1].repeat(n_int + 1, axis=0) if cs is None else cs(targets)
    if cs is None:
        out = np.stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])], axis=1)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def _needs_remesh(sp: np.ndarray, h: float) -> bool:
    return bool(sp.max() > 2.0 * h or (len(sp) > 2 and sp.min() < 0.5 * h))


def remesh(net: Network, h: float) -> Network:
    """Respace segments whose marker spacing left [h/2, 2h] (cubic-spline interpolation)."""
    segs = []
    changed = False
    for s in net.segments:
        pts = s.points
        if len(pts) < 3:
            pts = np.vstack([pts[0], 0.5 * (pts[0] + pts[1]), pts[1]])
            changed = True
        sp = np.hypot(*np.diff(pts, axis=0).T)
        if _needs_remesh(sp, h):
            L = sp.sum()
            n_int = max(2, int(round(L / h)))
            pts = _spline_resample(pts, n_int, s.closed)
            changed = True
        segs.append(Segment(s.id, s.start, s.end, pts) if pts is not s.points else s)
    return net.with_segments(segs) if changed else net


class _Packed:
    """Flat-array view of a network for the compiled stepper."""

    def __init__(self, net: Network, fixed_endpoints=None):
        self.net = net
        vid_node = {v.id: i for i, v in enumerate(net.vertices)}
        nodes = [v.position for v in net.vertices]
        m = len(nodes)
        seg_lists = []
        for s in net.segments:
            pts = s.points
            if len(pts) < 3:
                raise NetworkError(f"segment {s.id}: flow needs at least 3 markers")
            inner = list(range(m, m + len(pts) - 2))
            nodes.extend(pts[1:-1])
            m += len(pts) - 2
            seg_lists.append([vid_node[s.start]] + inner + [vid_node[s.end]])
        pos = np.array(nodes, dtype=float).reshape(-1, 2)
        n = len(pos)
        prev = np.full(n, -1, dtype=np.int64)
        nxt = np.full(n, -1, dtype=np.int64)
        ntype = np.zeros(n, dtype=np.int64)
        for lst in seg_lists:
            for a, b, c in zip(lst[:-2], lst[1:-1], lst[2:]):
                prev[b], nxt[b] = a, c
        jnode, jnb, enode, enb = [], [], [], []
        for v in net.vertices:
            i = vid_node[v.id]
            ends = []
            for si, s in enumerate(net.segments):
                lst = seg_lists[si]
                if s.start == v.id:
                    ends.append((lst[1], lst[2]))
                if s.end == v.id:
                    ends.append((lst[-2], lst[-3]))
            if len(ends) == 1:
                if fixed_endpoints is None or v.id in fixed_endpoints:
                    ntype[i] = K.PINNED
                else:
                    ntype[i] = K.FREE
                    enode.append(i)
                    enb.append(ends[0])
            elif len(ends) == 2:
                ntype[i] = K.INTERIOR
                prev[i], nxt[i] = ends[0][0], ends[1][0]
            elif len(ends) == 3:
                ntype[i] = K.JUNCTION
                jnode.append(i)
                jnb.append(ends)
            else:
                raise NetworkError(f"vertex {v.id}: {len(ends)} segment ends; the flow needs a regular network")
        self.vid_node = vid_node
        self.pos = pos
        self.prev, self.nxt, self.ntype = prev, nxt, ntype
        self.jnode = np.array(jnode, dtype=np.int64)
        self.jnb = np.array(jnb, dtype=np.int64).reshape(-1, 3, 2)
        self.enode = np.array(enode, dtype=np.int64)
        self.enb = np.array(enb, dtype=np.int64).reshape(-1, 2)
        self.seg_lists = seg_lists
        self.seg_ptr = np.cumsum([0] + [len(l) for l in seg_lists]).astype(np.int64)
        self.seg_nodes = np.array([i for l in seg_lists for i in l], dtype=np.int64)
        self.seg_can_shrink = np.array([len(l) > 3 for l in seg_lists], dtype=np.bool_)
        g = to_graph(net)
        jids = [v.id for v in net.vertices if ntype[vid_node[v.id]] == K.JUNCTION]
        pairs = [
            (vid_node[a], vid_node[b])
            for i, a in enumerate(jids)
            for b in jids[i + 1:]
            if not g.has_edge(a, b)
        ]
        self.coll_pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        self.coll_ids = [(a, b) for i, a in enumerate(jids) for b in jids[i + 1:] if not g.has_edge(a, b)]

    def unpack(self) -> Network:
        from .network import Vertex

        net = self.net
        verts = [Vertex(v.id, self.pos[self.vid_node[v.id]], v.kind) for v in net.vertices]
        segs = [Segment(s.id, s.start, s.end, self.pos[lst]) for s, lst in zip(net.segments, self.seg_lists)]
        return Network(verts, segs, dict(net.metadata))


# ---------------------------------------------------------------------------
# junctions


def _stretched_end(seg: Segment, at_start: bool, q0, q):
    """First three markers after dragging the vertex end from q0 to q.

    Markers follow the vertex with weight decreasing linearly in arclength
    from one at the vertex to zero at the far end, so straight segments stay
    straight.
    """
    pts = seg.points if at_start else seg.points[::-1]
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    w = 1.0 - s[:3] / s[-1]
    return pts[:3] + w[:, None] * (np.asarray(q) - np.asarray(q0))[None, :]


def junction_solve(net: Network, junction_id: int, tol: float = 1e-10, max_iter: int = 25,
                   guess=None, carry: bool = True) -> np.ndarray:
    """Position of a triple junction that balances the three exterior tangents.

    With ``carry=True`` the incident segments are stretched along with the
    junction (see :func:`_stretched_end`); with ``carry=False`` all other
    markers stay fixed, which is what the stepper does.

    Raises :class:`FlowError` when Newton does not converge.
    """
    inc = net.incident(junction_id)
    if len(inc) != 3:
        raise NetworkError(f"vertex {junction_id} is not a triple junction")
    for seg, _ in inc:
        if len(seg.points) < 3:
            raise NetworkError(f"segment {seg.id}: needs at least 3 markers")
    q0 = net.vertex(junction_id).position.copy()

    def residual(q):
        total = np.zeros(2)
        for seg, at_start in inc:
            if carry:
                m = _stretched_end(seg, at_start, q0, q)
            else:
                pts = seg.points if at_start else seg.points[::-1]
                m = pts[:3].copy()
            m[0] = q
            d, _ = one_sided_fit(*m)
            total -= d / np.hypot(*d)
        return total

    q = q0.copy() if guess is None else np.asarray(guess, dtype=float).copy()
    scale = min(np.hypot(*(s.points[1] - s.points[0])) if a else np.hypot(*(s.points[-2] - s.points[-1]))
                for s, a in inc)
    F = residual(q)
    r = np.hypot(*F)
    for _ in range(max_iter):
        if r <= tol:
            return q
        eps = 1e-7 * scale
        J = np.column_stack([(residual(q + [eps, 0.0]) - F) / eps, (residual(q + [0.0, eps]) - F) / eps])
        try:
            dq = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-4:
            qn = q + lam * dq
            Fn = residual(qn)
            if np.hypot(*Fn) < r:
                q, F, r = qn, Fn, np.hypot(*Fn)
                break
            lam *= 0.5
        else:
            break
    if r <= tol:
        return q
    raise FlowError(f"junction {junction_id}: Newton did not converge (residual {r:.3e})")


def balanced_curvature_defect(net: Network, vid: int) -> float:
    """|sum_j <k_j, J T_j>| at a triple junction (monitored, not enforced)."""
    from .network import end_curvature_vector, rot90

    total = 0.0
    for seg, at_start in net.incident(vid):
        T = exterior_tangent(seg, at_start)
        total += float(end_curvature_vector(seg, at_start) @ rot90(T))
    return abs(total)


# ---------------------------------------------------------------------------
# stepping


def _collapse_event(net: Network, seg_index: int, t: float, lengths, tol: float) -> Event:
    import networkx as nx

    seg = net.segments[seg_index]
    g = nx.Graph()
    for s, L in zip(net.segments, lengths):
        if s.closed:
            continue
        if g.has_edge(s.start, s.end):
            # parallel edges form a two-segment loop
            if g[s.start][s.end]["length"] + L < 4 * tol * 2:
                return Event("loop-collapse", t, {"segments": [int(g[s.start][s.end]["sid"]), int(s.id)],
                                                  "loop_length": float(g[s.start][s.end]["length"] + L)})
            continue
        g.add_edge(s.start, s.end, length=float(L), sid=s.id)
    if seg.closed:
        return Event("loop-collapse", t, {"segments": [int(seg.id)], "loop_length": float(lengths[seg_index])})
    for cycle in nx.cycle_basis(g):
        edges = list(zip(cycle, cycle[1:] + cycle[:1]))
        sids = [g[a][b]["sid"] for a, b in edges]
        if seg.id in sids:
            total = sum(g[a][b]["length"] for a, b in edges)
            if total < 4 * tol * len(edges):
                return Event("loop-collapse", t, {"segments": [int(x) for x in sids], "loop_length": float(total)})
    return Event("segment-collapse", t, {"segment": int(seg.id), "length": float(lengths[seg_index])})


def _check_regular(net: Network, controls: StepControls) -> None:
    for v in net.vertices:
        n = net.degree(v.id)
        if n > 3:
            raise NetworkError(f"vertex {v.id} has {n} ends; glue an expander first")
        if n == 3:
            d = junction_defect(net, v.id)
            if d > controls.angle_tol:
                raise NetworkError(f"junction {v.id} is not balanced (defect {d:.3e})")


class _Stepper:
    def __init__(self, state: FlowState, controls: StepControls):
        self.controls = controls
        self.h = state.h
        self.collapse_tol = controls.collapse_tol if controls.collapse_tol is not None else 3.0 * state.h
        self.t = state.t
        self.events: list = list(state.events)
        self._pack(remesh(state.net, self.h))

    def _pack(self, net: Network):
        self.packed = _Packed(net, self.controls.fixed_endpoints)

    def network(self) -> Network:
        return self.packed.unpack()

    def state(self) -> FlowState:
        return FlowState(self.network(), self.t, self.h, tuple(self.events))

    def advance(self, t_end: float, max_steps: int = 10**9) -> str | None:
        """Step to ``t_end``; returns the kind of a halting event or None."""
        c = self.controls
        p = self.packed
        stuck = 0
        while self.t < t_end:
            if c.scheme == "explicit":
                t, status, info, nsteps, nrej = K.advance(
                    p.pos, p.prev, p.nxt, p.ntype, p.jnode, p.jnb, p.enode, p.enb,
                    p.seg_ptr, p.seg_nodes, p.seg_can_shrink, p.coll_pairs,
                    self.t, t_end, c.cfl, c.omega, self.h, self.collapse_tol,
                    c.newton_tol, c.newton_maxit, max_steps)
            else:
                t, status, info, nsteps, nrej = _semi_implicit_advance(self, t_end, max_steps)
            stuck = stuck + 1 if t == self.t and status == K.ST_REMESH else 0
            self.t = float(t)
            if nrej:
                self.events.append(Event("step-reject", self.t, {"count": int(nrej)}))
            if status == K.ST_DONE:
                break
            if status == K.ST_MAXSTEPS:
                return None
            if status == K.ST_REMESH:
                if stuck > 3:
                    raise FlowError("remeshing does not restore the marker spacing")
                net = self.network()
                self._pack(remesh(net, self.h))
                p = self.packed
                continue
            if status == K.ST_COLLAPSE:
                net = self.network()
                lengths = [s.length() for s in net.segments]
                ev = _collapse_event(net, int(info), self.t, lengths, self.collapse_tol)
                self.events.append(ev)
                return ev.kind
            if status == K.ST_COLLISION:
                a, b = p.coll_ids[int(info)]
                self.events.append(Event("junction-collision", self.t, {"junctions": [int(a), int(b)]}))
                return "junction-collision"
            if status == K.ST_NEWTON:
                raise FlowError(f"junction Newton diverged at t={self.t:.6g} after 8 step halvings")
        return None


def _semi_implicit_advance(stepper: _Stepper, t_end: float, max_steps: int):
    """Per-step linear solve for the interior markers; junctions corrected afterwards."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.linalg import spsolve

    c = stepper.controls
    p = stepper.packed
    t = stepper.t
    n = len(p.pos)
    vel = np.zeros_like(p.pos)
    kv = np.zeros_like(p.pos)
    nsteps = nrej = 0
    interior = np.flatnonzero(p.ntype == K.INTERIOR)
    while t < t_end:
        lengths, hmin, need = K.scan(p.pos, p.seg_ptr, p.seg_nodes, p.seg_can_shrink, stepper.h)
        short = np.flatnonzero(lengths < stepper.collapse_tol)
        if short.size:
            return t, K.ST_COLLAPSE, int(short[0]), nsteps, nrej
        for q, (a, b) in enumerate(p.coll_pairs):
            if np.hypot(*(p.pos[a] - p.pos[b])) < stepper.collapse_tol:
                return t, K.ST_COLLISION, q, nsteps, nrej
        if need:
            return t, K.ST_REMESH, -1, nsteps, nrej
        if nsteps >= max_steps:
            return t, K.ST_MAXSTEPS, -1, nsteps, nrej
        dt = min(c.cfl * hmin, t_end - t)
        K.velocities(p.pos, p.prev, p.nxt, p.ntype, p.jnode, p.jnb, p.enode, p.enb, c.omega, vel)
        K.velocities(p.pos, p.prev, p.nxt, p.ntype, p.jnode, p.jnb, p.enode, p.enb, 0.0, kv)
        a, b = p.prev[interior], p.nxt[interior]
        lu = np.hypot(*(p.pos[a] - p.pos[interior]).T)
        lw = np.hypot(*(p.pos[b] - p.pos[interior]).T)
        ca = 2.0 / (lu * (lu + lw))
        cb = 2.0 / (lw * (lu + lw))
        rows = np.concatenate([np.arange(n), interior, interior, interior])
        cols = np.concatenate([np.arange(n), interior, a, b])
        vals = np.concatenate([np.ones(n), dt * (ca + cb), -dt * ca, -dt * cb])
        A = csr_matrix((vals, (rows, cols)), shape=(n, n))
        rhs = p.pos.copy()
        rhs[interior] += dt * (vel[interior] - kv[interior])
        others = np.flatnonzero(p.ntype != K.INTERIOR)
        rhs[others] += dt * vel[others]
        for attempt in range(9):
            trial = np.asarray(spsolve(A, rhs))
            r = K.solve_junctions(trial, p.jnode, p.jnb, c.newton_tol, c.newton_maxit)
            if r >= 0.0:
                break
            nrej += 1
            dt *= 0.5
            vals = np.concatenate([np.ones(n), dt * (ca + cb), -dt * ca, -dt * cb])
            A = csr_matrix((vals, (rows, cols)), shape=(n, n))
            rhs = p.pos.copy()
            rhs[interior] += dt * (vel[interior] - kv[interior])
            rhs[others] += dt * vel[others]
        else:
            return t, K.ST_NEWTON, -1, nsteps, nrej
        p.pos[:] = trial
        t = t_end if t + dt >= t_end else t + dt
        nsteps += 1
    return t, K.ST_DONE, -1, nsteps, nrej


def step(state: FlowState, controls: StepControls = StepControls()) -> FlowState:
    """Advance one time step (remeshing first if the spacing requires it)."""
    if any(e.kind in HALTING for e in state.events):
        raise FlowError("state has a pending collapse event")
    _check_regular(state.net, controls)
    st = _Stepper(state, controls)
    st.advance(np.inf, max_steps=1)
    return st.state()


def evolve(state: FlowState, T: float, controls: StepControls = StepControls(),
           snap_times=None, callback=None) -> Trajectory:
    """Evolve to time ``T`` and return snapshots at ``snap_times`` (and T).

    The initial state is the first snapshot.  Evolution halts early on a
    collapse or collision event, which is recorded and followed by a final
    snapshot at the halting time.  ``callback(state)`` sees every snapshot.
    """
    if not T > state.t:
        raise ValueError("T must exceed the current time")
    _check_regular(state.net, controls)
    stepper = _Stepper(state, controls)
    times = sorted({float(x) for x in ([] if snap_times is None else snap_times) if state.t < x < T} | {float(T)})
    snaps = [stepper.state()]
    if callback:
        callback(snaps[0])
    for target in times:
        halted = stepper.advance(target)
        snap = stepper.state()
        _boundary_check(snap, controls, stepper.events)
        snaps.append(replace(snap, events=tuple(stepper.events)))
        if callback:
            callback(snaps[-1])
        if halted:
            break
    return Trajectory(snaps, list(stepper.events))


def _boundary_check(state: FlowState, controls: StepControls, events: list) -> None:
    pts = state.net.all_points()
    if len(pts) and np.hypot(pts[:, 0], pts[:, 1]).max() > controls.r_trunc * (1 + 1e-9):
        if not any(e.kind == "boundary-exit" for e in events):
            events.append(Event("boundary-exit", state.t, {"r_trunc": controls.r_trunc}))


# ---------------------------------------------------------------------------
# snapshot summaries


def snapshot_summary(state: FlowState) -> dict:
    net = state.net
    sup_k = 0.0
    for s in net.segments:
        if len(s.points) >= 3:
            sup_k = max(sup_k, float(np.abs(curvature_profile(s).k).max()))
    lengths = [s.length() for s in net.segments]
    defects = [junction_defect(net, v) for v in net.junction_ids()]
    return {
        "t": float(state.t),
        "total_length": float(sum(lengths)),
        "sup_k": sup_k,
        "min_segment_length": float(min(lengths)) if lengths else float("inf"),
        "junction_defect_max": float(max(defects)) if defects else 0.0,
    }


# ---------------------------------------------------------------------------
# pseudolocality window


@dataclass(frozen=True)
class WindowSample:
    t: float
    lipschitz: float
    height: float
    status: str  # "graph", "not-a-graph" or "empty"


def _clip_pieces(pts: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> list:
    """Pieces of a polyline inside the open box lo < x < hi (Liang-Barsky)."""
    pieces, cur = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        t0, t1 = 0.0, 1.0
        ok = True
        for k in range(2):
            for pk, qk in ((-d[k], a[k] - lo[k]), (d[k], hi[k] - a[k])):
                if pk == 0:
                    if qk <= 0:
                        ok = False
                else:
                    r = qk / pk
                    if pk < 0:
                        t0 = max(t0, r)
                    else:
                        t1 = min(t1, r)
        if not ok or t0 >= t1:
            if cur:
                pieces.append(np.array(cur))
                cur = []
            continue
        p0 = a if t0 == 0.0 else a + t0 * d
        p1 = b if t1 == 1.0 else a + t1 * d
        if cur and np.array_equal(cur[-1], p0):
            cur.append(p1)
        else:
            if cur:
                pieces.append(np.array(cur))
            cur = [p0, p1]
        if t1 < 1.0:
            pieces.append(np.array(cur))
            cur = []
    if cur:
        pieces.append(np.array(cur))
    return pieces


def window_sample(net: Network, x0, r: float, t: float = 0.0) -> WindowSample:
    x0 = np.asarray(x0, dtype=float)
    lo, hi = x0 - r, x0 + r
    pieces = []
    for s in net.segments:
        pieces.extend(_clip_pieces(s.points, lo, hi))
    if not pieces:
        return WindowSample(t, float("nan"), float("nan"), "empty")
    if len(pieces) > 1:
        # a vertex inside the window splits one curve into two touching pieces
        return WindowSample(t, float("nan"), float("nan"), "not-a-graph")
    piece = pieces[0]
    dx = np.diff(piece[:, 0])
    if not (np.all(dx > 0) or np.all(dx < 0)):
        return WindowSample(t, float("nan"), float("nan"), "not-a-graph")
    lip = float(np.max(np.abs(np.diff(piece[:, 1]) / dx)))
    height = float(np.max(np.abs(piece[:, 1] - x0[1])))
    return WindowSample(t, lip, height, "graph")


def graph_window_monitor(traj, x0, r: float) -> list:
    """Lipschitz constant and height of each snapshot inside the cylinder C_r(x0).

    The window axis is the x-direction.  Snapshots may be a :class:`Trajectory`
    or any iterable of :class:`FlowState`.
    """
    return [window_sample(s.net, x0, r, s.t) for s in traj]
