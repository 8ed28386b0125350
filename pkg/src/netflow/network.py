"""Planar networks of polylines meeting at vertices.

A :class:`Network` is an immutable collection of :class:`Vertex` and
:class:`Segment` objects.  Each segment is an oriented polyline whose first
and last markers coincide with the positions of its ``start`` and ``end``
vertices.  Closed curves are segments with ``start == end``.

Orientation conventions: ``tau`` is the unit tangent along the segment
orientation, ``nu = J tau`` (rotation by +90 degrees) and the signed
curvature is ``k = <d tau/ds, nu>``.  The exterior unit tangent of a segment
at one of its vertices points out of the segment through that vertex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

VERTEX_KINDS = ("triple", "endpoint", "multiple")


class NetworkError(ValueError):
    """Structural problem with a network (dangling ends, bad markers...)."""


def rot90(v):
    """Complex structure J: rotate vectors by +90 degrees."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Vertex:
    id: int
    position: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in VERTEX_KINDS:
            raise NetworkError(f"vertex {self.id}: unknown kind {self.kind!r}")
        object.__setattr__(self, "position", _frozen(self.position).reshape(2))


@dataclass(frozen=True)
class Segment:
    id: int
    start: int
    end: int
    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise NetworkError(f"segment {self.id}: points must have shape (n, 2)")
        object.__setattr__(self, "points", pts)

    @property
    def closed(self) -> bool:
        return self.start == self.end

    def spacings(self) -> np.ndarray:
        return np.hypot(*np.diff(self.points, axis=0).T)

    def length(self) -> float:
        return float(self.spacings().sum())

    def arclength(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.spacings())])


@dataclass(frozen=True)
class Network:
    vertices: tuple
    segments: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "segments", tuple(self.segments))
        vids = [v.id for v in self.vertices]
        if len(set(vids)) != len(vids):
            raise NetworkError("vertex ids are not unique")
        sids = [s.id for s in self.segments]
        if len(set(sids)) != len(sids):
            raise NetworkError("segment ids are not unique")
        vmap = {v.id: v for v in self.vertices}
        for s in self.segments:
            for end, idx in ((s.start, 0), (s.end, -1)):
                if end not in vmap:
                    raise NetworkError(f"segment {s.id}: dangling end, vertex {end} does not exist")
                if len(s.points) < 2:
                    raise NetworkError(f"segment {s.id}: needs at least 2 markers")
                if not np.array_equal(s.points[idx], vmap[end].position):
                    raise NetworkError(
                        f"segment {s.id}: marker {0 if idx == 0 else len(s.points) - 1} "
                        f"does not coincide with vertex {end}"
                    )
        object.__setattr__(self, "_vmap", vmap)
        object.__setattr__(self, "_smap", {s.id: s for s in self.segments})

    # -- lookup -----------------------------------------------------------
    def vertex(self, vid: int) -> Vertex:
        return self._vmap[vid]

    def segment(self, sid: int) -> Segment:
        return self._smap[sid]

    def incident(self, vid: int) -> list[tuple[Segment, bool]]:
        """Segment ends at vertex ``vid`` as ``(segment, at_start)`` pairs."""
        out = []
        for s in self.segments:
            if s.start == vid:
                out.append((s, True))
            if s.end == vid:
                out.append((s, False))
        return out

    def degree(self, vid: int) -> int:
        return len(self.incident(vid))

    # -- geometry ---------------------------------------------------------
    def total_length(self) -> float:
        return float(sum(s.length() for s in self.segments))

    def all_points(self) -> np.ndarray:
        if not self.segments:
            return np.zeros((0, 2))
        return np.concatenate([s.points for s in self.segments])

    def junction_ids(self) -> list[int]:
        return [v.id for v in self.vertices if self.degree(v.id) == 3]

    def transformed(self, fn) -> "Network":
        """Apply a point map ``fn`` (arrays of shape (n, 2)) to everything."""
        verts = [Vertex(v.id, fn(v.position[None, :])[0], v.kind) for v in self.vertices]
        vpos = {v.id: v.position for v in verts}
        segs = []
        for s in self.segments:
            pts = np.array(fn(s.points), dtype=float)
            pts[0] = vpos[s.start]
            pts[-1] = vpos[s.end]
            segs.append(Segment(s.id, s.start, s.end, pts))
        return Network(verts, segs, dict(self.metadata))

    def scaled(self, factor: float, center=(0.0, 0.0)) -> "Network":
        c = np.asarray(center, dtype=float)
        return self.transformed(lambda p: c + factor * (p - c))

    def rotated(self, angle: float, center=(0.0, 0.0)) -> "Network":
        c = np.asarray(center, dtype=float)
        R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        return self.transformed(lambda p: c + (p - c) @ R.T)

    def translated(self, offset) -> "Network":
        o = np.asarray(offset, dtype=float)
        return self.transformed(lambda p: p + o)

    def with_segments(self, segments: Iterable[Segment], metadata=None) -> "Network":
        return Network(self.vertices, tuple(segments), dict(self.metadata if metadata is None else metadata))

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "vertices": [
                {"id": int(v.id), "x": float(v.position[0]), "y": float(v.position[1]), "kind": v.kind}
                for v in self.vertices
            ],
            "segments": [
                {"id": int(s.id), "from": int(s.start), "to": int(s.end), "points": s.points.tolist()}
                for s in self.segments
            ],
        }
        if self.metadata:
            d["metadata"] = _jsonable(self.metadata)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        try:
            verts = []
            for v in d["vertices"]:
                kind = v["kind"]
                if kind not in VERTEX_KINDS:
                    raise NetworkError(f"vertex {v['id']}: unknown kind {kind!r}")
                verts.append(Vertex(int(v["id"]), (float(v["x"]), float(v["y"])), kind))
            segs = [
                Segment(int(s["id"]), int(s["from"]), int(s["to"]), np.asarray(s["points"], dtype=float))
                for s in d["segments"]
            ]
        except KeyError as exc:
            raise NetworkError(f"missing field {exc.args[0]!r} in network document") from None
        return cls(verts, segs, dict(d.get("metadata", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# stencils


def one_sided_fit(p0, p1, p2):
    """Quadratic through three markers, parametrized by chord length from p0.

    Returns ``(d1, d2)``, the first and second derivative vectors at ``p0``.
    """
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    s1 = np.hypot(*(p1 - p0))
    s2 = s1 + np.hypot(*(p2 - p1))
    d1 = (-(s1 + s2) / (s1 * s2)) * p0 + (s2 / (s1 * (s2 - s1))) * p1 - (s1 / (s2 * (s2 - s1))) * p2
    d2 = 2.0 * (p0 / (s1 * s2) - p1 / (s1 * (s2 - s1)) + p2 / (s2 * (s2 - s1)))
    return d1, d2


def end_markers(seg: Segment, at_start: bool) -> np.ndarray:
    """First three markers of ``seg`` counted from the given end."""
    pts = seg.points
    return pts[:3] if at_start else pts[::-1][:3]


def exterior_tangent(seg: Segment, at_start: bool) -> np.ndarray:
    """Exterior unit tangent of ``seg`` at one of its ends (quadratic fit).

    The base point of a closed segment is an interior point of the loop and
    gets the central chord through its two neighbours.
    """
    if seg.closed and len(seg.points) > 3:
        d = seg.points[1] - seg.points[-2]
        d = d if at_start else -d
        return -d / np.hypot(*d)
    m = end_markers(seg, at_start)
    if len(m) < 3:
        d = m[1] - m[0]
    else:
        d, _ = one_sided_fit(*m)
    return -d / np.hypot(*d)


def end_curvature_vector(seg: Segment, at_start: bool) -> np.ndarray:
    m = end_markers(seg, at_start)
    if len(m) < 3:
        return np.zeros(2)
    d1, d2 = one_sided_fit(*m)
    n2 = d1 @ d1
    tau = d1 / np.sqrt(n2)
    return (d2 - (d2 @ tau) * tau) / n2


def _interior_curvature_vectors(pts: np.ndarray) -> np.ndarray:
    """Curvature vectors of the circle through consecutive marker triples."""
    u = pts[:-2] - pts[1:-1]
    w = pts[2:] - pts[1:-1]
    uu = np.einsum("ij,ij->i", u, u)
    ww = np.einsum("ij,ij->i", w, w)
    d = 2.0 * (u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0])
    num = np.stack([w[:, 1] * uu - u[:, 1] * ww, u[:, 0] * ww - w[:, 0] * uu], axis=1)
    nn = np.einsum("ij,ij->i", num, num)
    return num * (d / nn)[:, None]


def marker_tangents(seg: Segment) -> np.ndarray:
    """Unit tangents at every marker, oriented from start to end.

    Central chords at interior markers, one-sided quadratic fits at open ends.
    """
    pts = seg.points
    tau = np.empty_like(pts)
    tau[1:-1] = pts[2:] - pts[:-2]
    if seg.closed:
        tau[0] = tau[-1] = pts[1] - pts[-2]
    else:
        tau[0] = one_sided_fit(*pts[:3])[0]
        tau[-1] = -one_sided_fit(*pts[::-1][:3])[0]
    return tau / np.hypot(tau[:, 0], tau[:, 1])[:, None]


@dataclass(frozen=True)
class CurvatureProfile:
    s: np.ndarray
    k: np.ndarray
    kvec: np.ndarray

    def __iter__(self):
        return iter((self.s, self.k, self.kvec))


def curvature_profile(seg: Segment) -> CurvatureProfile:
    """Signed curvature and curvature vector at every marker of ``seg``.

    Interior markers use the circle through the marker and its two
    neighbours.  Ends use a one-sided quadratic fit, except for closed
    segments whose start marker is treated as interior.
    """
    pts = seg.points
    if len(pts) < 3:
        raise NetworkError(f"segment {seg.id}: curvature needs at least 3 markers")
    sp = seg.spacings()
    bad = np.flatnonzero(sp == 0.0)
    if bad.size:
        raise NetworkError(f"segment {seg.id}: duplicate markers at index {int(bad[0]) + 1}")
    kvec = np.zeros_like(pts)
    kvec[1:-1] = _interior_curvature_vectors(pts)
    if seg.closed:
        ring = np.vstack([pts[-2], pts[0], pts[1]])
        kvec[0] = kvec[-1] = _interior_curvature_vectors(ring)[0]
    else:
        kvec[0] = end_curvature_vector(seg, True)
        kvec[-1] = end_curvature_vector(seg, False)
    nu = rot90(marker_tangents(seg))
    sign = np.sign(np.einsum("ij,ij->i", kvec, nu))
    k = sign * np.hypot(kvec[:, 0], kvec[:, 1])
    return CurvatureProfile(seg.arclength(), k, kvec)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    regular: bool
    max_junction_defect: float
    min_segment_length: float
    min_marker_spacing: float
    embeddedness_violations: list
    length_ratio: float
    multiple_points: list
    connected: bool
    smooth_points: list

    def as_dict(self) -> dict:
        return _jsonable(self.__dict__)


def junction_defect(net: Network, vid: int) -> float:
    """|sum of exterior unit tangents| at vertex ``vid``."""
    total = np.zeros(2)
    for seg, at_start in net.incident(vid):
        total += exterior_tangent(seg, at_start)
    return float(np.hypot(*total))


def _embeddedness(net: Network) -> list:
    from shapely.geometry import LineString, Point

    lines = {s.id: LineString(s.points) for s in net.segments if len(s.points) >= 2}
    out = []
    for s in net.segments:
        if not lines[s.id].is_simple:
            out.append((s.id, s.id))
    segs = list(net.segments)
    for i, a in enumerate(segs):
        for b in segs[i + 1:]:
            la, lb = lines[a.id], lines[b.id]
            if not la.intersects(lb):
                continue
            shared = {a.start, a.end} & {b.start, b.end}
            inter = la.intersection(lb)
            allowed = [Point(net.vertex(v).position) for v in shared]
            if inter.geom_type == "Point" and any(inter.distance(p) < 1e-12 for p in allowed):
                continue
            if inter.geom_type == "MultiPoint" and all(
                any(g.distance(p) < 1e-12 for p in allowed) for g in inter.geoms
            ):
                continue
            out.append((a.id, b.id))
    return out


def is_connected(net: Network) -> bool:
    import networkx as nx

    g = to_graph(net)
    return g.number_of_nodes() == 0 or nx.is_connected(g)


def to_graph(net: Network):
    """Abstract multigraph: vertices as nodes, segments as keyed edges."""
    import networkx as nx

    g = nx.MultiGraph()
    g.add_nodes_from(v.id for v in net.vertices)
    for s in net.segments:
        g.add_edge(s.start, s.end, key=s.id)
    return g


def validate(net: Network, angle_tol: float = 1e-6, length_ratio_samples: int = 32) -> ValidationReport:
    """Check topology and geometry of ``net`` and report the invariants.

    A vertex of degree two whose exterior tangents cancel within
    ``angle_tol`` is a smooth point of a curve (for instance the base point of
    a closed loop) and does not count against regularity.
    """
    defects = []
    multiple = []
    smooth = []
    for v in net.vertices:
        inc = net.incident(v.id)
        n = len(inc)
        if n == 0:
            raise NetworkError(f"vertex {v.id} has no incident segment")
        expected = {"triple": n == 3, "endpoint": n == 1, "multiple": n >= 2}[v.kind]
        if not expected:
            seg = inc[0][0]
            raise NetworkError(f"vertex {v.id} declared {v.kind} but has {n} segment ends (segment {seg.id})")
        if v.kind == "multiple":
            tangents = np.array([exterior_tangent(s, a) for s, a in inc])
            for i in range(n):
                for j in range(i + 1, n):
                    if np.hypot(*(tangents[i] - tangents[j])) < 1e-9:
                        raise NetworkError(f"vertex {v.id}: coincident exterior tangents")
        if n >= 2:
            d = junction_defect(net, v.id)
            if n == 2 and d <= angle_tol:
                smooth.append(v.id)
                continue
            if n != 3 or v.kind == "multiple":
                multiple.append(v.id)
            defects.append(d)
    max_defect = max(defects) if defects else 0.0
    regular = not multiple and all(d <= angle_tol for d in defects)
    seg_lengths = [s.length() for s in net.segments]
    spacings = [s.spacings().min() for s in net.segments if len(s.points) > 1]
    d1 = length_ratio(net, max_centers=length_ratio_samples) if net.segments else 0.0
    return ValidationReport(
        regular=bool(regular),
        max_junction_defect=float(max_defect),
        min_segment_length=float(min(seg_lengths)) if seg_lengths else float("inf"),
        min_marker_spacing=float(min(spacings)) if spacings else float("inf"),
        embeddedness_violations=_embeddedness(net),
        length_ratio=float(d1),
        multiple_points=multiple,
        connected=is_connected(net),
        smooth_points=smooth,
    )


# ---------------------------------------------------------------------------
# resampling


def _interp_polyline(pts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    return np.stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])], axis=1)


def resample_points(pts: np.ndarray, h: float) -> tuple[np.ndarray, bool]:
    """Uniform arclength markers along a polyline; ends are kept bit-exactly."""
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    L = s[-1]
    short = L < 2 * h
    n = 2 if short else max(2, int(round(L / h)))
    out = _interp_polyline(pts, np.linspace(0.0, L, n + 1))
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out, bool(short)


def resample(net: Network, h: float) -> Network:
    """Redistribute the markers of every segment at spacing close to ``h``.

    Segments shorter than ``2h`` keep exactly three markers and are listed
    in ``metadata["short_segments"]``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    segs, short = [], []
    for s in net.segments:
        pts, is_short = resample_points(s.points, h)
        if is_short:
            short.append(s.id)
        segs.append(Segment(s.id, s.start, s.end, pts))
    meta = dict(net.metadata)
    meta["short_segments"] = short
    return net.with_segments(segs, meta)


# ---------------------------------------------------------------------------
# length ratios


def _chord_length_in_disk(a: np.ndarray, b: np.ndarray, c: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Length of chords a->b inside disks B_r(c); r has shape (m,), chords (n, 2)."""
    d = b - a
    L2 = np.einsum("ij,ij->i", d, d)
    f = a - c
    # |f + t d|^2 = r^2  ->  L2 t^2 + 2 (f.d) t + |f|^2 - r^2 = 0
    fd = np.einsum("ij,ij->i", f, d)[None, :]
    ff = np.einsum("ij,ij->i", f, f)[None, :]
    rr = (r * (1.0 + 1e-12))[:, None] ** 2
    L2b = L2[None, :]
    disc = fd**2 - L2b * (ff - rr)
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = np.clip((-fd - sq) / L2b, 0.0, 1.0)
        t1 = np.clip((-fd + sq) / L2b, 0.0, 1.0)
    frac = np.where(disc > 0, t1 - t0, 0.0)
    return frac * np.sqrt(L2b)


def length_in_ball(net: Network, center, radii) -> np.ndarray:
    """H^1(net intersected with B_r(center)) for each radius."""
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    c = np.asarray(center, dtype=float)
    total = np.zeros(len(radii))
    for s in net.segments:
        total += _chord_length_in_disk(s.points[:-1], s.points[1:], c, radii).sum(axis=1)
    return total


def length_ratio(net: Network, centers=None, radii=None, max_centers: int = 128) -> float:
    """Largest sampled ratio H^1(net ∩ B_r(x)) / r.

    ``centers`` defaults to (a deterministic subsample of) the markers;
    ``radii`` defaults to a geometric grid from twice the median spacing to
    the diameter of the network.
    """
    pts = net.all_points()
    if len(pts) == 0:
        raise ValueError("length ratio of an empty network")
    if centers is None:
        step = max(1, len(pts) // max_centers)
        centers = pts[::step]
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if radii is None:
        sp = np.concatenate([s.spacings() for s in net.segments])
        diam = float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))
        lo = max(2.0 * float(np.median(sp)), 1e-12)
        radii = np.geomspace(lo, max(diam, 2 * lo), 16)
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    best = 0.0
    for c in centers:
        best = max(best, float(np.max(length_in_ball(net, c, radii) / radii)))
    return best
