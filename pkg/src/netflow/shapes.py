"""Builders for the standard networks used throughout the package."""

from __future__ import annotations

import numpy as np

from .network import Network, Segment, Vertex, resample_points


def _unit(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def _straight(a, b, h: float) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    L = np.hypot(*(b - a))
    n = max(2, int(round(L / h)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    pts = a + t * (b - a)
    pts[0], pts[-1] = a, b
    return pts


def _arc_curve(fn, t0: float, t1: float, h: float, oversample: int = 64) -> np.ndarray:
    """Markers at spacing ~h along a parametric curve fn(t) -> (n, 2)."""
    t = np.linspace(t0, t1, 4097)
    fine = fn(t)
    L = np.hypot(*np.diff(fine, axis=0).T).sum()
    n = max(2, int(round(L / h)))
    t = np.linspace(t0, t1, n * oversample + 1)
    fine = fn(t)
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(fine, axis=0).T))])
    targets = np.linspace(0.0, s[-1], n + 1)
    tt = np.interp(targets, s, t)
    pts = fn(tt)
    return pts


def line(length: float = 10.0, h: float = 0.05, angle: float = 0.0, center=(0.0, 0.0)) -> Network:
    """A straight segment with two endpoints, centered at ``center``."""
    c = np.asarray(center, float)
    e = _unit(angle)
    a, b = c - 0.5 * length * e, c + 0.5 * length * e
    verts = [Vertex(0, a, "endpoint"), Vertex(1, b, "endpoint")]
    return Network(verts, [Segment(0, 0, 1, _straight(a, b, h))], {"name": "line"})


def star(angles, length: float = 10.0, h: float = 0.05, center=(0.0, 0.0), lengths=None) -> Network:
    """Straight rays leaving ``center`` in the given directions.

    With three rays the center is a triple vertex, otherwise a multiple
    point.  The rays are oriented from the center outwards.
    """
    c = np.asarray(center, float)
    angles = list(angles)
    kind = "triple" if len(angles) == 3 else "multiple"
    verts = [Vertex(0, c, kind)]
    segs = []
    for i, a in enumerate(angles):
        L = length if lengths is None else lengths[i]
        end = c + L * _unit(a)
        verts.append(Vertex(i + 1, end, "endpoint"))
        segs.append(Segment(i, 0, i + 1, _straight(c, end, h)))
    return Network(verts, segs, {"name": "star", "angles": [float(a) for a in angles]})


def standard_triod(length: float = 10.0, h: float = 0.05, angle: float = 0.0, center=(0.0, 0.0)) -> Network:
    net = star([angle, angle + 2 * np.pi / 3, angle + 4 * np.pi / 3], length, h, center)
    return Network(net.vertices, net.segments, {"name": "standard_triod", "angle": float(angle)})


def plus(length: float = 3.0, h: float = 0.05, center=(0.0, 0.0), angle: float = 0.0) -> Network:
    """Four straight rays at right angles: a non-regular multiple(4) point."""
    net = star([angle + j * np.pi / 2 for j in range(4)], length, h, center)
    return Network(net.vertices, net.segments, {"name": "plus"})


def circle(radius: float = 1.0, h: float | None = 0.01, center=(0.0, 0.0), n: int | None = None) -> Network:
    """Regular polygon inscribed in a circle, as one closed segment.

    The base vertex is a smooth degree-two point of kind ``multiple``.
    """
    c = np.asarray(center, float)
    if n is None:
        n = max(8, int(round(2 * np.pi * radius / h)))
    phi = 2 * np.pi * np.arange(n + 1) / n
    pts = c + radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    pts[-1] = pts[0]
    return Network([Vertex(0, pts[0], "multiple")], [Segment(0, 0, 0, pts)],
                   {"name": "circle", "radius": float(radius)})


def _arc_between(center, radius, phi0, phi1, h):
    c = np.asarray(center, float)
    return _arc_curve(lambda t: c + radius * np.stack([np.cos(t), np.sin(t)], axis=1), phi0, phi1, h)


def lens(a: float = 0.5, ray_length: float = 2.0, h: float = 0.02) -> Network:
    """Two circular arcs between junctions (+-a, 0), with outer rays along the x-axis.

    Arcs meet the rays at 120 degrees, so the network is regular.  The lens
    area is ``2 * (r**2 * (phi - sin(phi)) / 2)`` with ``r = 2a/sqrt(3)`` and
    opening angle ``phi = 2 pi / 3``.
    """
    r = 2 * a / np.sqrt(3)
    yc = a / np.sqrt(3)
    verts = [
        Vertex(0, (-a, 0.0), "triple"),
        Vertex(1, (a, 0.0), "triple"),
        Vertex(2, (-a - ray_length, 0.0), "endpoint"),
        Vertex(3, (a + ray_length, 0.0), "endpoint"),
    ]
    # upper arc: centre below the axis; phi from 150 deg down to 30 deg
    upper = _arc_between((0.0, -yc), r, 5 * np.pi / 6, np.pi / 6, h)
    lower = _arc_between((0.0, yc), r, -5 * np.pi / 6, -np.pi / 6, h)
    upper[0], upper[-1] = verts[0].position, verts[1].position
    lower[0], lower[-1] = verts[0].position, verts[1].position
    segs = [
        Segment(0, 0, 1, upper),
        Segment(1, 0, 1, lower),
        Segment(2, 0, 2, _straight(verts[0].position, verts[2].position, h)),
        Segment(3, 1, 3, _straight(verts[1].position, verts[3].position, h)),
    ]
    area = r**2 * (2 * np.pi / 3 - np.sin(2 * np.pi / 3))
    return Network(verts, segs, {"name": "lens", "area": float(area)})


def theta(a: float = 0.5, h: float = 0.02) -> Network:
    """Closed regular theta network: a straight bridge and two major arcs."""
    r = 2 * a / np.sqrt(3)
    yc = a / np.sqrt(3)
    verts = [Vertex(0, (-a, 0.0), "triple"), Vertex(1, (a, 0.0), "triple")]
    upper = _arc_between((0.0, yc), r, 7 * np.pi / 6, -np.pi / 6, h)
    lower = _arc_between((0.0, -yc), r, 5 * np.pi / 6, 13 * np.pi / 6, h)
    upper[0], upper[-1] = verts[0].position, verts[1].position
    lower[0], lower[-1] = verts[0].position, verts[1].position
    segs = [
        Segment(0, 0, 1, _straight(verts[0].position, verts[1].position, h)),
        Segment(1, 0, 1, upper),
        Segment(2, 0, 1, lower),
    ]
    return Network(verts, segs, {"name": "theta"})


def bent_triod(length: float = 4.0, h: float = 0.05, bend: float = 0.6, angle: float = 0.0) -> Network:
    """Regular triod whose first arm is a circular arc of curvature ``bend``.

    The arms leave the junction at 120 degrees; the far endpoints are meant
    to be pinned.
    """
    dirs = [angle + 2 * np.pi * j / 3 for j in range(3)]
    c = np.zeros(2)
    verts = [Vertex(0, c, "triple")]
    segs = []
    for j, a in enumerate(dirs):
        if j == 0 and abs(bend) > 1e-6:
            rad = 1.0 / bend
            e, n = _unit(a), _unit(a + np.pi / 2)
            ctr = c + rad * n
            sweep = length / rad

            def fn(t, ctr=ctr, rad=rad, n=n, e=e):
                return ctr + rad * (np.outer(np.sin(t), e) - np.outer(np.cos(t), n))

            pts = _arc_curve(fn, 0.0, sweep, h)
        else:
            pts = _straight(c, c + length * _unit(a), h)
        pts[0] = c
        verts.append(Vertex(j + 1, pts[-1], "endpoint"))
        segs.append(Segment(j, 0, j + 1, pts))
    return Network(verts, segs, {"name": "bent_triod", "bend": float(bend)})


def graph_curve(u, x0: float, x1: float, h: float = 0.01, start_extra=None, end_extra=None) -> Network:
    """Open curve: optional leading points, the graph of ``u`` on [x0, x1], trailing points."""
    xs = np.linspace(x0, x1, max(2, int(round((x1 - x0) / h))) + 1)
    body = np.stack([xs, u(xs)], axis=1)
    parts = []
    if start_extra is not None and len(start_extra):
        parts.append(np.asarray(start_extra, float))
    parts.append(body)
    if end_extra is not None and len(end_extra):
        parts.append(np.asarray(end_extra, float))
    pts = np.concatenate(parts)
    pts, _ = resample_points(pts, h)
    verts = [Vertex(0, pts[0], "endpoint"), Vertex(1, pts[-1], "endpoint")]
    return Network(verts, [Segment(0, 0, 1, pts)], {"name": "graph_curve"})


def parabola_star(h: float = 0.005, reach: float = 1.0) -> Network:
    """Three rays from the origin, the first one bent into y = x^2/2."""
    xs = np.linspace(0.0, reach, max(3, int(round(reach / h))) + 1)
    para = np.stack([xs, xs**2 / 2], axis=1)
    verts = [Vertex(0, (0.0, 0.0), "multiple")]
    segs = [Segment(0, 0, 1, para)]
    verts.append(Vertex(1, para[-1], "endpoint"))
    for j, a in enumerate((2.0, 4.0)):
        end = reach * _unit(a)
        verts.append(Vertex(j + 2, end, "endpoint"))
        segs.append(Segment(j + 1, 0, j + 2, _straight((0.0, 0.0), end, h)))
    return Network(verts, segs, {"name": "parabola_star"})
