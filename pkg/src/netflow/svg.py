"""SVG rendering of networks and trajectories."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .network import Network

DEFAULT_STYLE = {"stroke": "#1f3a93", "stroke_width": 0.01, "junction": "#c0392b", "junction_radius": 0.03,
                 "margin": 0.05, "width": 600}


def view_box(nets, margin: float = 0.05) -> tuple:
    """(x, y, w, h) covering every network, padded by ``margin`` of the extent."""
    pts = [np.concatenate([s.points for s in n.segments]) for n in nets if n.segments]
    pts += [np.array([v.position for v in n.vertices]) for n in nets if n.vertices]
    if not pts:
        return (-1.0, -1.0, 2.0, 2.0)
    p = np.concatenate(pts)
    lo, hi = p.min(axis=0), p.max(axis=0)
    ext = max(float(np.max(hi - lo)), 1e-9)
    lo, hi = lo - margin * ext, hi + margin * ext
    return (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def render_network(net: Network, style: dict | None = None, box=None) -> str:
    """SVG document with one path per segment and a circle per junction.

    The y-axis is flipped so that the picture has the usual orientation.
    """
    st = {**DEFAULT_STYLE, **(style or {})}
    x, y, w, h = box if box is not None else view_box([net], st["margin"])
    px = st["width"]
    py = max(1, int(round(px * h / w)))
    vb = f"{_fmt(x)} {_fmt(-(y + h))} {_fmt(w)} {_fmt(h)}"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{py}" viewBox="{vb}">',
           f'<g fill="none" stroke={quoteattr(st["stroke"])} stroke-width="{_fmt(st["stroke_width"])}">']
    for s in net.segments:
        d = "M" + " L".join(f"{_fmt(a)},{_fmt(-b)}" for a, b in s.points)
        out.append(f'<path id="seg{s.id}" d="{d}"/>')
    out.append("</g>")
    out.append(f'<g fill={quoteattr(st["junction"])}>')
    for v in net.vertices:
        if net.degree(v.id) >= 3:
            cx, cy = v.position
            out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(-cy)}" r="{_fmt(st["junction_radius"])}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_trajectory(snapshots, out_dir, style: dict | None = None, prefix: str = "frame") -> list:
    """One SVG file per snapshot, all sharing the viewBox of the whole trajectory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nets = [s.net if hasattr(s, "net") else s for s in snapshots]
    st = {**DEFAULT_STYLE, **(style or {})}
    box = view_box(nets, st["margin"])
    paths = []
    for i, n in enumerate(nets):
        p = out_dir / f"{prefix}_{i:04d}.svg"
        p.write_text(render_network(n, st, box))
        paths.append(p)
    return paths
