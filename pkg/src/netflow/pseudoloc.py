"""Pseudolocality experiment for planar networks.

Initial data is a Lipschitz graph over the unit window C_1 (the box
(-1, 1) x (-1, 1)) continued outside the window by one of several exterior
shapes.  The flow runs to t = delta^2 and the graph window monitor reports
the Lipschitz constant and height over C_delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowState, StepControls, evolve, graph_window_monitor, window_sample
from .network import Network, NetworkError, Segment, Vertex, length_ratio, resample_points

EXTERIORS = ("straight", "spiral", "zigzag", "tree")


class PseudolocError(NetworkError):
    pass


def window_graph(eps: float, kind: str = "sine"):
    """Graph function on [-1, 1] with Lipschitz constant eps, vanishing at +-1."""
    if kind == "sine":
        return lambda x: eps / np.pi * np.sin(np.pi * x)
    if kind == "flat":
        return lambda x: 0.0 * x
    raise PseudolocError(f"unknown window graph {kind!r}")


def _spiral(start_x: float, turns: float, r0: float, r1: float, h: float, side: int) -> np.ndarray:
    # inward spiral starting at (side * start_x, 0) on the circle of radius r0
    c = np.array([side * (start_x + r0), 0.0])
    phi = np.linspace(0.0, 2 * np.pi * turns, max(64, int(4 * np.pi * turns * r0 / h)))
    r = r0 + (r1 - r0) * phi / phi[-1]
    ang = np.pi - phi if side > 0 else -phi
    return c + np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def exterior_points(kind: str, h: float, side: int) -> np.ndarray:
    """Polyline continuing the window graph from (side, 0) outwards."""
    xs = np.linspace(1.0, 3.0, int(round(2.0 / h)) + 1)
    if kind == "straight":
        pts = np.stack([xs, 0 * xs], axis=1)
    elif kind == "zigzag":
        pts = np.stack([xs, 0.3 * np.sin(3 * np.pi * (xs - 1.0))], axis=1)
    elif kind == "spiral":
        lead = np.stack([np.linspace(1.0, 1.5, 11), np.zeros(11)], axis=1)
        sp = _spiral(1.5, 1.5, 1.0, 0.4, h, 1)
        pts = np.concatenate([lead, sp[1:]])
    else:
        raise PseudolocError(f"unknown exterior {kind!r}")
    pts = pts.copy()
    pts[:, 0] *= side
    return pts


def initial_network(eps: float, exterior: str, h: float = 0.01, graph: str = "sine") -> Network:
    """Window graph over [-1, 1] continued by the exterior shape on both sides."""
    u = window_graph(eps, graph)
    if exterior != "tree":
        # pieces are resampled separately so that no chord cuts the corner at x = +-1
        xs = np.linspace(-1.0, 1.0, int(round(2.0 / h)) + 1)
        left, _ = resample_points(exterior_points(exterior, h, -1)[::-1], h)
        right, _ = resample_points(exterior_points(exterior, h, 1), h)
        pts = np.concatenate([left[:-1], np.stack([xs, u(xs)], axis=1), right[1:]])
        verts = [Vertex(0, pts[0], "endpoint"), Vertex(1, pts[-1], "endpoint")]
        return Network(verts, [Segment(0, 0, 1, pts)], {"name": f"pseudoloc-{exterior}", "eps": eps})
    # junctions at x = +-1.5 with two straight branches at +-60 degrees
    xs = np.linspace(-1.5, 1.5, int(round(3.0 / h)) + 1)
    ys = np.where(np.abs(xs) < 1.0, u(xs), 0.0)
    mid, _ = resample_points(np.stack([xs, ys], axis=1), h)
    verts = [Vertex(0, (-1.5, 0.0), "triple"), Vertex(1, (1.5, 0.0), "triple")]
    segs = [Segment(0, 0, 1, mid)]
    vid, sid = 2, 1
    for jv, side in ((0, -1.0), (1, 1.0)):
        for sgn in (1.0, -1.0):
            d = np.array([side * np.cos(np.pi / 3), sgn * np.sin(np.pi / 3)])
            p0 = np.array([side * 1.5, 0.0])
            pts, _ = resample_points(np.stack([p0, p0 + 1.5 * d]), h)
            verts.append(Vertex(vid, pts[-1], "endpoint"))
            segs.append(Segment(sid, jv, vid, pts))
            vid += 1
            sid += 1
    return Network(verts, segs, {"name": "pseudoloc-tree", "eps": eps})


def check_window(net: Network, eps: float, x0=(0.0, 0.0), r: float = 1.0) -> None:
    """Reject initial data that is not an eps-Lipschitz graph over C_r(x0)."""
    w = window_sample(net, x0, r)
    if w.status != "graph":
        raise PseudolocError(f"initial window is {w.status}")
    if w.lipschitz > eps * (1 + 1e-9):
        raise PseudolocError(f"initial window Lipschitz {w.lipschitz:.3g} exceeds eps={eps:g}")


@dataclass
class ShapeRun:
    exterior: str
    length_ratio: float
    samples: list
    events: list

    @property
    def max_lipschitz(self) -> float:
        return max((w.lipschitz for w in self.samples if w.status == "graph"), default=float("nan"))

    @property
    def max_height(self) -> float:
        return max((w.height for w in self.samples if w.status == "graph"), default=float("nan"))

    @property
    def all_graph(self) -> bool:
        return all(w.status == "graph" for w in self.samples)


@dataclass
class PseudolocReport:
    eps: float
    delta: float
    eta: float
    runs: list = field(default_factory=list)

    @property
    def eta_achieved(self) -> float:
        """Smallest eta with Lipschitz <= eta and height <= eta delta on every run."""
        vals = [max(r.max_lipschitz, r.max_height / self.delta) for r in self.runs]
        if not vals or any(not r.all_graph for r in self.runs):
            return float("inf")
        return float(max(vals))

    @property
    def passed(self) -> bool:
        return self.eta_achieved <= self.eta

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "delta": self.delta,
            "eta": self.eta,
            "eta_achieved": self.eta_achieved,
            "passed": self.passed,
            "runs": [{"exterior": r.exterior, "length_ratio": r.length_ratio,
                      "max_lipschitz": r.max_lipschitz, "max_height": r.max_height,
                      "all_graph": r.all_graph, "events": [e.as_dict() for e in r.events]}
                     for r in self.runs],
        }


def pseudoloc_experiment(eps: float = 0.01, delta: float = 0.2, eta: float = 0.5,
                         exteriors=EXTERIORS, h: float = 0.01, n_snaps: int = 20,
                         graph: str = "sine", controls: StepControls | None = None) -> PseudolocReport:
    """Evolve each exterior variant to delta^2 and monitor the window C_delta."""
    controls = controls or StepControls()
    report = PseudolocReport(eps, delta, eta)
    times = list(np.linspace(0.0, delta**2, n_snaps + 1)[1:])
    for ext in exteriors:
        net = initial_network(eps, ext, h, graph)
        check_window(net, eps)
        traj = evolve(FlowState(net, 0.0, h), delta**2, controls, snap_times=times)
        samples = graph_window_monitor(traj, (0.0, 0.0), delta)
        report.runs.append(ShapeRun(ext, length_ratio(net), samples, list(traj.events)))
    return report
