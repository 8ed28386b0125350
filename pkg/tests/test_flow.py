import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netflow import shapes
from netflow.flow import (
    FlowError,
    FlowState,
    StepControls,
    evolve,
    graph_window_monitor,
    junction_solve,
    remesh,
    snapshot_summary,
    step,
    window_sample,
)
from netflow.network import Network, NetworkError, Segment, Vertex, junction_defect, validate


def _radius(net):
    pts = net.segments[0].points[:-1]
    return float(np.mean(np.hypot(*pts.T)))


def test_controls_validation():
    with pytest.raises(ValueError):
        StepControls(cfl=0.0)
    with pytest.raises(ValueError):
        StepControls(scheme="implicit")
    with pytest.raises(ValueError):
        StepControls(newton_tol=-1)


def test_evolve_requires_later_time():
    with pytest.raises(ValueError):
        evolve(FlowState(shapes.circle(1.0, h=0.05)), 0.0)


def test_unbalanced_junction_refused():
    with pytest.raises(NetworkError, match="not balanced"):
        evolve(FlowState(shapes.star([0.0, 1.5, 3.5], 1.0, h=0.05), 0.0, 0.05), 0.01)


def test_multiple_point_refused():
    with pytest.raises(NetworkError, match="glue an expander"):
        evolve(FlowState(shapes.plus(1.0, h=0.05), 0.0, 0.05), 0.01)


@pytest.mark.parametrize("t", [0.1, 0.25, 0.4])
def test_shrinking_circle_radius(t):
    # exact radius sqrt(1 - 2t)
    tr = evolve(FlowState(shapes.circle(1.0, h=0.01), 0.0, 0.01), t)
    assert _radius(tr.final.net) == pytest.approx(np.sqrt(1 - 2 * t), abs=1e-4)


def test_semi_implicit_circle():
    tr = evolve(FlowState(shapes.circle(1.0, h=0.01), 0.0, 0.01), 0.25, StepControls(cfl=0.05, scheme="semi-implicit"))
    assert _radius(tr.final.net) == pytest.approx(np.sqrt(0.5), abs=5e-3)


def test_static_triod_does_not_move():
    net = shapes.standard_triod(2.0, h=0.05)
    tr = evolve(FlowState(net, 0.0, 0.05), 0.05)
    for a, b in zip(net.segments, tr.final.net.segments):
        np.testing.assert_allclose(b.points[0], a.points[0], atol=1e-12)
        d = b.points - b.points[0]
        e = a.points[-1] - a.points[0]
        assert np.max(np.abs(d[:, 0] * e[1] - d[:, 1] * e[0])) < 1e-10


def test_pinned_endpoints_stay():
    net = shapes.bent_triod(2.0, h=0.05)
    tr = evolve(FlowState(net, 0.0, 0.05), 0.05)
    for v in net.vertices:
        if v.kind == "endpoint":
            np.testing.assert_array_equal(tr.final.net.vertex(v.id).position, v.position)


@pytest.mark.parametrize("h", [0.02, 0.01])
def test_lens_loop_collapse_time(h):
    # area enclosed by a two-junction loop decreases at rate 2 pi - 2 (pi / 3)
    net = shapes.lens(0.5, 2.0, h=h)
    expected = net.metadata["area"] / (4 * np.pi / 3)
    tr = evolve(FlowState(net, 0.0, h), 0.2)
    ev = [e for e in tr.events if e.kind == "loop-collapse"]
    assert tr.halted and len(ev) == 1
    assert sorted(ev[0].payload["segments"]) == [0, 1]
    assert ev[0].time == pytest.approx(expected, abs=20 * h**2)
    assert tr.final.t == ev[0].time


def test_step_after_collapse_refused():
    net = shapes.lens(0.5, 2.0, h=0.02)
    tr = evolve(FlowState(net, 0.0, 0.02), 0.2)
    with pytest.raises(FlowError):
        step(tr.final)


def test_single_step_advances_time():
    st0 = FlowState(shapes.bent_triod(2.0, h=0.05), 0.0, 0.05)
    st1 = step(st0)
    assert st1.t == pytest.approx(0.25 * 0.05**2, rel=0.2)


@settings(max_examples=8, deadline=None)
@given(bend=st.floats(-1.0, 1.0), angle=st.floats(0.0, 2 * np.pi))
def test_junction_balance_after_steps(bend, angle):
    net = shapes.bent_triod(2.0, h=0.05, bend=bend, angle=angle)
    tr = evolve(FlowState(net, 0.0, 0.05), 0.01, snap_times=[0.002, 0.005])
    for s in tr.snapshots[1:]:
        assert junction_defect(s.net, 0) <= 1e-3
        assert validate(s.net, angle_tol=1e-3).regular


def test_length_decreases_on_bent_triod():
    tr = evolve(FlowState(shapes.bent_triod(3.0, h=0.03), 0.0, 0.03), 0.05, snap_times=np.linspace(0, 0.05, 11)[1:])
    L = [s.net.total_length() for s in tr.snapshots]
    assert np.all(np.diff(L) < 0)


def test_deterministic():
    def run():
        return evolve(FlowState(shapes.bent_triod(2.0, h=0.04), 0.0, 0.04), 0.02).final.net

    a, b = run(), run()
    for s, q in zip(a.segments, b.segments):
        assert np.array_equal(s.points, q.points)


def test_remesh_restores_spacing():
    pts = np.array([[0, 0], [0.01, 0], [0.5, 0], [0.52, 0], [1.0, 0]], dtype=float)
    net = Network([Vertex(0, pts[0], "endpoint"), Vertex(1, pts[-1], "endpoint")], [Segment(0, 0, 1, pts)])
    out = remesh(net, 0.1)
    sp = out.segments[0].spacings()
    assert np.all((sp > 0.05) & (sp < 0.2))
    np.testing.assert_array_equal(out.segments[0].points[[0, -1]], pts[[0, -1]])


def test_junction_solve_rebalances():
    net = shapes.standard_triod(1.0, h=0.05)
    pts = net.segments[0].points.copy()
    pts[1] += [0.0, 0.01]
    bad = net.with_segments([Segment(0, 0, 1, pts)] + list(net.segments[1:]))
    q = junction_solve(bad, 0, carry=False)
    segs = []
    for seg in bad.segments:
        p = seg.points.copy()
        p[0] = q
        segs.append(Segment(seg.id, seg.start, seg.end, p))
    verts = [Vertex(0, q, "triple")] + list(bad.vertices[1:])
    assert junction_defect(Network(verts, segs), 0) < 1e-10
    assert 0 < np.hypot(*q) < 0.05


def test_avoidance_with_enclosing_circle():
    # a circle of radius 2 around a lens with short pinned rays is never crossed
    lens = shapes.lens(0.5, 1.0, h=0.02)
    T = 0.09
    tr = evolve(FlowState(lens, 0.0, 0.02), T, snap_times=[0.03, 0.06])
    for s in tr.snapshots:
        R = np.sqrt(4.0 - 2 * s.t)
        assert np.hypot(*s.net.all_points().T).max() < R


def test_snapshot_summary_keys():
    s = snapshot_summary(FlowState(shapes.circle(1.0, h=0.05), 0.0, 0.05))
    assert set(s) == {"t", "total_length", "sup_k", "min_segment_length", "junction_defect_max"}
    assert s["sup_k"] == pytest.approx(1.0, rel=1e-3)


# -- graph window monitor --------------------------------------------------

def test_window_static_line():
    w = window_sample(shapes.line(4.0, h=0.05), (0.0, 0.0), 0.5)
    assert (w.status, w.lipschitz, w.height) == ("graph", 0.0, 0.0)


def test_window_sine_graph():
    eps = 0.05
    net = shapes.graph_curve(lambda x: eps * np.sin(x), -1.0, 1.0, h=0.01)
    w = window_sample(net, (0.0, 0.0), 0.9)
    assert w.status == "graph" and w.lipschitz <= eps


def test_window_not_a_graph():
    phi = np.linspace(-np.pi / 2, 3 * np.pi / 2, 200)
    pts = np.stack([0.3 * np.cos(phi), 0.3 * np.sin(phi) + 0.3], axis=1)
    pts = np.vstack([[[-1.0, 0.0]], pts[10:], [[1.0, 0.0]]])
    net = Network([Vertex(0, pts[0], "endpoint"), Vertex(1, pts[-1], "endpoint")], [Segment(0, 0, 1, pts)])
    assert window_sample(net, (0.0, 0.3), 0.5).status == "not-a-graph"


def test_window_empty():
    w = window_sample(shapes.line(1.0, h=0.1), (5.0, 5.0), 0.5)
    assert w.status == "empty"


def test_window_monitor_series():
    tr = evolve(FlowState(shapes.graph_curve(lambda x: 0.05 * np.sin(3 * x), -2, 2, h=0.02), 0.0, 0.02), 0.02,
                snap_times=[0.01])
    ws = graph_window_monitor(tr, (0.0, 0.0), 0.5)
    assert [w.t for w in ws] == [0.0, 0.01, 0.02]
    assert all(w.status == "graph" for w in ws)
    assert ws[-1].lipschitz < ws[0].lipschitz
