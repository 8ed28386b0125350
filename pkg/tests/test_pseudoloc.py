import numpy as np
import pytest

from netflow.flow import window_sample
from netflow.network import Network, Segment, Vertex
from netflow.pseudoloc import (
    EXTERIORS,
    PseudolocError,
    check_window,
    exterior_points,
    initial_network,
    pseudoloc_experiment,
    window_graph,
)


@pytest.mark.parametrize("kind", EXTERIORS)
def test_initial_window_is_eps_graph(kind):
    eps = 0.01
    net = initial_network(eps, kind)
    check_window(net, eps)
    w = window_sample(net, (0.0, 0.0), 1.0)
    assert w.lipschitz <= eps * (1 + 1e-9)


def test_window_graph_shapes():
    x = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(window_graph(0.1, "flat")(x), 0.0)
    np.testing.assert_allclose(window_graph(0.1)(np.array([0.5])), 0.1 / np.pi)
    with pytest.raises(PseudolocError):
        window_graph(0.1, "cusp")


def test_exterior_stays_outside_window():
    for kind in EXTERIORS[:3]:
        for side in (1, -1):
            p = exterior_points(kind, 0.02, side)
            assert np.all(np.hypot(*p.T) >= 1.0 - 1e-12)


def test_unknown_exterior():
    with pytest.raises(PseudolocError):
        exterior_points("helix", 0.02, 1)


def test_eps_exceeded_is_rejected():
    net = initial_network(0.05, "straight")
    with pytest.raises(PseudolocError, match="exceeds"):
        check_window(net, 0.01)


def test_non_graph_window_is_rejected():
    phi = np.linspace(-np.pi / 2, 3 * np.pi / 2, 200)
    loop = np.stack([0.3 * np.cos(phi), 0.3 * np.sin(phi) + 0.3], axis=1)
    pts = np.vstack([[[-2.0, 0.0]], loop[10:], [[2.0, 0.0]]])
    net = Network([Vertex(0, pts[0], "endpoint"), Vertex(1, pts[-1], "endpoint")], [Segment(0, 0, 1, pts)])
    with pytest.raises(PseudolocError, match="not-a-graph"):
        check_window(net, 0.5, x0=(0.0, 0.3), r=0.5)


@pytest.mark.parametrize("graph, exterior", [("flat", "spiral"), ("sine", "straight")])
def test_window_stays_flat(graph, exterior):
    rep = pseudoloc_experiment(eps=0.05, exteriors=(exterior,), h=0.02, n_snaps=5, graph=graph)
    run = rep.runs[0]
    assert run.all_graph
    assert run.max_lipschitz <= 0.05
    assert rep.passed
    assert rep.as_dict()["runs"][0]["exterior"] == exterior
