import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netflow import diagnostics as dg
from netflow import shapes
from netflow.flow import FlowState, evolve
from netflow.network import Network, Segment, Vertex

THETA_CIRCLE = np.sqrt(2 * np.pi / np.e)


def test_line_density_is_one():
    assert dg.gaussian_density(shapes.line(40.0, h=0.05), (0.0, 0.0), 1.0) == pytest.approx(1.0, abs=1e-9)


def test_triod_density_is_three_halves():
    assert dg.gaussian_density(shapes.standard_triod(20.0, h=0.05), (0.0, 0.0), 1.0) == pytest.approx(1.5, abs=1e-9)


def test_circle_density():
    # circle of radius 1 is the shrinker at scale r with 2 r^2 = 1
    net = shapes.circle(1.0, n=20000)
    assert dg.gaussian_density(net, (0.0, 0.0), np.sqrt(0.5)) == pytest.approx(THETA_CIRCLE, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(d=st.floats(-3.0, 3.0), r=st.floats(0.3, 3.0))
def test_line_density_off_axis(d, r):
    # exact value exp(-d^2 / 4 r^2)
    net = shapes.line(60.0, h=0.05)
    assert dg.polyline_density(net, (0.2, d), r) == pytest.approx(np.exp(-d * d / (4 * r * r)), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-0.5, 0.5), y=st.floats(-0.5, 0.5), r=st.floats(0.2, 1.0))
def test_trapezoid_and_exact_polyline_agree(x, y, r):
    net = shapes.bent_triod(4.0, h=0.01)
    a = dg.gaussian_density(net, (x, y), r)
    b = dg.polyline_density(net, (x, y), r)
    assert a == pytest.approx(b, abs=2e-4)


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(0.3, 3.0), angle=st.floats(-np.pi, np.pi))
def test_density_similarity_invariant(lam, angle):
    net = shapes.bent_triod(3.0, h=0.02)
    x0, r = np.array([0.2, 0.1]), 0.5
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = net.rotated(angle).scaled(lam)
    assert dg.polyline_density(moved, lam * R @ x0, lam * r) == pytest.approx(dg.polyline_density(net, x0, r),
                                                                                rel=1e-9)


def test_under_resolved_warning():
    with pytest.warns(dg.UnderResolvedWarning):
        dg.gaussian_density(shapes.line(4.0, h=0.1), (0.0, 0.0), 0.05)


def test_kernel_rejects_bad_scale():
    with pytest.raises(ValueError):
        dg.DensityKernel((0.0, 0.0), 0.0)


def test_circle_huisken_trace_constant():
    net = shapes.circle(1.0, h=0.005)
    tr = evolve(FlowState(net, 0.0, 0.005), 0.3, snap_times=[0.1, 0.2])
    trace = dg.huisken_trace(tr, (0.0, 0.0), 0.5)
    np.testing.assert_allclose(trace.theta, THETA_CIRCLE, atol=5e-5)
    assert np.all(trace.defect < 1e-4)
    assert trace.slack < 1e-5


def test_trace_requires_earlier_snapshots():
    tr = evolve(FlowState(shapes.circle(1.0, h=0.05), 0.0, 0.05), 0.1)
    with pytest.raises(ValueError):
        dg.huisken_trace(tr, (0.0, 0.0), 0.05)


def test_theta_is_constant_on_lines():
    th = dg.theta_field(shapes.line(2.0, h=0.1))
    np.testing.assert_allclose(th[0], 0.0, atol=1e-12)


def test_theta_continuous_across_triod_junction():
    th = dg.theta_field(shapes.standard_triod(1.0, h=0.1), root=1)
    vals = sorted(float(th[s][0]) for s in range(3))
    # representatives of 0, 2pi/3, 4pi/3 shifted by multiples of pi/3 onto one value
    np.testing.assert_allclose(vals, vals[0], atol=1e-12)


@pytest.mark.parametrize("R", [0.5, 1.0, 2.0])
def test_beta_increment_on_arc(R):
    # x dy - y dx over chords of an origin-centered arc is R^2 sin(dphi) per chord
    phi = np.linspace(0.0, 1.2, 41)
    pts = R * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    net = Network([Vertex(0, pts[0], "endpoint"), Vertex(1, pts[-1], "endpoint")], [Segment(0, 0, 1, pts)])
    be = dg.beta_field(net, root=0)
    assert be[0][-1] == pytest.approx(40 * R**2 * np.sin(0.03), rel=1e-12)
    assert be[0][0] == 0.0


def test_beta_rejects_cycles():
    with pytest.raises(dg.NotTreeLike, match="not tree-like"):
        dg.beta_field(shapes.lens(h=0.05))


def test_beta_inside_ball_ignores_outer_cycle():
    # the lens loop lies outside B_0.2(-2.3, 0) so the ray part there is tree-like
    be = dg.beta_field(shapes.lens(0.5, 2.0, h=0.05), center=(-2.3, 0.0), radius=0.2)
    assert np.isfinite(be[2]).any() and np.isnan(be[0]).all()


def test_weighted_functional_with_f_one_is_density():
    net = shapes.bent_triod(3.0, h=0.01)
    one = lambda a: np.ones_like(a)  # noqa: E731
    zero = lambda a: np.zeros_like(a)  # noqa: E731
    w = dg.weighted_functional(net, 0.1, one, zero, (0.1, 0.0), 0.4)
    assert w.value == pytest.approx(dg.gaussian_density(net, (0.1, 0.0), np.sqrt(0.3)), rel=1e-12)
    assert w.dissipation_shrinker == pytest.approx(dg.shrinker_defect(net, (0.1, 0.0), 0.4, 0.1), rel=1e-12)
    assert w.dissipation_gradient == 0.0


def test_smoothstep_profile():
    u = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(dg.smoothstep(u), [1.0, 1.0, 0.5, 0.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(u=st.floats(0.0, 1.0))
def test_smoothstep_monotone(u):
    e = 1e-6
    assert dg.smoothstep(u + e) <= dg.smoothstep(u) + 1e-15


def test_ball_cutoff_regions():
    x = np.array([[1.9, 0.0], [0.0, -2.0], [3.0, 0.0], [0.0, 3.5]])
    np.testing.assert_allclose(dg.ball_cutoff(x), [1.0, 1.0, 0.0, 0.0])


def test_localized_functional_finite_on_plus_tree():
    net = shapes.bent_triod(4.0, h=0.02)
    v = dg.localized_functional(net, 0.01, (0.0, 0.0), 0.1)
    assert np.isfinite(v.value) and np.isfinite(v.annulus) and v.annulus >= 0.0


def test_junction_separation_lens():
    assert dg.junction_separation(shapes.lens(0.5, 2.0, h=0.05)) == pytest.approx(1.0)
    assert dg.junction_separation(shapes.standard_triod(1.0)) == np.inf


@pytest.mark.parametrize("d", [0.05, 0.3])
def test_hausdorff_parallel_lines(d):
    a = shapes.line(4.0, h=0.05)
    b = shapes.line(4.0, h=0.07, center=(0.0, d))
    assert dg.hausdorff(a, b, radius=1.0) == pytest.approx(d, abs=1e-9)


def test_density_ratio_max_exact_flag():
    net = shapes.standard_triod(10.0, h=0.05)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert dg.density_ratio_max(net, [(0.0, 0.0)], [0.01, 1.0]) == pytest.approx(1.5, abs=1e-9)


@pytest.mark.parametrize("R", [0.5, 2.0])
def test_curvature_energy_of_circle(R):
    # int k^2 ds = 2 pi R / R^2
    assert dg.curvature_energy(shapes.circle(R, h=0.005)) == pytest.approx(2 * np.pi / R, rel=1e-4)


def test_length_rate_defect_small_on_circle():
    tr = evolve(FlowState(shapes.circle(1.0, h=0.01), 0.0, 0.01), 0.1, snap_times=[0.05, 0.0502])
    d = dg.length_rate_defect(tr.snapshots)
    assert d[1] < 1e-3


def test_length_rate_defect_needs_two_snapshots():
    with pytest.raises(ValueError):
        dg.length_rate_defect([FlowState(shapes.circle(1.0, h=0.05))])
