import numpy as np
import pytest

from netflow import diagnostics as dg
from netflow import expander as ex
from netflow import shapes
from netflow.glue import (
    GlueError,
    cutoff,
    extract_cone,
    glue,
    graphical_radius,
    make_family,
    verify_hypotheses,
)
from netflow.network import validate

PLUS = [0.0, np.pi / 2, np.pi, 3 * np.pi / 2]


@pytest.fixture(scope="module")
def plus_expander():
    return ex.solve_tree_expander(PLUS, "01|23")


@pytest.fixture(scope="module")
def plus_family(plus_expander):
    return make_family(shapes.plus(3.0, h=0.02), 0, plus_expander, scales=(1e-2, 1e-3))


def test_cutoff_profile():
    np.testing.assert_allclose(cutoff([0.0, 1.0, 1.5, 2.0, 3.0]), [1.0, 1.0, 0.5, 0.0, 0.0])


def test_extract_cone_of_plus():
    cone = extract_cone(shapes.plus(3.0, h=0.05), 0)
    np.testing.assert_allclose(np.sort(np.mod(cone.angles, 2 * np.pi)), PLUS, atol=1e-12)
    assert cone.C_u == pytest.approx(0.0, abs=1e-12)
    assert cone.r_graph == pytest.approx(3.0)
    assert cone.scale_to_five == pytest.approx(5.0 / 3.0)


def test_extract_cone_rejects_degree_two():
    with pytest.raises(GlueError, match="3 or 4"):
        extract_cone(shapes.line(2.0, h=0.1), 0)


def test_graphical_radius_contains_junctions(plus_expander):
    r0 = graphical_radius(plus_expander)
    assert r0 >= np.max(np.hypot(*plus_expander.junctions.T)) - 1e-12
    assert r0 < 1.0


def test_glue_cone_into_triod_reproduces_seed():
    seed = shapes.standard_triod(2.0, h=0.02)
    cone = ex.solve_triod_expander([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    out = glue(seed, 0, cone, 1e-3, h=0.02)
    assert dg.hausdorff(out, seed, radius=1.5) < 1e-10
    assert validate(out).regular


def test_glue_rejects_mismatched_rays(plus_expander):
    seed = shapes.star([0.0, 1.5, np.pi, 4.6], 3.0, h=0.05)
    with pytest.raises(GlueError, match="no expander ray"):
        glue(seed, 0, plus_expander, 1e-3)


def test_glue_rejects_wide_annulus(plus_expander):
    # 2 s^(1/4) exceeds the unit branches of the seed
    with pytest.raises(GlueError, match="graphical radius"):
        glue(shapes.plus(1.0, h=0.02), 0, plus_expander, 0.2)


def test_glue_rejects_nonpositive_scale(plus_expander):
    with pytest.raises(ValueError):
        glue(shapes.plus(3.0, h=0.02), 0, plus_expander, 0.0)


def test_glued_family_is_regular(plus_family):
    for net in plus_family.glued:
        rep = validate(net, angle_tol=1e-6)
        assert rep.regular and rep.embeddedness_violations == []
        assert net.metadata["junction_shift"] < 0.1 * net.metadata["h"]


def test_junction_separation_scales_like_sqrt_s(plus_family, plus_expander):
    d0 = np.hypot(*(plus_expander.junctions[0] - plus_expander.junctions[1]))
    for s, net in zip(plus_family.scales, plus_family.glued):
        assert dg.junction_separation(net) == pytest.approx(d0 * np.sqrt(2 * s), rel=1e-3)


def test_hypothesis_constants_finite(plus_family):
    reps = verify_hypotheses(plus_family, Ks=(2, 4))
    assert [r.s for r in reps] == plus_family.scales
    for r in reps:
        assert r.regular
        assert np.isfinite([r.D1, r.D2, r.D3]).all()
        # the length ratio of a four-ray cone is at most 4 up to resolution
        assert r.D1 < 4.2
        assert max(r.H3_distance.values()) < 1e-2
        assert max(r.H3_angle.values()) < 2e-2
        d = r.as_dict()
        assert set(d["H3_distance"]) == {"2", "4"}
