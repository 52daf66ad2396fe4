import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liouville_roa.poly import Polynomial, parse_poly
from liouville_roa.relaxation import Certificate
from liouville_roa.semialg import (FREE, InvalidSpec, ScalingMap, dumps_spec, loads_spec,
                                   preprocess, rk4, spec_from_dict, unscale_certificate, validate)

from conftest import builtin

DOUBLE_INTEGRATOR = {
    "n": 2, "m": 1, "T": 1.0, "dynamics": ["x2", "u1"],
    "X": ["0.49 - x1^2", "1.44 - x2^2"], "U": ["1 - u1^2"], "XT": "origin",
}


def test_double_integrator_is_valid():
    assert validate(spec_from_dict(DOUBLE_INTEGRATOR)) == []


def test_missing_input_box_is_reported():
    data = dict(DOUBLE_INTEGRATOR, U=[])
    assert "input set unbounded" in validate(spec_from_dict(data))


def test_zero_horizon_is_reported():
    data = dict(DOUBLE_INTEGRATOR, T=0)
    assert "horizon must be positive" in validate(spec_from_dict(data))


def test_state_set_must_be_a_box():
    data = dict(DOUBLE_INTEGRATOR, X=["1 - x1^2 - x2^2"])
    assert "state set must equal its bounding box" in validate(spec_from_dict(data))


def test_unbounded_state_set_is_reported():
    data = dict(DOUBLE_INTEGRATOR, X=["0.49 - x1^2"])
    assert "state set unbounded" in validate(spec_from_dict(data))


def test_bad_files_raise():
    with pytest.raises(InvalidSpec):
        loads_spec("{not json")
    with pytest.raises(InvalidSpec):
        spec_from_dict({"n": 1, "T": 1})
    with pytest.raises(InvalidSpec):
        spec_from_dict(dict(DOUBLE_INTEGRATOR, mode="sometimes"))


@pytest.mark.parametrize("name", ["cubic", "van_der_pol", "double_integrator", "brockett"])
def test_problem_file_round_trip_is_bit_exact(name):
    spec = builtin(name)
    text = dumps_spec(spec)
    again = loads_spec(text)
    assert dumps_spec(again) == text
    assert again == spec


def test_cubic_preprocessing():
    spec = builtin("cubic")
    scaled, smap = preprocess(spec)
    assert scaled.T == 1.0
    expected = parse_poly("100*x1^3 - 25*x1", scaled.variables)
    assert scaled.dynamics[0].allclose(expected, 1e-12)
    assert smap.T == 100.0
    assert smap.state_center == (0.0,) and smap.state_radius == (1.0,)


def test_box_maps_to_unit_interval():
    scaled, smap = preprocess(builtin("double_integrator"))
    assert smap.state_center == (0.0, 0.0)
    assert smap.state_radius == pytest.approx((0.7, 1.2))
    assert [tuple(b) for b in scaled.X.bounding_box()] == [(-1.0, 1.0), (-1.0, 1.0)]
    np.testing.assert_allclose(smap.to_scaled([0.7, -1.2]), [1.0, -1.0])


def test_state_ball_has_radius_equal_to_dimension():
    scaled, smap = preprocess(builtin("double_integrator"))
    assert scaled.X.ball_radius == 2.0
    ball = scaled.X.inequalities[-1]
    ref = parse_poly("2 - x1^2 - x2^2", ("x1", "x2"))
    ratio = ball.coefficient((0, 0)) / 2.0
    assert ball.allclose(ref.scale(ratio), 1e-15)
    assert smap.ball_radii["X"] == 2.0


def test_singleton_target_stays_exact():
    scaled, _ = preprocess(builtin("double_integrator"))
    assert scaled.XT.is_singleton and scaled.XT.point == (0.0, 0.0)


def test_target_radius_fallback():
    scaled, _ = preprocess(builtin("double_integrator"), target_radius=1e-2)
    assert not scaled.XT.is_singleton
    inside = scaled.XT.contains(np.array([[0.005 / 0.7, 0.0], [0.02 / 0.7, 0.0]]))
    assert inside.tolist() == [True, False]


def test_preprocess_is_idempotent():
    for name in ("cubic", "van_der_pol", "double_integrator", "brockett"):
        scaled, _ = preprocess(builtin(name))
        again, smap = preprocess(scaled)
        assert smap.is_identity()
        for f, g in zip(again.dynamics, scaled.dynamics):
            assert f.allclose(g, 1e-12)


def test_scaling_map_serialises():
    _, smap = preprocess(builtin("brockett"))
    assert ScalingMap.from_dict(json.loads(json.dumps(smap.to_dict()))) == smap


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(0.1, 4), min_size=3, max_size=3))
def test_scaling_round_trip(center, radius):
    smap = ScalingMap(tuple(center), tuple(radius))
    x = np.random.default_rng(0).uniform(-3, 3, size=(20, 3))
    np.testing.assert_allclose(smap.from_scaled(smap.to_scaled(x)), x, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", ["van_der_pol", "double_integrator"])
def test_scaled_trajectories_correspond(name):
    spec = builtin(name)
    scaled, smap = preprocess(spec)
    rng = np.random.default_rng(1)
    box = np.array(spec.X.bounding_box())
    x0 = rng.uniform(box[:, 0], box[:, 1], size=(5, spec.n)) * 0.3
    u = np.full((5, spec.m), 0.5) if spec.m else None
    us = smap.input_to_scaled(u) if spec.m else None
    horizon = 0.05 * spec.T
    end = rk4(lambda t, x: spec.vector_field(t, x, u), x0, 0.0, horizon, 2000)
    end_s = rk4(lambda t, x: scaled.vector_field(t, x, us), smap.to_scaled(x0), 0.0,
                horizon / spec.T, 2000)
    np.testing.assert_allclose(smap.from_scaled(end_s), end, atol=1e-6)


def _cert(v, w, ctx=("x1",)):
    return Certificate(parse_poly(v, ("t",) + ctx), parse_poly(w, ctx), 1)


def test_unscale_identity_map():
    cert = _cert("t*x1 - x1^2 + 0.5", "2 - x1^2")
    out = unscale_certificate(cert, ScalingMap((0.0,), (1.0,)))
    assert out.v == cert.v and out.w == cert.w


def test_unscale_composition():
    out = unscale_certificate(_cert("x1", "x1"), ScalingMap((0.0,), (0.5,)))
    assert out.v == parse_poly("2*x1", ("t", "x1"))
    assert out.coordinates == "original"


def test_unscale_preserves_membership():
    spec = builtin("double_integrator")
    _, smap = preprocess(spec)
    ctx = ("x1", "x2")
    cert = Certificate(parse_poly("0.3 - x1^2 - t*x2 + 0.2*x1*x2^3", ("t",) + ctx),
                       Polynomial.constant(ctx, 1.0), 2)
    orig = unscale_certificate(cert, smap)
    rng = np.random.default_rng(2)
    x = rng.uniform([-0.7, -1.2], [0.7, 1.2], size=(1000, 2))
    a = orig.value_at_start(x) >= 0
    b = cert.value_at_start(smap.to_scaled(x)) >= 0
    assert np.array_equal(a, b)


def test_with_mode():
    assert builtin("cubic").with_mode(FREE).mode == FREE
    with pytest.raises(InvalidSpec):
        builtin("cubic").with_mode("sometimes")
