import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoshadow.errors import (ConfigurationError, DomainError, InputError, PreconditionError,
                              RangeError, ShadowingFailure)
from geoshadow.geometry import GuidingFieldSet, example_system, polynomial_hamiltonian
from geoshadow.planner import (CurveSpec, GuidingPath, PathSegment, discretize_curve, guiding_path,
                               land_near, reparameterize, shadow_curve, synthesize_segment_code)
from geoshadow.symbolic import Code, constants


# -- discretization -----------------------------------------------------------

def test_straight_line_waypoints():
    wp = discretize_curve(CurveSpec.line([-0.5, 0.0], [1.0, 0.0]), eps=0.01, L=1.0, horizon=50)
    assert np.allclose(wp.times, 0.01 * np.arange(51), atol=1e-12)
    assert np.allclose(np.diff(wp.points[:, 0]), 0.01, atol=1e-12)


def test_constant_curve_unit_steps():
    wp = discretize_curve(CurveSpec.constant([0.2, 0.1]), eps=0.01, L=1.0, horizon=5, stay_horizon=2.0)
    assert wp.stopped_at == 1
    assert np.allclose(wp.times, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    assert np.allclose(wp.points, [0.2, 0.1])


def test_curve_that_stops_moving():
    curve = CurveSpec.polyline([[0.0, 0.0], [0.035, 0.0]])
    wp = discretize_curve(curve, eps=0.01, L=1.0, horizon=6, stay_horizon=1.0)
    assert np.allclose(wp.times[:4], [0.0, 0.01, 0.02, 0.03], atol=1e-12)
    assert np.allclose(np.diff(wp.times[3:]), 1.0)


@pytest.mark.parametrize("R", [0.3, 0.5, 0.8])
def test_circle_chord_spacing(R):
    curve = CurveSpec.circle([0.0, 0.0], R, omega=1.0 / R)  # unit speed
    eps, L = 0.01, 1.0
    wp = discretize_curve(curve, eps, L, horizon=30)
    assert np.allclose(np.diff(wp.times), 2 * R * math.asin(eps * L / (2 * R)), rtol=1e-9)
    chords = np.linalg.norm(np.diff(wp.points, axis=0), axis=1)
    assert np.all(np.abs(chords - eps * L) <= 1e-3 * eps * L)


@given(st.floats(0.1, 0.7), st.floats(0.3, 3.0), st.floats(1e-3, 2e-2))
def test_waypoint_spacing_property(R, omega, eps):
    wp = discretize_curve(CurveSpec.circle([0.0, 0.0], R, omega), eps, 1.0, horizon=15)
    chords = np.linalg.norm(np.diff(wp.points, axis=0), axis=1)
    assert np.all(np.abs(chords - eps) <= 1e-3 * eps)
    assert np.all(np.diff(wp.times) > 0)


def test_end_time_is_final_waypoint():
    wp = discretize_curve(CurveSpec.line([0.0, 0.0], [1.0, 0.0]), 0.01, 1.0, t_end=0.055)
    assert np.isclose(wp.times[-1], 0.055) and len(wp) == 7


def test_leaving_domain(example):
    with pytest.raises(DomainError):
        discretize_curve(CurveSpec.line([0.9, 0.0], [1.0, 0.0]), 0.01, 1.0, horizon=50,
                         domain=example.domain)


def test_non_finite_sample():
    curve = CurveSpec(lambda t: np.array([np.nan, 0.0]) if t > 0.02 else np.zeros(2), 1.0)
    with pytest.raises(InputError):
        discretize_curve(curve, 0.01, 1.0, horizon=10)


@pytest.mark.parametrize("kw", [dict(eps=0.0, L=1.0, horizon=3), dict(eps=0.1, L=1.0)])
def test_discretize_arguments(kw):
    with pytest.raises(ConfigurationError):
        discretize_curve(CurveSpec.constant([0.0, 0.0]), **kw)


def test_curve_presets():
    lj = CurveSpec.lissajous([0, 0], (0.4, 0.3), (1.0, 2.0))
    assert np.allclose(lj(0.0), [0.4, 0.0])
    pl = CurveSpec.polyline([[0, 0], [0.3, 0.4]], speed=0.5)
    assert np.allclose(pl(0.5), [0.15, 0.2]) and np.allclose(pl(5.0), [0.3, 0.4])


# -- guiding paths and code synthesis ---------------------------------------

def test_empty_guiding_path(example):
    z = np.array([0.1, 0.2])
    path = guiding_path(z, z, example, 0.01)
    assert path.is_empty and np.array_equal(path.end, z)


def test_two_segment_path(example):
    eps = 0.01
    path = guiding_path([0.0, 0.0], [-0.1 * eps, 0.0], example, eps)
    assert [(s.label, s.time) for s in path.segments] == [(0, pytest.approx(1.0)), (2, pytest.approx(1.0))]


@given(st.floats(0, 2 * np.pi), st.floats(0.0, 0.4))
def test_path_end_reaches_target(example, theta, length):
    z0 = np.array([0.1, -0.2])
    z1 = z0 + length * np.array([np.cos(theta), np.sin(theta)])
    path = guiding_path(z0, z1, example, 0.01)
    assert np.allclose(path.end, z1, rtol=1e-10, atol=1e-12)
    assert len(path.segments) <= 2 and all(s.time > 0 for s in path.segments)
    assert np.allclose(path.point(sum(s.time for s in path.segments)), path.end)


def test_path_length_precondition(example):
    with pytest.raises(PreconditionError):
        guiding_path([0.0, 0.0], [0.5, 0.0], example, 0.01, max_length=0.1)


def _path(example, times):
    segs = tuple(PathSegment(lab, t, 0.01 * t * example.guiding_vectors(np.zeros(2))[lab])
                 for lab, t in times)
    end = np.zeros(2) + sum((s.vector for s in segs), np.zeros(2))
    return GuidingPath(np.zeros(2), segs, end)


@pytest.mark.parametrize("times,expected", [
    ([(0, 2.5)], [0, 0, 0]),
    ([(0, 1.0), (2, 1.0)], [0, 2]),
    ([(1, 3.0)], [1, 1, 1]),
])
def test_synthesize_rounding(example, times, expected):
    code_a = Code(np.array([2, 1, 2]), -2)
    code_b, n = synthesize_segment_code(code_a, _path(example, times), example, start=0)
    assert n == len(expected)
    assert np.array_equal(code_b.lookup(np.arange(1, n + 1)), expected)
    assert np.array_equal(code_b.lookup(np.arange(-10, 1)), code_a.lookup(np.arange(-10, 1)))
    assert code_b.right_tail == expected[-1]


def test_synthesize_empty_path(example):
    code_a = Code(np.array([2, 1]))
    code_b, n = synthesize_segment_code(code_a, _path(example, []), example)
    assert code_b is code_a and n == 0


def test_synthesize_uses_period(example):
    fs = example_system(periods=(2.0, 1.0, 1.0))
    code_b, n = synthesize_segment_code(Code.constant(1), _path(fs, [(0, 5.0)]), fs)
    assert n == 3  # ceil(5 / 2)


def test_synthesize_rejects_bad_period(example):
    bad = GuidingFieldSet(tuple(
        polynomial_hamiltonian(h.label, linear=h.grad(np.zeros(2)), period=(lambda z: 0.0))
        for h in example.fields), example.domain)
    with pytest.raises(ConfigurationError):
        synthesize_segment_code(Code.constant(0), _path(example, [(0, 1.0)]), bad)


@pytest.mark.parametrize("eta,anchor", [(0.0, 0), (0.05, -3), (0.05, -10)])
def test_land_near(make_params, eta, anchor):
    p = make_params(eps=1e-2, eta=eta)
    c = constants(p)
    rng = np.random.default_rng(5)
    code_a = Code(rng.integers(0, 3, 60), -59)
    z0 = np.array([0.1, 0.2])
    target = z0 + np.array([-0.2, 0.1])
    landing = land_near(code_a, z0, target, p, anchor=anchor)
    assert landing.distance <= p.eps * c.A
    if eta == 0.0:
        assert landing.distance <= p.eps * 0.1 * math.sqrt(2) + 1e-15


def test_land_near_rejects_positive_anchor(make_params):
    with pytest.raises(InputError):
        land_near(Code.constant(0), [0, 0], [0.01, 0], make_params(), anchor=1)


# -- the induction -------------------------------------------------------------

@pytest.fixture(scope="module")
def circle_run():
    fs = example_system()
    from geoshadow.symbolic import FastStateModel, ReducedMapParams
    p = ReducedMapParams(fs, FastStateModel.default(3), 1e-2, eta=0.05)
    curve = CurveSpec.circle([0.0, 0.0], 0.5)
    return curve, p, shadow_curve(curve, p, 1.0, horizon=120, record_history=True)


def test_constant_curve_shadowing(make_params):
    p = make_params(eps=1e-2)
    res = shadow_curve(CurveSpec.constant([0.2, -0.3]), p, 1.0, horizon=4, stay_horizon=1.0)
    assert np.all(res.marks == 0)
    assert np.all(res.waypoint_errors == 0)
    assert res.trajectory.points.shape == (1, 2)
    assert np.allclose(reparameterize(res, np.linspace(0, 4, 9)), 0.0)


@given(st.floats(0, 2 * np.pi))
def test_straight_line_rounding_slack(make_params, theta):
    p = make_params(eps=1e-2)
    curve = CurveSpec.line([0.0, 0.0], 0.5 * np.array([np.cos(theta), np.sin(theta)]))
    res = shadow_curve(curve, p, 1.0, horizon=25)
    slack = p.eps * 0.1 * math.sqrt(2)  # eps * max_c |T_c X_c|
    assert res.waypoint_errors.max() <= slack * (1 + 1e-9)


def test_waypoint_and_between_bounds(circle_run):
    curve, p, res = circle_run
    c = res.constants
    assert res.waypoint_errors.max() <= p.eps * (c.K + c.A)
    for k in range(1, len(res.marks)):
        seg = res.trajectory.points[res.marks[k - 1]:res.marks[k] + 1]
        assert np.linalg.norm(seg - res.waypoint_targets[k], axis=1).max() <= p.eps * c.between_waypoints


def test_code_stability(circle_run):
    _, _, res = circle_run
    for mark, code, _ in res.history:
        idx = np.arange(-5, mark + 1)
        assert np.array_equal(code.lookup(idx), res.code.lookup(idx))


def test_reanchoring_consistency(circle_run):
    _, p, res = circle_run
    prev_pts = None
    prev_mark = 0
    for mark, _, pts in res.history:
        assert np.array_equal(pts[0], res.waypoint_targets[0])
        if prev_pts is not None:
            gap = np.linalg.norm(pts[:prev_mark + 1] - prev_pts[:prev_mark + 1], axis=1).max()
            assert gap <= p.eps * res.constants.K
        prev_pts, prev_mark = pts, mark


def test_time_structure(circle_run):
    _, _, res = circle_run
    assert np.all(np.diff(res.marks) > 0)
    assert np.all(np.diff(res.return_times) > 0)
    ts = np.linspace(0, res.waypoint_times[-1], 2001)
    T = reparameterize(res, ts)
    assert np.all(np.diff(T) > 0)


def test_reparameterize_knots_and_midpoints(circle_run):
    _, _, res = circle_run
    t, tau = res.waypoint_times, res.knot_times
    assert np.array_equal(reparameterize(res, t), tau)
    mid = reparameterize(res, 0.5 * (t[:-1] + t[1:]))
    assert np.allclose(mid, 0.5 * (tau[:-1] + tau[1:]), rtol=1e-14)


def test_reparameterize_range(circle_run):
    _, _, res = circle_run
    with pytest.raises(RangeError):
        reparameterize(res, res.waypoint_times[-1] * 1.01)
    with pytest.raises(RangeError):
        reparameterize(res, -0.1)


def test_uniform_case_is_linear(make_params):
    # unit periods, eta = 0, line along X_c2: every waypoint costs the same steps
    res = shadow_curve(CurveSpec.line([-0.5, 0.0], [1.0, 0.0]), make_params(eps=1e-2), 1.0, horizon=20)
    ts = np.linspace(0, res.waypoint_times[-1], 101)
    T = reparameterize(res, ts)
    slope = res.knot_times[-1] / res.waypoint_times[-1]
    assert np.allclose(T, slope * ts, rtol=1e-12, atol=1e-12)


def test_csv_layout(circle_run):
    _, _, res = circle_run
    lines = res.to_csv().splitlines()
    assert lines[0] == "i,symbol,u1,v1,tau"
    assert len(lines) == res.marks[-1] + 2
    assert lines[1].startswith("0,c1,0.5,0.0,0.0")


def test_summary_fields(circle_run):
    _, _, res = circle_run
    s = res.summary()
    assert s["waypoints"] == 121 and len(s["waypoint_errors"]) == 121
    assert "C_shadow" in s["constants"]


def test_eps_above_usable(make_params):
    with pytest.raises(PreconditionError):
        shadow_curve(CurveSpec.constant([0, 0]), make_params(eps=0.05), 1.0, horizon=2)


def test_spanning_required(make_params, quadratic):
    p = make_params(eps=1e-4, fields=quadratic)
    c = dataclasses.replace(constants(p), eps0_shadowing=1.0)
    with pytest.raises(PreconditionError):
        shadow_curve(CurveSpec.constant([0.5, 0.5]), p, 1.0, horizon=2, consts=c)


def test_shadowing_failure_diagnostics(make_params):
    p = make_params(eps=1e-2)
    c = dataclasses.replace(constants(p), K=0.0, C1=0.0, A=0.0)
    with pytest.raises(ShadowingFailure) as info:
        shadow_curve(CurveSpec.circle([0, 0], 0.5), p, 1.0, horizon=5, consts=c)
    assert info.value.diagnostics["k"] == 1 and info.value.diagnostics["distance"] > 0
