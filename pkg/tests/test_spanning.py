import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoshadow.errors import ConditioningError, NumericalError, PreconditionError, SelectionError
from geoshadow.geometry import Box, GuidingFieldSet, polynomial_hamiltonian
from geoshadow.spanning import (angular_coverage, bound_D, caratheodory_reduce, certify_gradients,
                                check_A3, check_A3_region, conic_combination, cone_decompose,
                                decompose, decompose_with_vectors, select_cone_basis,
                                select_from_vectors)

angles = st.floats(0.0, 2 * np.pi, allow_nan=False)


def brute_force_min_total(V, v):
    """Oracle: cheapest nonnegative combination over all square subsystems."""
    best, best_a = np.inf, None
    n, dim = V.shape
    for combo in itertools.combinations(range(n), dim):
        W = V[list(combo)].T
        if abs(np.linalg.det(W)) < 1e-12:
            continue
        a = np.linalg.solve(W, v)
        if np.all(a >= -1e-12) and a.sum() < best - 1e-12:
            best, best_a = a.sum(), (combo, a)
    return best, best_a


def test_example_certificate_is_symmetric(example):
    cert = check_A3(example, np.array([0.2, -0.7]))
    assert cert.satisfied
    assert np.allclose(cert.weights, 1 / 3, atol=1e-9)
    assert cert.residual <= 1e-12
    assert np.isclose(cert.margin, 1 / 3)


def test_two_fields_never_span(example):
    two = GuidingFieldSet(example.fields[:2], example.domain, allow_underdetermined=True)
    assert not check_A3(two, np.zeros(2)).satisfied


def test_collinear_gradients_fail_rank_check():
    G = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0]])
    assert not certify_gradients(G).satisfied


def test_zero_gradients_fail():
    assert not certify_gradients(np.zeros((3, 2))).satisfied


def test_quadratic_system_fails_at_origin(quadratic):
    assert not check_A3(quadratic, np.zeros(2)).satisfied


@given(st.lists(angles, min_size=3, max_size=6))
def test_lp_agrees_with_angular_gap(thetas):
    G = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    cert = certify_gradients(G)
    ang = np.sort(np.mod(thetas, 2 * np.pi))
    gap = np.diff(np.r_[ang, ang[0] + 2 * np.pi]).max()
    if abs(gap - np.pi) > 1e-6:  # skip knife-edge configurations
        assert cert.satisfied == (gap < np.pi) == angular_coverage(G)


def test_region_report(example):
    rep = check_A3_region(example, 5)
    assert rep.all_satisfied and len(rep.points) == 25
    lo, hi = rep.satisfied_box
    assert np.allclose(lo, -1) and np.allclose(hi, 1)
    assert rep.to_dict()["all_satisfied"]


@pytest.mark.parametrize("v,sigma,a", [
    ([0.1, 0.0], (1, 0), [1.0, 0.0]),     # support c2 first, padded with c1
    ([-0.1, 0.0], (0, 2), [1.0, 1.0]),    # X_c1 + X_c3
    ([0.0, -0.1], (0, 1), [1.0, 0.0]),
    ([0.0, 0.0], (0, 1), [0.0, 0.0]),
])
def test_example_decompositions(example, v, sigma, a):
    gt = cone_decompose(np.array(v), example, np.zeros(2))
    assert gt.selection == sigma
    assert np.allclose(gt.times, a, atol=1e-12)


@given(angles, st.floats(1e-3, 10.0))
def test_selection_matches_brute_force(theta, scale):
    V = np.array([[0.0, -0.1], [0.1, 0.0], [-0.1, 0.1], [0.05, 0.07]])
    v = scale * np.array([np.cos(theta), np.sin(theta)])
    best, (combo, a_ref) = brute_force_min_total(V, v)
    a = conic_combination(V, v)
    assert np.all(a >= 0)
    assert np.allclose(V.T @ a, v, atol=1e-10 * (1 + scale))
    assert a.sum() <= best * (1 + 1e-9) + 1e-12


@given(angles, st.floats(1e-3, 10.0))
def test_highs_and_enumeration_agree_on_total(theta, scale):
    V = np.array([[0.0, -0.1], [0.1, 0.0], [-0.1, 0.1], [0.05, 0.07], [-0.03, -0.09]])
    v = scale * np.array([np.cos(theta), np.sin(theta)])
    a1 = conic_combination(V, v, "enumerate")
    a2 = conic_combination(V, v, "highs")
    assert np.isclose(a1.sum(), a2.sum(), rtol=1e-7)


def test_caratheodory_reduces_support():
    V = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    a = caratheodory_reduce(V, np.array([1.0, 1.0, 1.0]))
    assert np.count_nonzero(a) <= 2 and np.all(a >= 0)
    assert np.allclose(V.T @ a, [2.0, 2.0])


def test_selection_padding_is_independent():
    V = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    sel = select_from_vectors(V, np.array([3.0, 0.0]))
    assert len(sel) == 2 and abs(np.linalg.det(V[list(sel)])) > 0


def test_decompose_rejects_wrong_cone(example):
    with pytest.raises(SelectionError):
        decompose(np.array([-0.1, 0.0]), example, np.zeros(2), (0, 1))


def test_decompose_rejects_ill_conditioned():
    V = np.array([[1.0, 0.0], [1.0, 1e-10]])
    with pytest.raises(ConditioningError):
        decompose_with_vectors(V, np.array([1.0, 0.0]), (0, 1))


def test_selection_requires_spanning(quadratic):
    with pytest.raises(PreconditionError):
        select_cone_basis(np.array([1.0, 0.0]), quadratic, np.zeros(2))


def test_non_finite_target(example):
    with pytest.raises(NumericalError):
        select_cone_basis(np.array([np.nan, 0.0]), example, np.zeros(2))


def test_bound_D_example(example):
    # worst basis is {c1, c3}: smallest singular value 0.1 * 0.618...
    sigma_min = 0.1 * (np.sqrt(5) - 1) / 2
    assert np.isclose(bound_D(example, np.zeros(2), 1.0), 1.0 / sigma_min, rtol=1e-9)


@given(angles, st.floats(0.0, 1.0))
def test_guiding_times_bounded_by_D(example, theta, frac):
    L_plus_A = 2.0
    eps = 0.01
    v = eps * L_plus_A * frac * np.array([np.cos(theta), np.sin(theta)])
    gt = cone_decompose(v / eps, example, np.zeros(2))
    assert gt.norm <= bound_D(example, np.zeros(2), L_plus_A) * (1 + 1e-12)


def test_position_dependent_fields_decompose():
    dom = Box.symmetric(1.0, 1)
    fs = GuidingFieldSet(tuple(
        polynomial_hamiltonian(f"q{i}", linear=np.array(g), quadratic=0.02 * np.eye(2))
        for i, g in enumerate([[0.1, 0.0], [0.0, 0.1], [-0.1, -0.1]])), dom)
    z = np.array([0.3, -0.4])
    v = np.array([0.02, 0.05])
    gt = cone_decompose(v, fs, z)
    W = fs.guiding_vectors(z)[list(gt.selection)].T
    assert np.allclose(W @ gt.times, v, atol=1e-12)
