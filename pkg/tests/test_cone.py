import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lexrl.cone import (
    EPS_ANGLE, Hypercone, angle_between, cone_contains, project_cone, project_halfspace,
)
from oracles import brute_cone_projection


def test_angle_examples():
    assert angle_between([1, 0], [0, 1]) == pytest.approx(math.pi / 2)
    assert angle_between([1, 0], [2, 0]) == pytest.approx(0.0)
    assert angle_between([1, 0], [-1, 1]) == pytest.approx(3 * math.pi / 4)


def test_angle_rejects_zero_vector():
    with pytest.raises(ValueError):
        angle_between([0, 0], [1, 0])


def test_angle_clamps_rounding():
    v = np.array([0.1, 0.2, 0.3])
    assert angle_between(v, 3 * v) == pytest.approx(0.0, abs=1e-7)
    assert angle_between(v, -v) == pytest.approx(math.pi)


def test_contains_examples():
    cone = Hypercone([1, 0], math.pi / 4)
    assert cone_contains([0, 0], cone)
    assert cone_contains([1, 0.1], cone)
    assert not cone_contains([0, 1], cone)


@pytest.mark.parametrize("axis,delta", [([0, 0], 0.1), ([1, 0], math.pi / 2), ([1, 0], -0.1)])
def test_bad_cones(axis, delta):
    with pytest.raises(ValueError):
        Hypercone(axis, delta)


def test_projection_examples():
    out = project_cone([0, 1], Hypercone([1, 0], math.pi / 4))
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-12)
    np.testing.assert_array_equal(project_cone([1, 0.1], Hypercone([1, 0], math.pi / 4)), [1, 0.1])
    np.testing.assert_allclose(project_cone([1, -1], Hypercone([0, 1], 0.0)), [1, 0], atol=1e-12)


def test_projection_example_matches_brute_force():
    out = brute_cone_projection([0, 1], [1, 0], math.pi / 4)
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-8)


def test_zero_and_polar_inputs_go_to_apex():
    cone = Hypercone([1, 0, 0], 0.3)
    np.testing.assert_array_equal(project_cone([0, 0, 0], cone), 0.0)
    np.testing.assert_array_equal(project_cone([-1, 0.1, 0], cone), 0.0)


def test_halfspace_helper_matches_zero_delta():
    rng = np.random.default_rng(3)
    for _ in range(50):
        g = rng.normal(size=4)
        a = rng.normal(size=4)
        np.testing.assert_allclose(project_cone(g, Hypercone(a, 0.0)), project_halfspace(g, a), atol=1e-10)


def _instances(seed, n):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        dim = int(rng.integers(2, 11))
        yield rng.normal(size=dim), rng.normal(size=dim), float(rng.uniform(0.01, math.pi / 2 - 0.01))


def test_boundary_norm_and_planarity():
    for g, a, delta in _instances(11, 300):
        cone = Hypercone(a, delta)
        phi = angle_between(g, a)
        out = project_cone(g, cone)
        if cone_contains(g, cone) or phi >= math.pi - delta:
            continue
        assert abs(angle_between(out, a) - (math.pi / 2 - delta)) <= 1e-7
        expected = np.linalg.norm(g) * math.sin(delta + phi)
        assert np.linalg.norm(out) == pytest.approx(expected, rel=1e-9)
        basis = np.stack([g, a], axis=1)
        coef, *_ = np.linalg.lstsq(basis, out, rcond=None)
        assert np.linalg.norm(basis @ coef - out) <= 1e-9


def test_idempotent():
    for g, a, delta in _instances(12, 300):
        cone = Hypercone(a, delta)
        once = project_cone(g, cone)
        np.testing.assert_allclose(project_cone(once, cone), once, atol=1e-9)


def test_matches_brute_force_sample():
    for g, a, delta in _instances(13, 100):
        out = project_cone(g, Hypercone(a, delta))
        ref = brute_cone_projection(g, a, delta)
        assert np.linalg.norm(out - ref) <= 1e-5


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)


@settings(max_examples=200, deadline=None)
@given(g=vec, a=vec, delta=st.floats(0.0, 1.5))
def test_output_always_inside_cone(g, a, delta):
    if np.linalg.norm(a) < 1e-3:
        return
    cone = Hypercone(a, delta)
    out = project_cone(g, cone)
    assert cone_contains(out, cone, eps=10 * EPS_ANGLE)
    # never farther from g than the apex is
    assert np.linalg.norm(out - g) <= np.linalg.norm(g) + 1e-9


@settings(max_examples=100, deadline=None)
@given(g=vec, a=vec, delta=st.floats(0.0, 1.5), scale=st.floats(0.01, 100))
def test_positively_homogeneous(g, a, delta, scale):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(g) < 1e-3:
        return
    cone = Hypercone(a, delta)
    np.testing.assert_allclose(project_cone(scale * g, cone), scale * project_cone(g, cone),
                               rtol=1e-7, atol=1e-9)
