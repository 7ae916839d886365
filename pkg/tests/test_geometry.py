import math
import pickle

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from shiftedeuler.geometry import (
    Ball,
    DegenerateNormal,
    HalfSpace,
    MovingInterval,
    UserDefined,
    inward_normal,
    normal_noise_amplitude,
    project_to_boundary,
    shifted_signed_distance,
    signed_distance,
)
from shiftedeuler.overshoot_dist import C0
from shiftedeuler.sde import brownian_motion, scaled_brownian_motion, section6_model

coord = st.floats(-3, 3, allow_nan=False)


def ball2():
    return Ball(np.zeros(3), 2.0)


def fd_gradient(domain, t, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (domain.signed_distance(t, x + e) - domain.signed_distance(t, x - e)) / (2 * h)
    return g


# --------------------------------------------------------------------------
# exact examples


@pytest.mark.trivial
@pytest.mark.parametrize("x, expected", [((0, 0, 0), 2.0), ((2, 0, 0), 0.0), ((3, 0, 0), -1.0)])
def test_ball_signed_distance(x, expected):
    assert signed_distance(ball2(), 0.0, np.array(x, dtype=float)) == expected


@pytest.mark.trivial
def test_inward_normal_ball():
    np.testing.assert_array_equal(inward_normal(ball2(), 0.0, [1.0, 0, 0]), [-1.0, 0, 0])


@pytest.mark.trivial
@pytest.mark.parametrize("x", [(0.0, 0.0), (5.0, -3.0), (-2.0, 7.0)])
def test_inward_normal_halfspace(x):
    np.testing.assert_array_equal(inward_normal(HalfSpace([1.0, 0.0], 1.0), 0.0, x), [-1.0, 0.0])


@pytest.mark.trivial
def test_inward_normal_interval_upper():
    dom = MovingInterval.affine((-1, -0.2), (1, 0.1), horizon=1.0)
    assert inward_normal(dom, 0.5, [1.05])[0] == -1.0
    assert inward_normal(dom, 0.5, [-1.1])[0] == 1.0


@pytest.mark.trivial
@pytest.mark.parametrize("x", [(3.0, 0, 0), (1.0, 0, 0)])
def test_project_ball(x):
    np.testing.assert_array_equal(project_to_boundary(ball2(), 0.0, x), [2.0, 0, 0])


@pytest.mark.trivial
def test_project_halfspace():
    np.testing.assert_allclose(project_to_boundary(HalfSpace([1.0, 0.0], 1.0), 0.0, [1.3, 0.4]), [1.0, 0.4], atol=1e-15)


def test_shifted_halfspace_value():
    # 0.1 - 0.5826 * 0.1, with the constant from its four published digits
    val = shifted_signed_distance(HalfSpace([1.0], 1.0), 0.0, [0.9], 0.01, brownian_motion(1))
    assert abs(val - 0.04174) < 1e-5
    assert val == pytest.approx(0.1 - C0 * 0.1, abs=1e-15)


@pytest.mark.trivial
def test_shifted_zero_noise_is_plain():
    dom = ball2()
    x = np.array([1.2, 0.3, -0.4])
    assert shifted_signed_distance(dom, 0.0, x, 0.1, scaled_brownian_motion(3, 0.0)) == dom.signed_distance(0.0, x)


@pytest.mark.trivial
@pytest.mark.parametrize("r, s, dt", [(1.5, 1.0, 0.01), (0.3, 2.5, 0.1), (1.99, 0.5, 0.05)])
def test_shifted_ball_isotropic(r, s, dt):
    val = shifted_signed_distance(ball2(), 0.0, [r, 0.0, 0.0], dt, scaled_brownian_motion(3, s))
    assert val == pytest.approx((2 - r) - C0 * math.sqrt(dt) * s, abs=1e-14)


def test_degenerate_normal_at_center():
    with pytest.raises(DegenerateNormal):
        inward_normal(ball2(), 0.0, [0.0, 0.0, 0.0])
    with pytest.raises(DegenerateNormal):
        project_to_boundary(ball2(), 0.0, [0.0, 0.0, 0.0])
    with pytest.raises(DegenerateNormal):
        normal_noise_amplitude(ball2(), 0.0, [0.0, 0.0, 0.0], brownian_motion(3))


def test_shifted_at_center_is_deep_inside():
    # the center is one tube radius away, so the shift does not matter
    assert shifted_signed_distance(ball2(), 0.0, [0, 0, 0], 0.01, brownian_motion(3)) == 2.0


def test_interval_medial_point_inside_tube_raises():
    dom = UserDefined(lambda t, x: 1.0 - abs(x[0]), lambda t, x: np.zeros(1), radius=2.0)
    with pytest.raises(DegenerateNormal):
        shifted_signed_distance(dom, 0.0, [0.0], 0.01, brownian_motion(1))


def test_constructor_validation():
    with pytest.raises(ValueError):
        Ball([0.0], -1.0)
    with pytest.raises(ValueError):
        HalfSpace([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        MovingInterval.affine((0.0, 1.0), (0.5, 0.0), horizon=1.0)
    with pytest.raises(ValueError):
        Ball([0.0], 1.0, horizon=0.0)
    with pytest.raises(ValueError):
        shifted_signed_distance(ball2(), 0.0, [1.0, 0, 0], -0.1, brownian_motion(3))


def test_halfspace_direction_normalized_and_moving():
    dom = HalfSpace([3.0, 4.0], 1.0, velocity=0.5)
    np.testing.assert_allclose(dom.direction, [0.6, 0.8])
    assert dom.signed_distance(2.0, [0.0, 0.0]) == pytest.approx(2.0)
    assert dom.tube_radius(0.0) == math.inf


def test_interval_tube_radius_and_pickle():
    dom = MovingInterval.affine((-1, -0.2), (1, 0.1), horizon=1.0)
    assert dom.tube_radius(1.0) == pytest.approx(0.5 * (1.1 + 1.2))
    clone = pickle.loads(pickle.dumps(dom))
    assert clone.signed_distance(0.3, [0.2]) == dom.signed_distance(0.3, [0.2])
    assert "affine" in repr(dom)


def test_compiled_kernels_match_methods():
    rng = np.random.default_rng(0)
    doms = [ball2(), HalfSpace([1.0, -2.0, 0.5], 0.3, velocity=0.2), MovingInterval.affine((-1, -0.2), (1, 0.1))]
    for dom in doms:
        dist, grad, p = dom.compiled
        d = dom.dim
        for _ in range(50):
            t = rng.uniform(0, 1)
            x = rng.uniform(-3, 3, d)
            out = np.empty(d)
            grad(t, x, p, out)
            assert dist(t, x, p) == dom.signed_distance(t, x)
            np.testing.assert_array_equal(out, dom.gradient(t, x))


# --------------------------------------------------------------------------
# properties


def _tube_points(n, seed=1):
    """Random (domain, t, x) triples inside the tube of the built-in domains."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        kind = i % 3
        t = float(rng.uniform(0, 1))
        if kind == 0:
            center = rng.uniform(-1, 1, 3)
            radius = float(rng.uniform(0.5, 3))
            dom = Ball(center, radius)
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            x = center + u * rng.uniform(0.05, 1.9) * radius
        elif kind == 1:
            dom = HalfSpace(rng.normal(size=2), float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
            x = rng.uniform(-5, 5, 2)
        else:
            dom = MovingInterval.affine((-1, -0.2), (1, 0.1), horizon=1.0)
            lo, hi = -1 - 0.2 * t, 1 + 0.1 * t
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            x = np.array([mid + rng.choice([-1, 1]) * rng.uniform(0.02, 1.9) * half])
        out.append((dom, t, x))
    return out


def test_projection_and_gradient_on_1000_points():
    for dom, t, x in _tube_points(1000):
        p = project_to_boundary(dom, t, x)
        assert abs(dom.signed_distance(t, p)) < 1e-10
        g = dom.gradient(t, x)
        assert abs(np.linalg.norm(g) - 1.0) < 1e-12
        np.testing.assert_allclose(fd_gradient(dom, t, x), g, atol=1e-6)
        f = dom.signed_distance(t, x)
        if f < 0:
            np.testing.assert_allclose(p, x + g * (-f), atol=1e-10)


@given(st.tuples(coord, coord, coord).filter(lambda v: 1e-3 < np.linalg.norm(v) < 3.9))
def test_ball_projection_lands_on_sphere(x):
    x = np.array(x)
    assert abs(ball2().signed_distance(0.0, project_to_boundary(ball2(), 0.0, x))) < 1e-10
    assert ball2().signed_distance(0.0, x) == pytest.approx(2.0 - np.linalg.norm(x), abs=1e-15)


@given(st.tuples(coord, coord, coord).filter(lambda v: np.linalg.norm(v) > 1e-3), st.floats(0, 1))
def test_shifted_dt_zero_is_plain(x, t):
    dom = ball2()
    assert shifted_signed_distance(dom, t, x, 0.0, section6_model()) == dom.signed_distance(t, x)


@given(
    st.tuples(coord, coord, coord).filter(lambda v: 1e-3 < np.linalg.norm(v) < 3.9),
    st.floats(1e-6, 0.5),
    st.floats(1e-6, 0.5),
)
def test_shifted_strictly_decreasing_in_dt(x, a, b):
    lo, hi = min(a, b), max(a, b)
    # steps a few ulps apart round to the same shifted distance
    assume(hi > lo * (1 + 1e-9))
    dom, model = ball2(), section6_model()
    assert shifted_signed_distance(dom, 0.0, x, hi, model) < shifted_signed_distance(dom, 0.0, x, lo, model)


@given(st.floats(-0.9, 0.9), st.floats(0.0, 1.0))
def test_interval_projection(x, t):
    dom = MovingInterval.affine((-1, -0.2), (1, 0.1), horizon=1.0)
    lo, hi = -1 - 0.2 * t, 1 + 0.1 * t
    if abs((x - lo) - (hi - x)) < 1e-9:
        return
    p = project_to_boundary(dom, t, [x])
    assert abs(dom.signed_distance(t, p)) < 1e-12
    assert min(abs(p[0] - lo), abs(p[0] - hi)) < 1e-12


def test_user_defined_gradient_check():
    # disc around (1, -1) whose radius grows in time
    c = np.array([1.0, -1.0])
    dom = UserDefined(
        lambda t, x: 1.5 + 0.1 * t - np.linalg.norm(x - c),
        lambda t, x: -(x - c) / np.linalg.norm(x - c),
        radius=1.5,
        dim=2,
    )
    rng = np.random.default_rng(3)
    for _ in range(200):
        t = rng.uniform(0, 1)
        u = rng.normal(size=2)
        x = c + u / np.linalg.norm(u) * rng.uniform(0.3, 2.5)
        np.testing.assert_allclose(dom.gradient(t, x), fd_gradient(dom, t, x), atol=1e-5)
