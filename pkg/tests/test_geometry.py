import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from radar_pho import geometry as geo
from radar_pho.scene import ObjectTrack, advance


# -- oracles ----------------------------------------------------------------

def sampled_intersection(A, U, y_plane, steps=100_000):
    """Dense parametric sampling of the segment A->U, then linear
    interpolation between the two samples bracketing the plane."""
    eta = np.linspace(0.0, 1.0, steps + 1)
    pts = np.asarray(A)[None, :] + eta[:, None] * (np.asarray(U) - np.asarray(A))[None, :]
    s = pts[:, 1] - y_plane
    k = int(np.flatnonzero(np.sign(s[:-1]) != np.sign(s[1:]))[0])
    w = s[k] / (s[k] - s[k + 1])
    return pts[k] + w * (pts[k + 1] - pts[k])


def stepped_block_time(x0, v, direction, x_I, dt=1e-3):
    """Advance in fixed steps until the object's x passes x_I."""
    x, t = x0, 0.0
    side = math.copysign(1.0, x_I - x0)
    while math.copysign(1.0, x_I - x) == side and x != x_I:
        x += direction * v * dt
        t += dt
        if t > 1e4:
            raise RuntimeError("never crossed")
    return t


# -- object localisation ----------------------------------------------------

def test_localisation_345_broadside():
    o = geo.object_localisation(5, 0.0, 4, 1, 3.0, geo.PLUS_X)
    assert o.r == pytest.approx(4)
    assert o.x == pytest.approx(0, abs=1e-12)
    assert o.y == pytest.approx(4)
    assert o.theta == pytest.approx(math.pi / 2)


def test_localisation_thirty_degrees():
    o = geo.object_localisation(5, math.pi / 6, 4, 1, 3.0, geo.PLUS_X)
    assert o.x == pytest.approx(2)
    assert o.y == pytest.approx(2 * math.sqrt(3))
    assert o.theta == pytest.approx(math.pi / 3)


def test_localisation_rejects_short_slant_range():
    with pytest.raises(geo.GeometryError, match="slant range"):
        geo.object_localisation(2, 0.0, 7, 1, 3.0, geo.PLUS_X)


@given(st.floats(0.5, 60), st.floats(-1.5, 1.5), st.floats(2, 8), st.floats(1, 4.5))
def test_localisation_invariants(rho, phi, H, h):
    if rho < abs(H - h):
        return
    o = geo.object_localisation(rho, phi, H, h, 1.0, geo.MINUS_X)
    assert o.r >= 0
    assert o.r ** 2 == pytest.approx(o.x ** 2 + o.y ** 2, abs=1e-9)
    assert o.y >= 0
    assert 0 <= o.theta <= math.pi


# -- LoS line / intersection -------------------------------------------------

def test_los_direction_and_endpoints():
    line = geo.los_line((0, 0, 3), (0, 12, 1.5))
    assert line.direction == (0, 12, -1.5)
    assert line.point(1.0) == (0, 12, 1.5)
    assert line.point(0.0) == (0, 0, 3)


def test_los_degenerate():
    with pytest.raises(geo.GeometryError, match="degenerate"):
        geo.los_line((1, 2, 3), (1, 2, 3))


def test_midpoint_brute_force(rng):
    for _ in range(1000):
        A, U = rng.uniform(-50, 50, 3), rng.uniform(-50, 50, 3)
        mid = geo.los_line(A, U).point(0.5)
        assert np.max(np.abs(np.array(mid) - (A + U) / 2)) < 1e-12


def test_intersect_midpoint_example():
    x, y, z = geo.intersect_plane(geo.los_line((0, 0, 3), (0, 12, 1.5)), 6)
    assert (x, y, z) == pytest.approx((0, 6, 2.25))


def test_intersect_at_antenna_plane():
    assert geo.intersect_plane(geo.los_line((0, 0, 3), (0, 12, 1.5)), 0) == pytest.approx((0, 0, 3))


def test_intersect_parallel_errors():
    line = geo.los_line((0, 5, 3), (10, 5, 1.5))
    with pytest.raises(geo.GeometryError, match="no intersection"):
        geo.intersect_plane(line, 6)
    with pytest.raises(geo.GeometryError, match="degenerate"):
        geo.intersect_plane(line, 5)


def test_intersect_matches_dense_sampling(rng):
    for _ in range(50):
        A = np.array([rng.uniform(-20, 20), 0.0, rng.uniform(2, 8)])
        U = np.array([rng.uniform(-20, 20), rng.uniform(5, 20), rng.uniform(1, 2)])
        y = rng.uniform(0.1, U[1] - 0.1)
        got = geo.intersect_plane(geo.los_line(A, U), y)
        assert np.max(np.abs(np.array(got) - sampled_intersection(A, U, y))) < 1e-6


# -- blocking rule ------------------------------------------------------------

USER = geo.user_localisation(0.0, 12.0)


def _obj(x, y, n):
    return geo.object_from_position(x, y, 3.0, n)


def test_tall_approaching_from_right_blocks():
    o = _obj(9.0, 6.0, geo.MINUS_X)       # theta_o < theta_u, heading -x
    assert o.theta < USER.theta
    assert geo.blockage_status(o, USER, 3.0, 2.25).b == 1


def test_short_object_never_blocks():
    for n in (geo.PLUS_X, geo.MINUS_X):
        for x in (-9.0, 9.0):
            assert geo.blockage_status(_obj(x, 6.0, n), USER, 2.0, 2.25).b == 0


def test_boundary_height_counts_as_blockage():
    assert geo.blockage_status(_obj(-9.0, 6.0, geo.PLUS_X), USER, 2.25, 2.25).b == 1
    assert geo.blockage_status(_obj(-9.0, 6.0, geo.MINUS_X), USER, 2.25, 2.25).b == 0


def test_out_of_corridor_flag():
    st_ = geo.blockage_status(_obj(-9.0, 13.0, geo.PLUS_X), USER, 4.0, 1.0)
    assert st_ == geo.Blockage(0, True)


def test_time_to_block_examples():
    o = geo.object_from_position(-9.0, 6.0, 3.0, geo.PLUS_X)
    assert geo.time_to_block(o, 0.0, 1) == pytest.approx(3.0)
    assert geo.time_to_block(o, 0.0, 0) == -1.0
    with pytest.raises(geo.GeometryError):
        geo.time_to_block(geo.object_from_position(-9, 6, 0.0, 1), 0.0, 1)


def test_theta_strictly_decreasing_along_lane():
    for y in (0.5, 3.0, 11.0):
        th = [geo.lane_angle(x, y) for x in np.linspace(-60, 60, 241)]
        assert np.all(np.diff(th) < 0)


def test_block_time_matches_stepping(rng):
    A, Up = (0.0, 0.0, 5.0), (0.0, 14.0, 1.5)
    user = geo.user_localisation(0.0, 14.0)
    n = 0
    while n < 1000:
        x0, y0 = rng.uniform(-40, 40), rng.uniform(1, 13)
        v, d, h = rng.uniform(3, 13), int(rng.choice([-1, 1])), rng.uniform(1, 4.5)
        o = geo.object_from_position(x0, y0, v, d)
        lab = geo.label_from_localisation(o, user, h, A, Up)
        if not lab.b:
            continue
        x_I = geo.intersect_plane(geo.los_line(A, Up), y0)[0]
        assert abs(stepped_block_time(x0, v, d, x_I) - lab.T_b) <= 1.5e-3
        n += 1


@given(st.floats(-40, 40), st.floats(0.5, 11.5), st.floats(1, 4.5), st.floats(1, 15),
       st.sampled_from([-1, 1]), st.floats(2, 8))
def test_label_matches_crossing_condition(x0, y0, h, v, d, H):
    """Blocked exactly when the object is tall enough at its lane and is
    moving towards the crossing point x_I."""
    assume(abs(x0) > 1e-6)      # on the user ray the angle comparison is a tie
    A, Up = (0.0, 0.0, H), (0.0, 12.0, 1.5)
    user = geo.user_localisation(0.0, 12.0)
    lab = geo.label_from_localisation(geo.object_from_position(x0, y0, v, d), user, h, A, Up)
    x_I, _, z_I = geo.intersect_plane(geo.los_line(A, Up), y0)
    heading_to_line = (x_I - x0) * d > 0
    assert lab.b == int(h >= z_I and heading_to_line and x0 != x_I)


@given(st.floats(-40, 40), st.floats(0.5, 11.5), st.floats(1, 4.5), st.floats(1, 15),
       st.sampled_from([-1, 1]), st.floats(0.2, 5))
def test_scale_invariance(x0, y0, h, v, d, c):
    A, Up = (0.0, 0.0, 4.0), (0.0, 12.0, 1.5)
    lab = geo.label_from_localisation(geo.object_from_position(x0, y0, v, d),
                                      geo.user_localisation(0, 12), h, A, Up)
    sA, sU = tuple(c * a for a in A), tuple(c * u for u in Up)
    lab2 = geo.label_from_localisation(geo.object_from_position(c * x0, c * y0, c * v, d),
                                       geo.user_localisation(0, 12 * c), c * h, sA, sU)
    assert lab.b == lab2.b
    assert lab.T_b == pytest.approx(lab2.T_b, rel=1e-9, abs=1e-12)


def test_will_cross_agrees_with_label(rng):
    A, Up = (0.0, 0.0, 4.0), (0.0, 13.0, 1.5)
    user = geo.user_localisation(0, 13)
    for _ in range(500):
        x0, y0, h, d = rng.uniform(-30, 30), rng.uniform(1, 12), rng.uniform(1, 4.5), int(rng.choice([-1, 1]))
        lab = geo.label_from_localisation(geo.object_from_position(x0, y0, 5, d), user, h, A, Up)
        assert geo.will_cross(x0, y0, d, h, A, Up)[0] == bool(lab.b)


def test_blocked_interval_starts_at_block_time():
    A, Up = (0.0, 0.0, 3.0), (0.0, 12.0, 1.5)
    w = geo.blocked_intervals(-9.0, 6.0, 3.0, 3.0, 1, 10.0, A, Up, 4.0)
    assert w == pytest.approx((13.0, 13.0 + 4.0 / 3.0))
    assert geo.blocked_intervals(-9.0, 6.0, 3.0, 3.0, -1, 10.0, A, Up, 4.0) is None


def test_batch_intersection_matches_scalar(rng):
    A, U = np.array([0, 0, 5.0]), np.array([0, 14, 1.5])
    ys = rng.uniform(0.5, 13, 50)
    xs, zs = geo.intersect_plane_batch(A, U, ys)
    for y, x, z in zip(ys, xs, zs):
        ref = geo.intersect_plane(geo.los_line(A, U), y)
        assert (x, z) == pytest.approx((ref[0], ref[2]))
