from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retailsim import torus
from retailsim.torus import OrbitKind, TorusFlow, TorusGeometry, TorusPoint

PI = math.pi
G = TorusGeometry(2.0, 1.0)


@pytest.mark.parametrize(
    "x, y, theta, phi",
    [(0, 0, 0, 0), (1.25, -0.5, PI / 2, PI), (3.0, 7.0, 0, 0)],
)
def test_wrap_examples(x, y, theta, phi):
    p = torus.wrap(x, y)
    assert p.theta == pytest.approx(theta, abs=1e-12)
    assert p.phi == pytest.approx(phi, abs=1e-12)


def test_wrap_rejects_non_finite():
    with pytest.raises(ValueError):
        torus.wrap(float("inf"), 0.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_wrap_range(x, y):
    p = torus.wrap(x, y)
    assert 0 <= p.theta < 2 * PI and 0 <= p.phi < 2 * PI


@pytest.mark.parametrize(
    "theta, phi, xyz",
    [(0, 0, (3, 0, 0)), (PI, 0, (1, 0, 0)), (PI / 2, PI / 2, (0, 2, 1))],
)
def test_embed_examples(theta, phi, xyz):
    assert torus.embed(G, TorusPoint(theta, phi)) == pytest.approx(xyz, abs=1e-12)


def test_geometry_requires_R_gt_r():
    with pytest.raises(ValueError):
        TorusGeometry(1.0, 1.0)
    with pytest.raises(ValueError):
        TorusGeometry(1.0, 0.0)


def test_flow_position_examples():
    f = TorusFlow(0.3, 7.0, 1.0, 2.0)
    assert torus.flow_position(G, f, 0.0) == pytest.approx(
        torus.embed(G, TorusPoint(0.3, 7.0 - 2 * PI))
    )
    assert torus.flow_position(G, TorusFlow(0, 0, 0, 2 * PI), 1.0) == pytest.approx((3, 0, 0), abs=1e-12)
    assert torus.flow_position(G, TorusFlow(0, 0, PI, PI / 2), 1.0) == pytest.approx((0, 1, 0), abs=1e-12)


def test_flow_needs_direction():
    with pytest.raises(ValueError):
        TorusFlow(0, 0, 0, 0)


@settings(max_examples=60)
@given(
    st.floats(-10, 10), st.floats(-10, 10), st.floats(-3, 3), st.floats(-3, 3),
    st.floats(0, 100), st.integers(-3, 3),
)
def test_flow_is_periodic_in_start(x0, y0, lam, mu, t, k):
    if lam == 0 and mu == 0:
        lam = 1.0
    base = torus.flow_position(G, TorusFlow(x0, y0, lam, mu), t)
    sx = torus.flow_position(G, TorusFlow(x0 + 2 * PI * k, y0, lam, mu), t)
    sy = torus.flow_position(G, TorusFlow(x0, y0 + 2 * PI * k, lam, mu), t)
    assert sx == pytest.approx(base, abs=1e-7)
    assert sy == pytest.approx(base, abs=1e-7)


@settings(max_examples=40)
@given(st.floats(0.5, 10), st.floats(0.01, 0.99), st.floats(0, 2 * PI), st.floats(0, 2 * PI))
def test_embed_lies_on_torus(R, ratio, theta, phi):
    g = TorusGeometry(R, R * ratio)
    assert abs(torus.torus_residual(g, torus.embed(g, TorusPoint(theta, phi)))) < 1e-9


def test_rotation_examples():
    rn = torus.rotation_number(torus.rigid_rotation(3 / 7))
    assert rn.rational_approx == (3, 7) and rn.classification is OrbitKind.RECURRENT
    ident = torus.rotation_number(lambda x: x)
    assert ident.alpha == 0 and ident.rational_approx == (0, 1)
    q = torus.rotation_number(torus.rigid_rotation(0.25))
    assert torus.classify_orbit(q) is OrbitKind.RECURRENT and q.period == 4


def test_golden_rotation_is_dense():
    c = (math.sqrt(5) - 1) / 2
    rn = torus.rotation_number(torus.rigid_rotation(c), n_iter=1_000_000, tol=1e-9)
    assert rn.alpha == pytest.approx(0.6180339887, abs=1e-9)
    assert rn.classification is OrbitKind.DENSE and rn.rational_approx is None
    # direct (f^n(x) - x)/n agrees at several n
    for n in (1000, 10_000, 100_000):
        x = 0.0
        for _ in range(n):
            x += c
        assert (x / n) % 1.0 == pytest.approx(rn.alpha, abs=1e-9)


def test_classify_orbit_is_presence_of_approx():
    assert torus.classify_orbit(torus.RotationNumber(0.5, (1, 2), OrbitKind.RECURRENT)) is OrbitKind.RECURRENT
    assert torus.classify_orbit(torus.RotationNumber(0.5, None, OrbitKind.DENSE)) is OrbitKind.DENSE


def test_rotation_rejects_non_lift_and_bad_args():
    with pytest.raises(ValueError):
        torus.rotation_number(lambda x: 2 * x)
    with pytest.raises(ValueError):
        torus.rotation_number(lambda x: x, n_iter=10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1, exclude_max=True))
def test_rigid_rotation_alpha(c):
    n = 2000
    rn = torus.rotation_number(torus.rigid_rotation(c), n_iter=n)
    d = abs(rn.alpha - c)
    assert min(d, 1 - d) <= 1 / n + 1e-12
    if rn.rational_approx is not None:
        p, q = rn.rational_approx
        assert math.gcd(p, q) == 1
        assert abs(rn.alpha - p / q) <= 1e-6 or abs(rn.alpha - 1) <= 1e-6


def test_convergents_of_pi():
    assert list(torus.convergents(PI, 120))[:3] == [(3, 1), (22, 7), (333, 106)]


def test_intersections_identical_flows():
    f = TorusFlow(0.1, 0.2, 1.0, 0.5)
    rep = torus.count_intersections(G, f, f, 0.0, 5.0, 0.01, 0.1)
    assert rep.count == 1
    assert rep.events[0].start == 0.0 and rep.events[0].end == pytest.approx(5.0)


def test_intersections_antipodal_flows_never_meet():
    a = TorusFlow(0.0, 0.0, 1.0, 1.0)
    b = TorusFlow(PI, PI, 1.0, 1.0)
    rep = torus.count_intersections(G, a, b, 0.0, 20.0, 0.01, 0.5)
    assert rep.count == 0


def _brute_count(g, a, b, t0, t1, dt, radius):
    t = np.arange(t0, t1 + dt / 2, dt)
    pa = np.array([torus.flow_position(g, a, x) for x in t])
    pb = np.array([torus.flow_position(g, b, x) for x in t])
    hit = np.linalg.norm(pa - pb, axis=1) <= radius
    return int(np.sum(hit[1:] & ~hit[:-1]) + hit[0])


def test_intersections_refinement_oracle():
    g = TorusGeometry(2.0, 0.5)
    a = TorusFlow(0, 0, 1, 0)
    b = TorusFlow(0, 0, 0, 1)
    coarse = torus.count_intersections(g, a, b, 0.0, 2 * PI, 1e-3, 0.05)
    fine = torus.count_intersections(g, a, b, 0.0, 2 * PI, 1e-5, 0.05)
    assert coarse.count == fine.count
    assert coarse.count == _brute_count(g, a, b, 0.0, 2 * PI, 1e-3, 0.05)


@settings(max_examples=25, deadline=None)
@given(
    st.tuples(st.floats(0, 6), st.floats(0, 6), st.floats(-2, 2), st.floats(-2, 2)),
    st.tuples(st.floats(0, 6), st.floats(0, 6), st.floats(-2, 2), st.floats(-2, 2)),
    st.floats(-3, 3),
)
def test_intersections_symmetric_and_phi_shift_invariant(fa, fb, delta):
    if fa[2] == 0 and fa[3] == 0 or fb[2] == 0 and fb[3] == 0:
        return
    a, b = TorusFlow(*fa), TorusFlow(*fb)
    args = (0.0, 10.0, 0.01, 0.4)
    n_ab = torus.count_intersections(G, a, b, *args).count
    assert n_ab == torus.count_intersections(G, b, a, *args).count
    a2 = TorusFlow(a.x0, a.y0 + delta, a.lam, a.mu)
    b2 = TorusFlow(b.x0, b.y0 + delta, b.lam, b.mu)
    ga = torus.kernels.torus_gap(G.R, G.r, a.as_array(), b.as_array(), 0.0, 0.01, 1001)
    gb = torus.kernels.torus_gap(G.R, G.r, a2.as_array(), b2.as_array(), 0.0, 0.01, 1001)
    # a count can only differ when some sample sits on the radius boundary
    if np.min(np.abs(ga - 0.4)) > 1e-9:
        assert np.allclose(ga, gb, atol=1e-9)
        assert torus.count_intersections(G, a2, b2, *args).count == n_ab


def test_intersection_argument_errors():
    f = TorusFlow(0, 0, 1, 1)
    for bad in [(1.0, 0.0, 0.1, 1.0), (0.0, 1.0, 0.0, 1.0), (0.0, 1.0, 0.1, 0.0), (0.0, 0.05, 0.1, 1.0)]:
        with pytest.raises(ValueError):
            torus.count_intersections(G, f, f, *bad)
