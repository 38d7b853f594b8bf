import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmoment.core import RngStream
from mmoment.errors import DomainError
from mmoment.geometry import (QuasiMetricContext, check_body, check_quasimetric_properties,
                              check_scalar_inequalities, clarkson_gap, d_quasi, dtilde, dual_gauge,
                              ellipsoid, euclid_ball, eu_norm, gauge, lq_ball, random_points_in_body,
                              sup_norm_inf)
from mmoment.models import gaussian_iso, sample
from mmoment.optimize import net_maximize


def test_gauge_examples():
    assert gauge(euclid_ball(2), [3.0, 4.0]) == pytest.approx(5.0)
    assert gauge(lq_ball(2, 4), [1.0, 1.0]) == pytest.approx(2 ** 0.25, rel=1e-15)
    assert gauge(ellipsoid(np.diag([4.0, 1.0])), [1.0, 0.0]) == pytest.approx(0.5, rel=1e-15)
    assert gauge(lq_ball(3, 3), np.zeros(3)) == 0.0
    # no overflow for huge coordinates
    assert gauge(lq_ball(2, 6), [1e300, 1e300]) == pytest.approx(1e300 * 2 ** (1 / 6))


def test_dual_gauge_examples():
    x = np.array([0.3, -1.7])
    assert dual_gauge(euclid_ball(2), x) == pytest.approx(np.linalg.norm(x))
    assert dual_gauge(lq_ball(2, 2), [1.0, 1.0]) == pytest.approx(math.sqrt(2))
    assert dual_gauge(lq_ball(2, 3), [1.0, 1.0]) == pytest.approx(2 ** (2 / 3), rel=1e-14)


def test_dual_gauge_matches_net_maximization():
    # sup{<x, z> : |z|_K <= 1} = max over directions of |<x,u>| / |u|_K
    for body, x in [(lq_ball(2, 3), np.array([1.0, 1.0])),
                    (lq_ball(2, 5), np.array([0.2, -1.3])),
                    (ellipsoid(np.array([[2.0, 0.5], [0.5, 1.0]])), np.array([1.0, 2.0])),
                    (lq_ball(3, 4), np.array([1.0, -0.5, 2.0]))]:
        val, _ = net_maximize(lambda U: np.abs(U @ x) / body.gauge(U), body.dim)
        assert val == pytest.approx(body.dual_gauge(x), abs=1e-8)


def test_dual_of_dual_is_gauge():
    body = lq_ball(3, 3)
    dual = dataclasses.replace(body, q=1.5)
    x = np.array([0.4, -1.0, 0.7])
    val, _ = net_maximize(lambda U: np.abs(U @ x) / dual.gauge(U), 3)
    assert val == pytest.approx(body.gauge(x), abs=1e-8)


def test_body_metadata():
    b = lq_ball(16, 4)
    assert b.radius == pytest.approx(16 ** 0.25)
    assert b.uc_power == 4 and b.uc_constant == 1
    assert b.descriptor == "lq_ball(q=4)"
    e = ellipsoid(np.diag([4.0, 1.0]))
    assert e.radius == pytest.approx(2.0)
    with pytest.raises(DomainError):
        lq_ball(3, 1.5)
    with pytest.raises(DomainError):
        lq_ball(3, math.inf)
    with pytest.raises(DomainError):
        ellipsoid(np.diag([1.0, 0.0]))


@pytest.mark.parametrize("body", [euclid_ball(3), lq_ball(3, 3), lq_ball(5, 6),
                                  ellipsoid(np.diag([1.0, 4.0, 9.0]))],
                         ids=["ball", "l3", "l6", "ellipsoid"])
def test_check_body_accepts_builtin_bodies(body):
    rep = check_body(body, 10_000, RngStream(1))
    assert rep.ok, {k: (t.violations, t.example) for k, t in rep.tallies.items()}


def test_check_body_catches_false_declarations():
    liar = dataclasses.replace(lq_ball(3, 4), uc_constant=0.5)
    assert check_body(liar, 2000, RngStream(2)).tally("clarkson").violations > 0
    small = dataclasses.replace(lq_ball(3, 4), radius=1.0)
    assert check_body(small, 2000, RngStream(3)).tally("radius").violations > 0


def test_clarkson_for_lq_balls():
    gen = RngStream(4).generator()
    for q in (2.0, 3.0, 4.5):
        body = lq_ball(5, q)
        x = gen.standard_normal((10_000, 5))
        y = gen.standard_normal((10_000, 5))
        gap = clarkson_gap(body, x, y)
        scale = body.gauge(x) ** q + body.gauge(y) ** q
        assert np.max(gap / scale) <= 1e-12


def test_polar_inequality():
    gen = RngStream(5).generator()
    for body in (lq_ball(4, 3), ellipsoid(np.diag([1.0, 2.0, 3.0, 4.0])), euclid_ball(4)):
        x = gen.standard_normal((5000, 4))
        y = gen.standard_normal((5000, 4))
        lhs = np.sum(x * y, axis=1)
        rhs = body.gauge(x) * body.dual_gauge(y)
        assert np.all(lhs <= rhs * (1 + 1e-12))


def test_random_points_stay_in_body():
    body = lq_ball(4, 3)
    P = random_points_in_body(body, 1000, RngStream(6))
    assert np.max(body.gauge(P)) <= 1 + 1e-12


def _ctx(rows, p):
    return QuasiMetricContext(np.asarray(rows, dtype=float), p)


def test_quasi_metric_hand_examples():
    c = _ctx([[1.0, 0.0]], 2)
    assert d_quasi(c, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)
    assert d_quasi(c, [0.3, 0.2], [0.3, 0.2]) == 0.0
    assert dtilde(c, [2.0, 0.0], [1.0, 0.0]) == pytest.approx(3.0)
    assert dtilde(c, [0.3, 0.2], [0.3, 0.2]) == 0.0
    assert eu_norm(c, [1.0, 0.0], [3.0, 0.0]) == pytest.approx(3.0)
    assert eu_norm(c, [0.0, 0.0], [3.0, 1.0]) == 0.0
    assert eu_norm(c, [1.0, 0.0], [0.0, 0.0]) == 0.0
    two = _ctx(np.eye(2), 2)
    assert sup_norm_inf(two, [2.0, -3.0]) == 3.0
    assert sup_norm_inf(two, [0.0, 0.0]) == 0.0


def test_quasi_metric_accepts_sample_matrix():
    S = sample(gaussian_iso(3), 8, RngStream(7))
    c = QuasiMetricContext(S, 3)
    assert c.m == 8
    with pytest.raises(DomainError):
        QuasiMetricContext(S, 1.5)


def test_scalar_hand_example():
    # x=2, y=1, p=2: |4 - 1| = 3 <= 2 * 1 * sqrt(4 + 1)
    lhs, rhs = 3.0, 2.0 * math.sqrt(5.0)
    assert lhs <= rhs


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0, 6.0])
def test_scalar_inequalities_hold(p):
    rep = check_scalar_inequalities(p, 20_000, RngStream(8, int(p * 10)))
    assert rep.ok
    assert set(rep.tallies) == {"classic", "chain", "midpoint"}
    assert all(t.trials == 20_000 for t in rep.tallies.values())


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_quasimetric_properties_hold(p):
    X = sample(gaussian_iso(4), 8, RngStream(9)).rows
    for body in (euclid_ball(4), lq_ball(4, 3)):
        rep = check_quasimetric_properties(_ctx(X, p), body, 5000, RngStream(10, int(p)))
        assert rep.ok, {k: (t.violations, t.example) for k, t in rep.tallies.items()}


def test_checker_reports_a_broken_inequality():
    rep = check_scalar_inequalities(2.0, 10, RngStream(1))
    t = rep.tally("classic")
    t.update([2.0, 1.0], [1.0, 1.0], 1e-12, {"x": [5.0, 6.0]})
    assert t.violations == 1 and t.example["x"] == 5.0
    t.update([math.nan], [1.0], 1e-12)
    assert t.violations == 2 and not rep.ok


def test_degenerate_chain_and_midpoint_identity():
    X = sample(gaussian_iso(2), 5, RngStream(11)).rows
    c = _ctx(X, 2)
    u = np.array([0.2, 0.3])
    assert d_quasi(c, u, u) == 0.0
    y = np.array([0.5, -0.1])
    x = np.array([-0.3, 0.4])
    lhs = d_quasi(c, x, (y + y) / 2) ** 2
    rhs = 0.5 * (d_quasi(c, x, y) ** 2 + d_quasi(c, x, y) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_kappa_prime_pathwise_relation():
    gen = RngStream(12).generator()
    for q, p in [(3.0, 3.0), (4.0, 5.0), (2.5, 2.0)]:
        body = lq_ball(6, q)
        D = body.radius
        for _ in range(200):
            X = gen.standard_normal((10, 6))
            e2 = np.max(np.linalg.norm(X, axis=1))
            lhs = e2 ** 2 * np.max(body.dual_gauge(X)) ** (p - 2)
            assert lhs <= D ** (p - 2) * e2 ** p * (1 + 1e-12)


vec = arrays(float, 3, elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.sampled_from([2.0, 2.5, 3.0, 4.0, 6.0]))
def test_d_symmetric_and_dominates_dtilde(y, ybar, p):
    X = np.array([[1.0, 0.5, -0.2], [0.0, 2.0, 1.0], [-1.5, 0.3, 0.7], [0.4, -0.4, 0.4]])
    c = _ctx(X, p)
    assert d_quasi(c, y, ybar) == d_quasi(c, ybar, y)
    assert dtilde(c, y, ybar) <= p * d_quasi(c, y, ybar) * (1 + 1e-12) + 1e-300
