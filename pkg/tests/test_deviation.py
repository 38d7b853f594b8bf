import math

import numpy as np
import pytest

from mmoment.core import RngStream
from mmoment.deviation import (deviation_at, deviation_sup, empirical_pth_moment, kappa_from_samples,
                               kappa_pm, kappa_prime, kappa_upper, max_psi_growth, psi_alpha_norm,
                               sup_exact_moment, deviation_bounds)
from mmoment.errors import DomainError, PreconditionError
from mmoment.geometry import ellipsoid, euclid_ball, lq_ball
from mmoment.models import (discrete_atoms, euclid_norm_moment, gaussian_iso, isotropize, rademacher_cube,
                            sample, uniform_lq_ball)
from mmoment.optimize import ascend, net_maximize, ratio_objective, sphere_net


# --- optimizer building blocks -------------------------------------------------

def _rayleigh(S):
    def obj(U):
        v = np.sum((U @ S) * U, axis=1)
        n = np.sum(U * U, axis=1)
        return v / n, 2 * (U @ S - (v / n)[:, None] * U) / n[:, None]
    return obj


def test_ascend_finds_top_eigenvalue():
    gen = RngStream(1).generator()
    A = gen.standard_normal((6, 6))
    S = A + A.T
    res = ascend(_rayleigh(S), gen.standard_normal((30, 6)), tol=1e-12)
    val, u = res.best()
    assert val == pytest.approx(np.linalg.eigvalsh(S)[-1], abs=1e-9)
    assert np.linalg.norm(u) == pytest.approx(1.0)


def test_ascend_rows_are_independent():
    gen = RngStream(2).generator()
    S = np.diag([3.0, 1.0, -2.0])
    starts = gen.standard_normal((5, 3))
    full = ascend(_rayleigh(S), starts)
    for i in range(5):
        single = ascend(_rayleigh(S), starts[i:i + 1])
        np.testing.assert_array_equal(single.points[0], full.points[i])


def test_ratio_objective_gradient():
    num = lambda U: (U[:, 0] ** 2, np.stack([2 * U[:, 0], 0 * U[:, 1]], axis=1))
    den = lambda U: (1 + U[:, 1] ** 2, np.stack([0 * U[:, 0], 2 * U[:, 1]], axis=1))
    obj = ratio_objective(num, den)
    u = np.array([[0.3, 0.8]])
    v, g = obj(u)
    h = 1e-7
    fd = [(obj(u + h * e)[0] - obj(u - h * e)[0])[0] / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(g[0], fd, rtol=1e-6)


def test_sphere_net_and_net_maximize():
    pts, ang = sphere_net(3, 0.1)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0)
    with pytest.raises(DomainError):
        sphere_net(4, 0.1)
    S = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.0]])
    val, u = net_maximize(lambda U: np.sum((U @ S) * U, axis=1), 3)
    assert val == pytest.approx(np.linalg.eigvalsh(S)[-1], abs=1e-10)


# --- empirical moments and V_p --------------------------------------------------

def test_empirical_examples():
    X = np.array([[1.0, 0.0], [2.0, 0.0]])
    assert empirical_pth_moment(X, [0.0, 0.0], 3) == 0.0
    assert empirical_pth_moment(X, [1.0, 0.0], 3) == 4.5
    with pytest.raises(DomainError):
        empirical_pth_moment(X, [1.0, 0.0], 0.5)


def test_empirical_gaussian_fourth_moment():
    S = sample(gaussian_iso(3), 100_000, RngStream(3))
    y = np.array([1.0, 2.0, -2.0]) / 3.0
    v = np.abs(S.rows @ y) ** 4
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(empirical_pth_moment(S, y, 4) - 3.0) <= 4 * se


def test_proportional_atoms_have_zero_deviation():
    pts = np.array([[1.0, 0.0, 0.0], [0.5, -1.0, 2.0], [0.0, 1.0, 1.0]])
    model = discrete_atoms(pts, [0.5, 0.25, 0.25])
    X = pts[[0, 0, 1, 2]]
    for p in (2.0, 3.0, 4.5):
        rep = deviation_sup(X, model, euclid_ball(3), p, rng=RngStream(4))
        assert rep.v_p <= 1e-12


def test_missing_oracle_is_a_precondition_error():
    model = isotropize(uniform_lq_ball(3, 2))
    X = sample(model, 50, RngStream(5))
    with pytest.raises(PreconditionError, match="lq"):
        deviation_sup(X, model, euclid_ball(3), 3.0)
    # p = 2 needs only the covariance
    assert deviation_sup(X, model, euclid_ball(3), 2.0).method == "eig_exact"
    with pytest.raises(PreconditionError):
        deviation_sup(X, model, lq_ball(3, 3), 2.0, method="eig_exact")
    with pytest.raises(PreconditionError):
        deviation_sup(sample(gaussian_iso(4), 20, RngStream(1)), gaussian_iso(4), euclid_ball(4), 3.0,
                      method="net_bruteforce")


@pytest.mark.parametrize("seed", range(5))
def test_eig_matches_gradient_ascent(seed):
    n = 4
    model = gaussian_iso(n)
    X = sample(model, 200, RngStream(seed, 1))
    for body in (euclid_ball(n), ellipsoid(np.diag([1.0, 2.0, 0.5, 3.0]))):
        e = deviation_sup(X, model, body, 2.0)
        g = deviation_sup(X, model, body, 2.0, method="grad_restarts", rng=RngStream(seed, 2))
        assert e.method == "eig_exact" and g.method == "grad_restarts"
        assert g.v_p <= e.v_p + 1e-12
        assert g.v_p == pytest.approx(e.v_p, abs=1e-6)


@pytest.mark.parametrize("p", [3.0, 4.0, 6.0])
def test_net_matches_gradient_ascent(p):
    model = rademacher_cube(2)
    X = sample(model, 50, RngStream(6, int(p)))
    net = deviation_sup(X, model, euclid_ball(2), p, method="net_bruteforce", h=1e-4)
    grad = deviation_sup(X, model, euclid_ball(2), p, method="grad_restarts", rng=RngStream(7))
    assert grad.v_p == pytest.approx(net.v_p, abs=1e-5)


def test_net_matches_gradient_in_three_dimensions_on_lq_body():
    model = gaussian_iso(3)
    X = sample(model, 40, RngStream(8))
    body = lq_ball(3, 3)
    net = deviation_sup(X, model, body, 3.0)
    grad = deviation_sup(X, model, body, 3.0, method="grad_restarts", rng=RngStream(9))
    assert net.method == "net_bruteforce"
    assert grad.v_p == pytest.approx(net.v_p, abs=1e-5)


def test_more_restarts_never_lower_the_estimate():
    model = gaussian_iso(5)
    X = sample(model, 30, RngStream(10))
    vals = [deviation_sup(X, model, euclid_ball(5), 3.0, method="grad_restarts", restarts=R,
                          rng=RngStream(11)).v_p for R in (2, 8, 32, 128)]
    # equal up to where each start stops inside the stationarity tolerance
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))


def test_sign_flip_of_sample_preserves_deviation():
    model = gaussian_iso(4)
    X = sample(model, 60, RngStream(12)).rows
    a = deviation_sup(X, model, euclid_ball(4), 3.0, rng=RngStream(13))
    b = deviation_sup(-X, model, euclid_ball(4), 3.0, rng=RngStream(13))
    assert a.v_p == pytest.approx(b.v_p, rel=1e-12)


def test_maximizer_recomputes_reported_value():
    model = rademacher_cube(2)
    X = sample(model, 100, RngStream(14))
    rep = deviation_sup(X, model, euclid_ball(2), 4.0)
    assert deviation_at(X, model, rep.maximizer, 4.0) == pytest.approx(rep.v_p, abs=1e-12)
    assert euclid_ball(2).gauge(rep.maximizer) == pytest.approx(1.0)


def test_deviation_is_boundary_attained():
    # p-homogeneity: deviation at t*y is t^p times the deviation at y
    model = gaussian_iso(3)
    X = sample(model, 25, RngStream(15))
    y = np.array([0.2, -0.5, 0.4])
    assert deviation_at(X, model, 0.5 * y, 3.0) == pytest.approx(0.125 * deviation_at(X, model, y, 3.0), rel=1e-12)


# --- kappa ---------------------------------------------------------------------

def test_kappa_rademacher_is_sqrt_n():
    for p in (2.0, 3.5):
        for m in (1, 10):
            est = kappa_pm(rademacher_cube(5), p, m, replicas=50, rng=RngStream(16))
            assert est.value == pytest.approx(math.sqrt(5), rel=1e-15)


def test_kappa_with_m_one_is_norm_moment():
    model = gaussian_iso(4)
    a = kappa_pm(model, 3.0, 1, replicas=200_000, rng=RngStream(17))
    b = euclid_norm_moment(model, 3.0, 200_000, RngStream(18))
    assert abs(a.value - b.value) <= 4 * math.hypot(a.std_error, b.std_error)


def test_kappa_gaussian_band_and_direct_monte_carlo():
    n, m = 9, 100
    est = kappa_pm(gaussian_iso(n), 2.0, m, replicas=10_000, rng=RngStream(19))
    assert 3.0 <= est.value <= 3.0 * (1 + math.sqrt(2 * math.log(m) / n))
    gen = RngStream(20).generator()
    direct = np.sqrt(np.mean(np.max(np.sum(gen.standard_normal((10_000, m, n)) ** 2, axis=2), axis=1)))
    assert abs(est.value - direct) <= 4 * est.std_error * math.sqrt(2)


def test_kappa_upper_dominates():
    model = gaussian_iso(6)
    k = kappa_pm(model, 2.0, 1000, replicas=2000, rng=RngStream(21))
    u = kappa_upper(model, 2.0, 1000, rng=RngStream(22))
    assert k.value <= u.value


def test_kappa_prime_examples():
    gen = RngStream(23).generator()
    samples = [gen.standard_normal((20, 4)) for _ in range(50)]
    kap = kappa_from_samples(samples, 3.0)
    assert kappa_prime(samples, euclid_ball(4), 3.0).value == kap.value
    # p = 2: the polar factor disappears
    assert kappa_prime(samples, lq_ball(4, 3), 2.0).value == pytest.approx(kappa_from_samples(samples, 2.0).value,
                                                                            rel=1e-14)
    body = lq_ball(4, 4)
    kp = kappa_prime(samples, body, 5.0).value
    assert kp ** 2.5 <= body.radius ** 1.5 * kappa_from_samples(samples, 5.0).value ** 2.5 * (1 + 1e-12)
    with pytest.raises(DomainError):
        kappa_prime(samples, body, 1.5)


# --- psi norms -----------------------------------------------------------------

def test_psi2_of_gaussian():
    z = RngStream(2024).generator().standard_normal(100_000)
    est = psi_alpha_norm(z, 2.0)
    assert abs(est.value - math.sqrt(8 / 3)) <= 3 * est.std_error


def test_psi_constant_and_homogeneity():
    est = psi_alpha_norm(np.full(2000, 1.7), 1.0)
    assert est.value == pytest.approx(1.7 / math.log(2), rel=1e-15)
    z = RngStream(24).generator().exponential(size=5000)
    for alpha in (0.5, 1.0, 2.0):
        a = psi_alpha_norm(z, alpha).value
        assert psi_alpha_norm(2 * z, alpha).value == 2 * a
        assert psi_alpha_norm(-z, alpha).value == a


def test_psi_moment_ratio_is_equivalent():
    gen = RngStream(25).generator()
    for z, alpha in ((gen.standard_normal(50_000), 2.0), (gen.exponential(size=50_000), 1.0)):
        a = psi_alpha_norm(z, alpha).value
        b = psi_alpha_norm(z, alpha, method="moment_ratio").value
        assert 1 / 8 <= a / b <= 8


def test_psi_errors():
    with pytest.raises(DomainError):
        psi_alpha_norm(np.zeros(2000), 1.0)
    with pytest.raises(DomainError):
        psi_alpha_norm(np.ones(999), 1.0)
    with pytest.raises(DomainError):
        psi_alpha_norm(np.ones(2000), 0.0)
    with pytest.raises(DomainError):
        psi_alpha_norm(np.ones(2000), 1.0, method="other")


def test_max_psi_growth_single_draw_is_raw_norm():
    rows = max_psi_growth(rademacher_cube(4), 1.0, [1], rng=RngStream(26))
    assert rows[0]["ratio_log"] == rows[0]["psi"] == pytest.approx(2 / math.log(2))


def test_max_psi_growth_gaussian_log_ratio_is_stable():
    rows = max_psi_growth(gaussian_iso(1), 2.0, [10, 100, 1000, 10_000], rng=RngStream(27),
                          functional=lambda X: X[:, 0])
    r = [row["ratio_log"] for row in rows]
    assert max(r) / min(r) < 3


def test_max_norm_psi1_over_sqrt_n_is_bounded():
    model = isotropize(uniform_lq_ball(25, 2))
    rows = max_psi_growth(model, 1.0, [100, 1000, 10_000], rng=RngStream(28))
    assert all(row["ratio_sqrt_n"] < 3 for row in rows)


# --- bound formulas --------------------------------------------------------------

def test_deviation_bounds_examples():
    n, m = 4, 1000
    tb = deviation_bounds(euclid_ball(n), 2.0, m, math.sqrt(n))
    assert tb.A == pytest.approx(math.sqrt(n * math.log(m) / m), rel=1e-14)
    assert tb.B is None and tb.bound is None
    tb = deviation_bounds(euclid_ball(3), 4.0, m, 2.0, model=gaussian_iso(3))
    assert tb.B == pytest.approx(3.0, rel=1e-12)
    assert tb.bound == pytest.approx(tb.A ** 2 + tb.A * math.sqrt(3.0))
    As = [deviation_bounds(lq_ball(3, 3), 3.0, m, 2.0).A for m in (3, 6, 12, 24, 48, 1000)]
    assert all(b < a for a, b in zip(As, As[1:]))
    tb = deviation_bounds(euclid_ball(2), 2.0, 100, 1.0, EV=0.1, psi_norm=2.0, alpha=2.0)
    assert tb.Q == pytest.approx(0.1 + math.log(100) / 100 * 4.0)


def test_sup_exact_moment_numeric_route():
    # rademacher on l_3 ball, p = 4: compare the net maximizer with a dense angle scan
    model, body = rademacher_cube(2), lq_ball(2, 3)
    B = sup_exact_moment(model, body, 4.0)
    th = np.linspace(0, math.pi, 200_001)
    U = np.stack([np.cos(th), np.sin(th)], axis=1)
    Y = U / body.gauge(U)[:, None]
    # E|e1 y1 + e2 y2|^4 = y1^4 + y2^4 + 6 y1^2 y2^2
    scan = np.max(Y[:, 0] ** 4 + Y[:, 1] ** 4 + 6 * Y[:, 0] ** 2 * Y[:, 1] ** 2)
    assert B == pytest.approx(scan, rel=1e-8)
