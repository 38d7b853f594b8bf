"""Convex bodies as gauge oracles, the quasi-metric on sample functionals,
and randomized checkers for the inequalities that hold between them.

Every checker returns a :class:`FuzzReport`; a violation is a trial whose
left-hand side exceeds the right-hand side by more than ``slack`` relative
to the larger of the two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import as_generator, inv_sqrt_psd, sym_eig
from .errors import DomainError
from .models import SampleMatrix

__all__ = [
    "ConvexBody",
    "euclid_ball",
    "lq_ball",
    "ellipsoid",
    "h_ball",
    "gauge",
    "dual_gauge",
    "random_points_in_body",
    "clarkson_gap",
    "QuasiMetricContext",
    "d_quasi",
    "dtilde",
    "sup_norm_inf",
    "eu_norm",
    "InequalityTally",
    "FuzzReport",
    "check_scalar_inequalities",
    "check_quasimetric_properties",
    "check_body",
]


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """A symmetric convex body K given by its gauge.

    ``radius`` is the smallest D with K inside D * B_2^n; ``uc_power`` and
    ``uc_constant`` are the (q, lambda) of the two-point uniform convexity
    inequality.  Euclidean-type bodies (balls, ellipsoids, H-balls) store a
    ``metric`` matrix M with gauge(x) = |M x|_2.
    """

    kind: str
    dim: int
    uc_power: float
    uc_constant: float
    radius: float
    q: float | None = None
    metric: np.ndarray | None = field(default=None, repr=False)
    metric_inv: np.ndarray | None = field(default=None, repr=False)

    @property
    def euclidean_type(self) -> bool:
        return self.metric is not None

    @property
    def descriptor(self) -> str:
        return f"lq_ball(q={self.q:g})" if self.kind == "lq_ball" else self.kind

    def gauge(self, x):
        x = np.asarray(x, dtype=float)
        if self.metric is not None:
            return np.linalg.norm(x @ self.metric.T, axis=-1)
        return _lq_norm(x, self.q)

    def dual_gauge(self, x):
        x = np.asarray(x, dtype=float)
        if self.metric is not None:
            # support function of M^{-1} B_2: |M^{-T} x|
            return np.linalg.norm(x @ self.metric_inv, axis=-1)
        return _lq_norm(x, self.q / (self.q - 1.0))

    def gauge_grad(self, X) -> np.ndarray:
        """Gradient of the gauge at each row of X (rows must be nonzero)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.metric is not None:
            MX = X @ self.metric.T
            return (MX @ self.metric) / np.linalg.norm(MX, axis=1)[:, None]
        nrm = _lq_norm(X, self.q)
        return np.sign(X) * (np.abs(X) / nrm[:, None]) ** (self.q - 1.0)


def _lq_norm(x, q):
    a = np.abs(x)
    c = np.max(a, axis=-1, keepdims=True)
    safe = np.where(c > 0, c, 1.0)
    val = np.sum((a / safe) ** q, axis=-1) ** (1.0 / q) * np.squeeze(safe, axis=-1)
    return np.where(np.squeeze(c, axis=-1) > 0, val, 0.0)


def euclid_ball(n: int) -> ConvexBody:
    eye = np.eye(n)
    return ConvexBody("euclid_ball", n, 2.0, 1.0, 1.0, metric=eye, metric_inv=eye)


def lq_ball(n: int, q: float) -> ConvexBody:
    """Unit ball of l_q^n, q >= 2; uniformly convex of power type q with constant 1."""
    q = float(q)
    if not q >= 2.0 or math.isinf(q):
        raise DomainError(f"lq_ball needs finite q >= 2, got {q}")
    return ConvexBody("lq_ball", n, q, 1.0, n ** (0.5 - 1.0 / q), q=q)


def _euclidean_body(kind: str, M: np.ndarray) -> ConvexBody:
    M = np.asarray(M, dtype=float)
    lam_min = sym_eig(M.T @ M)[0][0]
    if lam_min <= 0:
        raise DomainError(f"{kind}: metric matrix is singular")
    return ConvexBody(kind, M.shape[0], 2.0, 1.0, 1.0 / math.sqrt(lam_min),
                      metric=M, metric_inv=np.linalg.inv(M))


def ellipsoid(shape) -> ConvexBody:
    """{x : x^T shape^{-1} x <= 1}, i.e. shape^{1/2} B_2^n."""
    shape = np.asarray(shape, dtype=float)
    if sym_eig(shape)[0][0] <= 0:
        raise DomainError("ellipsoid: shape matrix must be positive definite")
    return _euclidean_body("ellipsoid", inv_sqrt_psd(shape))


def h_ball(decomposition) -> ConvexBody:
    """Euclidean unit ball of the Lewis structure, in basis coordinates."""
    return _euclidean_body("h_ball", decomposition.change_of_basis)


def gauge(body: ConvexBody, x):
    return body.gauge(x)


def dual_gauge(body: ConvexBody, x):
    return body.dual_gauge(x)


def random_points_in_body(body: ConvexBody, k: int, rng=None) -> np.ndarray:
    """k full-support points of K: random direction, scaled to the boundary, then by U^{1/n}."""
    gen = as_generator(rng)
    g = gen.standard_normal((k, body.dim))
    r = gen.random(k) ** (1.0 / body.dim)
    return g / body.gauge(g)[:, None] * r[:, None]


def clarkson_gap(body: ConvexBody, x, y):
    """LHS - RHS of the two-point uniform convexity inequality (<= 0 when it holds)."""
    q, lam = body.uc_power, body.uc_constant
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lhs = body.gauge((x + y) / 2) ** q + lam ** (-q) * body.gauge((x - y) / 2) ** q
    rhs = 0.5 * (body.gauge(x) ** q + body.gauge(y) ** q)
    return lhs - rhs


@dataclass(frozen=True, eq=False)
class QuasiMetricContext:
    """Fixed vectors X_1..X_m (rows of ``points``) and an exponent p >= 2."""

    points: np.ndarray
    p: float

    def __post_init__(self):
        pts = self.points.rows if isinstance(self.points, SampleMatrix) else self.points
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        object.__setattr__(self, "points", pts)
        if self.p < 2:
            raise DomainError("quasi-metric needs p >= 2")
        if pts.shape[0] < 1:
            raise DomainError("need at least one point")

    @property
    def m(self) -> int:
        return self.points.shape[0]


def _proj(ctx, y):
    return np.asarray(y, dtype=float) @ ctx.points.T


def d_quasi(ctx: QuasiMetricContext, y, ybar):
    """d(y, ybar); broadcasts over leading axes."""
    e = 2.0 * ctx.p - 2.0
    diff = _proj(ctx, np.asarray(y, dtype=float) - np.asarray(ybar, dtype=float))
    w = np.abs(_proj(ctx, y)) ** e + np.abs(_proj(ctx, ybar)) ** e
    return np.sqrt(np.sum(diff ** 2 * w, axis=-1))


def dtilde(ctx: QuasiMetricContext, y, ybar):
    """The natural sub-Gaussian metric of the Rademacher process sum_j eps_j |<X_j, y>|^p."""
    p = ctx.p
    return np.sqrt(np.sum((np.abs(_proj(ctx, y)) ** p - np.abs(_proj(ctx, ybar)) ** p) ** 2, axis=-1))


def sup_norm_inf(ctx: QuasiMetricContext, x):
    return np.max(np.abs(_proj(ctx, x)), axis=-1)


def eu_norm(ctx: QuasiMetricContext, u, z):
    """Euclidean norm attached to u: sqrt(sum_l <X_l, z>^2 |<X_l, u>|^{2(p-1)})."""
    w = np.abs(_proj(ctx, u)) ** (2.0 * ctx.p - 2.0)
    return np.sqrt(np.sum(_proj(ctx, z) ** 2 * w, axis=-1))


@dataclass
class InequalityTally:
    name: str
    trials: int = 0
    violations: int = 0
    worst: float = -math.inf
    example: dict | None = None

    def update(self, lhs, rhs, slack: float, inputs=None):
        lhs = np.asarray(lhs, dtype=float).ravel()
        rhs = np.asarray(rhs, dtype=float).ravel()
        scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), np.finfo(float).tiny)
        excess = (lhs - rhs) / scale
        bad = ~(excess <= slack)  # NaN counts as a violation
        self.trials += lhs.size
        self.violations += int(np.count_nonzero(bad))
        finite = excess[np.isfinite(excess)]
        if finite.size:
            self.worst = max(self.worst, float(np.max(finite)))
        if bad.any() and self.example is None:
            i = int(np.flatnonzero(bad)[0])
            self.example = {"lhs": float(lhs[i]), "rhs": float(rhs[i])}
            if inputs is not None:
                self.example.update({k: np.asarray(v)[i].tolist() for k, v in inputs.items()})


@dataclass
class FuzzReport:
    p: float
    tallies: dict = field(default_factory=dict)

    def tally(self, name: str) -> InequalityTally:
        return self.tallies.setdefault(name, InequalityTally(name))

    @property
    def violations(self) -> int:
        return sum(t.violations for t in self.tallies.values())

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def merge(self, other: "FuzzReport") -> "FuzzReport":
        for name, t in other.tallies.items():
            mine = self.tally(name)
            mine.trials += t.trials
            mine.violations += t.violations
            mine.worst = max(mine.worst, t.worst)
            if mine.example is None:
                mine.example = t.example
        return self


def _pair_f(s, t, p):
    e = 2.0 * p - 2.0
    return np.abs(s - t) * np.sqrt(np.abs(s) ** e + np.abs(t) ** e)


def check_scalar_inequalities(p: float, trials: int, rng=None, slack: float = 1e-12) -> FuzzReport:
    """Fuzz the three scalar inequalities behind the quasi-metric.

    * ``classic``:  |x^p - y^p| <= p |x - y| sqrt(x^{2p-2} + y^{2p-2})  for x, y >= 0
    * ``chain``:    f(r_1, r_N) <= 2p sum_i f(r_i, r_{i+1})
    * ``midpoint``: f(r, (s+t)/2)^2 <= (f(r, s)^2 + f(r, t)^2) / 2

    with f(s, t) = |s - t| sqrt(|s|^{2p-2} + |t|^{2p-2}).  Magnitudes are
    log-uniform on [1e-6, 1e6] with random signs; chain lengths are uniform
    on 2..8.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    gen = as_generator(rng)
    rep = FuzzReport(p)

    def draw(*shape):
        mag = 10.0 ** gen.uniform(-6.0, 6.0, size=shape)
        return mag * (gen.integers(0, 2, size=shape) * 2.0 - 1.0)

    x, y = np.abs(draw(trials)), np.abs(draw(trials))
    lhs = np.abs(x ** p - y ** p)
    rhs = p * np.abs(x - y) * np.sqrt(x ** (2 * p - 2) + y ** (2 * p - 2))
    rep.tally("classic").update(lhs, rhs, slack, {"x": x, "y": y})

    r = draw(trials, 8)
    N = gen.integers(2, 9, size=trials)
    links = _pair_f(r[:, :-1], r[:, 1:], p)
    links = np.where(np.arange(7)[None, :] < (N - 1)[:, None], links, 0.0)
    last = r[np.arange(trials), N - 1]
    lhs = _pair_f(r[:, 0], last, p)
    rhs = 2.0 * p * links.sum(axis=1)
    rep.tally("chain").update(lhs, rhs, slack, {"r": r, "N": N})

    r, s, t = draw(trials), draw(trials), draw(trials)
    lhs = _pair_f(r, (s + t) / 2, p) ** 2
    rhs = 0.5 * (_pair_f(r, s, p) ** 2 + _pair_f(r, t, p) ** 2)
    rep.tally("midpoint").update(lhs, rhs, slack, {"r": r, "s": s, "t": t})
    return rep


def check_quasimetric_properties(ctx: QuasiMetricContext, body: ConvexBody, trials: int,
                                 rng=None, slack: float = 1e-10) -> FuzzReport:
    """Fuzz the quasi-metric inequalities on random points of ``body``.

    Checked ids: ``triangle`` (generalized triangle with constant 2p),
    ``midpoint`` (convexity of d-balls), ``ineg1`` (dtilde <= p d),
    ``ineg2`` (pointwise form d^2 <= |y - ybar|_inf^2 (S(y) + S(ybar))),
    ``ineg3`` (|y - ybar|_inf <= D max_j |X_j|_2 |y - ybar|_K) and
    ``prop27`` (the E_u comparison with M replaced by
    sum_j (D |X_j|_2)^{2p-2}, which dominates the supremum over K).
    About 5% of trials reuse a point to exercise the degenerate cases.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    gen = as_generator(rng)
    p, n = ctx.p, body.dim
    D = body.radius
    rep = FuzzReport(p)
    e = 2.0 * p - 2.0
    X = ctx.points
    xmax = float(np.max(np.linalg.norm(X, axis=1)))

    def pts(*lead):
        k = int(np.prod(lead))
        return random_points_in_body(body, k, gen).reshape(*lead, n)

    def collapse(a, b):
        mask = gen.random(a.shape[0]) < 0.05
        b = b.copy()
        b[mask] = a[mask]
        return b

    # generalized triangle inequality along chains of length 2..8
    U = pts(trials, 8)
    for i in range(1, 8):
        U[:, i] = collapse(U[:, i - 1], U[:, i])
    N = gen.integers(2, 9, size=trials)
    links = d_quasi(ctx, U[:, :-1], U[:, 1:])
    links = np.where(np.arange(7)[None, :] < (N - 1)[:, None], links, 0.0)
    lhs = d_quasi(ctx, U[:, 0], U[np.arange(trials), N - 1])
    rep.tally("triangle").update(lhs, 2.0 * p * links.sum(axis=1), slack)

    x, y, z = pts(trials), pts(trials), pts(trials)
    z = collapse(y, z)
    lhs = d_quasi(ctx, x, (y + z) / 2) ** 2
    rhs = 0.5 * (d_quasi(ctx, x, y) ** 2 + d_quasi(ctx, x, z) ** 2)
    rep.tally("midpoint").update(lhs, rhs, slack, {"x": x, "y": y, "z": z})

    y, yb = pts(trials), pts(trials)
    yb = collapse(y, yb)
    d = d_quasi(ctx, y, yb)
    rep.tally("ineg1").update(dtilde(ctx, y, yb), p * d, slack, {"y": y, "ybar": yb})
    S = lambda v: np.sum(np.abs(_proj(ctx, v)) ** e, axis=-1)
    dinf = sup_norm_inf(ctx, y - yb)
    rep.tally("ineg2").update(d ** 2, dinf ** 2 * (S(y) + S(yb)), slack, {"y": y, "ybar": yb})
    rep.tally("ineg3").update(dinf, D * xmax * body.gauge(y - yb), slack, {"y": y, "ybar": yb})

    u, zz, zb = pts(trials), pts(trials), pts(trials)
    zb = collapse(zz, zb)
    m_hat = float(np.sum((D * np.linalg.norm(X, axis=1)) ** e))
    lhs = d_quasi(ctx, zz, zb) ** 2
    rhs = 2.0 * 4.0 ** (p - 1.0) * (
        eu_norm(ctx, u, zz - zb) ** 2
        + m_hat * sup_norm_inf(ctx, zz - zb) ** 2 * (body.gauge(zz - u) ** e + body.gauge(zb - u) ** e)
    )
    rep.tally("prop27").update(lhs, rhs, slack, {"u": u, "z": zz, "zbar": zb})
    return rep


def check_body(body: ConvexBody, trials: int, rng=None, slack: float = 1e-10) -> FuzzReport:
    """Re-verify a body's declared metadata instead of trusting it.

    Ids: ``homogeneity``, ``triangle`` (norm axioms), ``radius``
    (|x|_2 <= D on the gauge sphere) and ``clarkson`` (declared (q, lambda)).
    """
    gen = as_generator(rng)
    n = body.dim
    rep = FuzzReport(float("nan"))
    x = gen.standard_normal((trials, n)) * 10.0 ** gen.uniform(-3, 3, size=(trials, 1))
    y = gen.standard_normal((trials, n)) * 10.0 ** gen.uniform(-3, 3, size=(trials, 1))
    t = gen.normal(size=trials) * 10.0 ** gen.uniform(-3, 3, size=trials)
    gx = body.gauge(x)
    lhs = body.gauge(t[:, None] * x)
    rep.tally("homogeneity").update(np.abs(lhs - np.abs(t) * gx), slack * np.abs(t) * gx, 0.0)
    rep.tally("triangle").update(body.gauge(x + y), gx + body.gauge(y), slack)
    unit = x / gx[:, None]
    rep.tally("radius").update(np.linalg.norm(unit, axis=1), body.radius * np.ones(trials), 1e-9)
    lhs = clarkson_gap(body, x, y) + 0.5 * (gx ** body.uc_power + body.gauge(y) ** body.uc_power)
    rhs = 0.5 * (gx ** body.uc_power + body.gauge(y) ** body.uc_power)
    rep.tally("clarkson").update(lhs, rhs, slack)
    return rep
