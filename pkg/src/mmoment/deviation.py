"""The maximal deviation V_p(K) of empirical p-th moments, the norm
parameters kappa and kappa', psi_alpha norms and the bound-side quantities.

V_p(K) = sup_{y in K} |(1/m) sum_j |<X_j, y>|^p - E|<X, y>|^p|.

Both moments are p-homogeneous in y, so the supremum is attained on the
boundary of K and equals the maximum over Euclidean unit vectors u of
|f(u)| / ||u||_K^p.  All three methods work with that scale-free ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import Estimate, RngStream, as_generator, power_mean, sym_eig_extreme
from .errors import DomainError, NumericError, PreconditionError
from .geometry import ConvexBody
from .models import (RandomVectorModel, SampleMatrix, _rows, _sampled_norms,
                     euclid_norm_moment, gaussian_abs_moment, moment_oracle)
from .optimize import ascend, net_maximize, ratio_objective

__all__ = [
    "DeviationReport",
    "PsiNormEstimate",
    "TheoremBounds",
    "empirical_pth_moment",
    "deviation_at",
    "deviation_sup",
    "sup_exact_moment",
    "kappa_pm",
    "kappa_from_samples",
    "kappa_prime",
    "kappa_upper",
    "psi_alpha_norm",
    "max_psi_growth",
    "deviation_bounds",
]

METHODS = ("eig_exact", "grad_restarts", "net_bruteforce")
# cap on the number of |<X_j, u>| entries held at once while evaluating batches
_CHUNK_ENTRIES = 1 << 22


@dataclass
class DeviationReport:
    v_p: float
    maximizer: np.ndarray
    method: str
    restarts_used: int
    p: float
    A: float | None = None
    B: float | None = None
    kappa: float | None = None
    Q: float | None = None


@dataclass(frozen=True)
class PsiNormEstimate:
    alpha: float
    value: float
    method: str
    mc_samples: int
    std_error: float


@dataclass(frozen=True)
class TheoremBounds:
    A: float
    B: float | None
    Q: float | None
    bound: float | None  # A^2 + A sqrt(B)


def empirical_pth_moment(sample, y, p: float) -> float:
    """(1/m) sum_j |<X_j, y>|^p with exactly rounded summation."""
    if p < 1:
        raise DomainError("p must be >= 1")
    X = _rows(sample)
    y = np.asarray(y, dtype=float).ravel()
    return math.fsum(np.abs(X @ y) ** p) / X.shape[0]


def deviation_at(sample, model: RandomVectorModel, y, p: float) -> float:
    oracle = _require_oracle(model, p)
    return abs(empirical_pth_moment(sample, y, p) - oracle.exact(y))


def _require_oracle(model, p):
    oracle = moment_oracle(model, p)
    if oracle is None:
        raise PreconditionError(f"no exact p-th moment oracle for model {model.descriptor} at p={p:g}")
    return oracle


def _empirical_batch(X, p):
    """Batched value and gradient of u -> (1/m) sum |<X_j, u>|^p."""
    m = X.shape[0]

    def f(U):
        k = U.shape[0]
        val = np.empty(k)
        grad = np.empty_like(U)
        step = max(1, _CHUNK_ENTRIES // m)
        for s in range(0, k, step):
            P = U[s:s + step] @ X.T
            A = np.abs(P)
            Ap = A ** (p - 1.0)
            val[s:s + step] = np.sum(Ap * A, axis=1) / m
            grad[s:s + step] = (p / m) * (Ap * np.sign(P)) @ X
        return val, grad

    return f


def _deviation_objective(X, oracle, body: ConvexBody, p: float):
    emp = _empirical_batch(X, p)

    def num(U):
        ev, eg = emp(U)
        xv, xg = oracle.value(U), oracle.grad(U)
        diff = ev - xv
        return np.abs(diff), np.sign(diff)[:, None] * (eg - xg)

    def den(U):
        g = body.gauge(U)
        return g ** p, (p * g ** (p - 1.0))[:, None] * body.gauge_grad(U)

    return ratio_objective(num, den)


def _restart_points(X, n, R, rng):
    """Interleaved starts: even slots uniform on the sphere, odd slots at sample rows.

    Each kind is drawn sequentially from its own stream, so the first R
    starts are the same whatever the total number requested.
    """
    if isinstance(rng, RngStream):
        sphere_gen, row_gen = rng.child(1).generator(), rng.child(2).generator()
    else:
        keys = as_generator(rng).integers(0, 1 << 63, size=2)
        sphere_gen, row_gen = (RngStream(int(k)).generator() for k in keys)
    n_sphere = (R + 1) // 2
    n_rows = R // 2
    G = sphere_gen.standard_normal((n_sphere, n))
    idx = row_gen.integers(0, X.shape[0], size=n_rows)
    starts = np.empty((R, n))
    starts[0::2] = G
    starts[1::2] = X[idx]
    # a zero sample row gives no direction; fall back to a basis vector
    zero = ~np.any(starts != 0, axis=1)
    starts[zero, 0] = 1.0
    return starts


def deviation_sup(sample, model: RandomVectorModel, body: ConvexBody, p: float,
                  method: str | None = None, restarts: int | None = None,
                  h: float | None = None, rng=None, tol: float = 1e-9) -> DeviationReport:
    """Estimate V_p(K) for the realized sample.

    Default dispatch: ``eig_exact`` for p = 2 on Euclidean-type bodies,
    ``net_bruteforce`` for n <= 3, otherwise ``grad_restarts`` with
    ``restarts`` (default 50 n) starts.  The last two return certified
    lower bounds.  ``v_p`` is always recomputed at the returned maximizer.
    """
    p = float(p)
    if p < 2:
        raise DomainError("deviation_sup needs p >= 2")
    X = _rows(sample)
    n = X.shape[1]
    if n != body.dim or n != model.dim:
        raise DomainError("sample, model and body dimensions differ")
    oracle = _require_oracle(model, p)
    if method is None:
        if p == 2.0 and body.euclidean_type:
            method = "eig_exact"
        elif n <= 3:
            method = "net_bruteforce"
        else:
            method = "grad_restarts"
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}")

    used = 0
    if method == "eig_exact":
        if not (p == 2.0 and body.euclidean_type):
            raise PreconditionError("eig_exact needs p = 2 and a Euclidean-type body")
        Minv = body.metric_inv
        G = Minv.T @ (X.T @ X / X.shape[0] - oracle.cov) @ Minv
        G = 0.5 * (G + G.T)
        lmin, lmax, vmin, vmax = sym_eig_extreme(G)
        v = vmax if abs(lmax) >= abs(lmin) else vmin
        y = Minv @ v
    else:
        obj = _deviation_objective(X, oracle, body, p)
        if method == "net_bruteforce":
            if n > 3:
                raise PreconditionError("net_bruteforce is limited to n <= 3")
            _, u = net_maximize(lambda U: obj(U)[0], n, h)
        else:
            used = int(restarts) if restarts is not None else 50 * n
            if used < 1:
                raise DomainError("restarts must be >= 1")
            res = ascend(obj, _restart_points(X, n, used, rng), tol=tol)
            _, u = res.best()
        y = u / body.gauge(u)
    v_p = deviation_at(X, model, y, p)
    return DeviationReport(v_p, y, method, used, p)


def sup_exact_moment(model: RandomVectorModel, body: ConvexBody, p: float, rng=None) -> float:
    """B = sup_{y in K} E|<X, y>|^p.

    Closed form for covariance-type oracles on Euclidean-type bodies,
    otherwise the same sphere machinery as the deviation.
    """
    p = float(p)
    oracle = _require_oracle(model, p)
    n = body.dim
    if oracle.kind in ("quadratic", "gaussian") and body.euclidean_type:
        Minv = body.metric_inv
        lmax = sym_eig_extreme(0.5 * (Minv.T @ oracle.cov @ Minv + (Minv.T @ oracle.cov @ Minv).T))[1]
        scale = 1.0 if oracle.kind == "quadratic" else gaussian_abs_moment(p)
        return scale * max(lmax, 0.0) ** (p / 2.0)

    def num(U):
        return oracle.value(U), oracle.grad(U)

    def den(U):
        g = body.gauge(U)
        return g ** p, (p * g ** (p - 1.0))[:, None] * body.gauge_grad(U)

    obj = ratio_objective(num, den)
    if n <= 3:
        _, u = net_maximize(lambda U: obj(U)[0], n)
    else:
        gen = as_generator(rng)
        starts = np.vstack([np.eye(n), gen.standard_normal((20 * n, n))])
        _, u = ascend(obj, starts).best()
    return oracle.exact(u / body.gauge(u))


def kappa_pm(model: RandomVectorModel, p: float, m: int, replicas: int = 1000, rng=None) -> Estimate:
    """(E max_{j<=m} |X_j|_2^p)^{1/p} over independent replicas."""
    if replicas < 1 or m < 1:
        raise DomainError("replicas and m must be >= 1")
    gen = as_generator(rng)
    return power_mean(_sampled_norms(model, int(replicas), gen, group=int(m)), p)


def kappa_from_samples(samples, p: float) -> Estimate:
    """kappa from explicit replica samples (a list of SampleMatrix or arrays)."""
    return power_mean([np.max(np.linalg.norm(_rows(s), axis=1)) for s in samples], p)


def kappa_prime(samples, body: ConvexBody, p: float) -> Estimate:
    """(E max_j |X_j|_2^2 * max_j ||X_j||_{K polar}^{p-2})^{1/p} over replica samples."""
    if p < 2:
        raise DomainError("p must be >= 2")
    vals = []
    for s in samples:
        X = _rows(s)
        a = float(np.max(np.linalg.norm(X, axis=1)))
        b = float(np.max(body.dual_gauge(X)))
        # keep the exact kappa value when the polar norm coincides with |.|_2
        vals.append(a if a == b else (a * a * b ** (p - 2.0)) ** (1.0 / p))
    return power_mean(vals, p)


def kappa_upper(model: RandomVectorModel, p: float, m: int, m_mc: int = 100_000, rng=None) -> Estimate:
    """e * (E|X|_2^s)^{1/s} with s = max(p, log m), the simple upper bound for kappa."""
    s = max(float(p), math.log(m))
    est = euclid_norm_moment(model, s, m_mc, rng)
    return Estimate(math.e * est.value, math.e * est.std_error, est.flagged)


def _mean_exp_log(a, lam, alpha):
    t = (a / lam) ** alpha
    return float(logsumexp(t)) - math.log(a.size)


def psi_alpha_norm(z, alpha: float, method: str = "mgf_bisection") -> PsiNormEstimate:
    """Empirical psi_alpha norm of a scalar sample.

    ``mgf_bisection`` solves mean(exp((|z|/lam)^alpha)) = 2 by bisection
    between the Jensen lower bracket and the max-based upper bracket.
    ``moment_ratio`` returns max_{r <= ceil(log m)} ||z||_r / r^{1/alpha},
    an equivalent (not equal) norm.
    """
    if not alpha > 0:
        raise DomainError("alpha must be > 0")
    a = np.abs(np.asarray(z, dtype=float).ravel())
    m = a.size
    if m < 1000:
        raise DomainError(f"need at least 1000 samples, got {m}")
    amax = float(np.max(a))
    if amax == 0.0:
        raise DomainError("psi norm of an all-zero sample")
    if not math.isfinite(amax):
        raise DomainError("sample has non-finite entries")
    an = a / amax  # exact under power-of-two rescaling of z

    if method == "moment_ratio":
        best, best_se = -math.inf, 0.0
        for r in range(1, max(1, math.ceil(math.log(m))) + 1):
            est = power_mean(an, r)
            v = est.value / r ** (1.0 / alpha)
            if v > best:
                best, best_se = v, est.std_error / r ** (1.0 / alpha)
        return PsiNormEstimate(alpha, amax * best, method, m, amax * best_se)
    if method != "mgf_bisection":
        raise DomainError(f"unknown method {method!r}")

    ln2 = math.log(2.0)
    lo = (float(np.mean(an ** alpha)) / ln2) ** (1.0 / alpha)
    hi = 1.0 / ln2 ** (1.0 / alpha)
    if lo >= hi:
        # constant |z|: the bracket collapses onto the exact answer
        return PsiNormEstimate(alpha, amax / ln2 ** (1.0 / alpha), method, m, 0.0)
    target = math.log(2.0)
    if not (_mean_exp_log(an, lo, alpha) >= target - 1e-12 and _mean_exp_log(an, hi, alpha) <= target + 1e-12):
        raise NumericError(f"psi bisection bracket [{lo!r}, {hi!r}] does not straddle the root")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _mean_exp_log(an, mid, alpha) > target:
            lo = mid
        else:
            hi = mid
    lam = hi
    t = (an / lam) ** alpha
    e = np.exp(t)
    slope = float(np.mean(e * t)) * alpha / lam  # -dF/dlam
    se = float(np.std(e, ddof=1)) / math.sqrt(m) / slope if slope > 0 else math.inf
    return PsiNormEstimate(alpha, amax * lam, method, m, amax * se)


def max_psi_growth(model: RandomVectorModel, delta: float, m_list, rng=None,
                   replicas: int = 1000, functional=None) -> list[dict]:
    """psi_delta norm of max_{j<=m} |Z_j| for each m, with Z = |X|_2 by default.

    ``functional`` maps a block of draws (k x n) to k scalars.  Each row
    reports the estimate, ``ratio_log`` = psi / (log m)^{1/delta} (the raw
    value at m = 1) and ``ratio_sqrt_n`` = psi / sqrt(n).
    """
    gen = as_generator(rng)
    out = []
    for m in m_list:
        m = int(m)
        if functional is None:
            maxes = _sampled_norms(model, int(replicas), gen, group=m)
        else:
            from .models import _draw

            maxes = np.empty(replicas)
            per = max(1, (1 << 16) // m)
            for s in range(0, replicas, per):
                b = min(per, replicas - s)
                vals = np.abs(np.asarray(functional(_draw(model, b * m, gen)), dtype=float))
                maxes[s:s + b] = vals.reshape(b, m).max(axis=1)
        est = psi_alpha_norm(maxes, delta)
        denom = math.log(m) ** (1.0 / delta) if m > 1 else 1.0
        out.append({
            "m": m,
            "psi": est.value,
            "std_error": est.std_error,
            "ratio_log": est.value / denom,
            "ratio_sqrt_n": est.value / math.sqrt(model.dim),
        })
    return out


def deviation_bounds(body: ConvexBody, p: float, m: int, kappa: float, B: float | None = None,
                   model: RandomVectorModel | None = None, C: float = 1.0, EV: float | None = None,
                   psi_norm: float | None = None, alpha: float | None = None,
                   c_alpha_p: float = 1.0) -> TheoremBounds:
    """Bound-side quantities, up to the caller-supplied absolute constants.

    A = C^p lam^p (log m)^{1/q*} / sqrt(m) * (D kappa)^{p/2}, the expectation
    bound is A^2 + A sqrt(B), and the tail scale is
    Q = c (EV + (log m)^{p/alpha} / m * D^p * psi^p) when EV, psi and alpha
    are given.  B is computed from ``model`` when not supplied.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    q = body.uc_power
    q_star = q / (q - 1.0)
    D = body.radius
    A = (C * body.uc_constant) ** p * math.log(m) ** (1.0 / q_star) / math.sqrt(m) * (D * kappa) ** (p / 2.0)
    if B is None and model is not None:
        B = sup_exact_moment(model, body, p)
    bound = None if B is None else A * A + A * math.sqrt(B)
    Q = None
    if EV is not None and psi_norm is not None and alpha is not None:
        Q = c_alpha_p * (EV + math.log(m) ** (p / alpha) / m * D ** p * psi_norm ** p)
    return TheoremBounds(A, B, Q, bound)
