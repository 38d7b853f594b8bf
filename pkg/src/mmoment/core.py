"""Dense linear algebra and reproducible random streams.

Everything here is deterministic: the eigen-solver is a plain Householder
tridiagonalization followed by implicit QL, and random draws come from a
counter-based generator keyed by ``(seed, stream_id)`` so independent
replicas never share state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConvergenceError, DomainError, NumericError

__all__ = [
    "RngStream",
    "as_generator",
    "sym_eig",
    "sym_eig_extreme",
    "cholesky_whiten",
    "project_sphere",
    "inv_sqrt_psd",
    "sqrt_psd",
    "Estimate",
    "power_mean",
]

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair naming one reproducible Philox stream.

    ``generator()`` always restarts the stream at counter zero, so two calls
    return identical draw sequences.  Use :meth:`child` to derive disjoint
    sub-streams for replicas, restarts and so on.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) <= _MASK64):
                raise DomainError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def generator(self) -> np.random.Generator:
        key = (int(self.seed) << 64) | int(self.stream_id)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *indices: int) -> "RngStream":
        sid = int(self.stream_id)
        for i in indices:
            sid = _splitmix64(sid ^ _splitmix64(int(i) & _MASK64))
        return RngStream(self.seed, sid)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a numpy Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return RngStream(0, 0).generator()
    return RngStream(int(rng), 0).generator()


def _check_symmetric(S) -> np.ndarray:
    S = np.array(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise DomainError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if asym > 1e-12 * scale:
        raise DomainError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (S + S.T)


def _tridiagonalize(a: np.ndarray):
    """Householder reduction a = Q T Q^T; returns (diag, subdiag, Q)."""
    n = a.shape[0]
    Q = np.eye(n)
    for k in range(n - 2):
        x = a[k + 1:, k]
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        alpha = -math.copysign(nx, x[0])
        v = x.copy()
        v[0] -= alpha
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v /= nv
        a[k + 1:, :] -= 2.0 * np.outer(v, v @ a[k + 1:, :])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ v, v)
        Q[:, k + 1:] -= 2.0 * np.outer(Q[:, k + 1:] @ v, v)
    d = np.diag(a).copy()
    e = np.zeros(n)
    if n > 1:
        e[:-1] = np.diag(a, -1)
    return d, e, Q


def _implicit_ql(d: np.ndarray, e: np.ndarray, z: np.ndarray, max_iter: int):
    """Implicit-shift QL on a symmetric tridiagonal matrix, in place.

    ``e[i]`` is the entry coupling rows i and i+1 (``e[n-1]`` unused).
    Rotations are accumulated into the columns of ``z``.
    """
    n = d.shape[0]
    eps = np.finfo(float).eps
    total = 0
    for l in range(n):
        while True:
            m = n - 1
            for mm in range(l, n - 1):
                dd = abs(d[mm]) + abs(d[mm + 1])
                if abs(e[mm]) <= eps * dd:
                    m = mm
                    break
            if m == l:
                break
            total += 1
            if total > max_iter:
                raise ConvergenceError(
                    f"implicit QL did not converge in {max_iter} iterations",
                    residual=float(np.max(np.abs(e))),
                )
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            deflated = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    deflated = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                zi = z[:, i].copy()
                z[:, i] = c * zi - s * z[:, i + 1]
                z[:, i + 1] = s * zi + c * z[:, i + 1]
            if deflated:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return d, z


def sym_eig(S) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix.

    Returns eigenvalues in ascending order and the matching unit eigenvectors
    as columns.  Each eigenvector is signed so that its largest-magnitude
    entry is positive.
    """
    a = _check_symmetric(S)
    n = a.shape[0]
    if n == 0:
        raise DomainError("empty matrix")
    d, e, Q = _tridiagonalize(a.copy())
    d, z = _implicit_ql(d, e, Q, max_iter=100 * max(n, 1))
    order = np.argsort(d, kind="stable")
    d = d[order]
    z = z[:, order]
    z /= np.linalg.norm(z, axis=0)
    idx = np.argmax(np.abs(z), axis=0)
    signs = np.sign(z[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return d, z * signs


def sym_eig_extreme(S):
    """Smallest and largest eigenpairs of a symmetric matrix.

    Returns ``(lambda_min, lambda_max, v_min, v_max)``.
    """
    w, V = sym_eig(S)
    return float(w[0]), float(w[-1]), V[:, 0].copy(), V[:, -1].copy()


def sqrt_psd(S) -> np.ndarray:
    w, V = sym_eig(S)
    if w[0] < 0:
        raise NumericError(f"matrix is not positive semi-definite (lambda_min={w[0]:.3e})")
    return (V * np.sqrt(w)) @ V.T


def inv_sqrt_psd(S) -> np.ndarray:
    w, V = sym_eig(S)
    if w[0] <= 0:
        raise NumericError(f"matrix is not positive definite (lambda_min={w[0]:.3e})")
    return (V / np.sqrt(w)) @ V.T


def cholesky_whiten(Sigma) -> np.ndarray:
    """Return W with ``W @ Sigma @ W.T == Id``.

    W is the inverse of the lower Cholesky factor of Sigma.
    """
    S = _check_symmetric(Sigma)
    lam_min = sym_eig_extreme(S)[0]
    if lam_min <= 1e-10:
        raise DomainError(f"covariance is not positive definite (lambda_min={lam_min:.3e})")
    L = np.linalg.cholesky(S)
    return solve_triangular(L, np.eye(S.shape[0]), lower=True)


def project_sphere(v) -> np.ndarray:
    """Radially project a nonzero vector onto the Euclidean unit sphere."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError("vector has non-finite entries")
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    if scale == 0.0:
        raise DomainError("cannot project the zero vector onto the sphere")
    w = v / scale
    return w / np.linalg.norm(w)


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate with its standard error."""

    value: float
    std_error: float
    flagged: bool = False

    def __float__(self):
        return float(self.value)


def power_mean(values, p: float) -> Estimate:
    """Estimate ``(E v^p)^{1/p}`` from nonnegative draws ``v``.

    Values are rescaled by their maximum before powering so large p cannot
    overflow; the standard error comes from the delta method.
    """
    v = np.asarray(values, dtype=float).ravel()
    k = v.size
    if k == 0:
        raise DomainError("no draws")
    c = float(np.max(v))
    if c == 0.0:
        return Estimate(0.0, 0.0)
    w = (v / c) ** p
    mu = float(np.mean(w))
    value = c * mu ** (1.0 / p)
    if k < 2:
        return Estimate(value, math.inf)
    se_mu = float(np.std(w, ddof=1)) / math.sqrt(k)
    se = c * mu ** (1.0 / p - 1.0) * se_mu / p
    return Estimate(value, se)
