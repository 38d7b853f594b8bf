"""Random vector models, their samplers and exact-moment oracles."""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import integrate

from .core import Estimate, RngStream, as_generator, cholesky_whiten, power_mean
from .errors import DomainError, NumericError

__all__ = [
    "KINDS",
    "RandomVectorModel",
    "SampleMatrix",
    "MomentOracle",
    "gaussian_iso",
    "rademacher_cube",
    "uniform_lq_ball",
    "laplace_iso",
    "discrete_atoms",
    "sample",
    "moment_oracle",
    "exact_pth_moment",
    "isotropize",
    "euclid_norm_moment",
    "gaussian_abs_moment",
    "lq_ball_marginal_variance",
    "load_atoms",
    "save_atoms",
]

KINDS = ("gaussian_iso", "rademacher_cube", "uniform_lq_ball", "discrete_atoms", "laplace_iso")

RADEMACHER_ENUM_MAX_DIM = 20
SAMPLE_BLOCK = 1 << 16


@dataclass(frozen=True, eq=False)
class RandomVectorModel:
    """Descriptor of a random vector X in R^n.

    ``transform`` (if set) is a linear map applied to every draw of the base
    law, so the model samples ``transform @ X_base``.
    """

    kind: str
    dim: int
    q: float | None = None
    points: np.ndarray | None = field(default=None, repr=False)
    probs: np.ndarray | None = field(default=None, repr=False)
    transform: np.ndarray | None = field(default=None, repr=False)
    isotropized: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}")
        if self.dim < 1:
            raise DomainError("dimension must be >= 1")
        if self.kind == "uniform_lq_ball" and (self.q is None or not self.q >= 1):
            raise DomainError(f"uniform_lq_ball needs q >= 1, got {self.q}")
        if self.kind == "discrete_atoms":
            pts = np.asarray(self.points, dtype=float)
            pr = np.asarray(self.probs, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != self.dim or pr.shape != (pts.shape[0],):
                raise DomainError("atoms must be an N x n array with N probabilities")
            if np.any(pr < 0) or abs(math.fsum(pr) - 1.0) > 1e-12:
                raise DomainError("atom probabilities must be nonnegative and sum to 1")
            if not np.all(np.isfinite(pts)):
                raise DomainError("atoms must be finite")

    @property
    def descriptor(self) -> str:
        if self.kind == "uniform_lq_ball":
            base = f"uniform_lq_ball(q={self.q:g})"
        elif self.kind == "discrete_atoms":
            base = f"discrete_atoms(N={len(self.probs)})"
        else:
            base = self.kind
        return base + ("+iso" if self.isotropized else "")

    def base_covariance(self) -> np.ndarray:
        n = self.dim
        if self.kind in ("gaussian_iso", "rademacher_cube", "laplace_iso"):
            return np.eye(n)
        if self.kind == "uniform_lq_ball":
            return lq_ball_marginal_variance(n, self.q) * np.eye(n)
        pts = np.asarray(self.points, dtype=float)
        return (pts * np.asarray(self.probs)[:, None]).T @ pts

    @property
    def covariance(self) -> np.ndarray:
        """Second-moment matrix E X X^T of the model."""
        S = self.base_covariance()
        if self.transform is not None:
            S = self.transform @ S @ self.transform.T
        return 0.5 * (S + S.T)


def gaussian_iso(n: int) -> RandomVectorModel:
    return RandomVectorModel("gaussian_iso", n)


def rademacher_cube(n: int) -> RandomVectorModel:
    return RandomVectorModel("rademacher_cube", n)


def uniform_lq_ball(n: int, q: float) -> RandomVectorModel:
    return RandomVectorModel("uniform_lq_ball", n, q=float(q))


def laplace_iso(n: int) -> RandomVectorModel:
    """Independent Laplace coordinates with unit variance."""
    return RandomVectorModel("laplace_iso", n)


def discrete_atoms(points, probs=None) -> RandomVectorModel:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if probs is None:
        probs = np.full(pts.shape[0], 1.0 / pts.shape[0])
    return RandomVectorModel("discrete_atoms", pts.shape[1], points=pts, probs=np.asarray(probs, dtype=float))


@dataclass(frozen=True, eq=False)
class SampleMatrix:
    """m independent draws (rows) plus the stream that produced them."""

    rows: np.ndarray
    seed_info: RngStream | None = None
    model: RandomVectorModel | None = None

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=float)
        if r.ndim != 2 or r.shape[0] < 1:
            raise DomainError("a sample needs at least one row")
        if not np.all(np.isfinite(r)):
            raise DomainError("sample rows must be finite")

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    def __neg__(self):
        return SampleMatrix(-self.rows, self.seed_info, self.model)


def _rows(sample) -> np.ndarray:
    if isinstance(sample, SampleMatrix):
        return sample.rows
    return np.atleast_2d(np.asarray(sample, dtype=float))


def _draw_base(model: RandomVectorModel, m: int, gen: np.random.Generator) -> np.ndarray:
    n = model.dim
    kind = model.kind
    if kind == "gaussian_iso":
        return gen.standard_normal((m, n))
    if kind == "rademacher_cube":
        return gen.integers(0, 2, size=(m, n)).astype(float) * 2.0 - 1.0
    if kind == "laplace_iso":
        return gen.laplace(0.0, 1.0 / math.sqrt(2.0), size=(m, n))
    if kind == "uniform_lq_ball":
        # |G|^q ~ Gamma(1/q) for density ~ exp(-|t|^q); dividing by the q-sum
        # plus an independent exponential gives the uniform law on the ball.
        q = model.q
        gam = gen.standard_gamma(1.0 / q, size=(m, n))
        signs = gen.integers(0, 2, size=(m, n)).astype(float) * 2.0 - 1.0
        expo = gen.standard_exponential(m)
        total = gam.sum(axis=1) + expo
        return signs * (gam / total[:, None]) ** (1.0 / q)
    idx = gen.choice(len(model.probs), size=m, p=model.probs)
    return model.points[idx]


def _draw(model: RandomVectorModel, m: int, gen: np.random.Generator) -> np.ndarray:
    x = _draw_base(model, m, gen)
    if model.transform is not None:
        x = x @ model.transform.T
    return x


def sample(model: RandomVectorModel, m: int, rng=None) -> SampleMatrix:
    """Draw m i.i.d. copies of X; deterministic given the stream."""
    if m < 1:
        raise DomainError("sample size must be >= 1")
    gen = as_generator(rng)
    rows = _draw(model, int(m), gen)
    return SampleMatrix(rows, rng if isinstance(rng, RngStream) else None, model)


@functools.lru_cache(maxsize=None)
def gaussian_abs_moment(p: float) -> float:
    """E|g|^p for a standard normal g, by adaptive quadrature."""
    dens = lambda t: t ** p * math.exp(-0.5 * t * t)
    val, _ = integrate.quad(dens, 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * val / math.sqrt(2.0 * math.pi)


@functools.lru_cache(maxsize=None)
def lq_ball_marginal_variance(n: int, q: float) -> float:
    """E x_1^2 for x uniform on the unit l_q ball of R^n.

    The first coordinate has density proportional to (1 - |t|^q)^((n-1)/q)
    on [-1, 1]; both integrals are done by quadrature.
    """
    a = (n - 1) / q
    w = lambda t: (1.0 - t ** q) ** a
    num, _ = integrate.quad(lambda t: t * t * w(t), 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    den, _ = integrate.quad(w, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return num / den


def _rademacher_patterns(n: int) -> np.ndarray:
    # sign patterns with first coordinate +1; |<x, y>|^p is even in x
    rest = np.array(list(itertools.product((1.0, -1.0), repeat=n - 1)), dtype=float).reshape(-1, n - 1)
    return np.hstack([np.ones((rest.shape[0], 1)), rest])


@dataclass(frozen=True, eq=False)
class MomentOracle:
    """Exact y -> E|<X, y>|^p with its gradient, batched over rows of Y."""

    p: float
    kind: str  # "quadratic", "gaussian" or "atoms"
    cov: np.ndarray | None = None
    atoms: np.ndarray | None = None
    weights: np.ndarray | None = None

    def value(self, Y) -> np.ndarray:
        Y = np.atleast_2d(Y)
        if self.kind == "atoms":
            return np.abs(Y @ self.atoms.T) ** self.p @ self.weights
        quad = np.einsum("ij,jk,ik->i", Y, self.cov, Y)
        if self.kind == "quadratic":
            return quad
        return gaussian_abs_moment(self.p) * np.maximum(quad, 0.0) ** (self.p / 2.0)

    def grad(self, Y) -> np.ndarray:
        Y = np.atleast_2d(Y)
        p = self.p
        if self.kind == "atoms":
            P = Y @ self.atoms.T
            return (p * np.sign(P) * np.abs(P) ** (p - 1.0) * self.weights) @ self.atoms
        SY = Y @ self.cov
        if self.kind == "quadratic":
            return 2.0 * SY
        quad = np.maximum(np.einsum("ij,ij->i", Y, SY), 0.0)
        scale = gaussian_abs_moment(p) * p * quad ** (p / 2.0 - 1.0)
        return scale[:, None] * SY

    def exact(self, y) -> float:
        """Single-point value with compensated summation for atom sums."""
        y = np.asarray(y, dtype=float).ravel()
        if self.kind == "atoms":
            terms = np.abs(self.atoms @ y) ** self.p * self.weights
            return math.fsum(terms)
        return float(self.value(y[None, :])[0])


def moment_oracle(model: RandomVectorModel, p: float) -> MomentOracle | None:
    """Exact-moment oracle for the model, or None when none is available."""
    p = float(p)
    T = model.transform
    if p == 2.0:
        return MomentOracle(p, "quadratic", cov=model.covariance)
    if model.kind == "gaussian_iso":
        cov = np.eye(model.dim) if T is None else T @ T.T
        return MomentOracle(p, "gaussian", cov=cov)
    if model.kind == "rademacher_cube" and model.dim <= RADEMACHER_ENUM_MAX_DIM:
        atoms = _rademacher_patterns(model.dim)
        weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
    elif model.kind == "discrete_atoms":
        keep = model.probs > 0
        atoms, weights = model.points[keep], model.probs[keep]
    else:
        return None
    if T is not None:
        atoms = atoms @ T.T
    return MomentOracle(p, "atoms", atoms=atoms, weights=weights)


def exact_pth_moment(model: RandomVectorModel, y, p: float) -> float | None:
    """E|<X, y>|^p, or None when the model has no exact oracle at this p."""
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise DomainError("y must be finite")
    oracle = moment_oracle(model, p)
    return None if oracle is None else oracle.exact(y)


def isotropize(model: RandomVectorModel, pilot_m: int = 100_000, rng=None) -> RandomVectorModel:
    """Compose the model with a map that makes its covariance the identity.

    Uniform l_q balls use the exact scalar factor from the marginal variance;
    everything else is whitened with the Cholesky factor of a pilot
    second-moment estimate.
    """
    n = model.dim
    if model.kind == "uniform_lq_ball" and model.transform is None:
        factor = 1.0 / math.sqrt(lq_ball_marginal_variance(n, model.q))
        return replace(model, transform=factor * np.eye(n), isotropized=True)
    if pilot_m < n:
        raise DomainError("pilot sample must have at least n rows")
    gen = as_generator(rng)
    x = _draw(model, int(pilot_m), gen)
    cov = x.T @ x / x.shape[0]
    try:
        W = cholesky_whiten(cov)
    except DomainError as exc:
        raise NumericError(f"pilot covariance is not positive definite: {exc}") from exc
    T = W if model.transform is None else W @ model.transform
    return replace(model, transform=T, isotropized=True)


def _sampled_norms(model: RandomVectorModel, count: int, gen: np.random.Generator, group: int = 1) -> np.ndarray:
    """Euclidean norms of ``count * group`` draws, reduced by max over groups."""
    out = np.empty(count)
    per_block = max(1, SAMPLE_BLOCK // group)
    done = 0
    while done < count:
        b = min(per_block, count - done)
        norms = np.linalg.norm(_draw(model, b * group, gen), axis=1)
        out[done:done + b] = norms.reshape(b, group).max(axis=1)
        done += b
    return out


def euclid_norm_moment(model: RandomVectorModel, s: float, m_mc: int = 100_000, rng=None) -> Estimate:
    """Monte Carlo estimate of (E|X|_2^s)^{1/s}.

    The result is flagged when s exceeds 2*sqrt(n), outside the regime where
    the norm moments of isotropic log-concave vectors stay comparable.
    """
    if s < 1:
        raise DomainError("s must be >= 1")
    gen = as_generator(rng)
    est = power_mean(_sampled_norms(model, int(m_mc), gen), s)
    return Estimate(est.value, est.std_error, flagged=s > 2.0 * math.sqrt(model.dim))


def load_atoms(path) -> RandomVectorModel:
    """Read a discrete_atoms model: header "N n", then N lines "x_1 .. x_n prob"."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise DomainError(f"{path}: empty atoms file")
    try:
        N, n = (int(t) for t in lines[0].split())
        rows = np.array([[float(t) for t in ln.split()] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{path}: malformed atoms file ({exc})") from exc
    if rows.shape != (N, n + 1):
        raise DomainError(f"{path}: expected {N} rows of {n + 1} numbers")
    return discrete_atoms(rows[:, :n], rows[:, n])


def save_atoms(model: RandomVectorModel, path) -> None:
    if model.kind != "discrete_atoms":
        raise DomainError("only discrete_atoms models can be saved")
    pts = model.points if model.transform is None else model.points @ model.transform.T
    lines = [f"{pts.shape[0]} {pts.shape[1]}"]
    for row, pr in zip(pts, model.probs):
        lines.append(" ".join(repr(float(v)) for v in row) + " " + repr(float(pr)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
