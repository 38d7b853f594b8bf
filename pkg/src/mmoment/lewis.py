"""Lewis decompositions of subspaces of l_p^N and sampled double embeddings.

For a subspace spanned by the columns of A (N x n) the Lewis weights are
the fixed point w_i = (a_i^T M^{-1} a_i)^{p/2} with M = A^T W^{1-2/p} A.
With T = M^{1/2}, b_i = T^{-1} a_i, c_i = |b_i|^p and y_i = b_i / |b_i| one
gets sum_i c_i y_i y_i^T = Id and, for z = T x,
||A x||_p^p = sum_i c_i |<z, y_i>|^p.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .core import RngStream, as_generator, sqrt_psd, sym_eig
from .errors import ConvergenceError, DomainError
from .optimize import ascend, net_maximize, ratio_objective

__all__ = [
    "Subspace",
    "LewisDecomposition",
    "EmbeddingReport",
    "lewis_weights",
    "lewis_step",
    "embed_sample",
    "calibrated_sample_size",
    "verify_double_embedding",
    "load_subspace",
    "save_subspace",
    "load_decomposition",
    "save_decomposition",
]

WEIGHT_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class Subspace:
    basis: np.ndarray
    p: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.basis, dtype=float))
        object.__setattr__(self, "basis", A)
        if not self.p >= 2:
            raise DomainError(f"Lewis decompositions need p >= 2, got {self.p}")
        N, n = A.shape
        if N < n or n < 1:
            raise DomainError(f"basis must be N x n with N >= n >= 1, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise DomainError("basis has non-finite entries")
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] < 1e-10 * s[0]:
            raise DomainError(f"basis is rank deficient (singular values {s[0]:.3e} .. {s[-1]:.3e})")

    @property
    def N(self) -> int:
        return self.basis.shape[0]

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    def norm(self, x):
        """l_p^N norm of A x for each row of x."""
        return np.sum(np.abs(np.atleast_2d(x) @ self.basis.T) ** self.p, axis=-1) ** (1.0 / self.p)


@dataclass(frozen=True, eq=False)
class LewisDecomposition:
    weights: np.ndarray  # c_i
    vectors: np.ndarray  # y_i as rows
    change_of_basis: np.ndarray  # T, original coordinates -> H coordinates
    p: float
    iterations: int = 0
    residual: float = 0.0

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    @property
    def N(self) -> int:
        return self.vectors.shape[0]

    def basis(self) -> np.ndarray:
        """Recover the basis rows a_i = T b_i with b_i = c_i^{1/p} y_i."""
        return (self.vectors * self.weights[:, None] ** (1.0 / self.p)) @ self.change_of_basis.T

    def e_norm(self, z):
        """(sum_i c_i |<z, y_i>|^p)^{1/p} for H-coordinate rows z."""
        P = np.abs(np.atleast_2d(z) @ self.vectors.T)
        return (P ** self.p @ self.weights) ** (1.0 / self.p)

    def invariants(self, subspace: Subspace | None = None, probes: int = 64, rng=None) -> dict:
        """Residuals of the four defining properties (all should be tiny)."""
        c, Y = self.weights, self.vectors
        pos = c > 0
        unit = float(np.max(np.abs(np.linalg.norm(Y[pos], axis=1) - 1.0))) if pos.any() else 0.0
        ident = float(np.max(np.abs((Y * c[:, None]).T @ Y - np.eye(self.n))))
        trace = abs(math.fsum(c) - self.n)
        A = subspace.basis if subspace is not None else self.basis()
        gen = as_generator(rng)
        x = gen.standard_normal((probes, self.n))
        ref = np.sum(np.abs(x @ A.T) ** self.p, axis=1) ** (1.0 / self.p)
        got = self.e_norm(x @ self.change_of_basis.T)
        recon = float(np.max(np.abs(got - ref) / ref))
        return {"unit_norm": unit, "identity": ident, "trace": trace, "reconstruction": recon}


def _leverage(A, w, p):
    """a_i^T M^{-1} a_i with M = A^T diag(w^{1-2/p}) A, plus the Cholesky factor of M."""
    n = A.shape[1]
    M = A.T @ (A * (w ** (1.0 - 2.0 / p))[:, None])
    M = 0.5 * (M + M.T)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        M = M + 1e-12 * np.trace(M) / n * np.eye(n)
        L = np.linalg.cholesky(M)
    B = solve_triangular(L, A.T, lower=True)
    return np.sum(B * B, axis=0), M


def lewis_step(A, w, p):
    """One undamped application of the fixed-point map."""
    lev, _ = _leverage(np.asarray(A, dtype=float), np.asarray(w, dtype=float), p)
    return np.maximum(lev, 0.0) ** (p / 2.0)


def lewis_weights(S: Subspace, tol: float = 1e-12, max_iter: int = 10_000) -> LewisDecomposition:
    """Lewis decomposition of the subspace by damped fixed-point iteration.

    In log space the update is v <- (1 - theta) v + theta log T(v) with
    theta = min(1, 2/p), i.e. the geometric mean of the old weights and the
    map's output.  Stops when the largest relative weight change is <= tol.
    """
    A, p = S.basis, float(S.p)
    N, n = A.shape
    theta = min(1.0, 2.0 / p)
    w = np.full(N, n / N)
    resid = math.inf
    it = 0
    while it < max_iter:
        it += 1
        t = np.maximum(lewis_step(A, w, p), WEIGHT_FLOOR)
        new = np.exp((1.0 - theta) * np.log(w) + theta * np.log(t))
        resid = float(np.max(np.abs(new - w) / w))
        w = new
        if resid <= tol:
            break
    else:
        raise ConvergenceError(f"Lewis iteration did not converge in {max_iter} steps", residual=resid)

    _, M = _leverage(A, w, p)
    T = sqrt_psd(M)
    vals, V = sym_eig(M)
    B = A @ ((V / np.sqrt(vals)) @ V.T)  # rows b_i = M^{-1/2} a_i
    nb = np.linalg.norm(B, axis=1)
    c = nb ** p
    Y = np.zeros_like(B)
    nz = nb > 0
    Y[nz] = B[nz] / nb[nz, None]
    return LewisDecomposition(c, Y, T, p, it, resid)


@dataclass
class EmbeddingReport:
    m: int
    eps_E: float
    eps_H: float
    eps_H_quadratic: float  # max |eig(S_hat - sum c_i y_i y_i^T)|
    eps_E_grad: float
    eps_E_net: float | None = None
    counts: np.ndarray | None = field(default=None, repr=False)


def _atom_power_sum(Y, w, p):
    def f(U):
        P = U @ Y.T
        A = np.abs(P)
        Ap = A ** (p - 1.0)
        return (Ap * A) @ w, p * (Ap * np.sign(P) * w) @ Y

    return f


def _ratio_extremes(Y, wt, c, p, n, gen, net: bool):
    """Largest and smallest of (sum wt|<u,y>|^p / sum c|<u,y>|^p)^{1/p} over the sphere.

    Returns ((r_max, r_min) from gradient ascent, (r_max, r_min) from the net or None).
    """
    used = wt > 0
    F = _atom_power_sum(Y[used], wt[used], p)
    G = _atom_power_sum(Y[c > 0], c[c > 0], p)
    spans = np.linalg.matrix_rank(Y[used]) == n if used.any() else False
    up = ratio_objective(F, G)
    down = ratio_objective(G, F)
    R = 50 * n
    starts = np.vstack([gen.standard_normal((R - min(R // 2, used.sum()), n)),
                        Y[used][gen.permutation(int(used.sum()))[: R // 2]]])
    hi = ascend(up, starts).best()[0] ** (1.0 / p)
    lo = 0.0 if not spans else ascend(down, starts).best()[0] ** (-1.0 / p)
    net_res = None
    if net:
        nhi = net_maximize(lambda U: up(U)[0], n)[0] ** (1.0 / p)
        nlo = 0.0 if not spans else net_maximize(lambda U: down(U)[0], n)[0] ** (-1.0 / p)
        net_res = (nhi, nlo)
    return (hi, lo), net_res


def embed_sample(L: LewisDecomposition, m: int, rng=None, mode: str = "iid") -> EmbeddingReport:
    """Sample m atoms y_i with probabilities c_i / n and measure both distortions.

    ``mode="stratified"`` takes round(m c_i / n) copies of each atom instead
    (a near-exact reference); the effective m is then the total count.
    The p-distortion uses the sphere optimizer, plus the angular net when
    n <= 3 (the larger of the two is reported).  The 2-distortion is
    spectral and exact: max |sqrt(lambda) - 1| over eigenvalues of
    (n/m) sum_j x_j x_j^T.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    n, p = L.n, L.p
    c, Y = L.weights, L.vectors
    probs = c / c.sum()
    gen = as_generator(rng)
    if mode == "iid":
        counts = gen.multinomial(int(m), probs)
    elif mode == "stratified":
        counts = np.rint(m * c / n).astype(np.int64)
        if counts.sum() == 0:
            raise DomainError("stratified mode needs m large enough to keep some atom")
    else:
        raise DomainError(f"unknown mode {mode!r}")
    m_eff = int(counts.sum())
    wt = n * counts / m_eff

    S_hat = (Y * wt[:, None]).T @ Y
    lam = sym_eig(S_hat)[0]
    eps_H = float(np.max(np.abs(np.sqrt(np.maximum(lam, 0.0)) - 1.0)))
    exact = (Y * c[:, None]).T @ Y
    dev = sym_eig(0.5 * (S_hat - exact + (S_hat - exact).T))[0]
    eps_H_q = float(max(abs(dev[0]), abs(dev[-1])))

    (hi, lo), net_res = _ratio_extremes(Y, wt, c, p, n, gen, net=n <= 3)
    eps_grad = max(hi - 1.0, 1.0 - lo)
    eps_net = None if net_res is None else max(net_res[0] - 1.0, 1.0 - net_res[1])
    eps_E = eps_grad if eps_net is None else max(eps_grad, eps_net)
    return EmbeddingReport(m_eff, eps_E, eps_H, eps_H_q, eps_grad, eps_net, counts)


def calibrated_sample_size(n: int, p: float, eps: float, k_hat: float) -> int:
    """round(k_hat eps^-2 n^{p/2} log(n / eps^{4/p})^{2/p*}), with the log floored at 1."""
    p_star = p / (p - 1.0)
    lg = max(math.log(n / eps ** (4.0 / p)), 1.0)
    return max(1, int(round(k_hat * eps ** -2 * n ** (p / 2.0) * lg ** (2.0 / p_star))))


def verify_double_embedding(S, eps: float, replicas: int, rng=None, k_hats=(1, 4, 16),
                      m_override=None) -> list[dict]:
    """Success fractions of the double embedding at calibrated sample sizes.

    ``S`` is a Subspace or an existing LewisDecomposition.  For each k_hat
    (or each explicit m in ``m_override``) runs ``replicas`` independent
    embeddings and reports the fraction with both distortions <= eps,
    together with median distortions.
    """
    L = S if isinstance(S, LewisDecomposition) else lewis_weights(S)
    base = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(0, 1 << 63)))
    plan = [(None, int(m)) for m in m_override] if m_override is not None else \
        [(k, calibrated_sample_size(L.n, L.p, eps, k)) for k in k_hats]
    out = []
    for idx, (k, m) in enumerate(plan):
        reps = [embed_sample(L, m, base.child(idx, r)) for r in range(replicas)]
        e_E = np.array([r.eps_E for r in reps])
        e_H = np.array([r.eps_H for r in reps])
        out.append({
            "k_hat": k,
            "m": m,
            "success": float(np.mean((e_E <= eps) & (e_H <= eps))),
            "median_eps_E": float(np.median(e_E)),
            "median_eps_H": float(np.median(e_H)),
            "eps_E": e_E,
            "eps_H": e_H,
        })
    return out


def _read_rows(lines, k, width, what):
    rows = []
    for _ in range(k):
        try:
            vals = [float(t) for t in next(lines).split()]
        except StopIteration:
            raise DomainError(f"{what}: file ended early") from None
        if len(vals) != width:
            raise DomainError(f"{what}: expected {width} values per row, got {len(vals)}")
        rows.append(vals)
    return np.array(rows, dtype=float).reshape(k, width)


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        return iter([ln for ln in fh.read().splitlines() if ln.strip()])


def _header(lines, what):
    try:
        N, n, p = next(lines).split()
        return int(N), int(n), float(p)
    except (StopIteration, ValueError):
        raise DomainError(f"{what}: header must be 'N n p'") from None


def load_subspace(path) -> Subspace:
    """Text format: "N n p" then N rows of n reals."""
    lines = _lines(path)
    N, n, p = _header(lines, "subspace")
    return Subspace(_read_rows(lines, N, n, "subspace"), p)


def save_subspace(S: Subspace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{S.N} {S.n} {S.p!r}\n")
        for row in S.basis:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_decomposition(L: LewisDecomposition, path) -> None:
    """Header "N n p", N rows of y_i, one line of weights, n rows of the change of basis."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{L.N} {L.n} {float(L.p)!r}\n")
        for row in L.vectors:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(" ".join(repr(float(v)) for v in L.weights) + "\n")
        for row in L.change_of_basis:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_decomposition(path) -> LewisDecomposition:
    lines = _lines(path)
    N, n, p = _header(lines, "decomposition")
    Y = _read_rows(lines, N, n, "decomposition vectors")
    c = _read_rows(lines, 1, N, "decomposition weights")[0]
    T = _read_rows(lines, n, n, "decomposition change of basis")
    return LewisDecomposition(c, Y, T, p)
