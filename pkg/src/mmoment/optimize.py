"""Maximization of scale-invariant objectives over the unit sphere.

Two independent routes: a batched projected-gradient ascent with
Barzilai-Borwein steps and Armijo backtracking, and a brute-force angular
net (n <= 3) polished by Nelder-Mead on the angles.  The net never touches
gradients, so it serves as an oracle for the ascent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError

__all__ = ["AscentResult", "ascend", "ratio_objective", "sphere_net", "net_maximize", "angles_to_sphere"]


@dataclass
class AscentResult:
    values: np.ndarray  # final objective per start
    points: np.ndarray  # final unit vectors, one row per start
    iterations: np.ndarray
    converged: np.ndarray

    def best(self):
        i = int(np.argmax(self.values))
        return float(self.values[i]), self.points[i].copy()


def _normalize(U):
    s = np.max(np.abs(U), axis=1, keepdims=True)
    s[s == 0] = 1.0
    U = U / s
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def ratio_objective(num, den):
    """Combine (value, grad) callables into phi = num / den with its gradient."""

    def obj(U):
        a, ga = num(U)
        b, gb = den(U)
        phi = a / b
        return phi, (ga - phi[:, None] * gb) / b[:, None]

    return obj


def ascend(objective, starts, tol: float = 1e-9, max_iter: int = 3000,
           armijo: float = 1e-4, max_backtrack: int = 60) -> AscentResult:
    """Maximize a degree-zero objective from each row of ``starts``.

    ``objective(U)`` takes a k x n array of unit rows and returns values (k,)
    and gradients (k, n).  Rows are optimized independently (batched only
    for speed), so the result for a start never depends on the others.
    A row stops when its tangential gradient norm is at most
    ``tol * max(1, |value|)``, when backtracking cannot find an ascent step,
    or when an accepted step leaves the value unchanged (in the last two
    cases the value is stationary to working precision).
    """
    U = _normalize(np.atleast_2d(np.asarray(starts, dtype=float)))
    k = U.shape[0]
    val, g = objective(U)
    g = g - np.sum(g * U, axis=1, keepdims=True) * U
    gn = np.linalg.norm(g, axis=1)
    iters = np.zeros(k, dtype=int)
    done = gn <= tol * np.maximum(1.0, np.abs(val))
    converged = done.copy()
    step = np.where(gn > 0, 0.1 / np.maximum(gn, 1e-300), 1.0)

    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        Ua, ga, va, ta = U[act], g[act], val[act], step[act]
        accepted = np.zeros(act.size, dtype=bool)
        newU = Ua.copy()
        newv = va.copy()
        newg = ga.copy()
        pending = np.arange(act.size)
        for _bt in range(max_backtrack):
            if pending.size == 0:
                break
            trial = _normalize(Ua[pending] + ta[pending, None] * ga[pending])
            tv, tg = objective(trial)
            gain = np.sum(ga[pending] * (trial - Ua[pending]), axis=1)
            ok = (tv >= va[pending] + armijo * gain) & np.isfinite(tv)
            idx = pending[ok]
            newU[idx], newv[idx], newg[idx] = trial[ok], tv[ok], tg[ok]
            accepted[idx] = True
            pending = pending[~ok]
            ta[pending] *= 0.5
        iters[act] += 1
        # rows with no ascent step left are stationary at working precision
        stalled = act[~accepted]
        done[stalled] = True
        converged[stalled] = True

        idx = np.flatnonzero(accepted)
        rows = act[idx]
        nu, nv = newU[idx], newv[idx]
        ng = newg[idx] - np.sum(newg[idx] * nu, axis=1, keepdims=True) * nu
        s = nu - Ua[idx]
        y = ng - ga[idx]
        sy = -np.sum(s * y, axis=1)
        ss = np.sum(s * s, axis=1)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 2.0 * ta[idx])
        step[rows] = np.clip(bb, 1e-12 * ta[idx], 1e12 * ta[idx])
        U[rows], val[rows], g[rows] = nu, nv, ng
        fin = np.linalg.norm(ng, axis=1) <= tol * np.maximum(1.0, np.abs(nv))
        # an accepted step that does not raise the value: the gradient sits
        # at its rounding floor, which can exceed tol near sharp maxima
        fin |= nv <= va[idx]
        done[rows[fin]] = True
        converged[rows[fin]] = True
    return AscentResult(val, U, iters, converged)


def angles_to_sphere(theta) -> np.ndarray:
    """Map angle tuples to unit vectors: n=2 uses (theta,), n=3 uses (polar, azimuth)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[1] == 1:
        t = theta[:, 0]
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    t, f = theta[:, 0], theta[:, 1]
    return np.stack([np.sin(t) * np.cos(f), np.sin(t) * np.sin(f), np.cos(t)], axis=1)


def sphere_net(n: int, h: float):
    """Angular grid covering the sphere up to sign, and its angle coordinates."""
    if n == 1:
        return np.ones((1, 1)), np.zeros((1, 0))
    if n == 2:
        th = np.arange(0.0, math.pi, h)[:, None]
        return angles_to_sphere(th), th
    if n == 3:
        pol = np.linspace(0.0, math.pi, int(math.ceil(math.pi / h)) + 1)
        azi = np.arange(0.0, math.pi, h)
        P, A = np.meshgrid(pol, azi, indexing="ij")
        ang = np.stack([P.ravel(), A.ravel()], axis=1)
        return angles_to_sphere(ang), ang
    raise DomainError(f"angular nets are only provided for n <= 3, got n={n}")


def net_maximize(values, n: int, h: float | None = None, polish: int = 8):
    """Maximize an even, scale-free function of unit vectors by net search.

    ``values(U)`` returns one value per row.  The best ``polish`` grid points
    are refined with Nelder-Mead on the angle coordinates.  Returns
    ``(value, unit_vector)``.
    """
    if h is None:
        h = 1e-4 if n == 2 else 0.02
    pts, ang = sphere_net(n, h)
    v = values(pts)
    best = int(np.argmax(v))
    best_val, best_u = float(v[best]), pts[best].copy()
    if n == 1:
        return best_val, best_u
    order = np.argsort(-v, kind="stable")
    chosen = []
    for i in order:
        # spread the polish starts so they do not all sit in one basin
        if all(np.max(np.abs(ang[i] - ang[j])) > 3 * h for j in chosen):
            chosen.append(i)
        if len(chosen) >= polish:
            break
    f = lambda a: -float(values(angles_to_sphere(a[None, :]))[0])
    for i in chosen:
        simplex = np.vstack([ang[i], ang[i] + h * np.eye(n - 1)])
        res = minimize(f, ang[i], method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": 1e-12,
                                "fatol": 1e-16, "maxiter": 4000, "maxfev": 8000})
        if -res.fun > best_val:
            best_val = float(-res.fun)
            best_u = angles_to_sphere(res.x[None, :])[0]
    return best_val, best_u
