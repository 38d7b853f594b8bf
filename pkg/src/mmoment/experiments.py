"""Scenario runners turning an ExperimentConfig into ResultRows.

Every task (one replica, one fuzz suite, ...) owns an RngStream derived
from the config seed and the task's indices, so output does not depend on
the number of worker threads.  Aggregate rows use replica = -1.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass

import numpy as np

from . import geometry as geo
from . import models as mdl
from .core import RngStream, power_mean, sym_eig_extreme
from .deviation import (deviation_sup, kappa_upper, psi_alpha_norm, sup_exact_moment,
                        deviation_bounds, _empirical_batch)
from .errors import ConfigError, DomainError, NumericError, PropertyViolation
from .lewis import (Subspace, embed_sample, lewis_weights, load_subspace,
                    calibrated_sample_size)
from .optimize import ascend, net_maximize, ratio_objective

COLUMNS = ("scenario", "model", "body", "n", "p", "m", "replica", "seed",
           "metric_name", "metric_value", "std_error", "runtime_ms")
_SCENARIO_IDS = {"deviation": 1, "tail": 2, "lewis": 3, "psi2": 4, "norms": 5, "fuzz": 6}


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    model: str
    body: str
    n: int
    p: float
    m: int
    replica: int
    seed: int
    metric_name: str
    metric_value: float
    std_error: float
    runtime_ms: float


class ScenarioError(Exception):
    """Carries the rows produced before a failure together with an exit code."""

    def __init__(self, message, rows, code):
        super().__init__(message)
        self.rows = rows
        self.code = code


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in astuple(r)])


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def _sort_key(r: ResultRow):
    # p is nan on rows that do not depend on it; keep those first
    p = (0, 0.0) if math.isnan(r.p) else (1, r.p)
    return (r.n, p, r.m, r.replica, r.metric_name)


def _stream(cfg, *idx) -> RngStream:
    return RngStream(cfg.seed).child(_SCENARIO_IDS[cfg.scenario], *[int(i) for i in idx])


def _p_index(cfg, p):
    return cfg.p.index(p) if p in cfg.p else 0


def _build_model(cfg, n):
    if cfg.model == "gaussian_iso":
        return mdl.gaussian_iso(n)
    if cfg.model == "rademacher_cube":
        return mdl.rademacher_cube(n)
    if cfg.model == "laplace_iso":
        return mdl.laplace_iso(n)
    if cfg.model == "uniform_lq_ball":
        return mdl.isotropize(mdl.uniform_lq_ball(n, cfg.q))
    model = mdl.load_atoms(cfg.path(cfg.atoms_file))
    if model.dim != n:
        raise ConfigError(f"atoms_file has dimension {model.dim}, config n = {n}")
    return model


def _build_body(cfg, n):
    kind = (cfg.body or "euclid_ball").split(":", 1)[0]
    if kind == "euclid_ball":
        return geo.euclid_ball(n)
    if kind == "lq_ball":
        return geo.lq_ball(n, cfg.q)
    diag = [float(t) for t in cfg.body.split(":", 1)[1].split(",")]
    return geo.ellipsoid(np.diag(diag))


def _model_name(cfg):
    if cfg.model == "uniform_lq_ball":
        return f"uniform_lq_ball(q={cfg.q:g})"
    return cfg.model or ""


def _body_name(cfg):
    if cfg.body and cfg.body.startswith("lq_ball"):
        return f"lq_ball(q={cfg.q:g})"
    return cfg.body or ""


class _Rows:
    """Row factory bound to one (n, p, m) cell of a scenario."""

    def __init__(self, cfg, n=0, p=float("nan"), m=0):
        self.cfg, self.n, self.p, self.m = cfg, n, p, m

    def __call__(self, replica, name, value, se=0.0, ms=0.0, m=None):
        value = float(value)
        if not math.isfinite(value):
            raise NumericError(f"non-finite value for metric {name}")
        c = self.cfg
        return ResultRow(c.scenario, _model_name(c), _body_name(c), int(self.n), float(self.p),
                         int(self.m if m is None else m), int(replica), int(c.seed), name, value,
                         float(se), round(float(ms), 3))


def _ms(t0):
    return (time.perf_counter() - t0) * 1e3


def _run_tasks(cfg, tasks):
    """Run zero-argument callables on a pool; results keep task order."""
    if cfg.threads <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _cells(cfg):
    for n in cfg.n:
        for p in cfg.p:
            yield n, p


# ---------------------------------------------------------------- deviation


def _deviation_replica(cfg, model, body, n, p, m, r):
    t0 = time.perf_counter()
    rs = _stream(cfg, n, _p_index(cfg, p), m, r)
    S = mdl.sample(model, m, rs.child(0))
    rep = deviation_sup(S, model, body, p, rng=rs.child(1))
    kap = float(np.max(np.linalg.norm(S.rows, axis=1)))
    return rep, kap, _ms(t0)


def run_deviation(cfg):
    rows = []
    for n, p in _cells(cfg):
        model, body = _build_model(cfg, n), _build_body(cfg, n)
        B = sup_exact_moment(model, body, p, rng=_stream(cfg, n, _p_index(cfg, p), 0, 1 << 32))
        for m in cfg.m_list:
            R = _Rows(cfg, n, p, m)
            tasks = [lambda r=r: _deviation_replica(cfg, model, body, n, p, m, r) for r in range(cfg.replicas)]
            results = _run_tasks(cfg, tasks)
            C = cfg.constants["C"]
            for r, (rep, kap, ms) in enumerate(results):
                rows.append(R(r, "V_p", rep.v_p, ms=ms))
                rows.append(R(r, "kappa_pm", kap))
                rows.append(R(r, "A", deviation_bounds(body, p, m, kap, B=B, C=C).A))
                rows.append(R(r, "B", B))
                for k, v in enumerate(rep.maximizer):
                    rows.append(R(r, f"maximizer_{k}", v))
            t0 = time.perf_counter()
            v = np.array([res[0].v_p for res in results])
            kap = power_mean([res[1] for res in results], p)
            tb = deviation_bounds(body, p, m, kap.value, B=B, C=C)
            se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
            rows += [
                R(-1, "V_p_mean", float(np.mean(v)), se),
                R(-1, "V_p_median", float(np.median(v))),
                R(-1, "V_p_q90", float(np.quantile(v, 0.9))),
                R(-1, "kappa_pm", kap.value, kap.std_error),
                R(-1, "A", tb.A),
                R(-1, "bound", tb.bound, ms=_ms(t0)),
            ]
    return rows


# --------------------------------------------------------------------- tail


def survival_fit(v, grid_size: int = 50):
    """Empirical survival on a grid and a fit of the excess-over-median shape.

    For t above the median the points log(-log(2 S(t))) are regressed on
    log(t - median); the slope is the fitted shape exponent and
    Q_hat = exp(-intercept / slope).  Points with fewer than 5 exceedances
    are dropped.  Returns (grid, survival, shape, Q_hat, r2).
    """
    v = np.sort(np.asarray(v, dtype=float))
    k = v.size
    grid = np.linspace(0.0, float(v[-1]), grid_size)
    surv = 1.0 - np.searchsorted(v, grid, side="left") / k
    med = float(np.median(v))
    mask = (grid > med) & (surv * k >= 5) & (2 * surv < 1)
    if mask.sum() < 3:
        return grid, surv, math.nan, math.nan, math.nan
    x = np.log(grid[mask] - med)
    y = np.log(-np.log(2 * surv[mask]))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    r2 = 1.0 - float(np.sum(resid ** 2)) / max(float(np.sum((y - y.mean()) ** 2)), 1e-300)
    return grid, surv, float(slope), float(math.exp(-icpt / slope)), r2


def run_tail(cfg):
    rows = []
    for n, p in _cells(cfg):
        model, body = _build_model(cfg, n), _build_body(cfg, n)
        for m in cfg.m_list:
            R = _Rows(cfg, n, p, m)
            tasks = [lambda r=r: _deviation_replica(cfg, model, body, n, p, m, r) for r in range(cfg.replicas)]
            results = _run_tasks(cfg, tasks)
            v = np.array([res[0].v_p for res in results])
            for r, (rep, _, ms) in enumerate(results):
                rows.append(R(r, "V_p", rep.v_p, ms=ms))
            t0 = time.perf_counter()
            grid, surv, shape, Q, r2 = survival_fit(v)
            for i, (t, s) in enumerate(zip(grid, surv)):
                rows.append(R(-1, f"t[{i:02d}]", t))
                rows.append(R(-1, f"survival[{i:02d}]", s))
            if math.isfinite(shape):
                rows += [R(-1, "fit_shape", shape), R(-1, "fit_Q", Q), R(-1, "fit_r2", r2),
                         R(-1, "predicted_shape", cfg.alpha / p)]
            rows.append(R(-1, "EV", float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size)), _ms(t0)))
    return rows


# -------------------------------------------------------------------- lewis


def _subspace(cfg):
    source = cfg.subspace_file
    if source == "identity":
        return Subspace(np.eye(cfg.n[0]), cfg.p[0])
    if source.startswith("circle:"):
        N = int(source.split(":", 1)[1])
        ang = np.arange(N) * math.pi / N
        return Subspace(np.column_stack([np.cos(ang), np.sin(ang)]), cfg.p[0])
    if source.startswith("random:"):
        N = int(source.split(":", 1)[1])
        gen = _stream(cfg, 0, 0, 0, 0).generator()
        return Subspace(gen.standard_normal((N, cfg.n[0])), cfg.p[0])
    S = load_subspace(cfg.path(source))
    if cfg.p and cfg.p[0] != S.p:
        raise ConfigError(f"subspace file has p = {S.p:g}, config p = {cfg.p[0]:g}")
    return S


def _embed_task(cfg, L, idx, m, r):
    t0 = time.perf_counter()
    rep = embed_sample(L, m, _stream(cfg, L.n, idx, m, r))
    return rep, _ms(t0)


def run_lewis(cfg):
    S = _subspace(cfg)
    n, p = S.n, S.p
    rows = []
    R0 = _Rows(cfg, n, p, 0)
    t0 = time.perf_counter()
    try:
        L = lewis_weights(S)
    except NumericError as exc:
        res = getattr(exc, "residual", None)
        rows.append(R0(-1, "solver_error_residual", res if res is not None and math.isfinite(res) else -1.0))
        raise ScenarioError(str(exc), rows, 3) from exc
    rows.append(R0(-1, "iterations", L.iterations, ms=_ms(t0)))
    for k, v in L.invariants(S).items():
        rows.append(R0(-1, f"invariant_{k}", v))
    for i, c in enumerate(L.weights):
        rows.append(R0(-1, f"weight[{i:03d}]", c))
    if cfg.m_list:
        plan = [(None, m) for m in cfg.m_list]
    else:
        plan = [(k, calibrated_sample_size(n, p, cfg.eps, k)) for k in (1, 4, 16)]
    for idx, (k, m) in enumerate(plan):
        R = _Rows(cfg, n, p, m)
        tasks = [lambda r=r: _embed_task(cfg, L, idx, m, r) for r in range(cfg.replicas)]
        results = _run_tasks(cfg, tasks)
        eE = np.array([res[0].eps_E for res in results])
        eH = np.array([res[0].eps_H for res in results])
        for r, (rep, ms) in enumerate(results):
            rows.append(R(r, "eps_E", rep.eps_E, ms=ms))
            rows.append(R(r, "eps_H", rep.eps_H))
        if k is not None:
            rows.append(R(-1, "k_hat", k))
        rows += [R(-1, "median_eps_E", float(np.median(eE))),
                 R(-1, "median_eps_H", float(np.median(eH))),
                 R(-1, "success_fraction", float(np.mean((eE <= cfg.eps) & (eH <= cfg.eps))))]
    return rows


# --------------------------------------------------------------------- psi2


def sphere_extremes(X, p, rng=None):
    """max and min over the unit sphere of (1/m sum_j |<X_j, u>|^p)^{1/p}.

    Exact (spectral) at p = 2 and in dimension one; otherwise gradient
    ascent from 50 n starts, plus the angular net when n <= 3.
    """
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    if n == 1:
        v = (math.fsum(np.abs(X[:, 0]) ** p) / m) ** (1.0 / p)
        return v, v
    if p == 2.0:
        lmin, lmax, _, _ = sym_eig_extreme(X.T @ X / m)
        return math.sqrt(max(lmax, 0.0)), math.sqrt(max(lmin, 0.0))
    emp = _empirical_batch(X, p)

    def sph(U):
        r = np.sum(U * U, axis=1)
        return r ** (p / 2.0), (p * r ** (p / 2.0 - 1.0))[:, None] * U

    up, down = ratio_objective(emp, sph), ratio_objective(sph, emp)
    gen = rng.generator() if isinstance(rng, RngStream) else np.random.default_rng(rng)
    starts = np.vstack([gen.standard_normal((25 * n, n)), X[gen.integers(0, m, 25 * n)]])
    starts[~np.any(starts != 0, axis=1), 0] = 1.0
    hi = ascend(up, starts).best()[0]
    lo_inv = ascend(down, starts).best()[0]
    if n <= 3:
        hi = max(hi, net_maximize(lambda U: up(U)[0], n)[0])
        lo_inv = max(lo_inv, net_maximize(lambda U: down(U)[0], n)[0])
    lo = 0.0 if not math.isfinite(lo_inv) else lo_inv ** (-1.0 / p)
    return hi ** (1.0 / p), lo


def gordon_reference(n, m, p, draws, rng):
    """Monte Carlo E|Z|_p (Z standard Gaussian in R^m) and E|Y|_2 (Y in R^n)."""
    gen = rng.generator()
    z = np.empty(draws)
    per = max(1, (1 << 20) // m)
    for s in range(0, draws, per):
        b = min(per, draws - s)
        z[s:s + b] = np.sum(np.abs(gen.standard_normal((b, m))) ** p, axis=1) ** (1.0 / p)
    y = np.linalg.norm(gen.standard_normal((draws, n)), axis=1)
    se = lambda a: float(np.std(a, ddof=1) / math.sqrt(a.size))
    return (float(np.mean(z)), se(z)), (float(np.mean(y)), se(y))


def _psi2_replica(cfg, model, n, p, m, r):
    t0 = time.perf_counter()
    rs = _stream(cfg, n, _p_index(cfg, p), m, r)
    S = mdl.sample(model, m, rs.child(0))
    hi, lo = sphere_extremes(S.rows, p, rs.child(1))
    return hi, lo, _ms(t0)


def run_psi2(cfg):
    rows = []
    for n, p in _cells(cfg):
        model = _build_model(cfg, n)
        ms = cfg.m_list or (max(1, math.ceil(n ** (p / 2.0) - 1e-9)),)
        for m in ms:
            R = _Rows(cfg, n, p, m)
            tasks = [lambda r=r: _psi2_replica(cfg, model, n, p, m, r) for r in range(cfg.replicas)]
            results = _run_tasks(cfg, tasks)
            for r, (hi, lo, t) in enumerate(results):
                rows.append(R(r, "sup", hi, ms=t))
                rows.append(R(r, "inf", lo))
            t0 = time.perf_counter()
            hi = np.array([x[0] for x in results])
            lo = np.array([x[1] for x in results])
            se = lambda a: float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
            (ez, sz), (ey, sy) = gordon_reference(n, m, p, 10_000, _stream(cfg, n, _p_index(cfg, p), m, 1 << 32))
            scale = m ** (-1.0 / p)
            rows += [
                R(-1, "E_sup", float(np.mean(hi)), se(hi)),
                R(-1, "E_inf", float(np.mean(lo)), se(lo)),
                R(-1, "E_Z_p", ez * scale, sz * scale),
                R(-1, "E_Y_2", ey * scale, sy * scale),
                R(-1, "gordon_upper", (ez + ey) * scale, math.hypot(sz, sy) * scale),
                R(-1, "gordon_lower", (ez - ey) * scale, math.hypot(sz, sy) * scale, _ms(t0)),
            ]
    return rows


# -------------------------------------------------------------------- norms


def _norm_maxima(model, m, replicas, rs):
    """max_{j<=m} |X_j|_2 over independent replicas."""
    return mdl._sampled_norms(model, replicas, rs.generator(), group=m)


def run_norms(cfg):
    rows = []
    alpha = cfg.alpha if cfg.alpha is not None else 1.0
    for n in cfg.n:
        model = _build_model(cfg, n)
        R0 = _Rows(cfg, n, float("nan"), 1)
        t0 = time.perf_counter()
        rs = _stream(cfg, n, 0, 1, 0)
        X = mdl._draw(model, 100_000, rs.child(0).generator())
        norms = np.linalg.norm(X, axis=1)
        y = rs.child(1).generator().standard_normal(n)
        y /= np.linalg.norm(y)
        est = psi_alpha_norm(norms, alpha)
        rows.append(R0(-1, "psi_norm_X2", est.value, est.std_error))
        est = psi_alpha_norm(X @ y, alpha)
        rows.append(R0(-1, "psi_linear", est.value, est.std_error, _ms(t0)))

        tasks = [lambda m=m: (m, _norm_maxima(model, m, cfg.replicas, _stream(cfg, n, 0, m, 1)))
                 for m in cfg.m_list]
        maxima = dict(_run_tasks(cfg, tasks))
        for m in cfg.m_list:
            R = _Rows(cfg, n, float("nan"), m)
            est = psi_alpha_norm(maxima[m], alpha)
            denom = math.log(m) ** (1.0 / alpha) if m > 1 else 1.0
            rows += [R(-1, "psi_max", est.value, est.std_error),
                     R(-1, "psi_max_ratio_log", est.value / denom, est.std_error / denom),
                     R(-1, "psi_max_ratio_sqrt_n", est.value / math.sqrt(n), est.std_error / math.sqrt(n))]
            for p in cfg.p:
                Rp = _Rows(cfg, n, p, m)
                t0 = time.perf_counter()
                kap = power_mean(maxima[m], p)
                up = kappa_upper(model, p, m, 100_000, _stream(cfg, n, _p_index(cfg, p), m, 2))
                rows += [Rp(-1, "kappa_pm", kap.value, kap.std_error),
                         Rp(-1, "kappa_over_sqrt_n", kap.value / math.sqrt(n), kap.std_error / math.sqrt(n)),
                         Rp(-1, "e_M_s", up.value, up.std_error, _ms(t0))]
    return rows


# --------------------------------------------------------------------- fuzz


def _fuzz_task(cfg, n, m, p):
    t0 = time.perf_counter()
    rs = _stream(cfg, n, _p_index(cfg, p), m, 0)
    rep = geo.check_scalar_inequalities(p, 10 * cfg.replicas, rs.child(0))
    model = _build_model(cfg, n) if cfg.model else mdl.gaussian_iso(n)
    pts = mdl.sample(model, m, rs.child(1))
    body = _build_body(cfg, n)
    vec = geo.check_quasimetric_properties(geo.QuasiMetricContext(pts, p), body, cfg.replicas, rs.child(2))
    return rep, vec, _ms(t0)


def run_fuzz(cfg):
    ns = cfg.n or (4,)
    m = cfg.m_list[0] if cfg.m_list else 8
    rows = []
    bad = []
    tasks = [lambda n=n, p=p: _fuzz_task(cfg, n, m, p) for n in ns for p in cfg.p]
    results = _run_tasks(cfg, tasks)
    for (n, p), (scal, vec, ms) in zip([(n, p) for n in ns for p in cfg.p], results):
        R = _Rows(cfg, n, p, m)
        for suite, rep in (("scalar", scal), ("vector", vec)):
            for name, t in rep.tallies.items():
                rows += [R(-1, f"{suite}.{name}.trials", t.trials),
                         R(-1, f"{suite}.{name}.violations", t.violations),
                         R(-1, f"{suite}.{name}.worst_excess", t.worst if math.isfinite(t.worst) else 0.0)]
                if t.violations:
                    ex = t.example or {}
                    rows.append(R(-1, f"repro.{suite}.{name}.excess", ex.get("lhs", 0.0) - ex.get("rhs", 0.0)))
                    bad.append(f"{suite}.{name} at n={n}, p={p:g}: {t.violations} violations, first {ex}")
        rows[-1] = ResultRow(*astuple(rows[-1])[:-1], round(ms, 3))
    if bad:
        raise ScenarioError("inequality violations: " + "; ".join(bad), rows, 4)
    return rows


RUNNERS = {
    "deviation": run_deviation,
    "tail": run_tail,
    "lewis": run_lewis,
    "psi2": run_psi2,
    "norms": run_norms,
    "fuzz": run_fuzz,
}


def run_scenario(cfg):
    """Run the configured scenario; rows come back sorted by (n, p, m, replica)."""
    try:
        rows = RUNNERS[cfg.scenario](cfg)
    except ScenarioError as exc:
        exc.rows = sorted(exc.rows, key=_sort_key)
        raise
    except PropertyViolation as exc:
        raise ScenarioError(str(exc), [], 4) from exc
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return sorted(rows, key=_sort_key)


# ------------------------------------------------------- dimension scaling


def median_deviation_curve(model, body, p, m_grid, replicas, stream: RngStream):
    """Median of V_p over ``replicas`` samples for each m in ``m_grid``."""
    out = []
    for i, m in enumerate(m_grid):
        v = [deviation_sup(mdl.sample(model, int(m), stream.child(i, r, 0)), model, body, p,
                           rng=stream.child(i, r, 1)).v_p for r in range(replicas)]
        out.append(float(np.median(v)))
    return out


def crossing_sample_size(m_grid, medians, level):
    """Smallest m where the median curve reaches ``level``, log-log interpolated.

    Returns nan when the curve never gets there.
    """
    m = np.asarray(m_grid, dtype=float)
    v = np.asarray(medians, dtype=float)
    hit = np.flatnonzero(v <= level)
    if hit.size == 0:
        return math.nan
    i = int(hit[0])
    if i == 0:
        return float(m[0])
    x0, x1 = math.log(m[i - 1]), math.log(m[i])
    y0, y1 = math.log(v[i - 1]), math.log(v[i])
    if y1 == y0:
        return float(m[i])
    return math.exp(x0 + (math.log(level) - y0) * (x1 - x0) / (y1 - y0))


def dimension_scaling(ns, level=0.2, p=2.0, q=2.0, replicas=50, seed=0, m_grid=None):
    """Crossing sample sizes for isotropized uniform l_q balls and their log-log slope in n."""
    if m_grid is None:
        m_grid = np.unique(np.round(10 ** np.arange(1.5, 4.01, 0.125)).astype(int))
    base = RngStream(seed)
    crossings, curves = [], []
    for n in ns:
        model = mdl.isotropize(mdl.uniform_lq_ball(n, q))
        med = median_deviation_curve(model, geo.euclid_ball(n), p, m_grid, replicas, base.child(n))
        curves.append(med)
        crossings.append(crossing_sample_size(m_grid, med, level))
    slope = float(np.polyfit(np.log(ns), np.log(crossings), 1)[0])
    return {"n": list(ns), "m_grid": [int(x) for x in m_grid], "medians": curves,
            "crossings": crossings, "slope": slope, "level": level, "replicas": replicas, "seed": seed}
