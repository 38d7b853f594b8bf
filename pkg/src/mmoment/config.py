"""Line-oriented ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored; unknown or repeated keys are
errors.  ``n`` and ``p`` may be comma lists (the scenario sweeps their
product).  Everything is validated before any sampling happens.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

from .errors import ConfigError

SCENARIOS = ("deviation", "tail", "lewis", "psi2", "norms", "fuzz")
MODELS = ("gaussian_iso", "rademacher_cube", "uniform_lq_ball", "laplace_iso", "discrete_atoms")
KEYS = ("scenario", "model", "body", "n", "p", "q", "m_list", "replicas", "eps", "alpha", "seed",
        "threads", "subspace_file", "atoms_file", "constants.C", "constants.c_alpha_p")

# keys each scenario cannot run without (seed and threads always have defaults)
REQUIRED = {
    "deviation": ("model", "body", "n", "p", "m_list", "replicas"),
    "tail": ("model", "body", "n", "p", "m_list", "replicas", "alpha"),
    "lewis": ("subspace_file", "eps", "replicas"),
    "psi2": ("model", "n", "p", "replicas"),
    "norms": ("model", "n", "p", "m_list", "replicas"),
    "fuzz": ("p", "replicas"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    model: str | None = None
    body: str | None = None
    n: tuple = ()
    p: tuple = ()
    q: float | None = None
    m_list: tuple = ()
    replicas: int = 1
    eps: float | None = None
    alpha: float | None = None
    seed: int = 0
    threads: int = 1
    subspace_file: str | None = None
    atoms_file: str | None = None
    constants: dict = field(default_factory=lambda: {"C": 1.0, "c_alpha_p": 1.0})
    base_dir: str = "."

    def path(self, name: str) -> str:
        return name if os.path.isabs(name) else os.path.join(self.base_dir, name)


def _int(key, v, lo=1):
    try:
        x = int(v)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from None
    if x < lo:
        raise ConfigError(f"{key}: must be >= {lo}, got {x}")
    return x


def _float(key, v):
    try:
        x = float(v)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{key}: must be finite")
    return x


def _list(key, v, conv):
    items = [t.strip() for t in v.split(",") if t.strip()]
    if not items:
        raise ConfigError(f"{key}: empty list")
    return tuple(conv(key, t) for t in items)


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        k, v = (t.strip() for t in s.split("=", 1))
        if k not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {k!r}")
        if k in raw:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        if not v:
            raise ConfigError(f"line {lineno}: empty value for {k!r}")
        raw[k] = v

    kw = {"base_dir": base_dir}
    consts = {"C": 1.0, "c_alpha_p": 1.0}
    for k, v in raw.items():
        if k in ("scenario", "model", "body", "subspace_file", "atoms_file"):
            kw[k] = v
        elif k == "n":
            kw["n"] = _list(k, v, _int)
        elif k == "p":
            kw["p"] = _list(k, v, _float)
        elif k == "m_list":
            kw["m_list"] = _list(k, v, _int)
        elif k in ("replicas", "threads"):
            kw[k] = _int(k, v)
        elif k == "seed":
            kw[k] = _int(k, v, lo=0)
        elif k in ("q", "eps", "alpha"):
            kw[k] = _float(k, v)
        else:
            consts[k.split(".", 1)[1]] = _float(k, v)
    kw["constants"] = consts
    if "scenario" not in kw:
        raise ConfigError("missing key 'scenario'")
    return ExperimentConfig(**kw)


def load_config(path, scenario: str | None = None, seed: int | None = None,
                threads: int | None = None) -> ExperimentConfig:
    """Read and validate a config file; CLI overrides win over file values."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if scenario is not None and "scenario" not in {ln.split("=", 1)[0].strip() for ln in text.splitlines() if "=" in ln}:
        text += f"\nscenario = {scenario}\n"
    cfg = parse_config(text, os.path.dirname(os.path.abspath(path)))
    if scenario is not None and cfg.scenario != scenario:
        raise ConfigError(f"config is for scenario {cfg.scenario!r}, not {scenario!r}")
    if seed is not None:
        if not 0 <= seed < 1 << 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        cfg = replace(cfg, seed=seed)
    if threads is not None:
        cfg = replace(cfg, threads=_int("threads", str(threads)))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}, got {cfg.scenario!r}")
    for k in REQUIRED[cfg.scenario]:
        v = getattr(cfg, k)
        if v is None or v == ():
            raise ConfigError(f"scenario {cfg.scenario!r} requires key {k!r}")
    if cfg.seed >= 1 << 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if cfg.m_list and any(b <= a for a, b in zip(cfg.m_list, cfg.m_list[1:])):
        raise ConfigError("m_list must be strictly increasing")
    if len(set(cfg.n)) != len(cfg.n) or len(set(cfg.p)) != len(cfg.p):
        raise ConfigError("n and p lists must not repeat values")
    if cfg.p and min(cfg.p) < 2:
        raise ConfigError("p must be >= 2")
    if cfg.eps is not None and cfg.eps <= 0:
        raise ConfigError("eps must be > 0")
    if cfg.alpha is not None and cfg.alpha <= 0:
        raise ConfigError("alpha must be > 0")
    if cfg.model is not None:
        if cfg.model not in MODELS:
            raise ConfigError(f"model must be one of {', '.join(MODELS)}, got {cfg.model!r}")
        if cfg.model == "uniform_lq_ball" and (cfg.q is None or cfg.q < 1):
            raise ConfigError("model uniform_lq_ball requires q >= 1")
        if cfg.model == "discrete_atoms":
            if cfg.atoms_file is None:
                raise ConfigError("model discrete_atoms requires atoms_file")
            if not os.path.isfile(cfg.path(cfg.atoms_file)):
                raise ConfigError(f"atoms_file not found: {cfg.atoms_file}")
    if cfg.body is not None:
        kind = cfg.body.split(":", 1)[0]
        if kind not in ("euclid_ball", "lq_ball", "ellipsoid"):
            raise ConfigError(f"body must be euclid_ball, lq_ball or ellipsoid:<diag>, got {cfg.body!r}")
        if kind == "lq_ball" and (cfg.q is None or cfg.q < 2):
            raise ConfigError("body lq_ball requires q >= 2")
        if kind == "ellipsoid":
            diag = _list("body", cfg.body.split(":", 1)[1] if ":" in cfg.body else "", _float)
            if min(diag) <= 0:
                raise ConfigError("ellipsoid axes must be positive")
            if any(len(diag) != n for n in cfg.n):
                raise ConfigError("ellipsoid diagonal length must match every n")
    if cfg.scenario == "tail" and cfg.replicas < 200:
        raise ConfigError("scenario 'tail' requires replicas >= 200")
    if cfg.scenario == "psi2" and cfg.model not in ("gaussian_iso", "rademacher_cube"):
        raise ConfigError("scenario 'psi2' requires model gaussian_iso or rademacher_cube")
    if cfg.scenario == "norms" and cfg.replicas < 1000:
        raise ConfigError("scenario 'norms' needs replicas >= 1000 for the psi estimates")
    if cfg.scenario == "lewis":
        source = cfg.subspace_file
        if source.startswith("random:"):
            _int("subspace_file", source.split(":", 1)[1])
            if not cfg.n or not cfg.p:
                raise ConfigError("generated subspaces need n and p")
        elif source == "identity" or source.startswith("circle:"):
            if source.startswith("circle:"):
                _int("subspace_file", source.split(":", 1)[1])
            if not cfg.p:
                raise ConfigError("generated subspaces need p")
            if source == "identity" and not cfg.n:
                raise ConfigError("identity subspace needs n")
        elif not os.path.isfile(cfg.path(source)):
            raise ConfigError(f"subspace_file not found: {source}")
