"""Experiment configuration: a block format with ``key = value`` lines.

Example::

    [grid]
    extent = 1 1 1
    cells = 32 32 32

    [material]
    kind = kerr
    eps_lin = 2
    eps_nl = 1

    [initial]
    recipe = bump
    center = 0.5 0.5 0.5
    radius = 0.25
    amplitude = 0.1

    [stepping]
    final_time = 20

Blank lines and ``#`` comments are ignored. Vectors are whitespace or comma
separated. Unknown blocks or keys are errors, reported with their line
number.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class GridConfig:
    extent: tuple = (1.0, 1.0, 1.0)
    cells: tuple = (16, 16, 16)
    x0: tuple | None = None


@dataclass
class MaterialConfig:
    kind: str = "linear"
    eps: tuple = (1.0,)
    mu: tuple = (1.0,)
    lam: tuple = (1.0,)
    eps_profile: str = "constant"
    mu_profile: str = "constant"
    lam_profile: str = "constant"
    eps_lin: float = 2.0
    eps_nl: float = 1.0
    lam_nl: float = 0.0
    poly_T: tuple | None = None
    poly_Q: tuple | None = None
    eta: float = 0.5
    delta0: float = 1.0


@dataclass
class InitialConfig:
    recipe: str = "bump"
    center: tuple | None = None
    radius: float = 0.25
    amplitude: float = 0.1
    polarization: tuple = (0.0, 0.0, 1.0)
    h_polarization: tuple | None = None
    seed: int = 0
    file: str | None = None


@dataclass
class SteppingConfig:
    final_time: float = 1.0
    cfl_safety: float = 0.9
    dt: float | None = None
    newton_tol: float = 1e-12
    newton_max: int = 25
    sample_stride: int = 10
    bc: str = "absorbing"
    functional_order: int = 3
    viscosity: float = 0.0


@dataclass
class OutputConfig:
    dir: str | None = None
    snapshot_every: int = 0
    progress_every: int = 0


@dataclass
class AnalysisConfig:
    transient_fraction: float = 0.2
    ensemble_size: int = 20
    windows: tuple = (1.0, 2.0, 4.0, 8.0)
    t_hat: float | None = None
    obs_T: float | None = None
    seed: int = 0
    series: str | None = None
    functional: str = "e0"
    radius_min: float = 0.2
    radius_max: float = 0.3


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    stepping: SteppingConfig = field(default_factory=SteppingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    present: tuple = ()
    source: str | None = None

    def hash(self) -> str:
        """Digest of the semantic content (independent of formatting)."""
        data = asdict(self)
        data.pop("present")
        data.pop("source")
        blob = json.dumps(data, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


# key -> (parser, expected count or None)
def _floats(n=None):
    def parse(tokens):
        vals = tuple(float(t) for t in tokens)
        if n is not None and len(vals) not in (n if isinstance(n, tuple) else (n,)):
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals
    return parse


def _ints(n):
    def parse(tokens):
        vals = tuple(int(t) for t in tokens)
        if len(vals) != n:
            raise ValueError(f"expected {n} integers, got {len(vals)}")
        return vals
    return parse


def _scalar(kind):
    def parse(tokens):
        if len(tokens) != 1:
            raise ValueError("expected a single value")
        return kind(tokens[0])
    return parse


def _text(tokens):
    return " ".join(tokens)


_BLOCKS = {
    "grid": (GridConfig, {
        "extent": _floats(3), "cells": _ints(3), "x0": _floats(3),
    }),
    "material": (MaterialConfig, {
        "kind": _scalar(str), "eps": _floats((1, 3, 9)), "mu": _floats((1, 3, 9)),
        "lam": _floats((1,)), "eps_profile": _scalar(str), "mu_profile": _scalar(str),
        "lam_profile": _scalar(str), "eps_lin": _scalar(float), "eps_nl": _scalar(float),
        "lam_nl": _scalar(float), "poly_T": _floats(27), "poly_Q": _floats(81),
        "eta": _scalar(float), "delta0": _scalar(float),
    }),
    "initial": (InitialConfig, {
        "recipe": _scalar(str), "center": _floats(3), "radius": _scalar(float),
        "amplitude": _scalar(float), "polarization": _floats(3),
        "h_polarization": _floats(3), "seed": _scalar(int), "file": _text,
    }),
    "stepping": (SteppingConfig, {
        "final_time": _scalar(float), "cfl_safety": _scalar(float), "dt": _scalar(float),
        "newton_tol": _scalar(float), "newton_max": _scalar(int),
        "sample_stride": _scalar(int), "bc": _text, "functional_order": _scalar(int),
        "viscosity": _scalar(float),
    }),
    "output": (OutputConfig, {
        "dir": _text, "snapshot_every": _scalar(int), "progress_every": _scalar(int),
    }),
    "analysis": (AnalysisConfig, {
        "transient_fraction": _scalar(float), "ensemble_size": _scalar(int),
        "windows": _floats(), "t_hat": _scalar(float), "obs_T": _scalar(float),
        "seed": _scalar(int), "series": _text, "functional": _scalar(str),
        "radius_min": _scalar(float), "radius_max": _scalar(float),
    }),
}

_HEADER = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    """Parse configuration text.

    Raises
    ------
    ConfigError
        On syntax errors, unknown blocks or keys, duplicate keys, malformed
        values or inconsistent settings, with the offending line number
        where one exists.
    """
    values: dict[str, dict] = {}
    lines: dict[tuple, int] = {}
    block = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            block = m.group(1).lower()
            if block not in _BLOCKS:
                raise ConfigError(f"unknown block [{block}]", lineno)
            if block in values:
                raise ConfigError(f"block [{block}] appears twice", lineno)
            values[block] = {}
            lines[(block, None)] = lineno
            continue
        if block is None:
            raise ConfigError("key outside of any block", lineno)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, _, rhs = line.partition("=")
        key = key.strip()
        parsers = _BLOCKS[block][1]
        if key not in parsers:
            raise ConfigError(f"unknown key {key!r} in [{block}]", lineno)
        if key in values[block]:
            raise ConfigError(f"duplicate key {key!r} in [{block}]", lineno)
        tokens = [t for t in re.split(r"[,\s]+", rhs.strip()) if t]
        if not tokens:
            raise ConfigError(f"missing value for {key!r}", lineno)
        try:
            values[block][key] = parsers[key](tokens)
        except ValueError as err:
            raise ConfigError(f"bad value for {key!r}: {err}", lineno) from None
        lines[(block, key)] = lineno
    cfg = ExperimentConfig(present=tuple(values), source=source)
    for name, kv in values.items():
        setattr(cfg, name, _BLOCKS[name][0](**kv))
    _validate(cfg, lines)
    return cfg


def _validate(cfg: ExperimentConfig, lines: dict) -> None:
    def fail(block, key, msg):
        raise ConfigError(msg, lines.get((block, key), lines.get((block, None))))

    g = cfg.grid
    if any(v <= 0 for v in g.extent):
        fail("grid", "extent", "extents must be positive")
    if any(v < 4 for v in g.cells):
        fail("grid", "cells", "each axis needs at least 4 cells")
    if g.x0 is not None and any(not (0 < g.x0[a] < g.extent[a]) for a in range(3)):
        fail("grid", "x0", "x0 must lie strictly inside the box")
    m = cfg.material
    if m.kind not in ("linear", "kerr", "polynomial"):
        fail("material", "kind", f"unknown material kind {m.kind!r}")
    for key in ("eps_profile", "mu_profile", "lam_profile"):
        if getattr(m, key) not in ("constant", "radial-quadratic", "radial-inverse-quadratic"):
            fail("material", key, f"unknown profile {getattr(m, key)!r}")
    if m.eta <= 0:
        fail("material", "eta", "eta must be positive")
    if m.delta0 <= 0:
        fail("material", "delta0", "delta0 must be positive")
    i = cfg.initial
    if i.recipe not in ("bump", "curl-bump", "file", "zero"):
        fail("initial", "recipe", f"unknown recipe {i.recipe!r}")
    if i.recipe == "file" and not i.file:
        fail("initial", "recipe", "recipe 'file' needs a file key")
    if i.amplitude < 0:
        fail("initial", "amplitude", "amplitude must be nonnegative")
    if i.radius <= 0:
        fail("initial", "radius", "radius must be positive")
    s = cfg.stepping
    if s.final_time < 0:
        fail("stepping", "final_time", "final_time must be nonnegative")
    if not (0 < s.cfl_safety <= 1):
        fail("stepping", "cfl_safety", "cfl_safety must lie in (0, 1]")
    if s.dt is not None and s.dt <= 0:
        fail("stepping", "dt", "dt must be positive")
    if s.newton_tol < 1e-14:
        fail("stepping", "newton_tol", "newton_tol must be >= 1e-14")
    if s.newton_max < 1:
        fail("stepping", "newton_max", "newton_max must be >= 1")
    if s.sample_stride < 1:
        fail("stepping", "sample_stride", "sample_stride must be >= 1")
    if s.functional_order not in (0, 1, 2, 3):
        fail("stepping", "functional_order", "functional_order must be in 0..3")
    if not s.viscosity >= 0:
        fail("stepping", "viscosity", "viscosity must be nonnegative")
    try:
        parse_bc(s.bc)
    except ValueError as err:
        fail("stepping", "bc", str(err))
    o = cfg.output
    if o.snapshot_every < 0 or o.progress_every < 0:
        fail("output", None, "cadences must be nonnegative")
    a = cfg.analysis
    if not (0 <= a.transient_fraction < 1):
        fail("analysis", "transient_fraction", "transient_fraction must lie in [0, 1)")
    if a.ensemble_size < 1:
        fail("analysis", "ensemble_size", "ensemble_size must be >= 1")
    if not (0 < a.radius_min <= a.radius_max):
        fail("analysis", "radius_min", "need 0 < radius_min <= radius_max")


_SIDE_NAMES = {"x-": (0, -1), "x+": (0, 1), "y-": (1, -1), "y+": (1, 1),
               "z-": (2, -1), "z+": (2, 1)}


def parse_bc(text: str) -> dict:
    """Parse ``"absorbing"`` or ``"pec x+:absorbing z-:pmc"`` style specs.

    A bare kind sets the default for all sides; ``side:kind`` tokens override
    single sides.
    """
    kinds = ("absorbing", "pec", "pmc", "reflecting")
    out = {}
    default = "absorbing"
    for tok in text.split():
        if ":" in tok:
            side, kind = tok.split(":", 1)
            if side not in _SIDE_NAMES:
                raise ValueError(f"unknown side {side!r}")
            if kind not in kinds:
                raise ValueError(f"unknown boundary kind {kind!r}")
            out[_SIDE_NAMES[side]] = kind
        else:
            if tok not in kinds:
                raise ValueError(f"unknown boundary kind {tok!r}")
            default = tok
    full = {s: default for s in _SIDE_NAMES.values()}
    full.update(out)
    return full


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text, str(p))


# -- builders --------------------------------------------------------------


def build_grid_from(cfg: ExperimentConfig):
    from .geometry import build_grid

    try:
        return build_grid(cfg.grid.extent, cfg.grid.cells, cfg.grid.x0)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _matrix(vals) -> np.ndarray:
    v = np.asarray(vals, dtype=float)
    if v.size == 1:
        return v[0] * np.eye(3)
    if v.size == 3:
        return np.diag(v)
    return v.reshape(3, 3)


def build_model(cfg: ExperimentConfig, grid):
    """Material model described by the ``[material]`` block."""
    from .materials import KerrLaw, LinearLaw, MaterialModel, PolynomialLaw, Profile

    m = cfg.material
    prof = lambda kind: Profile(kind, grid.x0)
    try:
        mu = LinearLaw(_matrix(m.mu), prof(m.mu_profile))
        lam_scalar = float(m.lam[0])
        if m.lam_nl:
            lam = KerrLaw(lam_scalar, m.lam_nl, prof(m.lam_profile))
        else:
            lam = LinearLaw(lam_scalar, prof(m.lam_profile))
        if m.kind == "linear":
            eps = LinearLaw(_matrix(m.eps), prof(m.eps_profile))
        elif m.kind == "kerr":
            eps = KerrLaw(m.eps_lin, m.eps_nl, prof(m.eps_profile))
        else:
            t = None if m.poly_T is None else np.reshape(m.poly_T, (3, 3, 3))
            q = None if m.poly_Q is None else np.reshape(m.poly_Q, (3, 3, 3, 3))
            eps = PolynomialLaw(_matrix(m.eps), prof(m.eps_profile), t, q)
        return MaterialModel(eps, mu, lam, m.eta, m.delta0)
    except ValueError as err:
        raise ConfigError(f"material: {err}") from None
