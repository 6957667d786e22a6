"""Decay fits and empirical constants from series and fields.

All constants here are measured suprema over finite ensembles. They are
evidence of boundedness, not values of the analytic constants.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateSeries, ZeroDenominator, ZeroDissipation
from .functionals import FunctionalSeries
from .geometry import E_STAGGER, H_STAGGER, SIDES, StaggeredGrid, face_slice
from .numerics import tree_sum
from .operators import curl_e


@dataclass
class DecayFit:
    M: float
    omega: float
    r2: float
    window: tuple
    omega_stderr: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConstantEstimate:
    name: str
    value: float
    ensemble_size: int
    spread: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def estimate(name: str, values) -> ConstantEstimate:
    v = np.asarray(values, dtype=float)
    return ConstantEstimate(name, float(v.max()), int(v.size), (float(v.min()), float(v.max())))


# -- decay -----------------------------------------------------------------


def fit_decay(series, selector: str = "e0", transient_fraction: float = 0.2,
              min_samples: int = 10) -> DecayFit:
    """Least-squares fit of ``log v(t) = log(M v(0)) - omega t``.

    Parameters
    ----------
    series : FunctionalSeries or tuple of (t, v)
    selector : str
        Column name when a series is given.
    transient_fraction : float
        Leading fraction of the samples dropped before fitting.

    Raises
    ------
    DegenerateSeries
        If every value is below 1e-300, or fewer than ``min_samples``
        positive samples remain after the cut.
    """
    if isinstance(series, FunctionalSeries):
        t, v = series.t, series.column(selector)
    else:
        t, v = (np.asarray(a, dtype=float) for a in series)
    ok = np.isfinite(v)
    t, v = t[ok], v[ok]
    if v.size == 0 or np.all(np.abs(v) < 1e-300):
        raise DegenerateSeries("series is identically zero")
    v0 = v[0]
    cut = int(np.floor(transient_fraction * len(t)))
    t, v = t[cut:], v[cut:]
    keep = v > 1e-300
    t, v = t[keep], v[keep]
    if len(t) < min_samples:
        raise DegenerateSeries(f"only {len(t)} positive samples after the transient cut")
    y = np.log(v)
    if np.ptp(y) == 0.0:
        omega, intercept, r2, err = 0.0, float(y[0]), 1.0, 0.0
    else:
        fit = stats.linregress(t, y)
        omega, intercept, r2 = -float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
        err = float(fit.stderr)
    M = float(np.exp(intercept) / v0) if v0 > 0 else float(np.exp(intercept))
    return DecayFit(M, omega, r2, (float(t[0]), float(t[-1])), err)


# -- observability and traces ----------------------------------------------


def _integral(t, v, s, e) -> float:
    """Trapezoid integral of samples over ``[s, e]`` with linear end interpolation."""
    inside = (t > s) & (t < e)
    tt = np.concatenate([[s], t[inside], [e]])
    vv = np.concatenate([[np.interp(s, t, v)], v[inside], [np.interp(e, t, v)]])
    return float(np.sum(0.5 * (vv[1:] + vv[:-1]) * np.diff(tt)))


def observability_ratio(series: FunctionalSeries, T: float) -> float:
    """``e_0(0) / int_0^T d_0``.

    Raises
    ------
    ValueError
        If ``T`` lies outside the sampled span.
    ZeroDissipation
        If the dissipated energy is negligible (the wave has not reached the
        boundary by ``T``).
    """
    t = series.t
    if not (t[0] < T <= t[-1] * (1 + 1e-12)):
        raise ValueError(f"T={T} outside the series span [{t[0]}, {t[-1]}]")
    e0 = series.column("e0")
    den = _integral(t, series.column("d0"), t[0], min(T, t[-1]))
    if not den > 1e-12 * e0[0]:
        raise ZeroDissipation(f"boundary dissipation over [0, {T}] is {den:.3e}")
    return float(e0[0] / den)


def trace_ratio(series: FunctionalSeries, window) -> float:
    """Normal traces over tangential electric trace on ``[s, t]``.

    Raises
    ------
    ZeroDenominator
        If the tangential trace integral is negligible.
    """
    s, e = window
    t = series.t
    if not (t[0] <= s < e <= t[-1] * (1 + 1e-12)):
        raise ValueError(f"window {window} outside the series span")
    e = min(e, t[-1])
    num = _integral(t, series.column("tr_nu_epsE") + series.column("tr_nu_muH"), s, e)
    den = _integral(t, series.column("tr_tan_E"), s, e)
    scale = float(np.nanmax(series.column("e0"))) * (e - s)
    if not den > 1e-14 * scale:
        raise ZeroDenominator(f"tangential trace integral over {window} is {den:.3e}")
    return float(num / den)


def trace_ratio_sweep(series: FunctionalSeries, t_hat: float, multiples=(1, 2, 4, 8)) -> list:
    return [trace_ratio(series, (0.0, m * t_hat)) for m in multiples]


def t_hat_default(grid: StaggeredGrid, model) -> float:
    """Heuristic window ``2 diam sqrt(max eig eps * max eig mu)``."""
    from .stepper import eigen_extremes

    ext = eigen_extremes(grid, model)
    return 2.0 * grid.diameter * float(np.sqrt(ext["eps"][1] * ext["mu"][1]))


# -- div-curl estimate ------------------------------------------------------


@dataclass
class _Trig:
    """Random trigonometric vector polynomial on a box."""

    coeffs: np.ndarray   # (terms, 3)
    waves: np.ndarray    # (terms, 3)
    phases: np.ndarray   # (terms,)

    def __call__(self, x):
        arg = x @ self.waves.T + self.phases
        return np.cos(arg) @ self.coeffs


def random_trig_field(rng: np.random.Generator, extent, terms: int = 6, kmax: int = 3) -> _Trig:
    waves = rng.integers(-kmax, kmax + 1, size=(terms, 3)) * (np.pi / np.asarray(extent))
    coeffs = rng.normal(size=(terms, 3))
    phases = rng.uniform(0, 2 * np.pi, size=terms)
    return _Trig(coeffs, waves.astype(float), phases)


def _node_lattice(grid: StaggeredGrid):
    from .geometry import NODE_STAGGER

    return grid.coords(NODE_STAGGER)


def _trap_weights(grid):
    from .geometry import NODE_STAGGER

    return grid.weights(NODE_STAGGER)


def _jacobian(u: np.ndarray, grid) -> np.ndarray:
    """``J[..., i, j] = d u_i / d x_j`` by second-order differences."""
    return np.stack([np.stack(np.gradient(u[..., i], *grid.h, edge_order=2), axis=-1)
                     for i in range(3)], axis=-2)


def _l2(grid, arr) -> float:
    sq = arr * arr
    if arr.ndim > 3:
        sq = np.sum(sq, axis=tuple(range(3, arr.ndim)))
    return float(np.sqrt(tree_sum(_trap_weights(grid) * sq)))


def _face_h1(grid, side, h: np.ndarray) -> tuple[float, float]:
    """L2 and H1 norms of a face field with trailing vector axis."""
    t1, t2 = sorted(side.tangential_axes)
    w = np.outer(grid.axis_weights(t1, False), grid.axis_weights(t2, False))
    l2 = tree_sum(w[..., None] * h * h)
    g1 = np.gradient(h, grid.h[t1], axis=0, edge_order=2)
    g2 = np.gradient(h, grid.h[t2], axis=1, edge_order=2)
    return l2, l2 + tree_sum(w[..., None] * (g1 * g1 + g2 * g2))


def divcurl_terms(grid: StaggeredGrid, model, u: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """Numerator and denominator of the div-curl ratio for nodal fields.

    Numerator ``|u|_{H^1} + |v|_{H^1}``; denominator
    ``|curl u| + |curl v| + |div(alpha u)| + |div(beta v)| + |h|_Gamma`` with
    ``alpha = eps(x, 0)``, ``beta = mu(x, 0)``, ``gamma = lam(x, 0)`` and
    ``h = v x nu + (gamma (u x nu)) x nu``. The boundary norm is the
    geometric mean of the face L2 and H1 norms, a stand-in for the
    half-order trace norm.
    """
    x = _node_lattice(grid)
    alpha = np.broadcast_to(model.eps.zero_field(x), x.shape + (3,))
    beta = np.broadcast_to(model.mu.zero_field(x), x.shape + (3,))
    ju, jv = _jacobian(u, grid), _jacobian(v, grid)

    def h1(f, j):
        return np.sqrt(_l2(grid, f) ** 2 + _l2(grid, j) ** 2)

    def curl(j):
        return np.stack([j[..., 2, 1] - j[..., 1, 2], j[..., 0, 2] - j[..., 2, 0],
                         j[..., 1, 0] - j[..., 0, 1]], axis=-1)

    def div(f, a):
        af = np.einsum("...ij,...j->...i", a, f)
        return sum(np.gradient(af[..., i], grid.h[i], axis=i, edge_order=2) for i in range(3))

    num = h1(u, ju) + h1(v, jv)
    den = (_l2(grid, curl(ju)) + _l2(grid, curl(jv)) + _l2(grid, div(u, alpha))
           + _l2(grid, div(v, beta)))
    l2 = hh1 = 0.0
    for side in SIDES:
        nu = side.normal
        xs = face_slice(x, side)
        us, vs = face_slice(u, side), face_slice(v, side)
        gam = np.broadcast_to(model.lam.zero_field(xs), xs.shape + (3,))
        ux = np.cross(us, nu)
        h = np.cross(vs, nu) + np.cross(np.einsum("...ij,...j->...i", gam, ux), nu)
        a, b = _face_h1(grid, side, h)
        l2 += a
        hh1 += b
    den += float(np.sqrt(np.sqrt(l2) * np.sqrt(hh1)))
    return float(num), float(den)


def divcurl_ratio(grid: StaggeredGrid, model, ensemble_size: int = 20, seed: int = 0,
                  terms: int = 6) -> ConstantEstimate:
    """Ensemble maximum of the div-curl ratio over random trigonometric fields.

    Pairs with a vanishing denominator and numerator are skipped.
    """
    rng = np.random.default_rng(seed)
    x = _node_lattice(grid)
    vals = []
    for _ in range(ensemble_size):
        fu = random_trig_field(rng, grid.extent, terms)
        fv = random_trig_field(rng, grid.extent, terms)
        num, den = divcurl_terms(grid, model, fu(x), fv(x))
        if den == 0.0 and num == 0.0:
            continue
        if den == 0.0:
            raise ZeroDenominator("div-curl denominator vanished for a nonzero field")
        vals.append(num / den)
    if not vals:
        raise ZeroDenominator("every ensemble member was degenerate")
    return estimate("divcurl", vals)


# -- surface curl ------------------------------------------------------------


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(4)


def edge_averages(grid: StaggeredGrid, f) -> tuple:
    """Averages of ``f_c`` along each ``c``-directed edge (4-point Gauss)."""
    out = []
    for c in range(3):
        x = grid.coords(E_STAGGER[c])
        acc = np.zeros(x.shape[:-1])
        for gx, gw in zip(_GAUSS_X, _GAUSS_W):
            y = x.copy()
            y[..., c] += 0.5 * gx * grid.h[c]
            acc += 0.5 * gw * np.asarray(f(y))[..., c]
        out.append(acc)
    return tuple(out)


def _test_family(count: int = 32):
    idx = [(a, b, c) for s in range(12) for a in range(s + 1) for b in range(s + 1 - a)
           for c in [s - a - b]]
    return idx[:count]


def _face_test_values(grid, side, stagger, modes):
    """Restrictions of ``prod cos(k_i pi x_i / L_i)`` and their face gradients."""
    x = grid.face_coords(stagger, side)
    t1, t2 = sorted(side.tangential_axes)
    vals, grads = [], []
    for m in modes:
        k = np.pi * np.asarray(m) / np.asarray(grid.extent)
        cs = np.cos(k * x)
        sn = -k * np.sin(k * x)
        vals.append(np.prod(cs, axis=-1))
        g = []
        for t in (t1, t2):
            others = [cs[..., i] for i in range(3) if i != t]
            g.append(sn[..., t] * others[0] * others[1])
        grads.append(g)
    return np.array(vals), grads


def surface_curl_check(field, grid: StaggeredGrid, count: int = 32) -> float:
    """``|nu . curl f|_{H^-1 surrogate} / |nu x f|_{L2(Gamma)}``.

    ``field`` is a callable ``f(x)`` or a triple of edge arrays. The normal
    curl on each boundary face is the discrete circulation of the tangential
    edge values, so it depends on the tangential trace alone. Its negative
    norm is the dual norm over the span of ``count`` global cosine products
    restricted to the boundary, measured in a discrete ``H^1(Gamma)``.

    Raises
    ------
    ZeroDenominator
        If the tangential trace vanishes.
    """
    E = edge_averages(grid, field) if callable(field) else tuple(field)
    ce = curl_e(grid, E)
    modes = _test_family(count)
    b = np.zeros(len(modes))
    gram = np.zeros((len(modes), len(modes)))
    tan_sq = 0.0
    for side in SIDES:
        a = side.axis
        stag = H_STAGGER[a]
        g = face_slice(ce[a], side) * side.sign
        w = grid.face_weights(stag, side)
        vals, grads = _face_test_values(grid, side, stag, modes)
        b += np.einsum("kij,ij->k", vals, w * g)
        gv = np.array([grads[k][0] for k in range(len(modes))])
        gw = np.array([grads[k][1] for k in range(len(modes))])
        gram += np.einsum("kij,lij,ij->kl", vals, vals, w)
        gram += np.einsum("kij,lij,ij->kl", gv, gv, w) + np.einsum("kij,lij,ij->kl", gw, gw, w)
        for c in side.tangential_axes:
            ec = face_slice(E[c], side)
            tan_sq += tree_sum(grid.face_weights(E_STAGGER[c], side) * ec * ec)
    num = float(np.sqrt(max(b @ np.linalg.solve(gram, b), 0.0)))
    den = float(np.sqrt(tan_sq))
    if den == 0.0:
        raise ZeroDenominator("tangential trace vanishes")
    return num / den


def surface_curl_ensemble(grid: StaggeredGrid, ensemble_size: int = 20,
                          seed: int = 0) -> ConstantEstimate:
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(ensemble_size):
        f = random_trig_field(rng, grid.extent)
        try:
            vals.append(surface_curl_check(f, grid))
        except ZeroDenominator:
            continue
    if not vals:
        raise ZeroDenominator("every ensemble member was degenerate")
    return estimate("surface_curl", vals)
