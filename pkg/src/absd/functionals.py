"""Energy, dissipation and norm functionals along a trajectory.

Time derivatives of the fields are estimated from the stored history (up to
five equally spaced levels) with Fornberg finite-difference weights. For
levels ``j >= 1`` the coefficients are evaluated on *pointwise full vectors*:
at the location of each component ``c`` the three-vector ``E_hat`` solving
``eps(x, E_hat) E_hat = D_avg`` exactly, where ``D_avg`` carries ``D_c`` and
the averaged other two flux components. Its ``c`` component reproduces the
stored field and ``eps^d(E_hat) dE_hat/dt`` is then exactly ``dD_c/dt`` up to
the time-difference error. Level 0 uses the stored pairs ``E . D`` and
``H . B`` directly, which is what the discrete energy balance is written in.

Weighted norms ``|a^{1/2} v|^2`` are evaluated as the quadratic form
``v . a v``, which is the same number without forming matrix square roots.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import InsufficientHistory
from .geometry import (E_STAGGER, H_STAGGER, NODE_STAGGER, SIDES, StaggeredGrid, boundary_mask,
                       face_slice)
from .materials import MaterialModel, invert_constitutive
from .numerics import fornberg_weights, matvec, tree_sum
from .operators import (curl_h, div_nodes, e_vectors, extrapolate_trace, full_vectors,
                        h_vectors, interior)

COLUMNS = (
    ["t"] + [f"e{k}" for k in range(4)] + [f"d{k}" for k in range(4)]
    + [f"z{k}" for k in range(4)]
    + ["charge_E", "charge_H", "tr_nu_epsE", "tr_nu_muH", "tr_tan_E", "tr_tan_H",
       "energy_identity_residual"]
)


# -- series ----------------------------------------------------------------


@dataclass
class FunctionalSeries:
    """Sampled functionals; one row per sample in the fixed column order."""

    rows: list = field(default_factory=list)

    def append(self, row: dict) -> None:
        self.rows.append([float(row.get(name, np.nan)) for name in COLUMNS])

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        j = COLUMNS.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)

    def write_csv(self, fh, header: bool = True) -> None:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([format(v, ".17g") for v in r])

    @classmethod
    def from_csv(cls, path) -> "FunctionalSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != COLUMNS:
                missing = set(["t"]) - set(header)
                if missing:
                    raise ValueError(f"series file lacks columns {sorted(missing)}")
            idx = {name: i for i, name in enumerate(header)}
            out = cls()
            for line in reader:
                if not line:
                    continue
                out.rows.append([float(line[idx[n]]) if n in idx else np.nan for n in COLUMNS])
        return out

    @classmethod
    def from_arrays(cls, t, **columns) -> "FunctionalSeries":
        out = cls()
        t = np.asarray(t, dtype=float)
        for i in range(len(t)):
            out.append({"t": t[i], **{k: np.asarray(v)[i] for k, v in columns.items()}})
        return out


# -- discrete Sobolev norms ------------------------------------------------


def _axis_weights(length: int, n: int, h: float) -> np.ndarray:
    if length == n + 1:
        w = np.full(length, h)
        w[0] = w[-1] = 0.5 * h
        return w
    if length == n:
        return np.full(length, h)
    # differenced arrays: spread the full extent evenly over the samples
    return np.full(length, h * n / length)


def _quadrature(arr: np.ndarray, grid: StaggeredGrid) -> float:
    w = [_axis_weights(arr.shape[a], grid.n[a], grid.h[a]) for a in range(3)]
    return tree_sum(w[0][:, None, None] * w[1][None, :, None] * w[2][None, None, :] * arr * arr)


def discrete_norm(arr: np.ndarray, order: int, grid: StaggeredGrid) -> float:
    """Discrete ``H^order`` norm of a staggered scalar array.

    The squared norm sums, over all multi-indices of total order up to
    ``order``, the trapezoid/midpoint quadrature of repeated one-sided
    differences. Differences only use points inside the box.
    """
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be in 0..3")
    total = 0.0
    for alpha in product(range(order + 1), repeat=3):
        if sum(alpha) > order:
            continue
        d = arr
        for a in range(3):
            for _ in range(alpha[a]):
                d = np.diff(d, axis=a) / grid.h[a]
        if min(d.shape) == 0:
            continue
        total += _quadrature(d, grid)
    return float(np.sqrt(total))


# -- pointwise full vectors and time derivatives ---------------------------


def snapshot_vectors(snap, model: MaterialModel, grid: StaggeredGrid, tol: float = 1e-13):
    """Per-component full vectors ``(E_hat, H_hat)`` of a stored level (cached)."""
    if "vectors" in snap.cache:
        return snap.cache["vectors"]
    ev, hv = [], []
    for c in range(3):
        x = grid.coords(E_STAGGER[c])
        e, _ = invert_constitutive(model.eps, x, full_vectors(snap.D, E_STAGGER, c),
                                   e_vectors(snap.E, c), tol, 60)
        ev.append(e)
        x = grid.coords(H_STAGGER[c])
        hh, _ = invert_constitutive(model.mu, x, full_vectors(snap.B, H_STAGGER, c),
                                    h_vectors(snap.H, c), tol, 60)
        hv.append(hh)
    snap.cache["vectors"] = (ev, hv)
    return ev, hv


def _levels(history, need: int):
    snaps = list(history)
    if len(snaps) < need:
        raise InsufficientHistory(f"need {need} stored levels, have {len(snaps)}")
    return snaps[-min(len(snaps), 5):]


def _time_weights(snaps, node: int, order: int) -> np.ndarray:
    dt = snaps[1].t - snaps[0].t
    nodes = np.arange(len(snaps), dtype=float)
    return fornberg_weights(nodes, float(node), order) / dt ** order


def _combine(weights, items):
    out = weights[0] * items[0]
    for w, it in zip(weights[1:], items[1:]):
        out = out + w * it
    return out


@dataclass
class Derivatives:
    """Time derivatives of the full vectors at one level.

    ``E[j][c]`` is the ``j``-th derivative of ``E_hat`` at component ``c``'s
    locations, shape ``(*shape_c, 3)``; ``E[0]`` holds the vectors themselves.
    """

    E: list
    H: list


def time_derivatives(history, model: MaterialModel, grid: StaggeredGrid, kmax: int,
                     node: int | None = None) -> Derivatives:
    """Derivatives of orders ``0..kmax`` at history index ``node`` (default: last)."""
    snaps = _levels(history, kmax + 2 if kmax > 0 else 1)
    node = len(snaps) - 1 if node is None else node
    vecs = [snapshot_vectors(s, model, grid) for s in snaps]
    E, H = [], []
    for j in range(kmax + 1):
        if j == 0:
            E.append(vecs[node][0])
            H.append(vecs[node][1])
            continue
        w = _time_weights(snaps, node, j)
        E.append([_combine(w, [v[0][c] for v in vecs]) for c in range(3)])
        H.append([_combine(w, [v[1][c] for v in vecs]) for c in range(3)])
    return Derivatives(E, H)


# -- functionals -----------------------------------------------------------


def _quad_form(grid, staggers, xs, mats_fn, vecs, field_vecs):
    total = 0.0
    for c in range(3):
        a = mats_fn(xs[c], field_vecs[c])
        av = matvec(np.broadcast_to(a, vecs[c].shape + (3,)), vecs[c])
        total += tree_sum(grid.weights(staggers[c]) * vecs[c][..., c] * av[..., c])
    return total


def _level0_energy(grid, E, D, H, B) -> float:
    tot = 0.0
    for c in range(3):
        tot += tree_sum(grid.weights(E_STAGGER[c]) * E[c] * D[c])
        tot += tree_sum(grid.weights(H_STAGGER[c]) * H[c] * B[c])
    return tot


def energy_levels(state, model: MaterialModel, grid: StaggeredGrid, kmax: int,
                  der: Derivatives | None = None) -> list[float]:
    """Unmaximised energies ``|eps_j^{1/2} d^j E|^2 + |mu_j^{1/2} d^j H|^2``."""
    out = [_level0_energy(grid, state.E, state.D, state.H, state.B)]
    if kmax == 0:
        return out
    der = der or time_derivatives(state.history, model, grid, kmax)
    xe = [grid.coords(s) for s in E_STAGGER]
    xh = [grid.coords(s) for s in H_STAGGER]
    for j in range(1, kmax + 1):
        out.append(_quad_form(grid, E_STAGGER, xe, model.eps.derived, der.E[j], der.E[0])
                   + _quad_form(grid, H_STAGGER, xh, model.mu.derived, der.H[j], der.H[0]))
    return out


def energy_e(state, model: MaterialModel, grid: StaggeredGrid, k: int) -> float:
    """``e_k = 1/2 max_{j <= k}`` of the weighted energies of ``d^j (E, H)``.

    Raises
    ------
    InsufficientHistory
        If fewer than ``k + 2`` levels are stored (``k >= 1``).
    """
    return 0.5 * max(energy_levels(state, model, grid, k))


def _face_pairs(grid):
    for side in SIDES:
        for c in side.tangential_axes:
            yield side, c, 3 - side.axis - c


def _face_full(vec_c: np.ndarray, side) -> np.ndarray:
    v = face_slice(vec_c, side).copy()
    v[..., side.axis] = 0.0
    return v


def boundary_levels(state, model: MaterialModel, grid: StaggeredGrid, kmax: int,
                    der: Derivatives | None = None) -> list[float]:
    """Unmaximised dissipations ``|lam^{1/2} tr_t d^j E|^2_Gamma``.

    The weight is the original boundary law evaluated at the current trace,
    for every level ``j``.
    """
    from .stepper import _face_vectors

    out = []
    der = der if der is not None or kmax == 0 else time_derivatives(state.history, model,
                                                                       grid, kmax)
    for j in range(kmax + 1):
        tot = 0.0
        for side, c, d in _face_pairs(grid):
            nu = side.normal
            x = grid.face_coords(E_STAGGER[c], side)
            w0 = np.cross(_face_vectors(state.E, side, c), nu)
            v = w0 if j == 0 else np.cross(_face_full(der.E[j][c], side), nu)
            lam = np.broadcast_to(model.lam.value(x, w0), v.shape + (3,))
            q = v[..., d] * matvec(lam, v)[..., d]
            tot += tree_sum(grid.face_weights(E_STAGGER[c], side) * q)
        out.append(tot)
    return out


def dissipation_d(state, model: MaterialModel, grid: StaggeredGrid, k: int) -> float:
    """``d_k = max_{j <= k} |lam^{1/2} tr_t d^j E|^2`` on the boundary."""
    return max(boundary_levels(state, model, grid, k))


def boundary_dissipation(grid: StaggeredGrid, model: MaterialModel, E: tuple,
                         bc: dict | None = None) -> float:
    """``d_0`` for given edge fields, restricted to absorbing sides."""
    from .stepper import _face_vectors

    tot = 0.0
    for side, c, d in _face_pairs(grid):
        if bc is not None and bc[side] != "absorbing":
            continue
        x = grid.face_coords(E_STAGGER[c], side)
        w = np.cross(_face_vectors(E, side, c), side.normal)
        lam = np.broadcast_to(model.lam.value(x, w), w.shape + (3,))
        tot += tree_sum(grid.face_weights(E_STAGGER[c], side) * w[..., d] * matvec(lam, w)[..., d])
    return tot


def z_levels(state, model: MaterialModel, grid: StaggeredGrid, k: int,
             der: Derivatives | None = None) -> list[float]:
    out = []
    if k > 0:
        der = der or time_derivatives(state.history, model, grid, k)
    for j in range(k + 1):
        tot = 0.0
        for c in range(3):
            e = state.E[c] if j == 0 else der.E[j][c][..., c]
            h = state.H[c] if j == 0 else der.H[j][c][..., c]
            tot += discrete_norm(e, k - j, grid) ** 2 + discrete_norm(h, k - j, grid) ** 2
        out.append(tot)
    return out


def z_norm(state, model: MaterialModel, grid: StaggeredGrid, k: int) -> float:
    """``z_k = max_j (|d^j E|^2_{H^{k-j}} + |d^j H|^2_{H^{k-j}})``."""
    return max(z_levels(state, model, grid, k))


# -- traces ----------------------------------------------------------------


def trace_norms(state, model: MaterialModel, grid: StaggeredGrid, bc: dict | None = None) -> dict:
    """Squared boundary L2 norms of the normal and tangential traces."""
    from .stepper import impedance_ghosts

    ghosts = impedance_ghosts(grid, model, state.E, bc)
    nu_d = nu_b = tan_e = tan_h = 0.0
    for side in SIDES:
        a = side.axis
        dn = extrapolate_trace(state.D[a], a, side.sign)
        wn = grid.face_weights(NODE_STAGGER, side)
        nu_d += tree_sum(wn * dn * dn)
        bn = face_slice(state.B[a], side)
        nu_b += tree_sum(grid.face_weights(H_STAGGER[a], side) * bn * bn)
        kind = "absorbing" if bc is None else bc[side]
        for c in side.tangential_axes:
            d = 3 - a - c
            fw = grid.face_weights(E_STAGGER[c], side)
            ec = face_slice(state.E[c], side)
            tan_e += tree_sum(fw * ec * ec)
            if kind == "absorbing":
                hd = ghosts[(side, d)]
            elif kind == "pec":
                hd = extrapolate_trace(state.H[d], a, side.sign)
            else:
                hd = np.zeros_like(ec)
            tan_h += tree_sum(fw * hd * hd)
    return {"tr_nu_epsE": nu_d, "tr_nu_muH": nu_b, "tr_tan_E": tan_e, "tr_tan_H": tan_h}


# -- commutators and derived systems ---------------------------------------


@dataclass
class CommutatorFields:
    """Commutator terms. ``f`` and ``g`` are per-component edge and face
    fields; ``h`` maps ``(side, c)`` to boundary arrays."""

    f2: list
    f3: list
    g2: list
    g3: list
    h2: dict
    h3: dict

    def norms(self, grid: StaggeredGrid) -> dict:
        out = {}
        for name, stag in (("f2", E_STAGGER), ("f3", E_STAGGER), ("g2", H_STAGGER),
                           ("g3", H_STAGGER)):
            arrs = getattr(self, name)
            out[name] = float(np.sqrt(sum(tree_sum(grid.weights(stag[c]) * arrs[c] ** 2)
                                          for c in range(3))))
        for name in ("h2", "h3"):
            tot = 0.0
            for (side, c), arr in getattr(self, name).items():
                tot += tree_sum(grid.face_weights(E_STAGGER[c], side) * arr ** 2)
            out[name] = float(np.sqrt(tot))
        return out


def _f_terms(law, x, v0, v1, v2, v3=None):
    """``f2 = (d_t a^d) v1`` and ``f3 = (d_t^2 a^d) v1 + 2 (d_t a^d) v2``."""
    da = law.derived_dir(x, v0, v1)
    dda = law.derived_dir2(x, v0, v1, v1) + law.derived_dir(x, v0, v2)
    f2 = matvec(np.broadcast_to(da, v1.shape + (3,)), v1)
    f3 = matvec(np.broadcast_to(dda, v1.shape + (3,)), v1) + 2.0 * matvec(
        np.broadcast_to(da, v2.shape + (3,)), v2)
    return f2, f3


def commutators(state, model: MaterialModel, grid: StaggeredGrid,
                der: Derivatives | None = None) -> CommutatorFields:
    """Commutator terms of the time-differentiated system at the current level.

    Raises
    ------
    InsufficientHistory
        With fewer than four stored levels.
    """
    if len(state.history) < 4:
        raise InsufficientHistory("commutators need at least four stored levels")
    der = der or time_derivatives(state.history, model, grid, 2)
    f2, f3, g2, g3 = [], [], [], []
    for c in range(3):
        x = grid.coords(E_STAGGER[c])
        a, b = _f_terms(model.eps, x, der.E[0][c], der.E[1][c], der.E[2][c])
        f2.append(a[..., c])
        f3.append(b[..., c])
        x = grid.coords(H_STAGGER[c])
        a, b = _f_terms(model.mu, x, der.H[0][c], der.H[1][c], der.H[2][c])
        g2.append(a[..., c])
        g3.append(b[..., c])
    h2, h3 = {}, {}
    for side, c, d in _face_pairs(grid):
        nu = side.normal
        x = grid.face_coords(E_STAGGER[c], side)
        w = [np.cross(_face_full(der.E[j][c], side), nu) for j in range(3)]
        a, b = _f_terms(model.lam, x, w[0], w[1], w[2])
        h2[(side, c)] = np.cross(a, nu)[..., c]
        h3[(side, c)] = np.cross(b, nu)[..., c]
    return CommutatorFields(f2, f3, g2, g3, h2, h3)


def derived_system_residual(state, model: MaterialModel, grid: StaggeredGrid, k: int) -> dict:
    """Residuals of the ``k``-times time-differentiated system.

    Evaluated at the middle stored level. The interior line is
    ``d_t(eps^d d^k E) + d_t f_k - curl d^k H`` on edges away from the
    boundary, the divergence line is ``div(eps^d d^k E + f_k)`` at interior
    nodes, and the boundary line is
    ``d^k H x nu + (lam^d (d^k E x nu)) x nu + h_k x nu`` with extrapolated
    ``H`` traces.

    Returns
    -------
    dict
        ``interior``, ``divergence`` and ``boundary`` residual norms plus the
        ``scale`` ``|curl d^k H|`` for relative comparisons.

    Raises
    ------
    InsufficientHistory
        If fewer than five levels are stored.
    """
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    snaps = _levels(state.history, 5)
    m = len(snaps)
    center = (m - 1) // 2
    vecs = [snapshot_vectors(s, model, grid) for s in snaps]
    xe = [grid.coords(s) for s in E_STAGGER]

    # d^j E_hat at every stored level, j = 0..k
    ders = [[v[0][c] for v in vecs] for c in range(3)]
    per_level = []
    for i in range(m):
        lv = []
        for j in range(k + 1):
            if j == 0:
                lv.append([vecs[i][0][c] for c in range(3)])
            else:
                w = _time_weights(snaps, i, j)
                lv.append([_combine(w, ders[c]) for c in range(3)])
        per_level.append(lv)

    def flux_k(i, c):
        lv = per_level[i]
        a = model.eps.derived(xe[c], lv[0][c])
        p = matvec(np.broadcast_to(a, lv[k][c].shape + (3,)), lv[k][c])
        if k >= 2:
            v2 = lv[2][c]
            f2, f3 = _f_terms(model.eps, xe[c], lv[0][c], lv[1][c], v2)
            p = p + (f2 if k == 2 else f3)
        return p

    wt = _time_weights(snaps, center, 1)
    wk = _time_weights(snaps, center, k)
    dkH = tuple(_combine(wk, [s.H[c] for s in snaps]) for c in range(3))
    curl = curl_h(grid, dkH)
    interior_sq = scale_sq = 0.0
    fluxes = []
    for c in range(3):
        dp = _combine(wt, [flux_k(i, c)[..., c] for i in range(m)])
        r = dp - curl[c]
        mask = ~boundary_mask(E_STAGGER[c], grid)
        w = grid.weights(E_STAGGER[c]) * mask
        interior_sq += tree_sum(w * r * r)
        scale_sq += tree_sum(w * curl[c] * curl[c])
        fluxes.append(flux_k(center, c)[..., c])
    q = interior(div_nodes(grid, tuple(fluxes)))
    div_res = float(np.sqrt(tree_sum(interior(grid.weights(NODE_STAGGER)) * q * q)))

    # boundary line at the centre level
    lv = per_level[center]
    bsq = 0.0
    for side, c, d in _face_pairs(grid):
        nu = side.normal
        x = grid.face_coords(E_STAGGER[c], side)
        w = [np.cross(_face_full(lv[j][c], side), nu) for j in range(k + 1)]
        lamd = np.broadcast_to(model.lam.derived(x, w[0]), w[0].shape + (3,))
        term = matvec(lamd, w[k])
        if k >= 2:
            w2 = w[2]
            h2, h3 = _f_terms(model.lam, x, w[0], w[1], w2)
            term = term + (h2 if k == 2 else h3)
        hv = np.zeros(x.shape)
        hv[..., d] = extrapolate_trace(dkH[d], side.axis, side.sign)
        r = np.cross(hv, nu)[..., c] + np.cross(term, nu)[..., c]
        bsq += tree_sum(grid.face_weights(E_STAGGER[c], side) * r * r)
    return {"interior": float(np.sqrt(interior_sq)), "divergence": div_res,
            "boundary": float(np.sqrt(bsq)), "scale": float(np.sqrt(scale_sq)),
            "t": snaps[center].t}


# -- energy balance --------------------------------------------------------


def energy_identity_residual(e0_now: float, e0_initial: float, dissipation_integral: float) -> float:
    """``|e_0(t) + int_0^t d_0 - e_0(0)|``."""
    return abs(e0_now + dissipation_integral - e0_initial)


def sample_functionals(state, model: MaterialModel, grid: StaggeredGrid, kmax: int = 3,
                       bc: dict | None = None) -> dict:
    """One series row at the current state.

    Levels that need more history than is stored are reported as NaN.
    """
    from .operators import charge_norms

    row = {"t": state.t}
    depth = len(state.history)
    kavail = min(kmax, depth - 2) if depth >= 3 else 0
    der = time_derivatives(state.history, model, grid, kavail) if kavail > 0 else None
    el = energy_levels(state, model, grid, kavail, der)
    dl = boundary_levels(state, model, grid, kavail, der)
    zl = [max(z_levels(state, model, grid, k, der)) for k in range(kavail + 1)]
    for k in range(4):
        if k <= kavail:
            row[f"e{k}"] = 0.5 * max(el[: k + 1])
            row[f"d{k}"] = max(dl[: k + 1])
            row[f"z{k}"] = zl[k]
        else:
            row[f"e{k}"] = row[f"d{k}"] = row[f"z{k}"] = np.nan
    qd, qb = charge_norms(grid, state.D, state.B)
    row["charge_E"], row["charge_H"] = qd, qb
    row.update(trace_norms(state, model, grid, bc))
    row["energy_identity_residual"] = energy_identity_residual(
        row["e0"], state.e0_initial, state.dissipation_integral)
    return row


# -- empirical constants ---------------------------------------------------


def _cumtrapz(t, v):
    out = np.zeros_like(v)
    out[1:] = np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))
    return out


def energy_inequality_constant(series: FunctionalSeries, k: int = 3) -> float:
    """Smallest ``c`` with ``e(t) + int_s^t d <= e(s) + c int_s^t z^{3/2}``.

    Taken over all sample pairs ``s < t`` where the level-``k`` values are
    available. Returns 0 when the balance holds without the cubic term.
    """
    t = series.t
    e, d, z = (series.column(f"{n}{k}") for n in "edz")
    ok = np.isfinite(e) & np.isfinite(d) & np.isfinite(z)
    t, e, d, z = t[ok], e[ok], d[ok], z[ok]
    if len(t) < 2:
        return 0.0
    D = _cumtrapz(t, d)
    Z = _cumtrapz(t, z ** 1.5)
    num = (e[None, :] + D[None, :] - D[:, None]) - e[:, None]
    den = Z[None, :] - Z[:, None]
    upper = np.triu(np.ones_like(num, dtype=bool), 1)
    pos = upper & (num > 0)
    if not pos.any():
        return 0.0
    with np.errstate(divide="ignore"):
        ratio = np.where(den[pos] > 0, num[pos] / den[pos], np.inf)
    return float(ratio.max())


def regularity_constants(series: FunctionalSeries, k: int = 3) -> tuple[float, float]:
    """``(c5, c6)`` with ``z <= c5 e + c6 z^2`` samplewise, taking ``c6 = 0``."""
    e = series.column(f"e{k}")
    z = series.column(f"z{k}")
    ok = np.isfinite(e) & np.isfinite(z) & (e > 0)
    if not ok.any():
        return 0.0, 0.0
    return float(np.max(z[ok] / e[ok])), 0.0
