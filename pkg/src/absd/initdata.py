"""Admissible initial data, the initial time-derivative jet, and boundary
compatibility residuals.

Initial fields must be charge free, ``div(eps(E) E) = 0`` and
``div(mu(H) H) = 0``, with no normal flux through the boundary. The discrete
projector below removes a nodal gradient so that the discrete divergence of
the flux vanishes at every node, boundary nodes included; that last part is
the discrete form of a vanishing normal trace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ProjectionError
from .geometry import E_STAGGER, H_STAGGER, NODE_STAGGER, SIDES, StaggeredGrid, face_slice
from .materials import LinearLaw, Law, MaterialModel
from .numerics import solve3, tree_sum
from .operators import (FieldSet, curl_e, curl_h, div_nodes, e_vectors, extrapolate_trace,
                        full_vectors, grad, h_vectors)


@dataclass
class InitialJet:
    """Initial fields and their first two time derivatives."""

    E0: tuple
    H0: tuple
    E1: tuple
    H1: tuple
    E2: tuple
    H2: tuple


# -- Helmholtz projection --------------------------------------------------


def _as_law(alpha) -> Law:
    if alpha is None:
        return LinearLaw(1.0)
    if isinstance(alpha, Law):
        return alpha
    return LinearLaw(alpha)


def _node_norm(grid: StaggeredGrid, q: np.ndarray) -> float:
    return float(np.sqrt(tree_sum(grid.weights(NODE_STAGGER) * q * q)))


def weighted_charge(grid: StaggeredGrid, alpha, w: tuple) -> float:
    """Weighted L2 norm over all nodes of ``div(alpha(w) w)``."""
    law = _as_law(alpha)
    flux = tuple(law.flux(grid.coords(E_STAGGER[c]), e_vectors(w, c))[..., c] for c in range(3))
    return _node_norm(grid, div_nodes(grid, flux))


def _poisson_solve(grid: StaggeredGrid, coeff: tuple, rhs: np.ndarray, rtol: float) -> np.ndarray:
    """Solve ``-div(coeff grad phi) = rhs`` with the natural Neumann condition.

    The operator is assembled matrix free in symmetric form
    ``G^T W coeff G`` and solved by conjugate gradients on the mean-zero
    subspace.
    """
    shape = grid.shape(NODE_STAGGER)
    wn = grid.weights(NODE_STAGGER)
    b = (wn * rhs).ravel()
    b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(shape)

    def apply(v):
        phi = v.reshape(shape)
        g = grad(grid, phi)
        out = -wn * div_nodes(grid, tuple(coeff[c] * g[c] for c in range(3)))
        return out.ravel()

    # Jacobi preconditioning keeps the iteration count modest on refined grids
    diag = np.zeros(shape)
    for c in range(3):
        h = grid.h[c]
        wc = grid.weights(E_STAGGER[c]) * coeff[c] / (h * h)
        a = np.moveaxis(wc, c, 0)
        d = np.zeros((a.shape[0] + 1,) + a.shape[1:])
        d[:-1] += a
        d[1:] += a
        diag += np.moveaxis(d, 0, c)
    dinv = 1.0 / diag.ravel()
    n = b.size
    op = LinearOperator((n, n), matvec=apply, dtype=float)
    pre = LinearOperator((n, n), matvec=lambda v: dinv * v, dtype=float)
    x, info = cg(op, b, rtol=rtol, atol=0.0, maxiter=20 * n, M=pre)
    if info != 0:
        raise ProjectionError(f"conjugate gradients did not converge (info={info})")
    x = x - x.mean()
    return x.reshape(shape)


def helmholtz_project(grid: StaggeredGrid, alpha, w: tuple, rtol: float = 1e-13,
                      tol: float = 1e-10, max_sweeps: int = 20):
    """Split ``w`` into a weighted-solenoidal part and a gradient.

    Parameters
    ----------
    grid : StaggeredGrid
    alpha : None, float, array_like or Law
        Weight. Constants and linear laws give a single linear projection;
        a nonlinear law is handled by fixed-point sweeps, each freezing the
        diagonal of the derived matrix at the current iterate.
    w : tuple of ndarray
        Edge-located field.
    rtol : float
        Relative residual for each conjugate-gradient solve.
    tol, max_sweeps : float, int
        Stop sweeping once the weighted charge drops below ``tol``.

    Returns
    -------
    u : tuple of ndarray
        Field with ``div(alpha u) = 0`` at all nodes.
    phi : ndarray
        Nodal potential with ``w = u + grad phi``.
    """
    law = _as_law(alpha)
    xs = [grid.coords(E_STAGGER[c]) for c in range(3)]
    u = tuple(np.array(a, dtype=float) for a in w)
    phi = np.zeros(grid.shape(NODE_STAGGER))
    sweeps = 1 if law.linear else max_sweeps
    for _ in range(sweeps):
        vec = [e_vectors(u, c) for c in range(3)]
        flux = tuple(law.flux(xs[c], vec[c])[..., c] for c in range(3))
        q = div_nodes(grid, flux)
        if not law.linear and _node_norm(grid, q) <= tol:
            break
        coeff = tuple(np.broadcast_to(law.derived(xs[c], vec[c])[..., c, c], xs[c].shape[:-1])
                      for c in range(3))
        dphi = _poisson_solve(grid, coeff, -q, rtol)
        g = grad(grid, dphi)
        u = tuple(u[c] - g[c] for c in range(3))
        phi = phi + dphi
    return u, phi


def project_with_count(grid, alpha, w, rtol=1e-13, tol=1e-10, max_sweeps=20):
    """Like :func:`helmholtz_project` but also return the sweep count."""
    law = _as_law(alpha)
    count = 0
    u = w
    for count in range(1, max_sweeps + 1):
        u, _ = helmholtz_project(grid, law, u, rtol, tol, 1)
        if weighted_charge(grid, law, u) <= tol:
            break
    return u, count


# -- bump recipes ----------------------------------------------------------


def bump_profile(rho: np.ndarray) -> np.ndarray:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - rho^2))`` on ``rho < 1``."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = rho < 1.0
    r2 = rho[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2))
    return out


def _check_support(grid: StaggeredGrid, center, radius: float) -> None:
    if radius <= 0:
        raise ValueError("bump radius must be positive")
    margin = 2.0 * max(grid.h)
    for a in range(3):
        lo = center[a] - radius
        hi = center[a] + radius
        if lo < margin or hi > grid.extent[a] - margin:
            raise ValueError(
                f"bump support [{lo:.4g}, {hi:.4g}] on axis {a} is closer than 2h to the boundary")


def _rotation_field(grid, staggers, center, radius, pol):
    out = []
    for c in range(3):
        x = grid.coords(staggers[c])
        r = x - np.asarray(center)
        b = bump_profile(np.linalg.norm(r, axis=-1) / radius)
        out.append(b * np.cross(pol, r)[..., c])
    return tuple(out)


def _potential(grid, staggers, center, radius, pol):
    out = []
    for c in range(3):
        x = grid.coords(staggers[c])
        b = bump_profile(np.linalg.norm(x - np.asarray(center), axis=-1) / radius)
        out.append(b * pol[c])
    return tuple(out)


def _max_abs(arrs) -> float:
    return max(float(np.max(np.abs(a))) for a in arrs)


def make_bump_data(grid: StaggeredGrid, center, radius: float, amplitude: float,
                   polarization=(0.0, 0.0, 1.0), model: MaterialModel | None = None,
                   recipe: str = "bump", h_polarization=None) -> FieldSet:
    """Compactly supported, charge-free initial fields.

    Parameters
    ----------
    recipe : {"bump", "curl-bump"}
        ``bump`` is a smooth bump times ``p x (x - center)``, projected onto
        the charge-free set. ``curl-bump`` takes the discrete curl of a bump
        potential polarised along ``p``, which is exactly divergence free.
    amplitude : float
        Maximum absolute entry of the E arrays.
    h_polarization : array_like, optional
        If given, ``H`` is the discrete curl of an edge bump potential along
        this vector (requires a constant isotropic ``mu``); otherwise ``H = 0``.

    Raises
    ------
    ValueError
        If the support comes within ``2h`` of the boundary.
    """
    center = np.asarray(center, dtype=float)
    pol = np.asarray(polarization, dtype=float)
    _check_support(grid, center, radius)
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    fields = FieldSet.zeros(grid)
    if amplitude == 0:
        return fields
    eps = model.eps if model is not None else LinearLaw(1.0)
    if recipe == "bump":
        raw = _rotation_field(grid, E_STAGGER, center, radius, pol)
    elif recipe == "curl-bump":
        raw = curl_h(grid, _potential(grid, H_STAGGER, center, radius, pol))
    else:
        raise ValueError(f"unknown recipe {recipe!r}")
    scale = _max_abs(raw)
    if scale == 0:
        raise ValueError("polarization produces a zero field")
    E = tuple(amplitude / scale * a for a in raw)
    needs_projection = recipe == "bump" or not (
        isinstance(eps, LinearLaw) and eps.profile.kind == "constant"
        and np.allclose(eps.matrix, eps.matrix[0, 0] * np.eye(3), rtol=0, atol=0))
    if needs_projection:
        if eps.linear:
            E, _ = helmholtz_project(grid, eps, E)
        else:
            # shape from the zero-field weight, then the nonlinear sweeps
            E, _ = helmholtz_project(grid, _ZeroField(eps), E)
            E = tuple(amplitude / _max_abs(E) * a for a in E)
            E, _ = helmholtz_project(grid, eps, E)
    H = fields.H
    if h_polarization is not None:
        mu = model.mu if model is not None else LinearLaw(1.0)
        if not (isinstance(mu, LinearLaw) and mu.profile.kind == "constant"
                and np.allclose(mu.matrix, mu.matrix[0, 0] * np.eye(3), rtol=0, atol=0)):
            raise ValueError("H initial data requires a constant isotropic mu")
        hp = np.asarray(h_polarization, dtype=float)
        H = curl_e(grid, _potential(grid, E_STAGGER, center, radius, hp))
        H = tuple(amplitude / _max_abs(H) * a for a in H)
    return FieldSet(tuple(E), tuple(H))


class _ZeroField(Law):
    """A law frozen at zero field (linear surrogate of ``law``)."""

    linear = True

    def __init__(self, law: Law):
        self.law = law

    def value(self, x, xi=None):
        return self.law.zero_field(x)

    def derived(self, x, xi=None):
        return self.law.zero_field(x)

    def flux(self, x, xi):
        return np.einsum("...ij,...j->...i", self.value(x), xi)


def random_bump_params(rng: np.random.Generator, grid: StaggeredGrid,
                       radius_range=(0.2, 0.3)) -> dict:
    """Draw a random admissible bump centre, radius and polarisation."""
    radius = float(rng.uniform(*radius_range))
    margin = radius + 2.0 * max(grid.h) + 1e-9
    center = [float(rng.uniform(margin, grid.extent[a] - margin)) for a in range(3)]
    pol = rng.normal(size=3)
    pol /= np.linalg.norm(pol)
    return {"center": center, "radius": radius, "polarization": pol.tolist()}


# -- initial jet -----------------------------------------------------------


def initial_time_derivatives(fields: FieldSet, model: MaterialModel, grid: StaggeredGrid,
                             bc: dict | None = None) -> InitialJet:
    """First and second time derivatives of the semi-discrete system at t = 0.

    ``E1 = eps^d(E0)^-1 curl H0`` and ``H1 = -mu^d(H0)^-1 curl E0``, with
    ``E2 = eps^d^-1 (curl H1 - (d eps^d)[E1] E1)`` and the analogue for
    ``H2``. Curls of ``H`` carry the boundary ghosts of the absorbing
    condition and of its time derivative.

    Raises
    ------
    numpy.linalg.LinAlgError
        If a derived matrix is singular (fields left the small-data regime).
    """
    from .stepper import impedance_ghosts

    E0, H0 = fields.E, fields.H
    xe = [grid.coords(E_STAGGER[c]) for c in range(3)]
    xh = [grid.coords(H_STAGGER[c]) for c in range(3)]
    ve0 = [e_vectors(E0, c) for c in range(3)]
    vh0 = [h_vectors(H0, c) for c in range(3)]
    epsd = [model.eps.derived(xe[c], ve0[c]) for c in range(3)]
    mud = [model.mu.derived(xh[c], vh0[c]) for c in range(3)]

    def solve(mats, rhs, c):
        m = np.broadcast_to(mats, rhs.shape + (3,))
        if np.any(~np.isfinite(m)):
            raise np.linalg.LinAlgError("non-finite coefficient")
        det = np.linalg.det(m)
        if np.any(np.abs(det) < 1e-300):
            raise np.linalg.LinAlgError("derived matrix is singular")
        return solve3(m, rhs)[..., c]

    g0 = impedance_ghosts(grid, model, E0, bc)
    ch0 = curl_h(grid, H0, g0)
    E1 = tuple(solve(epsd[c], full_vectors(ch0, E_STAGGER, c), c) for c in range(3))
    ce0 = curl_e(grid, E0)
    H1 = tuple(-solve(mud[c], full_vectors(ce0, H_STAGGER, c), c) for c in range(3))

    g1 = impedance_ghosts(grid, model, E0, bc, direction=E1)
    ch1 = curl_h(grid, H1, g1)
    E2 = []
    for c in range(3):
        v1 = e_vectors(E1, c)
        corr = np.einsum("...ij,...j->...i", model.eps.derived_dir(xe[c], ve0[c], v1), v1)
        E2.append(solve(epsd[c], full_vectors(ch1, E_STAGGER, c) - corr, c))
    ce1 = curl_e(grid, E1)
    H2 = []
    for c in range(3):
        v1 = h_vectors(H1, c)
        corr = np.einsum("...ij,...j->...i", model.mu.derived_dir(xh[c], vh0[c], v1), v1)
        H2.append(-solve(mud[c], full_vectors(ce1, H_STAGGER, c) + corr, c))
    return InitialJet(E0, H0, E1, H1, tuple(E2), tuple(H2))


# -- compatibility ---------------------------------------------------------


def _face_E(E, side, c):
    from .stepper import _face_vectors

    return _face_vectors(E, side, c)


def tangential_h_trace(H: tuple, side, d: int) -> np.ndarray:
    """Extrapolated boundary value of the tangential component ``H_d``."""
    return extrapolate_trace(H[d], side.axis, side.sign)


def compatibility_residual(jet: InitialJet, model: MaterialModel,
                           grid: StaggeredGrid) -> tuple[float, float, float]:
    """Boundary L2 norms of the order-0, 1 and 2 compatibility residuals.

    Order ``j`` is the ``j``-th time derivative of
    ``H x nu + (lam(E x nu)(E x nu)) x nu`` at ``t = 0``, written with the
    derived boundary matrix for ``j >= 1``. Tangential ``H`` traces are
    extrapolated from the two nearest interior layers.
    """
    totals = [0.0, 0.0, 0.0]
    for side in SIDES:
        nu = side.normal
        for c in side.tangential_axes:
            d = 3 - side.axis - c
            x = grid.face_coords(E_STAGGER[c], side)
            wts = grid.face_weights(E_STAGGER[c], side)
            w = [np.cross(_face_E(E, side, c), nu) for E in (jet.E0, jet.E1, jet.E2)]
            lam = model.lam.value(x, w[0])
            lamd = model.lam.derived(x, w[0])
            dlam = model.lam.derived_dir(x, w[0], w[1])
            mv = lambda m, v: np.einsum("...ij,...j->...i", m, v)
            terms = [mv(lam, w[0]), mv(lamd, w[1]), mv(lamd, w[2]) + mv(dlam, w[1])]
            for j, H in enumerate((jet.H0, jet.H1, jet.H2)):
                hv = np.zeros(x.shape)
                hv[..., d] = tangential_h_trace(H, side, d)
                r = np.cross(hv, nu)[..., c] + np.cross(terms[j], nu)[..., c]
                totals[j] += tree_sum(wts * r * r)
    return tuple(float(np.sqrt(v)) for v in totals)
