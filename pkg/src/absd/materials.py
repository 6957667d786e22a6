"""Constitutive laws, their field Jacobians, and the admissibility checks.

Every law maps ``(x, xi)`` to a symmetric 3x3 matrix. Points and field
vectors are arrays with a trailing axis of length 3 and arbitrary leading
(broadcast-compatible) shape, so the same code serves single points and whole
grids.

For a law ``a(x, xi)`` the *derived* matrix is the Jacobian of the flux map
``F(xi) = a(x, xi) xi``::

    a^d_ij = a_ij + sum_l (d a_il / d xi_j) xi_l

It is the Newton Jacobian for inverting ``F`` and the coefficient that
appears after differentiating the field equations in time. ``derived_dir``
and ``derived_dir2`` are its first and second directional derivatives in
``xi``, needed for the time derivatives of ``a^d(x, E(t))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonConvergence
from .numerics import matvec, solve3

EYE = np.eye(3)


# -- spatial profiles ------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    """Scalar spatial profile ``s(x)`` multiplying a law's linear part.

    ``kind`` is one of ``constant``, ``radial-quadratic``
    (``1 + |m|^2``), ``radial-inverse-quadratic`` (``1 / (1 + |m|^2)``) or
    ``callable``. ``m = x - x0``. ``radial_derivative`` returns ``(m . grad) s``
    in closed form, or by fourth-order central differences along ``m`` with
    step ``step`` for callables.
    """

    kind: str = "constant"
    x0: tuple = (0.0, 0.0, 0.0)
    func: Callable | None = None
    step: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("constant", "radial-quadratic", "radial-inverse-quadratic", "callable"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "callable" and self.func is None:
            raise ValueError("callable profile needs func")

    def _m2(self, x):
        m = np.asarray(x, dtype=float) - np.asarray(self.x0)
        return np.sum(m * m, axis=-1)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.ones(x.shape[:-1])
        if self.kind == "radial-quadratic":
            return 1.0 + self._m2(x)
        if self.kind == "radial-inverse-quadratic":
            return 1.0 / (1.0 + self._m2(x))
        return np.asarray(self.func(x), dtype=float) * np.ones(x.shape[:-1])

    def radial_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.zeros(x.shape[:-1])
        r2 = self._m2(x)
        if self.kind == "radial-quadratic":
            return 2.0 * r2
        if self.kind == "radial-inverse-quadratic":
            return -2.0 * r2 / (1.0 + r2) ** 2
        # d/dtau s(x + tau m) at tau = 0, with |tau m| = step
        m = x - np.asarray(self.x0)
        norm = np.sqrt(r2)
        safe = np.where(norm > 0, norm, 1.0)
        tau = (self.step / safe)[..., None]
        f = lambda k: self(x + k * tau * m)
        d = (-f(2) + 8 * f(1) - 8 * f(-1) + f(-2)) / (12.0 * tau[..., 0])
        return np.where(norm > 0, d, 0.0)


# -- laws ------------------------------------------------------------------


def _broadcast_eye(shape) -> np.ndarray:
    return np.broadcast_to(EYE, tuple(shape) + (3, 3))


class Law:
    """Interface shared by all constitutive laws."""

    linear: bool = False

    def value(self, x, xi) -> np.ndarray:
        raise NotImplementedError

    def derived(self, x, xi) -> np.ndarray:
        raise NotImplementedError

    def derived_dir(self, x, xi, v) -> np.ndarray:
        raise NotImplementedError

    def derived_dir2(self, x, xi, v, w) -> np.ndarray:
        raise NotImplementedError

    def flux(self, x, xi) -> np.ndarray:
        return matvec(self.value(x, xi), xi)

    def zero_field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.value(x, np.zeros(x.shape))

    def radial_derivative_zero(self, x) -> np.ndarray:
        """``(m . grad_x) a(x, 0)``."""
        raise NotImplementedError


@dataclass(frozen=True)
class LinearLaw(Law):
    """Field-independent law ``a(x) = s(x) A`` with symmetric ``A``."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    profile: Profile = field(default_factory=Profile)
    linear = True

    def __post_init__(self):
        a = np.array(self.matrix, dtype=float)
        if a.ndim == 0:
            a = a * np.eye(3)
        elif a.shape == (3,):
            a = np.diag(a)
        if a.shape != (3, 3):
            raise ValueError("matrix must be a scalar, a diagonal, or 3x3")
        if not np.allclose(a, a.T, rtol=0, atol=1e-14):
            raise ValueError("constitutive matrix must be symmetric")
        object.__setattr__(self, "matrix", 0.5 * (a + a.T))

    @property
    def diagonal(self) -> bool:
        return not np.any(self.matrix - np.diag(np.diag(self.matrix)))

    def value(self, x, xi=None):
        s = self.profile(x)
        return s[..., None, None] * self.matrix

    def derived(self, x, xi=None):
        return self.value(x)

    def derived_dir(self, x, xi, v):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1])
        return np.zeros(shape + (3, 3))

    def derived_dir2(self, x, xi, v, w):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1], np.shape(w)[:-1])
        return np.zeros(shape + (3, 3))

    def zero_field(self, x):
        return self.value(x)

    def radial_derivative_zero(self, x):
        return self.profile.radial_derivative(x)[..., None, None] * self.matrix


@dataclass(frozen=True)
class KerrLaw(Law):
    """Isotropic Kerr law ``a = (s(x) a_lin + a_nl |xi|^2) I``.

    The derived matrix has the closed form ``a + 2 a_nl xi xi^T``.
    """

    lin: float = 2.0
    nl: float = 1.0
    profile: Profile = field(default_factory=Profile)

    def _scalar(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        return self.profile(x) * self.lin + self.nl * np.sum(xi * xi, axis=-1)

    def value(self, x, xi):
        return self._scalar(x, xi)[..., None, None] * EYE

    def flux(self, x, xi):
        return self._scalar(x, xi)[..., None] * np.asarray(xi, dtype=float)

    def derived(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        return self.value(x, xi) + 2.0 * self.nl * xi[..., :, None] * xi[..., None, :]

    def derived_dir(self, x, xi, v):
        xi = np.asarray(xi, dtype=float)
        v = np.asarray(v, dtype=float)
        dot = np.sum(xi * v, axis=-1)
        return 2.0 * self.nl * (dot[..., None, None] * EYE
                                + v[..., :, None] * xi[..., None, :]
                                + xi[..., :, None] * v[..., None, :])

    def derived_dir2(self, x, xi, v, w):
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        dot = np.sum(v * w, axis=-1)
        out = 2.0 * self.nl * (dot[..., None, None] * EYE
                               + v[..., :, None] * w[..., None, :]
                               + w[..., :, None] * v[..., None, :])
        shape = np.broadcast_shapes(np.shape(x)[:-1], out.shape[:-2])
        return np.broadcast_to(out, shape + (3, 3))

    def zero_field(self, x):
        return (self.profile(x) * self.lin)[..., None, None] * EYE

    def radial_derivative_zero(self, x):
        return (self.profile.radial_derivative(x) * self.lin)[..., None, None] * EYE


def _is_fully_symmetric(t: np.ndarray) -> bool:
    from itertools import permutations

    return all(np.allclose(t, np.transpose(t, p), rtol=0, atol=1e-14)
               for p in permutations(range(t.ndim)))


@dataclass(frozen=True)
class PolynomialLaw(Law):
    """Anisotropic law of degree two in the field.

    ``a_ij(x, xi) = s(x) A0_ij + T_ijl xi_l + Q_ijlm xi_l xi_m``

    ``T`` and ``Q`` must be fully symmetric, which makes both ``a`` and
    ``a^d = s A0 + 2 T xi + 3 Q xi xi`` symmetric. With ``T = 0`` and
    ``Q_ijlm = (a_nl / 3)(d_ij d_lm + d_il d_jm + d_im d_jl)`` the flux and
    the derived matrix coincide with those of the Kerr law (the secant
    matrix ``a`` itself does not).
    """

    A0: np.ndarray = field(default_factory=lambda: np.eye(3))
    profile: Profile = field(default_factory=Profile)
    T: np.ndarray | None = None
    Q: np.ndarray | None = None

    def __post_init__(self):
        a0 = np.array(self.A0, dtype=float)
        if a0.ndim == 0:
            a0 = a0 * np.eye(3)
        elif a0.shape == (3,):
            a0 = np.diag(a0)
        if a0.shape != (3, 3) or not np.allclose(a0, a0.T, rtol=0, atol=1e-14):
            raise ValueError("A0 must be a symmetric 3x3 matrix")
        t = np.zeros((3, 3, 3)) if self.T is None else np.array(self.T, dtype=float)
        q = np.zeros((3, 3, 3, 3)) if self.Q is None else np.array(self.Q, dtype=float)
        if t.shape != (3, 3, 3) or q.shape != (3, 3, 3, 3):
            raise ValueError("T must be 3x3x3 and Q 3x3x3x3")
        if not _is_fully_symmetric(t) or not _is_fully_symmetric(q):
            raise ValueError("T and Q must be fully symmetric tensors")
        object.__setattr__(self, "A0", a0)
        object.__setattr__(self, "T", t)
        object.__setattr__(self, "Q", q)

    def value(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        return (self.profile(x)[..., None, None] * self.A0
                + np.einsum("ijl,...l->...ij", self.T, xi)
                + np.einsum("ijlm,...l,...m->...ij", self.Q, xi, xi))

    def derived(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        return (self.profile(x)[..., None, None] * self.A0
                + 2.0 * np.einsum("ijl,...l->...ij", self.T, xi)
                + 3.0 * np.einsum("ijlm,...l,...m->...ij", self.Q, xi, xi))

    def derived_dir(self, x, xi, v):
        return (2.0 * np.einsum("ijl,...l->...ij", self.T, v)
                + 6.0 * np.einsum("ijlm,...l,...m->...ij", self.Q, xi, v))

    def derived_dir2(self, x, xi, v, w):
        out = 6.0 * np.einsum("ijlm,...l,...m->...ij", self.Q, v, w)
        shape = np.broadcast_shapes(np.shape(x)[:-1], out.shape[:-2])
        return np.broadcast_to(out, shape + (3, 3))

    def zero_field(self, x):
        return self.profile(x)[..., None, None] * self.A0

    def radial_derivative_zero(self, x):
        return self.profile.radial_derivative(x)[..., None, None] * self.A0


def kerr_as_polynomial(lin: float, nl: float, profile: Profile | None = None) -> PolynomialLaw:
    """The Kerr law written in the polynomial vocabulary."""
    d = np.eye(3)
    q = (nl / 3.0) * (np.einsum("ij,lm->ijlm", d, d) + np.einsum("il,jm->ijlm", d, d)
                      + np.einsum("im,jl->ijlm", d, d))
    return PolynomialLaw(lin * np.eye(3), profile or Profile(), None, q)


# -- material model --------------------------------------------------------


@dataclass(frozen=True)
class MaterialModel:
    """Bundle of the permittivity, permeability and boundary laws.

    Parameters
    ----------
    eps, mu : Law
        Interior laws.
    lam : Law
        Boundary law, evaluated only on boundary points. Must be isotropic
        or otherwise map tangential vectors to tangential vectors; it is
        projected onto the tangent plane when a normal is supplied.
    eta : float
        Uniform positivity floor.
    delta0 : float
        Small-field radius over which positivity is required.
    """

    eps: Law
    mu: Law
    lam: Law
    eta: float = 0.5
    delta0: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")

    @property
    def kind(self) -> str:
        if isinstance(self.eps, KerrLaw):
            return "kerr"
        if isinstance(self.eps, PolynomialLaw):
            return "polynomial"
        return "linear"

    @property
    def linear(self) -> bool:
        return self.eps.linear and self.mu.linear and self.lam.linear

    def law(self, family: str) -> Law:
        return {"eps": self.eps, "mu": self.mu, "lam": self.lam}[family]

    def hat(self, family: str, k: int) -> Callable:
        """Coefficient evaluator used at derivative level ``k``.

        Level 0 uses the law itself, levels 1 to 3 its derived matrix.
        """
        if k not in (0, 1, 2, 3):
            raise ValueError("k must be in 0..3")
        law = self.law(family)
        return law.value if k == 0 else law.derived


def _project(mat: np.ndarray, normal) -> np.ndarray:
    if normal is None:
        return mat
    nu = np.asarray(normal, dtype=float)
    p = EYE - nu[..., :, None] * nu[..., None, :]
    return p @ mat @ p


def eval_eps(model: MaterialModel, x, xi) -> np.ndarray:
    return model.eps.value(x, xi)


def eval_eps_d(model: MaterialModel, x, xi) -> np.ndarray:
    return model.eps.derived(x, xi)


def eval_mu(model: MaterialModel, x, xi) -> np.ndarray:
    return model.mu.value(x, xi)


def eval_mu_d(model: MaterialModel, x, xi) -> np.ndarray:
    return model.mu.derived(x, xi)


def eval_lambda(model: MaterialModel, x, xi, normal=None) -> np.ndarray:
    return _project(model.lam.value(x, xi), normal)


def eval_lambda_d(model: MaterialModel, x, xi, normal=None) -> np.ndarray:
    return _project(model.lam.derived(x, xi), normal)


# -- Newton inversion of the flux map -------------------------------------


def invert_constitutive(law: Law, x, D, guess=None, tol: float = 1e-12,
                        max_iter: int = 25, shift=None):
    """Solve ``a(x, E) E + shift * E = D`` for ``E`` by damped Newton.

    Parameters
    ----------
    law : Law
        Constitutive law; its ``derived`` matrix is the Newton Jacobian.
    x, D : array_like, shape (..., 3)
    guess : array_like, optional
        Warm start, defaults to ``D`` scaled by the zero-field inverse.
    tol : float
        Converged when ``|r| <= tol * (1 + |D|)`` pointwise.
    max_iter : int
    shift : array_like, shape (..., 3), optional
        Nonnegative diagonal shift (used for implicit boundary damping).

    Returns
    -------
    E : ndarray
    iterations : int
        Newton iterations performed (the maximum over points).

    Raises
    ------
    NonConvergence
        With the location of the worst point when the cap is reached.
    """
    x = np.asarray(x, dtype=float)
    D = np.asarray(D, dtype=float)
    if law.linear:
        a = law.value(x)
        if shift is not None:
            a = a + np.asarray(shift)[..., None] * EYE
        return solve3(np.broadcast_to(a, D.shape + (3,)), D), 1

    def residual(e):
        r = law.flux(x, e) - D
        if shift is not None:
            r = r + shift * e
        return r

    if guess is None:
        e = solve3(np.broadcast_to(law.zero_field(x), D.shape + (3,)), D)
    else:
        e = np.array(np.broadcast_to(guess, D.shape), dtype=float)
    scale = tol * (1.0 + np.linalg.norm(D, axis=-1))
    r = residual(e)
    rn = np.linalg.norm(r, axis=-1)
    it = 0
    while np.any(rn > scale):
        if it >= max_iter:
            worst = np.unravel_index(np.argmax(rn / scale), rn.shape)
            loc = x[worst] if x.shape[:-1] == rn.shape else x
            raise NonConvergence(
                f"Newton failed after {it} iterations, residual {rn[worst]:.3e}",
                location=np.asarray(loc))
        it += 1
        jac = law.derived(x, e)
        if shift is not None:
            jac = jac + np.asarray(shift)[..., None] * EYE
        step = solve3(np.broadcast_to(jac, e.shape + (3,)), r)
        # damped update, halving where the residual would grow
        alpha = np.ones(rn.shape)
        trial = e - step
        rt = residual(trial)
        rtn = np.linalg.norm(rt, axis=-1)
        for _ in range(6):
            bad = ~(rtn <= rn) & (rn > scale)
            if not np.any(bad):
                break
            alpha = np.where(bad, 0.5 * alpha, alpha)
            trial = e - alpha[..., None] * step
            rt = residual(trial)
            rtn = np.linalg.norm(rt, axis=-1)
        e, r, rn = trial, rt, rtn
    return e, it


# -- admissibility checks -------------------------------------------------


def _sample_ball(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / 3.0)
    # half the samples on the sphere, where definiteness is usually weakest
    r[: count // 2] = radius
    return d * r[:, None]


def _boundary_nodes(grid) -> np.ndarray:
    from .geometry import NODE_STAGGER, boundary_mask

    return grid.coords(NODE_STAGGER)[boundary_mask(NODE_STAGGER, grid)]


def check_positivity(model: MaterialModel, grid, samples: int = 2000, seed: int = 0) -> dict:
    """Sample minimum eigenvalues of every coefficient family.

    Points are drawn from the grid nodes (boundary nodes for ``lam``) and
    fields from the ball ``|xi| <= delta0``. Zero-field families must reach
    ``2 eta`` and the field-dependent ones ``eta``.

    Returns
    -------
    dict
        ``passed`` plus, per family, the minimum eigenvalue and the witness
        ``x`` and ``xi``.
    """
    from .geometry import NODE_STAGGER

    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    nodes = grid.coords(NODE_STAGGER).reshape(-1, 3)
    bnodes = _boundary_nodes(grid)
    xi = _sample_ball(rng, samples, model.delta0)
    report = {"eta": model.eta, "delta0": model.delta0, "families": {}}
    passed = True
    for fam in ("eps", "mu", "lam"):
        law = model.law(fam)
        pts_all = bnodes if fam == "lam" else nodes
        idx = rng.integers(0, len(pts_all), size=samples)
        pts = pts_all[idx]
        checks = {
            f"{fam}0": (law.zero_field(pts_all), None, 2.0 * model.eta, pts_all),
            fam: (law.value(pts, xi), xi, model.eta, pts),
            f"{fam}_d": (law.derived(pts, xi), xi, model.eta, pts),
        }
        for name, (mats, fields, floor, where) in checks.items():
            mats = np.broadcast_to(mats, (len(where), 3, 3))
            eig = np.linalg.eigvalsh(mats)[:, 0]
            k = int(np.argmin(eig))
            ok = bool(eig[k] >= floor)
            passed &= ok
            report["families"][name] = {
                "min_eig": float(eig[k]),
                "floor": floor,
                "passed": ok,
                "x": where[k].tolist(),
                "xi": None if fields is None else fields[k].tolist(),
            }
    report["passed"] = passed
    return report


def generalized_min_eig(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest ``t`` with ``a >= t b`` for batches of symmetric ``b > 0``.

    Cholesky whitening ``b = L L^T`` followed by a symmetric eigensolve of
    ``L^-1 a L^-T``.
    """
    low = np.linalg.cholesky(b)
    linv = np.linalg.inv(low)
    c = linv @ a @ np.swapaxes(linv, -1, -2)
    return np.linalg.eigvalsh(0.5 * (c + np.swapaxes(c, -1, -2)))[..., 0]


def check_nontrapping(model: MaterialModel, grid) -> dict:
    """Largest ``eta_bar`` with ``a + (m . grad) a >= eta_bar a`` at zero field.

    Evaluated for ``eps`` and ``mu`` at every grid node. ``eta_bar`` is
    ``1 + min_x lambda_min(L^-1 (m . grad a) L^-T)``, which equals 1 exactly
    for constant coefficients.

    Returns
    -------
    dict
        ``passed``, ``eta_bar``, and on failure the ``witness`` point closest to
        ``x0`` where the condition breaks, plus the ``worst`` point.
    """
    from .geometry import NODE_STAGGER

    x = grid.coords(NODE_STAGGER).reshape(-1, 3)
    m = x - np.asarray(grid.x0)
    dist = np.linalg.norm(m, axis=1)
    worst_val = np.inf
    worst_x = None
    fail = np.zeros(len(x), dtype=bool)
    per = {}
    for fam in ("eps", "mu"):
        law = model.law(fam)
        a = np.broadcast_to(law.zero_field(x), (len(x), 3, 3))
        da = np.broadcast_to(law.radial_derivative_zero(x), (len(x), 3, 3))
        val = 1.0 + generalized_min_eig(da, a)
        k = int(np.argmin(val))
        per[fam] = float(val[k])
        if val[k] < worst_val:
            worst_val, worst_x = float(val[k]), x[k]
        fail |= val <= 0.0
    report = {"eta_bar": worst_val, "per_family": per, "passed": bool(worst_val > 0)}
    if fail.any():
        idx = np.flatnonzero(fail)
        k = idx[np.argmin(dist[idx])]
        report["witness"] = x[k].tolist()
        report["witness_distance"] = float(dist[k])
        report["worst"] = worst_x.tolist()
    return report


def flux_jacobian_fd(law: Law, x, xi, step: float) -> np.ndarray:
    """Central-difference Jacobian of ``xi -> a(x, xi) xi`` (test oracle)."""
    xi = np.asarray(xi, dtype=float)
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        cols.append((law.flux(x, xi + e) - law.flux(x, xi - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)
