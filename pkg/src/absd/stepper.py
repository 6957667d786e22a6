"""Leapfrog time stepping with an absorbing, field-dependent boundary.

The canonical variables are the fluxes ``D = eps(x, E) E`` on the edges and
``B = mu(x, H) H`` on the faces. One step of length ``dt`` is the
kick-drift-kick form of the staggered leapfrog scheme::

    B  <- B - dt/2 curl E          H <- invert mu
    D  <- D + dt curl H  (+ boundary damping)
                                   E <- invert eps
    B  <- B - dt/2 curl E          H <- invert mu

so ``E`` and ``H`` are both available at integer times. The absorbing
condition enters through the ghost value of the tangential ``H`` on the
boundary plane, ``H_g = -lam(x, E x nu) (E x nu)``. Its contribution to the
boundary edges is treated with the trapezoid rule in time (``lam`` frozen at
the old ``E``), which keeps the scheme stable for any ``lam >= 0`` and makes
the discrete energy balance exact in the linear case.

Constitutive inversion is pointwise Newton on the three-vector obtained by
averaging the other two flux components onto the component's location; the
Newton Jacobian is the law's derived matrix.

The box boundary is handled side by side. Each side is ``absorbing``,
``pec`` (tangential ``E`` held at zero) or ``pmc`` (tangential ``H`` zero).
``pec`` wins on edges shared with other kinds.
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergence
from .geometry import E_STAGGER, H_STAGGER, SIDES, Side, StaggeredGrid, face_slice, restagger
from .materials import MaterialModel, _sample_ball, check_positivity, invert_constitutive
from .numerics import solve3
from .operators import FieldSet, curl_e, curl_h, e_vectors, full_vectors, h_vectors

BC_KINDS = ("absorbing", "pec", "pmc")
HISTORY_DEPTH = 5


@dataclass
class StepParams:
    """Time-stepping controls.

    ``bc`` maps each :class:`~absd.geometry.Side` to a boundary kind;
    unspecified sides are absorbing.
    """

    dt: float
    cfl_safety: float = 0.9
    newton_tol: float = 1e-12
    newton_max: int = 25
    threads: int = 1
    bc: dict = field(default_factory=dict)
    viscosity: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.viscosity) and self.viscosity >= 0):
            raise ValueError("viscosity must be finite and nonnegative")
        if not (0.0 < self.cfl_safety <= 1.0):
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.newton_tol < 1e-14:
            raise ValueError("newton_tol must be >= 1e-14")
        if self.newton_max < 1:
            raise ValueError("newton_max must be >= 1")
        if not np.isfinite(self.dt) or self.dt == 0:
            raise ValueError("dt must be finite and nonzero")
        bc = {side: "absorbing" for side in SIDES}
        for key, kind in self.bc.items():
            kind = "pec" if kind == "reflecting" else kind
            if kind not in BC_KINDS:
                raise ValueError(f"unknown boundary kind {kind!r}")
            bc[Side(*key)] = kind
        self.bc = bc


@dataclass
class Snapshot:
    """A stored time level for time-derivative estimation."""

    step: int
    t: float
    E: tuple
    H: tuple
    D: tuple
    B: tuple
    cache: dict = field(default_factory=dict, repr=False, compare=False)


@dataclass
class SimState:
    """Fields, fluxes and recent history at one time level."""

    step: int
    dt: float
    fields: FieldSet
    D: tuple
    B: tuple
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_DEPTH))
    e0_initial: float = 0.0
    dissipation_integral: float = 0.0

    @property
    def t(self) -> float:
        return self.step * self.dt

    @property
    def E(self):
        return self.fields.E

    @property
    def H(self):
        return self.fields.H

    def push_history(self) -> None:
        self.history.append(Snapshot(self.step, self.t, self.fields.E, self.fields.H, self.D, self.B))


def eigen_extremes(grid: StaggeredGrid, model: MaterialModel, samples: int = 512,
                   seed: int = 0) -> dict:
    """Min and max eigenvalues of eps, eps^d, mu, mu^d over sampled points.

    Fields range over the ball of radius ``delta0``; points over the grid
    nodes.
    """
    from .geometry import NODE_STAGGER

    rng = np.random.default_rng(seed)
    nodes = grid.coords(NODE_STAGGER).reshape(-1, 3)
    pts = np.concatenate([nodes, nodes[rng.integers(0, len(nodes), samples)]])
    xi = np.concatenate([np.zeros((len(nodes), 3)), _sample_ball(rng, samples, model.delta0)])
    out = {}
    for fam in ("eps", "mu"):
        law = model.law(fam)
        ev = np.concatenate([
            np.linalg.eigvalsh(np.broadcast_to(law.value(pts, xi), (len(pts), 3, 3))),
            np.linalg.eigvalsh(np.broadcast_to(law.derived(pts, xi), (len(pts), 3, 3))),
        ])
        out[fam] = (float(ev[:, 0].min()), float(ev[:, -1].max()))
    return out


def cfl_dt(grid: StaggeredGrid, model: MaterialModel, safety: float = 0.9,
           samples: int = 512) -> float:
    """Stable step ``safety * min h * sqrt(min eig eps * min eig mu) / sqrt(3)``.

    Raises
    ------
    ValueError
        If the sampled coefficients are not positive definite.
    """
    ext = eigen_extremes(grid, model, samples)
    lo = ext["eps"][0] * ext["mu"][0]
    if not lo > 0:
        raise ValueError("coefficients are not positive definite; no stable step exists")
    return safety * min(grid.h) * math.sqrt(lo) / math.sqrt(3.0)


def _face_vectors(E: tuple, side: Side, c: int) -> np.ndarray:
    """Full E vector on the boundary-plane slice of component ``c``'s lattice."""
    sl = [slice(None)] * 3
    sl[side.axis] = slice(0, 1) if side.sign < 0 else slice(-1, None)
    sl = tuple(sl)
    target = E_STAGGER[c]
    comps = []
    for d in range(3):
        if d == side.axis:
            comps.append(np.zeros(np.shape(E[c][sl])))
        elif d == c:
            comps.append(E[c][sl])
        else:
            comps.append(restagger(E[d][sl], E_STAGGER[d], target))
    return np.stack(comps, axis=-1)[tuple(0 if i == side.axis else slice(None) for i in range(3))]


def impedance_ghosts(grid: StaggeredGrid, model: MaterialModel, E: tuple,
                     bc: dict | None = None, direction: tuple | None = None) -> dict:
    """Ghost tangential ``H`` on every absorbing side.

    Returns ``{(side, d): array}`` with ``H_g = -lam(x, E x nu)(E x nu)``
    evaluated at the supplied ``E``. Component ``d`` of the ghost is stored on
    the face lattice of the E component it couples to.

    With ``direction`` given, returns instead the linearised ghost
    ``-lam^d(x, E x nu)(V x nu)`` for ``V = direction``, which is the ghost of
    the first time derivative when ``V = dE/dt``.
    """
    ghosts = {}
    for side in SIDES:
        kind = "absorbing" if bc is None else bc[side]
        if kind != "absorbing":
            continue
        nu = side.normal
        for c in side.tangential_axes:
            d = 3 - side.axis - c
            x = grid.face_coords(E_STAGGER[c], side)
            w = np.cross(_face_vectors(E, side, c), nu)
            if direction is None:
                lam = model.lam.value(x, w)
                hg = -np.einsum("...ij,...j->...i", lam, w)
            else:
                v = np.cross(_face_vectors(direction, side, c), nu)
                lam = model.lam.derived(x, w)
                hg = -np.einsum("...ij,...j->...i", lam, v)
            ghosts[(side, d)] = hg[..., d]
    return ghosts


class Stepper:
    """Owns the precomputed geometry and material data for stepping."""

    def __init__(self, grid: StaggeredGrid, model: MaterialModel, params: StepParams):
        self.grid = grid
        self.model = model
        self.params = params
        self.xe = [grid.coords(E_STAGGER[c]) for c in range(3)]
        self.xh = [grid.coords(H_STAGGER[c]) for c in range(3)]
        self._pool = ThreadPoolExecutor(params.threads) if params.threads > 1 else None
        self._diag_eps = self._diagonal(model.eps, self.xe)
        self._diag_mu = self._diagonal(model.mu, self.xh)
        self.pec_mask = [self._side_mask(c, "pec") for c in range(3)]
        self.absorb_mask = [self._side_mask(c, "absorbing") & ~self.pec_mask[c]
                            for c in range(3)]
        self._lam_coeff = None
        if model.lam.linear:
            self._lam_coeff = self._damping(None)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    @staticmethod
    def _diagonal(law, xs):
        # fast path for diagonal linear laws: per-component coefficient arrays
        if law.linear and law.diagonal:
            return [law.value(xs[c])[..., c, c] for c in range(3)]
        return None

    def _side_mask(self, c: int, kind: str) -> np.ndarray:
        mask = np.zeros(self.grid.shape(E_STAGGER[c]), dtype=bool)
        for side in SIDES:
            if side.axis != c and self.params.bc[side] == kind:
                face_slice(mask, side)[...] = True
        return mask

    def _damping(self, E):
        """Per-component implicit coefficient ``sum_f lam_dd / h_f`` and the
        explicit off-diagonal ghost contribution."""
        grid = self.grid
        coeff = [np.zeros(grid.shape(E_STAGGER[c])) for c in range(3)]
        extra = [np.zeros(grid.shape(E_STAGGER[c])) for c in range(3)]
        for side in SIDES:
            if self.params.bc[side] != "absorbing":
                continue
            nu = side.normal
            h = grid.h[side.axis]
            for c in side.tangential_axes:
                d = 3 - side.axis - c
                x = grid.face_coords(E_STAGGER[c], side)
                if E is None:
                    w = np.zeros(x.shape)
                else:
                    w = np.cross(_face_vectors(E, side, c), nu)
                lam = self.model.lam.value(x, w)
                lam = np.broadcast_to(lam, x.shape[:-1] + (3, 3))
                keep = ~face_slice(self.pec_mask[c], side)
                face_slice(coeff[c], side)[...] += np.where(keep, lam[..., d, d] / h, 0.0)
                if E is not None:
                    # (2/h)(nu x H_g)_c minus its diagonal part -(2/h) lam_dd E_c
                    hg = -np.einsum("...ij,...j->...i", lam, w)
                    full = (2.0 / h) * np.cross(nu, hg)[..., c]
                    diag = -(2.0 / h) * lam[..., d, d] * face_slice(E[c], side)
                    face_slice(extra[c], side)[...] += np.where(keep, full - diag, 0.0)
        return coeff, extra

    # -- constitutive maps ------------------------------------------------

    def forward_eps(self, E: tuple) -> tuple:
        if self._diag_eps is not None:
            return tuple(self._diag_eps[c] * E[c] for c in range(3))
        return tuple(self.model.eps.flux(self.xe[c], e_vectors(E, c))[..., c] for c in range(3))

    def forward_mu(self, H: tuple) -> tuple:
        if self._diag_mu is not None:
            return tuple(self._diag_mu[c] * H[c] for c in range(3))
        return tuple(self.model.mu.flux(self.xh[c], h_vectors(H, c))[..., c] for c in range(3))

    def _invert(self, law, diag, xs, stag, flux, guess, c, shift=None, old=None):
        if diag is not None:
            if shift is None:
                return flux[c] / diag[c]
            return (flux[c] - shift * old) / (diag[c] + shift)
        target = full_vectors(flux, stag, c)
        g = full_vectors(guess, stag, c)
        sv = None
        if shift is not None:
            target[..., c] -= shift * old
            sv = np.zeros(target.shape)
            sv[..., c] = shift
        try:
            e, _ = invert_constitutive(law, xs[c], target, g, self.params.newton_tol,
                                       self.params.newton_max, sv)
        except NonConvergence as err:
            err.args = (f"component {c + 1}: {err.args[0]}",)
            raise
        return e[..., c]

    def invert_eps(self, D: tuple, guess: tuple, shift=None, old=None) -> tuple:
        fn = lambda c: self._invert(self.model.eps, self._diag_eps, self.xe, E_STAGGER, D,
                                    guess, c, None if shift is None else shift[c],
                                    None if old is None else old[c])
        return tuple(self._map(fn, range(3)))

    def invert_mu(self, B: tuple, guess: tuple) -> tuple:
        fn = lambda c: self._invert(self.model.mu, self._diag_mu, self.xh, H_STAGGER, B, guess, c)
        return tuple(self._map(fn, range(3)))

    # -- state ------------------------------------------------------------

    def initial_state(self, fields: FieldSet, dt: float | None = None) -> SimState:
        """Build a consistent state from initial fields.

        The fluxes are formed from the given fields and the fields are then
        recovered from the fluxes, so the state satisfies the same pointwise
        relation as every later time level.
        """
        fields.check(self.grid)
        dt = self.params.dt if dt is None else dt
        D = self.forward_eps(fields.E)
        B = self.forward_mu(fields.H)
        E = self.invert_eps(D, fields.E)
        H = self.invert_mu(B, fields.H)
        for c in range(3):
            E[c][self.pec_mask[c]] = 0.0
        D = tuple(np.where(self.pec_mask[c], 0.0, D[c]) for c in range(3))
        state = SimState(0, dt, FieldSet(E, H), D, B)
        state.push_history()
        return state

    def step(self, state: SimState) -> SimState:
        """Advance one step. Returns a new state; the input is not modified."""
        dt = state.dt
        E, H = state.fields.E, state.fields.H
        ce = curl_e(self.grid, E)
        B = tuple(state.B[c] - 0.5 * dt * ce[c] for c in range(3))
        H = self.invert_mu(B, H)

        ch = curl_h(self.grid, H)
        Dstar = [state.D[c] + dt * ch[c] for c in range(3)]
        if self.params.viscosity:
            # h^2 curl curl damping of grid-scale modes; charge neutral
            nu = self.params.viscosity * min(self.grid.h) ** 2
            cc = curl_h(self.grid, ce)
            Dstar = [Dstar[c] - dt * nu * cc[c] for c in range(3)]
        if self._lam_coeff is not None:
            coeff, extra = self._lam_coeff[0], None
        else:
            coeff, extra = self._damping(E)
        shift = [dt * coeff[c] for c in range(3)]
        if extra is not None:
            Dstar = [Dstar[c] + dt * extra[c] for c in range(3)]
        # PEC edges carry no flux; mask before inverting so E is a function of the stored D
        Dstar = [np.where(self.pec_mask[c], 0.0, Dstar[c]) for c in range(3)]
        try:
            E_new = self.invert_eps(tuple(Dstar), E, shift, E)
        except NonConvergence as err:
            err.time = state.t
            raise
        E_new = tuple(np.where(self.pec_mask[c], 0.0, E_new[c]) for c in range(3))
        D = tuple(np.where(self.pec_mask[c], 0.0, Dstar[c] - shift[c] * (E_new[c] + E[c]))
                  for c in range(3))

        ce = curl_e(self.grid, E_new)
        B = tuple(B[c] - 0.5 * dt * ce[c] for c in range(3))
        try:
            H_new = self.invert_mu(B, H)
        except NonConvergence as err:
            err.time = state.t
            raise
        new = SimState(state.step + 1, dt, FieldSet(E_new, H_new), D, B,
                       deque(state.history, maxlen=HISTORY_DEPTH),
                       state.e0_initial, state.dissipation_integral)
        if not all(np.all(np.isfinite(a)) for a in new.fields.arrays()):
            raise FloatingPointError(f"non-finite field values at t={new.t:.6g}")
        new.push_history()
        return new


def step(state: SimState, stepper: Stepper) -> SimState:
    return stepper.step(state)


def apply_impedance_bc(state: SimState, model: MaterialModel, grid: StaggeredGrid,
                       bc: dict | None = None) -> dict:
    """Ghost tangential ``H`` layer enforcing the absorbing condition at ``state``."""
    return impedance_ghosts(grid, model, state.fields.E, bc)


def run(config, **kwargs):
    """Run an experiment; see :func:`absd.runner.run_config`."""
    from .runner import run_config

    return run_config(config, **kwargs)


__all__ = [
    "StepParams", "SimState", "Stepper", "cfl_dt", "step", "run", "curl_e", "curl_h",
    "apply_impedance_bc", "impedance_ghosts", "invert_constitutive", "eigen_extremes",
    "check_positivity", "solve3",
]
