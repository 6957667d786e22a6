"""Field containers and the staggered difference operators.

All operators act on tuples of three arrays laid out according to the
stagger patterns in :mod:`absd.geometry`. ``curl_h`` is the weighted adjoint
of ``curl_e`` (with zero ghosts), and ``div_nodes`` the weighted adjoint of
``-grad``, so ``div_nodes(curl_h(H)) == 0`` and ``div_cells(curl_e(E)) == 0``
up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (CELL_STAGGER, E_STAGGER, H_STAGGER, NODE_STAGGER, SIDES,
                       StaggeredGrid, restagger)
from .numerics import tree_sum

Triple = tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class FieldSet:
    """The six staggered components of ``E`` and ``H``."""

    E: Triple
    H: Triple

    @classmethod
    def zeros(cls, grid: StaggeredGrid) -> "FieldSet":
        return cls(tuple(np.zeros(grid.shape(s)) for s in E_STAGGER),
                   tuple(np.zeros(grid.shape(s)) for s in H_STAGGER))

    def copy(self) -> "FieldSet":
        return FieldSet(tuple(a.copy() for a in self.E), tuple(a.copy() for a in self.H))

    def scaled(self, s: float) -> "FieldSet":
        return FieldSet(tuple(s * a for a in self.E), tuple(s * a for a in self.H))

    def arrays(self) -> list[np.ndarray]:
        return list(self.E) + list(self.H)

    def check(self, grid: StaggeredGrid) -> None:
        for c in range(3):
            if self.E[c].shape != grid.shape(E_STAGGER[c]):
                raise ValueError(f"E{c + 1} has shape {self.E[c].shape}, "
                                 f"expected {grid.shape(E_STAGGER[c])}")
            if self.H[c].shape != grid.shape(H_STAGGER[c]):
                raise ValueError(f"H{c + 1} has shape {self.H[c].shape}, "
                                 f"expected {grid.shape(H_STAGGER[c])}")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("field contains non-finite values")

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.arrays())


def _half_diff(arr: np.ndarray, axis: int, h: float, lo=None, hi=None) -> np.ndarray:
    """Difference of a half-staggered array onto the integer positions.

    ``lo`` and ``hi`` are ghost values sitting on the boundary planes; the
    end differences use the half spacing.
    """
    a = np.moveaxis(arr, axis, 0)
    lo = np.zeros(a.shape[1:]) if lo is None else lo
    hi = np.zeros(a.shape[1:]) if hi is None else hi
    padded = np.concatenate([lo[None], a, hi[None]], axis=0)
    d = np.diff(padded, axis=0)
    d[1:-1] /= h
    d[0] /= 0.5 * h
    d[-1] /= 0.5 * h
    return np.moveaxis(d, 0, axis)


def curl_e(grid: StaggeredGrid, E: Triple) -> Triple:
    """Curl of an edge field, located on faces."""
    h = grid.h
    out = []
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3
        out.append(np.diff(E[b], axis=a) / h[a] - np.diff(E[a], axis=b) / h[b])
    return tuple(out)


def curl_h(grid: StaggeredGrid, H: Triple, ghosts: dict | None = None) -> Triple:
    """Curl of a face field, located on edges.

    Parameters
    ----------
    ghosts : dict, optional
        ``ghosts[(side, d)]`` is the tangential value of ``H_d`` on the given
        boundary side, shaped like that side's slice of the matching E
        component. Missing entries are zero.
    """
    ghosts = ghosts or {}
    h = grid.h
    out = []
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3
        terms = []
        # dH_b/dx_a - dH_a/dx_b
        for d, ax, sgn in ((b, a, 1.0), (a, b, -1.0)):
            lo = ghosts.get(((ax, -1), d))
            hi = ghosts.get(((ax, 1), d))
            lo = None if lo is None else np.asarray(lo)
            hi = None if hi is None else np.asarray(hi)
            terms.append(sgn * _half_diff(H[d], ax, h[ax], _squeeze(lo, ax), _squeeze(hi, ax)))
        out.append(terms[0] + terms[1])
    return tuple(out)


def _squeeze(arr, axis):
    if arr is None:
        return None
    if arr.ndim == 3:
        return np.take(arr, 0, axis=axis)
    return arr


def grad(grid: StaggeredGrid, phi: np.ndarray) -> Triple:
    """Gradient of a nodal scalar, located on edges."""
    return tuple(np.diff(phi, axis=c) / grid.h[c] for c in range(3))


def div_nodes(grid: StaggeredGrid, V: Triple) -> np.ndarray:
    """Divergence of an edge field at the nodes.

    Defined as minus the weighted adjoint of :func:`grad`. At interior nodes
    it is the standard centred stencil. At boundary nodes it is the one-sided
    flux balance over the half control volume, which vanishes exactly when
    the field carries no outward normal flux.
    """
    out = np.zeros(grid.shape(NODE_STAGGER))
    for c in range(3):
        h = grid.h[c]
        v = np.moveaxis(V[c], c, 0)
        zero = np.zeros((1,) + v.shape[1:])
        padded = np.concatenate([zero, v, zero], axis=0)
        d = np.diff(padded, axis=0) / h
        d[0] *= 2.0
        d[-1] *= 2.0
        out += np.moveaxis(d, 0, c)
    return out


def div_cells(grid: StaggeredGrid, B: Triple) -> np.ndarray:
    """Divergence of a face field at the cell centres."""
    return sum(np.diff(B[c], axis=c) / grid.h[c] for c in range(3))


def extrapolate_trace(arr: np.ndarray, axis: int, sign: int) -> np.ndarray:
    """Second-order extrapolation of a half-staggered array to a boundary plane."""
    a = np.moveaxis(arr, axis, 0)
    if sign < 0:
        return 1.5 * a[0] - 0.5 * a[1]
    return 1.5 * a[-1] - 0.5 * a[-2]


def interior(arr: np.ndarray) -> np.ndarray:
    return arr[1:-1, 1:-1, 1:-1]


def weighted_norm(grid: StaggeredGrid, arr: np.ndarray, stagger) -> float:
    """Discrete L2 norm with the dual-cell weights of ``stagger``."""
    return float(np.sqrt(tree_sum(grid.weights(stagger) * arr * arr)))


def charge_norms(grid: StaggeredGrid, D: Triple, B: Triple) -> tuple[float, float]:
    """L2 norms of ``div D`` over interior nodes and ``div B`` over cells.

    Boundary nodes are excluded for ``D``: the absorbing condition deposits
    surface charge there, exactly as in the continuum problem.
    """
    dd = interior(div_nodes(grid, D))
    w = interior(grid.weights(NODE_STAGGER))
    qd = float(np.sqrt(tree_sum(w * dd * dd)))
    qb = weighted_norm(grid, div_cells(grid, B), CELL_STAGGER)
    return qd, qb


def full_vectors(arrs: Triple, staggers, c: int) -> np.ndarray:
    """Three-vector field at the locations of component ``c``.

    Component ``c`` is taken as is; the other two are averaged onto its
    stagger. Returns shape ``(*shape_c, 3)``.
    """
    target = staggers[c]
    comps = [arrs[d] if d == c else restagger(arrs[d], staggers[d], target) for d in range(3)]
    return np.stack(comps, axis=-1)


def e_vectors(E: Triple, c: int) -> np.ndarray:
    return full_vectors(E, E_STAGGER, c)


def h_vectors(H: Triple, c: int) -> np.ndarray:
    return full_vectors(H, H_STAGGER, c)


__all__ = [
    "FieldSet", "curl_e", "curl_h", "grad", "div_nodes", "div_cells", "charge_norms",
    "weighted_norm", "full_vectors", "e_vectors", "h_vectors", "interior", "SIDES",
]
