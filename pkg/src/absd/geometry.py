"""Box domain, Yee staggering and boundary bookkeeping.

The domain is the axis-aligned box ``[0, L1] x [0, L2] x [0, L3]``. This is a
deliberate simplification of a smooth domain with connected complement: the
box has connected complement, but its boundary is only Lipschitz. Corners and
edges are treated face by face.

Staggering follows the usual Yee layout. ``E_c`` sits on edge midpoints
(half-integer along axis ``c``, integer along the other two axes) and ``H_c``
on face centres (integer along ``c``, half-integer along the others). A
stagger pattern is a triple of booleans, ``True`` meaning half-integer.

Dual (control-volume) weights are ``h`` for half-integer positions and the
trapezoid weights ``h/2, h, ..., h, h/2`` for integer positions. With these
weights the discrete curls are adjoint up to boundary terms, which is what
makes the discrete energy identity exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

E_STAGGER = tuple(tuple(a == c for a in range(3)) for c in range(3))
H_STAGGER = tuple(tuple(a != c for a in range(3)) for c in range(3))
NODE_STAGGER = (False, False, False)
CELL_STAGGER = (True, True, True)


class Side(NamedTuple):
    """One of the six faces of the box."""

    axis: int
    sign: int  # -1 for the low face, +1 for the high face

    @property
    def index(self) -> int:
        return 0 if self.sign < 0 else -1

    @property
    def normal(self) -> np.ndarray:
        nu = np.zeros(3)
        nu[self.axis] = self.sign
        return nu

    @property
    def tangential_axes(self) -> tuple[int, int]:
        a = self.axis
        return ((a + 1) % 3, (a + 2) % 3)


SIDES = tuple(Side(a, s) for a in range(3) for s in (-1, 1))


@dataclass(frozen=True)
class BoundaryFace:
    index: int
    cell: tuple[int, int, int]
    normal: tuple[float, float, float]
    area: float
    center: tuple[float, float, float]


@dataclass(frozen=True)
class StaggeredGrid:
    """Uniform staggered grid on a box.

    Parameters
    ----------
    extent : tuple of float
        Physical side lengths.
    n : tuple of int
        Cell counts per axis, each at least 4.
    x0 : tuple of float, optional
        Reference point for the radial multiplier ``m(x) = x - x0``.
        Defaults to the box centre.
    """

    extent: tuple[float, float, float]
    n: tuple[int, int, int]
    x0: tuple[float, float, float] | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        extent = tuple(float(v) for v in self.extent)
        n = tuple(int(v) for v in self.n)
        if len(extent) != 3 or len(n) != 3:
            raise ValueError("extent and n need three entries")
        if any(not np.isfinite(v) or v <= 0 for v in extent):
            raise ValueError(f"extents must be positive, got {extent}")
        if any(v < 4 for v in n):
            raise ValueError(f"every axis needs at least 4 cells, got {n}")
        x0 = tuple(0.5 * v for v in extent) if self.x0 is None else tuple(float(v) for v in self.x0)
        if any(not (0.0 < x0[a] < extent[a]) for a in range(3)):
            raise ValueError(f"x0={x0} must lie strictly inside the box")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "x0", x0)

    @property
    def h(self) -> tuple[float, float, float]:
        return tuple(self.extent[a] / self.n[a] for a in range(3))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum(v * v for v in self.extent)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def surface_area(self) -> float:
        l1, l2, l3 = self.extent
        return 2.0 * (l1 * l2 + l2 * l3 + l3 * l1)

    # -- staggered layout -------------------------------------------------

    def shape(self, stagger) -> tuple[int, int, int]:
        return tuple(self.n[a] if stagger[a] else self.n[a] + 1 for a in range(3))

    def axis_coords(self, axis: int, half: bool) -> np.ndarray:
        h = self.h[axis]
        if half:
            return (np.arange(self.n[axis]) + 0.5) * h
        return np.arange(self.n[axis] + 1) * h

    def axis_weights(self, axis: int, half: bool) -> np.ndarray:
        h = self.h[axis]
        if half:
            return np.full(self.n[axis], h)
        w = np.full(self.n[axis] + 1, h)
        w[0] = w[-1] = 0.5 * h
        return w

    def coords(self, stagger) -> np.ndarray:
        """Positions of a staggered array as shape ``(*shape, 3)``."""
        key = ("coords", tuple(stagger))
        if key not in self._cache:
            axes = [self.axis_coords(a, stagger[a]) for a in range(3)]
            self._cache[key] = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return self._cache[key]

    def weights(self, stagger) -> np.ndarray:
        """Dual-cell volumes of a staggered array."""
        key = ("weights", tuple(stagger))
        if key not in self._cache:
            w = [self.axis_weights(a, stagger[a]) for a in range(3)]
            self._cache[key] = w[0][:, None, None] * w[1][None, :, None] * w[2][None, None, :]
        return self._cache[key]

    def face_weights(self, stagger, side: Side) -> np.ndarray:
        """Area weights of the slice of a staggered array lying on ``side``."""
        t1, t2 = sorted(side.tangential_axes)
        return np.outer(self.axis_weights(t1, stagger[t1]), self.axis_weights(t2, stagger[t2]))

    def face_coords(self, stagger, side: Side) -> np.ndarray:
        return face_slice(self.coords(stagger), side)

    # -- boundary faces ---------------------------------------------------

    @cached_property
    def boundary_faces(self) -> list[BoundaryFace]:
        """Cell faces tiling the boundary, each with its outward normal."""
        faces = []
        h = self.h
        for side in SIDES:
            a = side.axis
            t1, t2 = sorted(side.tangential_axes)
            area = h[t1] * h[t2]
            layer = 0 if side.sign < 0 else self.n[a] - 1
            for i in range(self.n[t1]):
                for j in range(self.n[t2]):
                    cell = [0, 0, 0]
                    cell[a], cell[t1], cell[t2] = layer, i, j
                    center = [0.0, 0.0, 0.0]
                    center[a] = 0.0 if side.sign < 0 else self.extent[a]
                    center[t1] = (i + 0.5) * h[t1]
                    center[t2] = (j + 0.5) * h[t2]
                    faces.append(BoundaryFace(len(faces), tuple(cell), tuple(side.normal),
                                              area, tuple(center)))
        return faces

    def radial(self, x: np.ndarray) -> np.ndarray:
        """The multiplier field ``m(x) = x - x0``."""
        return np.asarray(x) - np.asarray(self.x0)


def build_grid(extent, n, x0=None) -> StaggeredGrid:
    """Validate parameters and build a :class:`StaggeredGrid`.

    Scalars for ``extent`` or ``n`` apply to all three axes.
    """
    extent = tuple(float(v) for v in np.broadcast_to(extent, (3,)))
    n = tuple(int(v) for v in np.broadcast_to(n, (3,)))
    return StaggeredGrid(extent, n, None if x0 is None else tuple(x0))


def face_slice(arr: np.ndarray, side: Side) -> np.ndarray:
    """Slice of ``arr`` (leading three axes spatial) on the given side."""
    idx = [slice(None)] * arr.ndim
    idx[side.axis] = side.index
    return arr[tuple(idx)]


def interior_slice(ndim: int = 3) -> tuple:
    return (slice(1, -1),) * ndim


def boundary_mask(stagger, grid: StaggeredGrid) -> np.ndarray:
    """True at integer positions lying on the boundary along any axis."""
    mask = np.zeros(grid.shape(stagger), dtype=bool)
    for side in SIDES:
        if not stagger[side.axis]:
            face_slice(mask, side)[...] = True
    return mask


def restagger(arr: np.ndarray, src, dst) -> np.ndarray:
    """Average ``arr`` from stagger ``src`` onto stagger ``dst``.

    Along each axis where the patterns differ, half-to-integer averaging uses
    the two neighbours (one at the ends), integer-to-half uses the two
    bracketing values.
    """
    out = arr
    for a in range(3):
        if src[a] == dst[a]:
            continue
        out = np.moveaxis(out, a, 0)
        if src[a]:
            pad = np.concatenate([out[:1], out, out[-1:]], axis=0)
            out = 0.5 * (pad[:-1] + pad[1:])
        else:
            out = 0.5 * (out[:-1] + out[1:])
        out = np.moveaxis(out, 0, a)
    return out


def cross_normal(u, nu) -> np.ndarray:
    """Tangential trace map ``u -> u x nu``."""
    return np.cross(np.asarray(u, dtype=float), np.asarray(nu, dtype=float))


def tangential_project(u, nu) -> np.ndarray:
    """Tangential part ``nu x (u x nu) = u - (u . nu) nu``."""
    u = np.asarray(u, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return u - np.sum(u * nu, axis=-1, keepdims=True) * nu
