"""Binary snapshots.

Layout (all little endian)::

    b"ABSD"  u32 version  u32 n1 n2 n3  f64 dt  f64 t  u64 step
    E1 E2 E3 H1 H2 H3            f64, row major, staggered shapes
    aux block:
        f64 extent[3]
        D1 D2 D3 B1 B2 B3
        f64 e0_initial  f64 dissipation_integral
        u32 history length, then per level: u64 step, E, H, D, B
    32-byte SHA-256 of everything above

The aux block carries what a bit-exact resume needs beyond the fields: the
fluxes (the stepping variables), the running energy balance and the recent
history used for time derivatives.
"""
from __future__ import annotations

import hashlib
import struct
from collections import deque

import numpy as np

from .geometry import E_STAGGER, H_STAGGER, StaggeredGrid
from .operators import FieldSet

MAGIC = b"ABSD"
VERSION = 1


class SnapshotError(ValueError):
    pass


def _pack_arrays(arrs) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrs)


def _shapes(n):
    from .geometry import StaggeredGrid

    g = StaggeredGrid((1.0, 1.0, 1.0), n)
    return [g.shape(s) for s in E_STAGGER], [g.shape(s) for s in H_STAGGER]


def save_snapshot(path, state, grid: StaggeredGrid) -> None:
    """Write ``state`` to ``path``."""
    parts = [MAGIC, struct.pack("<I3IddQ", VERSION, *grid.n, state.dt, state.t, state.step)]
    parts.append(_pack_arrays(state.E + state.H))
    parts.append(struct.pack("<3d", *grid.extent))
    parts.append(_pack_arrays(state.D + state.B))
    parts.append(struct.pack("<dd", state.e0_initial, state.dissipation_integral))
    parts.append(struct.pack("<I", len(state.history)))
    for snap in state.history:
        parts.append(struct.pack("<Q", snap.step))
        parts.append(_pack_arrays(snap.E + snap.H + snap.D + snap.B))
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise SnapshotError("snapshot truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def arrays(self, shapes):
        out = []
        for shp in shapes:
            count = int(np.prod(shp))
            end = self.pos + 8 * count
            if end > len(self.data):
                raise SnapshotError("snapshot truncated")
            out.append(np.frombuffer(self.data, "<f8", count, self.pos).reshape(shp).astype(float))
            self.pos = end
        return tuple(out)


def load_snapshot(path) -> dict:
    """Read a snapshot written by :func:`save_snapshot`.

    Returns
    -------
    dict
        ``n``, ``extent``, ``dt``, ``t``, ``step``, ``fields`` (FieldSet),
        ``D``, ``B``, ``e0_initial``, ``dissipation_integral`` and
        ``history`` (list of ``(step, E, H, D, B)``).

    Raises
    ------
    SnapshotError
        On a bad magic, unsupported version, truncation or checksum mismatch.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 36 or raw[:4] != MAGIC:
        raise SnapshotError(f"{path}: not a snapshot file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise SnapshotError(f"{path}: checksum mismatch")
    r = _Reader(body)
    r.pos = 4
    version, n1, n2, n3, dt, t, step = r.unpack("<I3IddQ")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    n = (n1, n2, n3)
    es, hs = _shapes(n)
    arrs = r.arrays(es + hs)
    extent = r.unpack("<3d")
    flux = r.arrays(es + hs)
    e0, diss = r.unpack("<dd")
    (count,) = r.unpack("<I")
    history = []
    for _ in range(count):
        (hstep,) = r.unpack("<Q")
        a = r.arrays(es + hs + es + hs)
        history.append((hstep, a[0:3], a[3:6], a[6:9], a[9:12]))
    return {
        "n": n, "extent": extent, "dt": dt, "t": t, "step": step,
        "fields": FieldSet(arrs[:3], arrs[3:]), "D": flux[:3], "B": flux[3:],
        "e0_initial": e0, "dissipation_integral": diss, "history": history,
    }


def state_from_snapshot(data: dict):
    """Rebuild a :class:`~absd.stepper.SimState` from :func:`load_snapshot` output."""
    from .stepper import HISTORY_DEPTH, SimState, Snapshot

    state = SimState(data["step"], data["dt"], data["fields"], data["D"], data["B"],
                     deque(maxlen=HISTORY_DEPTH), data["e0_initial"],
                     data["dissipation_integral"])
    for hstep, E, H, D, B in data["history"]:
        state.history.append(Snapshot(hstep, hstep * data["dt"], E, H, D, B))
    return state
