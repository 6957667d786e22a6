import numpy as np
import pytest

from absd.config import build_grid_from, build_model, load_config, parse_bc, parse_config
from absd.errors import ConfigError
from absd.io import SnapshotError, load_snapshot, save_snapshot, state_from_snapshot
from absd.materials import KerrLaw, LinearLaw
from absd.operators import FieldSet
from absd.runner import run_config, step_size
from absd.stepper import StepParams, Stepper

from conftest import kerr_model, random_fields

BASE = """
[grid]
cells = 8 8 8
[material]
kind = kerr
eps_lin = 2
eps_nl = 1
[stepping]
final_time = 0.3
cfl_safety = 0.5
"""


# -- configuration -------------------------------------------------------------


def test_defaults():
    cfg = parse_config("")
    assert cfg.grid.cells == (16, 16, 16)
    assert cfg.stepping.viscosity == 0.0
    assert cfg.present == ()


@pytest.mark.parametrize("text,line", [
    ("[grid]\ncells = 8 8\n", 2),
    ("[grid]\n\n[grod]\n", 3),
    ("cells = 8 8 8\n", 1),
    ("[grid]\ncells = 8 8 8\ncells = 8 8 8\n", 3),
    ("[stepping]\ncfl_safety = 1.5\n", 2),
    ("[stepping]\nbc = absorbing q+:pec\n", 2),
    ("[material]\nkind = rubber\n", 2),
    ("[initial]\n# c\nradius = -1\n", 3),
    ("[stepping]\nviscosity = -0.1\n", 2),
    ("[grid]\ncells 8 8 8\n", 2),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.lineno == line
    assert f"line {line}" in str(info.value)


def test_hash_ignores_formatting():
    a = parse_config(BASE)
    b = parse_config("# header\n" + BASE.replace("eps_lin = 2", "eps_lin=2.0   # linear part")
                     .replace("cells = 8 8 8", "cells = 8, 8, 8"))
    assert a.hash() == b.hash()
    c = parse_config(BASE.replace("eps_nl = 1", "eps_nl = 1.5"))
    assert c.hash() != a.hash()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/file.cfg")


def test_parse_bc():
    bc = parse_bc("pec x+:absorbing z-:pmc")
    assert bc[(0, 1)] == "absorbing" and bc[(2, -1)] == "pmc" and bc[(1, 1)] == "pec"
    assert set(parse_bc("absorbing").values()) == {"absorbing"}
    with pytest.raises(ValueError):
        parse_bc("sticky")


def test_build_model():
    cfg = parse_config(BASE)
    model = build_model(cfg, build_grid_from(cfg))
    assert isinstance(model.eps, KerrLaw) and isinstance(model.mu, LinearLaw)
    lin = parse_config("[material]\neps = 1 2 3\n")
    m = build_model(lin, build_grid_from(lin))
    np.testing.assert_array_equal(m.eps.matrix, np.diag([1.0, 2.0, 3.0]))


def test_step_size_hits_final_time():
    cfg = parse_config(BASE)
    g = build_grid_from(cfg)
    dt, n = step_size(cfg, g, build_model(cfg, g))
    assert n * dt == pytest.approx(0.3, rel=1e-14)
    too_big = parse_config(BASE + "dt = 10\n")
    with pytest.raises(ConfigError):
        step_size(too_big, g, build_model(too_big, g))


# -- snapshots ------------------------------------------------------------------


def _state(grid8, rng, steps=3):
    st = Stepper(grid8, kerr_model(), StepParams(dt=0.02))
    E, H = random_fields(grid8, rng, 0.1)
    s = st.initial_state(FieldSet(E, H))
    for _ in range(steps):
        s = st.step(s)
    s.e0_initial, s.dissipation_integral = 1.25, 0.5
    return s


def test_snapshot_round_trip_is_bitwise(grid8, rng, tmp_path):
    s = _state(grid8, rng)
    p = tmp_path / "a.absd"
    save_snapshot(p, s, grid8)
    data = load_snapshot(p)
    back = state_from_snapshot(data)
    assert data["n"] == grid8.n and data["step"] == s.step and data["dt"] == s.dt
    for a, b in zip(s.fields.arrays() + list(s.D + s.B), back.fields.arrays() + list(back.D + back.B)):
        assert a.tobytes() == b.tobytes()
    assert len(back.history) == len(s.history)
    assert (back.e0_initial, back.dissipation_integral) == (1.25, 0.5)
    q = tmp_path / "b.absd"
    save_snapshot(q, back, grid8)
    assert p.read_bytes() == q.read_bytes()


def test_snapshot_corruption_detected(grid8, rng, tmp_path):
    p = tmp_path / "a.absd"
    save_snapshot(p, _state(grid8, rng, 0), grid8)
    raw = bytearray(p.read_bytes())
    raw[100] ^= 1
    bad = tmp_path / "bad.absd"
    bad.write_bytes(bytes(raw))
    with pytest.raises(SnapshotError, match="checksum"):
        load_snapshot(bad)
    short = tmp_path / "short.absd"
    short.write_bytes(b"ABSD")
    with pytest.raises(SnapshotError):
        load_snapshot(short)
    other = tmp_path / "other.absd"
    other.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(SnapshotError, match="not a snapshot"):
        load_snapshot(other)


# -- runner ---------------------------------------------------------------------

RUN = BASE + """sample_stride = 2
functional_order = 2
[initial]
recipe = curl-bump
center = 0.5 0.5 0.5
radius = 0.25
amplitude = 0.2
"""


def _series_bytes(res):
    return np.array(res.series.rows).tobytes()


def test_final_time_zero_gives_single_row(tmp_path):
    cfg = parse_config(RUN.replace("final_time = 0.3", "final_time = 0"))
    res = run_config(cfg, tmp_path)
    assert res.steps == 0 and len(res.series) == 1
    lines = (tmp_path / "series.csv").read_text().splitlines()
    assert len(lines) == 2


def test_rerun_and_resume_are_bitwise_identical(tmp_path):
    cfg = parse_config(RUN + "[output]\nsnapshot_every = 4\n")
    a = run_config(cfg, tmp_path / "a")
    b = run_config(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()
    assert (tmp_path / "a" / "final.absd").read_bytes() == (tmp_path / "b" / "final.absd").read_bytes()
    snap = tmp_path / "a" / "snapshot_00000004.absd"
    assert snap.is_file()
    c = run_config(cfg, tmp_path / "c", resume=snap)
    assert (tmp_path / "c" / "final.absd").read_bytes() == (tmp_path / "a" / "final.absd").read_bytes()
    # resumed rows are the tail of the full run
    tail = np.array(a.series.rows)[-len(c.series):]
    assert np.array(c.series.rows).tobytes() == tail.tobytes()
    assert _series_bytes(a) == _series_bytes(b)


def test_resume_rejects_other_grid(tmp_path):
    cfg = parse_config(RUN)
    run_config(cfg, tmp_path)
    other = parse_config(RUN.replace("cells = 8 8 8", "cells = 10 10 10"))
    with pytest.raises(ConfigError):
        run_config(other, tmp_path / "x", resume=tmp_path / "final.absd")


def test_threads_do_not_change_results(tmp_path):
    cfg = parse_config(RUN)
    a = run_config(cfg, write=False, threads=1)
    b = run_config(cfg, write=False, threads=3)
    assert _series_bytes(a) == _series_bytes(b)


def test_viscous_loss_keeps_energy_balance_second_order():
    text = (RUN.replace("kind = kerr", "kind = linear").replace("final_time = 0.3", "final_time = 1.0")
            .replace("cells = 8 8 8", "cells = 12 12 12"))
    plain = run_config(parse_config(text), write=False).series
    res = []
    for safety in (0.5, 0.25):
        damped = text.replace("cfl_safety = 0.5", f"cfl_safety = {safety}\nviscosity = 0.5")
        series = run_config(parse_config(damped), write=False).series
        res.append(series.column("energy_identity_residual")[-1])
        assert series.column("e0")[-1] < plain.column("e0")[-1]
    assert 3.5 < res[0] / res[1] < 4.5
