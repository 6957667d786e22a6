import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from absd.errors import InsufficientHistory
from absd.functionals import (COLUMNS, FunctionalSeries, boundary_dissipation, commutators,
                              derived_system_residual, discrete_norm, dissipation_d, energy_e,
                              energy_inequality_constant, energy_identity_residual,
                              regularity_constants, sample_functionals, z_norm)
from absd.geometry import E_STAGGER, H_STAGGER, NODE_STAGGER, build_grid
from absd.initdata import make_bump_data
from absd.numerics import tree_sum
from absd.operators import FieldSet
from absd.stepper import StepParams, Stepper, cfl_dt

from conftest import kerr_model, linear_model, random_fields


def _run(grid, model, fields, steps, safety=0.5):
    st_ = Stepper(grid, model, StepParams(dt=cfl_dt(grid, model, safety)))
    s = st_.initial_state(fields)
    for _ in range(steps):
        s = st_.step(s)
    st_.close()
    return s


def _bump(grid, model=None, amp=0.3, radius=0.25):
    return make_bump_data(grid, (0.5, 0.5, 0.5), radius, amp, (0, 0, 1), model, "curl-bump",
                          h_polarization=(0, 1, 0))


# -- discrete norms ---------------------------------------------------------


@pytest.mark.parametrize("c", [0.0, 1.0, -2.5])
def test_norm_of_constant(grid8, c):
    arr = np.full(grid8.shape(NODE_STAGGER), c)
    for order in range(4):
        assert discrete_norm(arr, order, grid8) == pytest.approx(abs(c), rel=1e-14, abs=0)


def test_norm_of_sine_h1():
    g = build_grid(1.0, 64)
    x = g.coords(NODE_STAGGER)[..., 0]
    arr = np.sin(2 * np.pi * x)
    exact = np.sqrt(0.5 + 2 * np.pi ** 2)
    assert discrete_norm(arr, 1, g) == pytest.approx(exact, rel=1e-2)
    assert discrete_norm(arr, 0, g) == pytest.approx(np.sqrt(0.5), rel=1e-3)


def test_norm_rejects_bad_order(grid8):
    with pytest.raises(ValueError):
        discrete_norm(np.zeros(grid8.shape(NODE_STAGGER)), 4, grid8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.floats(-10, 10).filter(lambda v: v == 0 or abs(v) > 1e-100),
       st.integers(0, 2**31))
def test_norm_homogeneous_and_monotone_in_order(order, s, seed):
    g = build_grid(1.0, 6)
    arr = np.random.default_rng(seed).standard_normal(g.shape(E_STAGGER[0]))
    n = discrete_norm(arr, order, g)
    assert discrete_norm(s * arr, order, g) == pytest.approx(abs(s) * n, rel=1e-12, abs=1e-300)
    if order:
        assert n >= discrete_norm(arr, order - 1, g)


# -- energy and dissipation -------------------------------------------------


def test_energy_level0_is_half_l2(grid8, rng):
    E, H = random_fields(grid8, rng)
    s = _run(grid8, linear_model(), FieldSet(E, H), 0)
    l2 = sum(tree_sum(grid8.weights(E_STAGGER[c]) * E[c] ** 2)
             + tree_sum(grid8.weights(H_STAGGER[c]) * H[c] ** 2) for c in range(3))
    assert energy_e(s, linear_model(), grid8, 0) == pytest.approx(0.5 * l2, rel=1e-13)


def test_energy_scales_with_eps(grid8, rng):
    E, H = random_fields(grid8, rng)
    zeroH = tuple(np.zeros_like(a) for a in H)
    e1 = energy_e(_run(grid8, linear_model(), FieldSet(E, zeroH), 0), linear_model(), grid8, 0)
    m3 = linear_model(eps=3.0)
    e3 = energy_e(_run(grid8, m3, FieldSet(E, zeroH), 0), m3, grid8, 0)
    assert e3 == pytest.approx(3 * e1, rel=1e-13)


def test_zero_state_functionals_vanish(grid8):
    m = kerr_model()
    s = _run(grid8, m, FieldSet.zeros(grid8), 5)
    for k in range(4):
        assert energy_e(s, m, grid8, k) == 0.0
        assert dissipation_d(s, m, grid8, k) == 0.0
        assert z_norm(s, m, grid8, k) == 0.0


def test_dissipation_weight_scales(grid8, rng):
    E, _ = random_fields(grid8, rng)
    d1 = boundary_dissipation(grid8, linear_model(lam=1.0), E)
    d4 = boundary_dissipation(grid8, linear_model(lam=4.0), E)
    assert d1 > 0
    assert d4 == pytest.approx(4 * d1, rel=1e-13)


def test_dissipation_zero_for_interior_data():
    g = build_grid(1.0, 16)
    f = _bump(g)
    assert boundary_dissipation(g, linear_model(), f.E) == 0.0


def test_pec_sides_excluded_from_dissipation(grid8, rng):
    from absd.geometry import SIDES

    E, _ = random_fields(grid8, rng)
    bc = {s: "pec" for s in SIDES}
    assert boundary_dissipation(grid8, linear_model(), E, bc) == 0.0


def test_energy_identity_residual_formula():
    assert energy_identity_residual(0.7, 1.0, 0.3) == pytest.approx(0.0, abs=1e-15)
    assert energy_identity_residual(0.8, 1.0, 0.3) == pytest.approx(0.1)


# -- history-dependent quantities --------------------------------------------


def test_insufficient_history():
    g = build_grid(1.0, 8)
    m = kerr_model()
    s = _run(g, m, _bump(g, m), 1)
    with pytest.raises(InsufficientHistory):
        energy_e(s, m, g, 3)
    with pytest.raises(InsufficientHistory):
        commutators(s, m, g)
    with pytest.raises(InsufficientHistory):
        derived_system_residual(s, m, g, 1)
    row = sample_functionals(s, m, g, 3)
    assert np.isfinite(row["e0"])
    assert all(np.isnan(row[f"e{k}"]) for k in (1, 2, 3))


def test_commutators_vanish_for_linear_models():
    g = build_grid(1.0, 10)
    m = linear_model(eps=2.0, lam=1.5)
    s = _run(g, m, _bump(g, m), 5)
    norms = commutators(s, m, g).norms(g)
    assert all(v == 0.0 for v in norms.values())


def test_commutators_nonzero_for_kerr():
    g = build_grid(1.0, 10)
    m = kerr_model()
    s = _run(g, m, _bump(g, m), 5)
    norms = commutators(s, m, g).norms(g)
    assert norms["f2"] > 0 and norms["f3"] > 0


def test_derived_residual_zero_fields(grid8):
    m = kerr_model()
    s = _run(grid8, m, FieldSet.zeros(grid8), 6)
    for k in (1, 2, 3):
        r = derived_system_residual(s, m, grid8, k)
        assert r["interior"] == r["divergence"] == r["boundary"] == 0.0


def test_derived_residual_second_order_in_dt():
    g = build_grid(1.0, 16)
    m = linear_model()
    rel = []
    for safety, steps in ((0.25, 8), (0.125, 16)):
        s = _run(g, m, _bump(g, m), steps, safety=safety)
        r = derived_system_residual(s, m, g, 1)
        rel.append(r["interior"] / r["scale"])
        assert r["divergence"] < 1e-12
    assert 3.5 < rel[0] / rel[1] < 4.5


def test_sample_row_has_every_column():
    g = build_grid(1.0, 8)
    m = kerr_model()
    s = _run(g, m, _bump(g, m), 6)
    row = sample_functionals(s, m, g, 3)
    assert set(row) == set(COLUMNS)
    assert all(np.isfinite(row[c]) for c in COLUMNS if c != "energy_identity_residual")
    # energies are maxima over levels
    assert row["e0"] <= row["e1"] <= row["e2"] <= row["e3"]


# -- series -----------------------------------------------------------------


def test_series_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    s = FunctionalSeries()
    for i in range(7):
        row = {c: rng.standard_normal() * 10.0 ** rng.integers(-30, 30) for c in COLUMNS}
        row["t"] = 0.1 * i
        if i == 0:
            row["e3"] = np.nan
        s.append(row)
    p = tmp_path / "series.csv"
    s.to_csv(p)
    back = FunctionalSeries.from_csv(p)
    assert np.array_equal(np.array(back.rows), np.array(s.rows), equal_nan=True)
    assert p.read_text().splitlines()[0] == ",".join(COLUMNS)


def test_series_from_partial_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,e0\n0,1\n1,0.5\n")
    s = FunctionalSeries.from_csv(p)
    assert list(s.column("e0")) == [1.0, 0.5]
    assert np.isnan(s.column("d0")).all()


def test_series_from_csv_without_time(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("e0\n1\n")
    with pytest.raises(ValueError):
        FunctionalSeries.from_csv(p)


def test_write_csv_without_header():
    s = FunctionalSeries.from_arrays([0.0, 1.0], e0=[1.0, 2.0])
    buf = io.StringIO()
    s.write_csv(buf, header=False)
    assert len(buf.getvalue().splitlines()) == 2


# -- empirical constants ------------------------------------------------------


def test_energy_inequality_constant_zero_for_exact_balance():
    t = np.linspace(0, 1, 11)
    d = np.ones_like(t)
    e = 2.0 - t                       # e(t) + int d = e(0)
    s = FunctionalSeries.from_arrays(t, e3=e, d3=d, z3=np.ones_like(t))
    assert energy_inequality_constant(s, 3) == 0.0


def test_energy_inequality_constant_recovers_cubic_term():
    t = np.linspace(0, 1, 11)
    z = np.ones_like(t)
    e = 1.0 + 0.5 * t                 # growth 0.5 per unit of int z^{3/2}
    s = FunctionalSeries.from_arrays(t, e3=e, d3=np.zeros_like(t), z3=z)
    assert energy_inequality_constant(s, 3) == pytest.approx(0.5, rel=1e-12)


def test_regularity_constant_is_max_ratio():
    t = np.arange(3.0)
    s = FunctionalSeries.from_arrays(t, e3=[1.0, 2.0, 4.0], z3=[3.0, 2.0, 4.0])
    assert regularity_constants(s, 3) == (3.0, 0.0)


def test_leapfrog_shadow_energy_balance_is_exact():
    # e - dt^2/8 |curl E|^2 plus the midpoint boundary loss is conserved exactly
    from absd.operators import curl_e

    g = build_grid(1.0, 12)
    m = linear_model(eps=2.0, lam=1.5)
    dt = cfl_dt(g, m, 0.5)
    st_ = Stepper(g, m, StepParams(dt=dt))
    s = st_.initial_state(_bump(g, m))

    def shadow(s):
        ce = curl_e(g, s.E)
        return 0.5 * sum(tree_sum(g.weights(E_STAGGER[c]) * s.E[c] * s.D[c])
                         + tree_sum(g.weights(H_STAGGER[c]) * (s.H[c] * s.B[c] - dt ** 2 / 4 * ce[c] ** 2))
                         for c in range(3))

    w0, lost = shadow(s), 0.0
    for _ in range(40):
        old, s = s, st_.step(s)
        lost += dt * boundary_dissipation(g, m, tuple(0.5 * (a + b) for a, b in zip(old.E, s.E)))
    st_.close()
    assert lost > 0.01 * w0
    assert abs(shadow(s) + lost - w0) <= 1e-13 * w0
