import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absd.geometry import E_STAGGER, H_STAGGER, NODE_STAGGER, Side, build_grid
from absd.initdata import (InitialJet, compatibility_residual, helmholtz_project,
                           initial_time_derivatives, make_bump_data, project_with_count,
                           random_bump_params, weighted_charge)
from absd.materials import KerrLaw
from absd.numerics import tree_sum
from absd.operators import FieldSet, curl_e, curl_h, div_nodes, grad
from absd.stepper import StepParams, Stepper

from conftest import kerr_model, linear_model


def _norm(grid, u):
    return np.sqrt(sum(tree_sum(grid.weights(s) * a * a) for a, s in zip(u, E_STAGGER)))


def _inner(grid, u, v):
    return sum(tree_sum(grid.weights(s) * a * b) for a, b, s in zip(u, v, E_STAGGER))


def test_pure_gradient_is_removed(grid8, rng):
    psi = rng.standard_normal(grid8.shape(NODE_STAGGER))
    w = grad(grid8, psi)
    u, phi = helmholtz_project(grid8, None, w)
    assert _norm(grid8, u) <= 1e-10 * _norm(grid8, w)


def test_constant_field_gives_linear_potential():
    g = build_grid((1.0, 2.0, 1.5), (6, 8, 5))
    c = np.array([0.3, -1.0, 2.0])
    w = tuple(np.full(g.shape(s), c[k]) for k, s in enumerate(E_STAGGER))
    u, phi = helmholtz_project(g, 1.0, w)
    x = g.coords(NODE_STAGGER)
    exact = x @ c
    assert max(np.abs(a).max() for a in u) <= 1e-10
    assert np.abs((phi - phi.mean()) - (exact - exact.mean())).max() <= 1e-10


def test_solenoidal_field_is_fixed(grid8):
    w = make_bump_data(grid8, (0.5, 0.5, 0.5), 0.25, 1.0, (1, 0, 1), None, "curl-bump").E
    u, _ = helmholtz_project(grid8, None, w)
    assert max(np.abs(a - b).max() for a, b in zip(u, w)) <= 1e-10


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1.0, 2.5, (1.0, 2.0, 3.0)]))
@settings(max_examples=15, deadline=None)
def test_projector_idempotent_and_orthogonal(seed, alpha):
    rng = np.random.default_rng(seed)
    g = build_grid((1.0, 1.0, 1.0), (6, 5, 7))
    w = tuple(rng.standard_normal(g.shape(s)) for s in E_STAGGER)
    u, phi = helmholtz_project(g, alpha, w)
    u2, _ = helmholtz_project(g, alpha, u)
    scale = _norm(g, w)
    assert max(np.abs(a - b).max() for a, b in zip(u, u2)) <= 1e-10 * scale
    a = np.broadcast_to(np.atleast_1d(alpha), (3,))
    au = tuple(a[k] * u[k] for k in range(3))
    assert abs(_inner(g, au, grad(g, phi))) <= 1e-10 * scale ** 2 * max(a)
    assert weighted_charge(g, alpha, u) <= 1e-10 * scale


def test_bump_amplitude_zero():
    g = build_grid(1.0, 8)
    f = make_bump_data(g, (0.5, 0.5, 0.5), 0.25, 0.0, (0, 0, 1), None)
    assert f.max_abs() == 0.0


def test_bump_support_guard():
    g = build_grid(1.0, 8)
    with pytest.raises(ValueError):
        make_bump_data(g, (0.5, 0.5, 0.5), 0.4, 1.0, (0, 0, 1), None)


def test_curl_bump_is_exactly_divergence_free():
    g = build_grid(1.0, 16)
    f = make_bump_data(g, (0.5, 0.5, 0.5), 0.3, 1.0, (1, 2, 3), None, "curl-bump")
    assert np.abs(div_nodes(g, f.E)).max() <= 1e-12
    assert f.max_abs() == pytest.approx(1.0)


def test_kerr_bump_projection_converges():
    g = build_grid(1.0, 12)
    f = make_bump_data(g, (0.5, 0.5, 0.5), 0.3, 0.1, (0, 0, 1), kerr_model(), "bump")
    law = KerrLaw(2.0, 1.0)
    assert weighted_charge(g, law, f.E) <= 1e-10
    _, sweeps = project_with_count(g, law, make_bump_data(g, (0.5, 0.5, 0.5), 0.3, 0.1,
                                                          (1, 1, 0), None, "bump").E)
    assert sweeps <= 8


def test_h_initial_data_is_solenoidal():
    g = build_grid(1.0, 12)
    f = make_bump_data(g, (0.5, 0.5, 0.5), 0.3, 1.0, (0, 0, 1), None, "curl-bump",
                       h_polarization=(1, 0, 0))
    from absd.operators import div_cells

    assert np.abs(div_cells(g, f.H)).max() <= 1e-12
    assert max(np.abs(a).max() for a in f.H) == pytest.approx(1.0)


def test_random_bump_params_admissible(rng):
    g = build_grid(1.0, 16)
    for _ in range(20):
        p = random_bump_params(rng, g, (0.2, 0.3))
        make_bump_data(g, p["center"], p["radius"], 1.0, p["polarization"], None)


# -- initial jet ---------------------------------------------------------------


def test_zero_jet(grid8):
    jet = initial_time_derivatives(FieldSet.zeros(grid8), kerr_model(), grid8)
    for arrs in (jet.E1, jet.H1, jet.E2, jet.H2):
        assert max(np.abs(a).max() for a in arrs) == 0.0
    assert compatibility_residual(jet, kerr_model(), grid8) == (0.0, 0.0, 0.0)


def test_linear_first_derivatives_are_curls(grid8):
    f = make_bump_data(grid8, (0.5, 0.5, 0.5), 0.25, 1.0, (0, 1, 1), None, "curl-bump",
                       h_polarization=(1, 0, 0))
    jet = initial_time_derivatives(f, linear_model(), grid8)
    ch, ce = curl_h(grid8, f.H), curl_e(grid8, f.E)
    assert max(np.abs(a - b).max() for a, b in zip(jet.E1, ch)) <= 1e-13
    assert max(np.abs(a + b).max() for a, b in zip(jet.H1, ce)) <= 1e-13


def test_kerr_first_derivative_matches_one_step():
    g = build_grid(1.0, 10)
    m = kerr_model()
    f = make_bump_data(g, (0.5, 0.5, 0.5), 0.3, 0.5, (0, 0, 1), m, "bump",
                       h_polarization=(1, 1, 0))
    errs = []
    for dt in (1e-3, 5e-4):
        st = Stepper(g, m, StepParams(dt=dt, newton_tol=1e-14))
        s0 = st.initial_state(f)
        jet = initial_time_derivatives(s0.fields, m, g)
        s1 = st.step(s0)
        errs.append(max(np.abs((b - a) / dt - d).max()
                        for a, b, d in zip(s0.E, s1.E, jet.E1)))
    assert errs[1] < errs[0] * 0.6


def test_interior_data_is_compatible():
    g = build_grid(1.0, 12)
    m = kerr_model()
    # unprojected, so the support stays inside the box
    f = make_bump_data(g, (0.5, 0.5, 0.5), 0.25, 0.3, (0, 0, 1), None, "curl-bump",
                       h_polarization=(0, 1, 0))
    r = compatibility_residual(initial_time_derivatives(f, m, g), m, g)
    assert max(r) <= 1e-12


def test_injected_trace_noise_is_recovered(rng):
    g = build_grid(1.0, 10)
    side, d = Side(0, -1), 2
    c = 3 - side.axis - d
    H = [np.zeros(g.shape(s)) for s in H_STAGGER]
    noise = np.zeros(H[d].shape[1:])
    noise[2:-2, 2:-2] = 1e-3 * rng.standard_normal(noise[2:-2, 2:-2].shape)
    H[d][0] = noise
    H[d][1] = noise  # extrapolates to the same boundary value
    zero = tuple(np.zeros(g.shape(s)) for s in E_STAGGER)
    zh = tuple(np.zeros(g.shape(s)) for s in H_STAGGER)
    jet = InitialJet(zero, tuple(H), zero, zh, zero, zh)
    r0, r1, r2 = compatibility_residual(jet, linear_model(), g)
    expected = np.sqrt(tree_sum(g.face_weights(E_STAGGER[c], side) * noise ** 2))
    assert r0 == pytest.approx(expected, rel=1e-12)
    assert r1 == r2 == 0.0
