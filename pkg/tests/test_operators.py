import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from absd.geometry import (CELL_STAGGER, E_STAGGER, H_STAGGER, NODE_STAGGER, SIDES, StaggeredGrid,
                           build_grid)
from absd.numerics import tree_sum
from absd.operators import (FieldSet, charge_norms, curl_e, curl_h, div_cells, div_nodes,
                            e_vectors, grad, interior)

from conftest import random_fields


def _sample(grid, staggers, f):
    return tuple(f(grid.coords(s))[..., c] for c, s in enumerate(staggers))


def _inner(grid, a, b, staggers):
    return sum(tree_sum(grid.weights(s) * x * y) for x, y, s in zip(a, b, staggers))


def rotation(x):
    return np.stack([-x[..., 1], x[..., 0], np.zeros(x.shape[:-1])], axis=-1)


def test_curl_of_constant_is_zero(grid8):
    E = _sample(grid8, E_STAGGER, lambda x: np.broadcast_to([1.0, -2.0, 3.0], x.shape))
    assert all(np.abs(c).max() == 0 for c in curl_e(grid8, E))


def test_curl_e_exact_on_rotation(grid8):
    out = curl_e(grid8, _sample(grid8, E_STAGGER, rotation))
    assert np.allclose(out[0], 0, atol=1e-13)
    assert np.allclose(out[1], 0, atol=1e-13)
    assert np.allclose(out[2], 2.0, atol=1e-13)


def test_curl_h_exact_on_rotation_with_exact_ghosts(grid8):
    g = grid8
    H = _sample(g, H_STAGGER, rotation)
    ghosts = {}
    for side in SIDES:
        for c in side.tangential_axes:
            d = 3 - side.axis - c
            x = g.face_coords(E_STAGGER[c], side)
            ghosts[(side, d)] = rotation(x)[..., d]
    out = curl_h(g, H, ghosts)
    assert np.allclose(out[2], 2.0, atol=1e-12)
    assert np.allclose(out[0], 0, atol=1e-12) and np.allclose(out[1], 0, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.tuples(st.integers(4, 10), st.integers(4, 10),
                                               st.integers(4, 10)))
@settings(max_examples=25, deadline=None)
def test_div_curl_vanishes(seed, n):
    # unit spacing keeps the rounding floor at the 1e-14 level
    g = StaggeredGrid(tuple(float(v) for v in n), n)
    E, H = random_fields(g, np.random.default_rng(seed))
    assert np.abs(div_cells(g, curl_e(g, E))).max() <= 1e-14
    assert np.abs(div_nodes(g, curl_h(g, H))).max() <= 1e-14


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_curl_h_is_weighted_adjoint_of_curl_e(seed):
    g = build_grid((1.0, 1.5, 0.7), (5, 6, 4))
    E, H = random_fields(g, np.random.default_rng(seed))
    lhs = _inner(g, curl_e(g, E), H, H_STAGGER)
    rhs = _inner(g, E, curl_h(g, H), E_STAGGER)
    assert abs(lhs - rhs) <= 1e-11 * (1 + abs(lhs))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_div_is_minus_adjoint_of_grad(seed):
    rng = np.random.default_rng(seed)
    g = build_grid((1.0, 1.0, 2.0), (5, 4, 6))
    phi = rng.standard_normal(g.shape(NODE_STAGGER))
    V, _ = random_fields(g, rng)
    lhs = _inner(g, grad(g, phi), V, E_STAGGER)
    rhs = -tree_sum(g.weights(NODE_STAGGER) * phi * div_nodes(g, V))
    assert abs(lhs - rhs) <= 1e-11 * (1 + abs(lhs))


def test_curl_of_gradient_is_zero(grid8, rng):
    phi = rng.standard_normal(grid8.shape(NODE_STAGGER))
    assert max(np.abs(c).max() for c in curl_e(grid8, grad(grid8, phi))) < 1e-12


def test_charge_norms_ignore_boundary_nodes(grid8):
    g = grid8
    B = tuple(np.zeros(g.shape(s)) for s in H_STAGGER)
    D = tuple(np.zeros(g.shape(s)) for s in E_STAGGER)
    D[2][3, 0, 4] = 1.0  # an edge lying in the boundary: only boundary nodes see it
    assert charge_norms(g, D, B) == (0.0, 0.0)
    assert np.abs(div_nodes(g, D)).max() > 0
    D[0][0, 4, 4] = 1.0  # touches the interior node (1, 4, 4)
    qd, qb = charge_norms(g, D, B)
    assert qd > 0 and qb == 0


def test_fieldset_helpers(grid8, rng):
    E, H = random_fields(grid8, rng)
    f = FieldSet(E, H)
    f.check(grid8)
    assert np.isclose(f.scaled(2.0).max_abs(), 2 * f.max_abs())
    assert FieldSet.zeros(grid8).max_abs() == 0.0
    v = e_vectors(E, 0)
    assert v.shape == grid8.shape(E_STAGGER[0]) + (3,)
    assert np.array_equal(v[..., 0], E[0])
