import math

import numpy as np
import pytest

from meshmove.errors import InvalidArgument, InvalidMesh
from meshmove.fem import (QUAD5_BARY, QUAD5_WEIGHTS, AnalyticField, ScalarField, VectorField, l2_error,
                          lumped_mass, mass_matrix, quadrature_l2_error, recover_hessian, solve_burgers, solve_poisson,
                          stiffness_matrix, transfer_field)
from meshmove.mesh import INTERIOR, DomainSpec, build_polygon_mesh, build_unit_square_mesh


def sine_problem():
    f = lambda x, y: 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    u = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    return f, u


def far_interior(mesh):
    """Nodes whose whole 1-ring is interior."""
    bad = np.zeros(mesh.n_nodes, dtype=bool)
    touches = np.any(mesh.tag_kind[mesh.triangles] != INTERIOR, axis=1)
    bad[mesh.triangles[touches].ravel()] = True
    return ~bad


def test_linear_exactness():
    m = build_unit_square_mesh(9)
    u = solve_poisson(m, lambda x, y: 0 * x, lambda x, y: x)
    np.testing.assert_allclose(u.values, m.nodes[:, 0], atol=1e-12)


def test_linear_exactness_on_heptagon():
    m = build_polygon_mesh(DomainSpec.heptagon(), 10)
    u = solve_poisson(m, lambda x, y: 0 * x, lambda x, y: 2 * x - 3 * y + 1)
    np.testing.assert_allclose(u.values, 2 * m.nodes[:, 0] - 3 * m.nodes[:, 1] + 1, atol=1e-11)


def test_manufactured_convergence_rate():
    f, exact = sine_problem()
    errs = []
    hs = []
    for n in (9, 17, 33):
        m = build_unit_square_mesh(n)
        errs.append(quadrature_l2_error(solve_poisson(m, f, exact), AnalyticField(exact)))
        hs.append(1.0 / (n - 1))
    rates = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all((1.9 <= rates) & (rates <= 2.1)), rates


def test_stiffness_symmetric_and_mass_sums_to_area():
    m = build_polygon_mesh(DomainSpec.heptagon(), 12)
    A = stiffness_matrix(m)
    assert abs(A - A.T).max() < 1e-12
    assert abs(mass_matrix(m).sum() - m.domain.area) < 1e-12
    assert abs(lumped_mass(m).sum() - m.domain.area) < 1e-12
    # constants are in the kernel of the stiffness matrix
    assert np.abs(A @ np.ones(m.n_nodes)).max() < 1e-12


def test_inverted_mesh_rejected():
    m = build_unit_square_mesh(4)
    coords = m.nodes.copy()
    c = int(np.flatnonzero(m.tag_kind == INTERIOR)[0])
    coords[c] = [0.9, 0.9]
    with pytest.raises(InvalidMesh):
        solve_poisson(m.moved(coords), lambda x, y: 0 * x, lambda x, y: x)


def test_quadrature_rule_exact_to_degree_five():
    # on the reference triangle, int x^a y^b = a! b! / (a + b + 2)!
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = QUAD5_BARY @ tri
    for a in range(6):
        for b in range(6 - a):
            q = 0.5 * QUAD5_WEIGHTS @ (pts[:, 0] ** a * pts[:, 1] ** b)
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert abs(q - exact) < 1e-14


def test_l2_error_examples():
    m = build_unit_square_mesh(7)
    u = ScalarField(m, np.random.default_rng(0).normal(size=m.n_nodes))
    assert l2_error(u, u) == 0.0
    assert l2_error(ScalarField(m, u.values + 1.0), u) == pytest.approx(1.0, abs=1e-13)


def test_l2_error_matches_midpoint_rule():
    # the squared P1 difference is quadratic; the edge-midpoint rule integrates it exactly
    rng = np.random.default_rng(1)
    m = build_polygon_mesh(DomainSpec.heptagon(), 9)
    u = VectorField(m, rng.normal(size=(m.n_nodes, 2)))
    v = VectorField(m, rng.normal(size=(m.n_nodes, 2)))
    d = u.values - v.values
    total = 0.0
    for t, area in zip(m.triangles, m.areas()):
        mids = [(d[t[i]] + d[t[(i + 1) % 3]]) / 2 for i in range(3)]
        total += area / 3 * sum(float(np.dot(p, p)) for p in mids)
    assert abs(l2_error(u, v) - math.sqrt(total)) < 1e-12


def test_l2_error_needs_same_mesh():
    a, b = build_unit_square_mesh(4), build_unit_square_mesh(5)
    with pytest.raises(InvalidArgument):
        l2_error(ScalarField(a, np.zeros(16)), ScalarField(b, np.zeros(25)))


def test_hessian_of_linear_field_vanishes():
    m = build_polygon_mesh(DomainSpec.heptagon(), 10)
    h = recover_hessian(ScalarField(m, 3 * m.nodes[:, 0] - m.nodes[:, 1]))
    assert max(np.abs(h.hxx).max(), np.abs(h.hxy).max(), np.abs(h.hyy).max()) < 1e-10


def test_hessian_of_paraboloid():
    m = build_unit_square_mesh(21)
    h = recover_hessian(ScalarField(m, m.nodes[:, 0] ** 2 + m.nodes[:, 1] ** 2))
    inner = far_interior(m)
    assert np.all((1.8 <= h.hxx[inner]) & (h.hxx[inner] <= 2.2))
    assert np.all((1.8 <= h.hyy[inner]) & (h.hyy[inner] <= 2.2))
    assert np.all(np.abs(h.hxy[inner]) <= 0.2)
    assert np.array_equal(h.hxy, h.hyx)
    np.testing.assert_array_equal(h.matrices()[:, 0, 1], h.matrices()[:, 1, 0])


def test_burgers_fixed_points():
    m = build_unit_square_mesh(8)
    zero = solve_burgers(m, VectorField(m, np.zeros((m.n_nodes, 2))), 0.01, 0.01, 4)
    assert len(zero) == 5
    assert all(np.all(u.values == 0.0) for u in zero)
    const = solve_burgers(m, VectorField(m, np.full((m.n_nodes, 2), 0.7)), 0.01, 0.01, 4)
    for u in const:
        np.testing.assert_allclose(u.values, 0.7, atol=1e-12)


def test_burgers_rejects_bad_parameters():
    m = build_unit_square_mesh(4)
    with pytest.raises(InvalidArgument):
        solve_burgers(m, VectorField(m, np.zeros((16, 2))), 0.0, 0.01, 1)


def test_burgers_converges_to_fine_mesh():
    bump = lambda x, y: np.column_stack([np.exp(-((x - 0.4) ** 2 + (y - 0.5) ** 2) / 0.02)] * 2)
    steps = 5
    fine = build_unit_square_mesh(61)
    ref = solve_burgers(fine, AnalyticField(bump).on(fine), 0.01, 0.01, steps)[-1]
    errs = []
    for n in (11, 15, 21):
        m = build_unit_square_mesh(n)
        u = solve_burgers(m, AnalyticField(bump).on(m), 0.01, 0.01, steps)[-1]
        errs.append(quadrature_l2_error(u, ref))
    assert errs[0] > errs[1] > errs[2]


def test_transfer_identity_and_analytic():
    m = build_unit_square_mesh(6)
    u = ScalarField(m, np.random.default_rng(2).normal(size=m.n_nodes))
    np.testing.assert_array_equal(transfer_field(u, m).values, u.values)
    coords = m.nodes.copy()
    inner = m.tag_kind == INTERIOR
    coords[inner] += 0.03
    b = m.moved(coords)
    np.testing.assert_array_equal(transfer_field(AnalyticField(lambda x, y: x), b).values, b.nodes[:, 0])


def test_transfer_discrete_gaussian_within_interpolation_bound():
    n = 21
    g = lambda x, y: np.exp(-((x - 0.5) ** 2 + (y - 0.4) ** 2) / 0.05)
    m = build_unit_square_mesh(n)
    rng = np.random.default_rng(4)
    coords = m.nodes.copy()
    inner = m.tag_kind == INTERIOR
    coords[inner] += rng.uniform(-0.2, 0.2, size=(inner.sum(), 2)) / (n - 1)
    b = m.moved(coords)
    moved = transfer_field(AnalyticField(g).on(m), b)
    dev = np.abs(moved.values - g(b.nodes[:, 0], b.nodes[:, 1])).max()
    # P1 interpolation error bound h^2 / 2 * max |D^2 g| with h the longest edge
    h = math.sqrt(2) / (n - 1)
    d2max = 2 / 0.05 * 2  # |D^2 g| <= (2/s)(1 + 2 r^2/s) e^{-r^2/s} <= 4/s
    assert dev <= 0.5 * h ** 2 * d2max
    assert not moved.clamped.any()


def test_transfer_flags_points_outside():
    m = build_unit_square_mesh(5)
    small = build_unit_square_mesh(5).moved(m.nodes * 0.9)
    out = transfer_field(ScalarField(small, small.nodes[:, 0]), m)
    assert out.clamped[m.nodes[:, 0] == 1.0].all()
    assert not out.clamped[(m.nodes[:, 0] < 0.85) & (m.nodes[:, 1] < 0.85)].any()
