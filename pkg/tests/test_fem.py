import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdgsdt.fem import (MAX_QUADRATURE_DEGREE, EdgeBasis, FlowDofMap, QuadratureError, TransportDofMap,
                        TriangleBasis, bdm_interpolate, edge_quadrature, interpolate_vbar, l2_project_elements,
                        l2_project_facets, triangle_dim, triangle_quadrature)
from hdgsdt.mesh import INTERFACE, STOKES_FACETS, build_structured_mesh


def monomial_integral(a, b):
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("d", [0, 1, 2, 5, 8, 13, 20])
def test_triangle_quadrature_exact(d):
    rule = triangle_quadrature(d)
    x, y = rule.points.T
    for a in range(d + 1):
        for b in range(d + 1 - a):
            assert rule.weights @ (x ** a * y ** b) == pytest.approx(monomial_integral(a, b), rel=1e-13)
    assert np.all(rule.weights > 0)
    assert np.all(rule.points >= 0) and np.all(rule.points.sum(axis=1) <= 1)


@given(st.integers(0, 24), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_quadrature_integrates_random_polynomials(d, seed):
    rng = np.random.default_rng(seed)
    rule = triangle_quadrature(d)
    x, y = rule.points.T
    terms = [(a, b) for a in range(d + 1) for b in range(d + 1 - a)]
    coef = rng.standard_normal(len(terms))
    approx = sum(c * (rule.weights @ (x ** a * y ** b)) for c, (a, b) in zip(coef, terms))
    exact = sum(c * monomial_integral(a, b) for c, (a, b) in zip(coef, terms))
    assert approx == pytest.approx(exact, rel=1e-11, abs=1e-13)


def test_edge_quadrature_exact():
    for d in range(0, 30):
        r = edge_quadrature(d)
        for a in range(d + 1):
            assert r.weights @ r.points ** a == pytest.approx(1.0 / (a + 1), rel=1e-13)


@pytest.mark.parametrize("d", [-1, MAX_QUADRATURE_DEGREE + 1])
def test_quadrature_degree_bounds(d):
    with pytest.raises(QuadratureError):
        triangle_quadrature(d)
    with pytest.raises(QuadratureError):
        edge_quadrature(d)


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
def test_triangle_basis_orthonormal(k):
    b = TriangleBasis(k)
    assert b.dim == triangle_dim(k)
    rule = triangle_quadrature(2 * k)
    phi = b.eval(rule.points)
    # rounding grows with the size of the expansion coefficients
    tol = 1e-13 if k <= 3 else 1e-11
    assert np.allclose((phi * rule.weights[:, None]).T @ phi, np.eye(b.dim), atol=tol)
    assert np.allclose(phi[:, 0], math.sqrt(2.0))


def test_triangle_basis_hierarchical_and_gradients():
    rule = triangle_quadrature(6)
    low, high = TriangleBasis(2).eval(rule.points), TriangleBasis(3).eval(rule.points)
    assert np.allclose(high[:, :low.shape[1]], low)
    b = TriangleBasis(3)
    p = np.array([[0.2, 0.3], [0.1, 0.6]])
    eps = 1e-6
    for j in range(2):
        dp = np.zeros(2)
        dp[j] = eps
        fd = (b.eval(p + dp) - b.eval(p - dp)) / (2 * eps)
        assert np.allclose(b.grad(p)[..., j], fd, atol=1e-7)


@pytest.mark.parametrize("k", [0, 1, 3])
def test_edge_basis_orthonormal(k):
    r = edge_quadrature(2 * k)
    psi = EdgeBasis(k).eval(r.points)
    assert np.allclose((psi * r.weights[:, None]).T @ psi, np.eye(k + 1), atol=1e-13)


def test_l2_projection_reproduces_polynomials():
    m = build_structured_mesh(4)
    f = lambda x, sub: 1 + 2 * x[..., 0] - x[..., 1] ** 2 + x[..., 0] * x[..., 1]
    coef = l2_project_elements(f, m, 2)
    rule = triangle_quadrature(4)
    vals = coef @ TriangleBasis(2).eval(rule.points).T
    elems = np.repeat(np.arange(m.num_elements), len(rule.points)).reshape(m.num_elements, -1)
    x = m.to_physical(np.broadcast_to(rule.points, elems.shape + (2,)), elems)
    assert np.allclose(vals, f(x, None), atol=1e-13)
    # facet projection of the trace
    facets = np.arange(m.num_facets)
    fc = l2_project_facets(f, m, facets, 2)
    r = edge_quadrature(4)
    a, b = m.vertices[m.facet_vertices[:, 0]], m.vertices[m.facet_vertices[:, 1]]
    xf = a[:, None, :] + r.points[None, :, None] * (b - a)[:, None, :]
    assert np.allclose(fc @ EdgeBasis(2).eval(r.points).T, f(xf, None), atol=1e-13)


def test_constant_projection_means():
    m = build_structured_mesh(4)
    coef = l2_project_elements(lambda x, sub: np.full(x.shape[:-1], 0.3), m, 2)
    assert np.allclose(coef[:, 0], 0.3 / math.sqrt(2.0))
    assert np.allclose(coef[:, 1:], 0.0, atol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_bdm_reproduces_polynomials_and_normal_trace(k):
    m = build_structured_mesh(4)
    rng = np.random.default_rng(k)
    powers = [(a, b) for a in range(k + 1) for b in range(k + 1 - a)]
    c = rng.standard_normal((2, len(powers)))
    field = lambda x, sub: np.stack([x[..., 0] ** a * x[..., 1] ** b for a, b in powers], -1) @ c.T
    u = bdm_interpolate(field, m, k)
    rule = triangle_quadrature(2 * k)
    uh = np.einsum("qb,ecb->eqc", TriangleBasis(k).eval(rule.points), u)
    elems = np.repeat(np.arange(m.num_elements), len(rule.points)).reshape(m.num_elements, -1)
    x = m.to_physical(np.broadcast_to(rule.points, elems.shape + (2,)), elems)
    assert np.abs(uh - field(x, None)).max() < 1e-11
    vbar = interpolate_vbar(field, m, k, u)
    assert vbar.shape == (len(m.facets_of_kind(*STOKES_FACETS)), 2, k + 1)


def test_bdm_normal_continuity_of_nonpolynomial_field():
    m = build_structured_mesh(4)
    field = lambda x, sub: np.stack([np.sin(3 * x[..., 1]), np.exp(x[..., 0])], -1)
    k = 2
    u = bdm_interpolate(field, m, k)
    r = edge_quadrature(6)
    b = TriangleBasis(k)
    worst = 0.0
    for f in np.flatnonzero(m.facet_elements[:, 1] >= 0):
        a, c = m.vertices[m.facet_vertices[f]]
        x = a + r.points[:, None] * (c - a)
        vals = []
        for e in m.facet_elements[f]:
            ref = m.to_reference(x, np.full(len(x), e))
            vals.append(np.einsum("qb,cb->qc", b.eval(ref), u[e]) @ m.facet_normal[f])
        worst = max(worst, np.abs(vals[0] - vals[1]).max())
    assert worst < 1e-12


def test_dof_maps_partition_unknowns():
    m = build_structured_mesh(4)
    for mean in (True, False):
        d = FlowDofMap(m, 2, mean)
        parts = [d.u, d.ubar, d.p, d.pbar_s, d.pbar_d] + ([d.lam] if mean else [])
        idx = np.concatenate([np.ravel(p) for p in parts])
        assert np.array_equal(np.sort(idx), np.arange(d.ndofs))
        # interface facets carry both pressure traces
        f = m.facets_of_kind(INTERFACE)
        assert not set(d.pbar_of_facet(f, 0).ravel()) & set(d.pbar_of_facet(f, 1).ravel())
    t = TransportDofMap(m, 1)
    idx = np.concatenate([t.c.ravel(), t.cbar.ravel()])
    assert np.array_equal(np.sort(idx), np.arange(t.ndofs))
