import numpy as np
import pytest
import sympy as sym
from hypothesis import given, strategies as st

from hjbvem.basis import MonomialBasis, cell_quadrature, edge_quadrature
from hjbvem.element import (FAMILIES, CellGeometry, UnsupportedOrderError, build_element,
                            build_projectors, dof_layout, dofs_of_polynomial, interpolate,
                            polynomial_dofs, stabilization_scale)
from hjbvem.mesh import MESH_KINDS, PolygonalMesh, generate_structured, polygon_area, polygon_centroid, polygon_diameter

from conftest import random_convex_polygon


def geometry(pts, rng=None):
    vh = polygon_diameter(pts) * (1 if rng is None else rng.uniform(0.5, 2.0, len(pts)))
    return CellGeometry(pts, np.broadcast_to(vh, (len(pts),)).astype(float), polygon_area(pts),
                        polygon_centroid(pts), polygon_diameter(pts))


UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def poly_exact(el, coeffs, rule):
    """Exact values, gradients and Hessians of sum_j coeffs_j m_j at quadrature points."""
    b = el.basis
    return (b.eval(rule.points) @ coeffs, b.eval(rule.points, 1).transpose(0, 2, 1) @ coeffs,
            np.einsum("pjab,j->pab", b.eval(rule.points, 2), coeffs))


@given(st.integers(0, 2**32 - 1), st.sampled_from(FAMILIES))
def test_projectors_reproduce_quadratics(seed, family):
    rng = np.random.default_rng(seed)
    geo = geometry(random_convex_polygon(rng), rng)
    lam = float(rng.uniform(0, 10))
    el = build_element(geo, family, lam)
    assert np.abs(el.P_H @ el.D - np.eye(6)).max() < 1e-10
    assert np.abs(el.S @ el.D).max() < 1e-10 * max(1.0, el.s_K)
    coeffs = rng.standard_normal(6)
    dofs = el.D @ coeffs
    rule = cell_quadrature(geo.points, 4, geo.centroid)
    val, grad, hess = poly_exact(el, coeffs, rule)
    area = geo.area
    assert np.allclose(el.P0_val @ dofs, rule.integrate(val) / area, atol=1e-10)
    assert np.allclose(el.P0_grad @ dofs, rule.integrate(grad) / area, atol=1e-10)
    H = el.hessian(dofs)
    assert np.allclose(H, H.T)
    assert np.allclose(H, rule.integrate(hess) / area, atol=1e-10)
    lin = el.basis.eval(rule.points)[:, :3]
    g1 = lin @ (el.P1_grad @ dofs).T
    assert np.allclose(g1, grad, atol=1e-9)
    assert np.allclose(el.P_val, el.P_H)


@pytest.mark.parametrize("family", FAMILIES)
def test_hessian_projection_matches_symbolic_means(family):
    xs, ys = sym.symbols("x y")
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [2.5, 1.0], [0.5, 1.5]])
    geo = geometry(pts)
    el = build_element(geo, family, 1.0)
    c, h = geo.centroid, geo.diameter
    rule = cell_quadrature(pts, 2, c)
    for j, (a, b) in enumerate(el.basis.exps):
        m = ((xs - c[0]) / h) ** a * ((ys - c[1]) / h) ** b
        # second derivatives of a quadratic are constant
        exact = np.array([[float(sym.diff(m, u, v)) for v in (xs, ys)] for u in (xs, ys)])
        assert np.allclose(el.hessian(el.D[:, j]), exact, atol=1e-12)
    assert rule.weights.sum() == pytest.approx(geo.area)


def test_cubic_conforming_example():
    xs, ys = sym.symbols("x y")
    mean = sym.integrate(sym.integrate(sym.diff(xs**3, xs, 2), (xs, 0, 1)), (ys, 0, 1))
    geo = geometry(UNIT)
    el = build_element(geo, "conforming", 1.0)
    dofs = interpolate(geo, "conforming", lambda p: p[:, 0] ** 3,
                       lambda p: np.stack([3 * p[:, 0] ** 2, 0 * p[:, 0]], 1))
    assert np.allclose(el.hessian(dofs), [[float(mean), 0.0], [0.0, 0.0]], atol=1e-13)
    assert el.s_K == pytest.approx(4.5)
    assert stabilization_scale(np.sqrt(2), 1.0) == pytest.approx(4.5)


def test_dof_layout_counts():
    sq = generate_structured("square", 1)
    tri = generate_structured("triangle", 1)
    assert len(dof_layout(sq, 0, "conforming")) == 12
    assert len(dof_layout(tri, 0, "nonconforming")) == 9
    assert len(dof_layout(tri, 0, "conforming")) == 9
    with pytest.raises(UnsupportedOrderError):
        dof_layout(sq, 0, "conforming", k=3)
    with pytest.raises(ValueError):
        build_projectors(sq, 0, "morley")


def test_dofs_of_polynomial_examples():
    sq = generate_structured("square", 1)
    d = dofs_of_polynomial(sq, 0, "conforming", [1, 0, 0, 0, 0, 0])
    assert np.allclose(d[0::3], 1) and np.allclose(d[1::3], 0) and np.allclose(d[2::3], 0)
    d = dofs_of_polynomial(sq, 0, "nonconforming", [0, 1, 0, 0, 0, 0])
    # p = (x - 1/2)/sqrt 2: edge means 0 on the bottom/top edges, +-1/(2 sqrt 2) on the sides
    h = np.sqrt(2)
    assert np.allclose(d[4:8], [0, 0.5 / h, 0, -0.5 / h])
    # normal moments: dp/dn * |e| = +-1/sqrt 2 on the vertical edges
    assert np.allclose(d[8:12], [0, 1 / h, 0, -1 / h])


def test_interpolation_examples():
    rng = np.random.default_rng(0)
    m = generate_structured("square", 2)
    for family in FAMILIES:
        for k in range(m.n_cells):
            geo = CellGeometry.from_mesh(m, k)
            c = rng.standard_normal(6)
            b = MonomialBasis(geo.centroid, geo.diameter, 2)
            d = interpolate(geo, family, lambda p: b.eval(p) @ c,
                            lambda p: b.eval(p, 1).transpose(0, 2, 1) @ c)
            assert np.allclose(d, polynomial_dofs(geo, family, b, c), atol=1e-12)
            z = interpolate(geo, family, lambda p: 0 * p[:, 0], lambda p: 0 * p)
            assert not z.any()
    # sin(pi x) sin(pi y) on the lower-left cell [0, 1/2]^2
    geo = CellGeometry.from_mesh(m, 0)
    u = lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])  # noqa: E731
    gu = lambda p: np.pi * np.stack([np.cos(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]),  # noqa: E731
                                     np.sin(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1])], 1)
    d = interpolate(geo, "conforming", u, gu).reshape(4, 3)
    hv = geo.vertex_h
    assert np.allclose(d[:, 0], [0, 0, 1, 0])
    assert np.allclose(d[:, 1], [0, 0, 0, hv[3] * np.pi])
    assert np.allclose(d[:, 2], [0, hv[1] * np.pi, 0, 0])


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("kind", MESH_KINDS)
def test_stabilization_spectrum_bounded(kind, family):
    spread = []
    for n in (2, 4, 8):
        m = generate_structured(kind, n, seed=2)
        lo, hi = np.inf, 0.0
        for k in range(0, m.n_cells, max(1, m.n_cells // 12)):
            el = build_projectors(m, k, family, lam=1.0)
            assert np.array_equal(el.S, el.S.T)
            ev = np.linalg.eigvalsh(el.S / el.s_K)
            nz = ev[ev > 1e-8]
            assert len(nz) == el.ndof - 6  # kernel is exactly D(P_2)
            lo, hi = min(lo, nz.min()), max(hi, nz.max())
        spread.append((lo, hi))
        assert lo > 1 - 1e-10  # R = I - D P_H is a projector
        assert hi < 100
    his = [s[1] for s in spread]
    assert max(his) / min(his) < 2.0


def test_degenerate_cell_rejected():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(Exception):
        PolygonalMesh(pts, [[0, 1, 2]])
