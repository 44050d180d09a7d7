import numpy as np
import pytest
import sympy as sym
from hypothesis import given, strategies as st

from hjbvem.basis import (MonomialBasis, cell_quadrature, dim_poly, edge_quadrature,
                          exact_cell_moments, exponents, reference_triangle_rule)
from hjbvem.mesh import MESH_KINDS, generate_structured, polygon_centroid, polygon_diameter

from conftest import random_convex_polygon

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_exponent_order():
    assert exponents(2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert dim_poly(2) == 6 and dim_poly(4) == 15


def test_eval_examples():
    b = MonomialBasis([0.3, -0.2], 0.7, 2)
    x = np.array([[1.1, 0.4], [-2.0, 5.0]])
    assert np.allclose(b.eval(x)[:, 0], 1.0)
    assert np.allclose(b.eval(x, 1)[:, 1], [1 / 0.7, 0.0])
    assert np.allclose(b.eval(x, 2)[:, 3], [[2 / 0.49, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        b.eval(x, 3)


def test_eval_against_symbolic():
    xs, ys = sym.symbols("x y")
    c, h = np.array([0.25, 0.5]), 0.8
    b = MonomialBasis(c, h, 3)
    pt = np.array([[0.9, -0.3]])
    for j, (a, bb) in enumerate(b.exps):
        m = ((xs - c[0]) / h) ** a * ((ys - c[1]) / h) ** bb
        sub = {xs: pt[0, 0], ys: pt[0, 1]}
        assert np.isclose(b.eval(pt)[0, j], float(m.subs(sub)))
        grad = [float(sym.diff(m, v).subs(sub)) for v in (xs, ys)]
        assert np.allclose(b.eval(pt, 1)[0, j], grad)
        hess = [[float(sym.diff(m, u, v).subs(sub)) for v in (xs, ys)] for u in (xs, ys)]
        assert np.allclose(b.eval(pt, 2)[0, j], hess)


def test_moments_unit_square():
    c, h = polygon_centroid(SQUARE), polygon_diameter(SQUARE)
    mom = exact_cell_moments(SQUARE, 2, c, h)
    assert mom[0] == pytest.approx(1.0)
    # int ((x - 1/2) / sqrt 2)^2 = (1/12) / 2
    assert mom[3] == pytest.approx(1 / 24, rel=1e-14)
    # centrally symmetric: odd moments vanish
    assert np.allclose(mom[[1, 2]], 0, atol=1e-16)


def test_moments_symmetric_hexagon_odd_vanish():
    ang = np.pi / 3 * np.arange(6)
    pts = np.stack([np.cos(ang), np.sin(ang)], 1) * 2 + [1.0, -3.0]
    mom = exact_cell_moments(pts, 5, polygon_centroid(pts), 4.0)
    odd = [j for j, (a, b) in enumerate(exponents(5)) if (a + b) % 2]
    assert np.abs(mom[odd]).max() < 1e-14


def test_square_rule_examples():
    rule = cell_quadrature(SQUARE, 3)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    x, y = rule.points.T
    assert rule.integrate(x**2 * y) == pytest.approx(1 / 6, abs=1e-14)
    e = edge_quadrature([0, 0], [3.0, 4.0], 4)
    assert e.weights.sum() == pytest.approx(5.0)


@pytest.mark.parametrize("degree", range(1, 13))
def test_reference_triangle_exactness(degree):
    pts, w = reference_triangle_rule(degree)
    assert (w > 0).all()
    for a, b in exponents(degree):
        exact = float(sym.factorial(a) * sym.factorial(b) / sym.factorial(a + b + 2))
        assert w @ (pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-13, abs=1e-16)


def test_nonstar_cell_rejected():
    # arrow shape whose centroid lies outside the kernel
    pts = np.array([[0, 0], [4, 0], [4, 1], [0.2, 0.2], [1, 4], [0, 4]], dtype=float)
    with pytest.raises(ValueError, match="star"):
        cell_quadrature(pts, 2, centroid=np.array([3.5, 3.5]))


@given(st.integers(0, 2**32 - 1))
def test_moments_match_quadrature_on_random_polygons(seed):
    rng = np.random.default_rng(seed)
    pts = random_convex_polygon(rng)
    c, h = polygon_centroid(pts), polygon_diameter(pts)
    d = 4
    mom = exact_cell_moments(pts, d, c, h)
    rule = cell_quadrature(pts, d, c)
    quad = rule.integrate(MonomialBasis(c, h, d).eval(rule.points))
    scale = np.abs(mom).max()
    assert np.allclose(mom, quad, rtol=1e-12, atol=1e-12 * scale)


@pytest.mark.parametrize("kind", MESH_KINDS)
def test_gram_spd(kind):
    m = generate_structured(kind, 4, seed=1)
    for k in range(m.n_cells):
        pts = m.cell_points(k)
        mom = exact_cell_moments(pts, 4, m.centroids[k], m.diameters[k])
        ex = exponents(2)
        idx = {e: i for i, e in enumerate(exponents(4))}
        G = np.array([[mom[idx[(a1 + a2, b1 + b2)]] for a2, b2 in ex] for a1, b1 in ex])
        assert np.allclose(G, G.T)
        assert np.linalg.eigvalsh(G).min() > 0
