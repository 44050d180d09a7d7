"""Scaled monomials, exact polygon moments and quadrature rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

DEFAULT_QUAD_ORDER = 8


def exponents(degree: int) -> list[tuple[int, int]]:
    """Graded lexicographic multi-indices: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ..."""
    return [(j - i, i) for j in range(degree + 1) for i in range(j + 1)]


def dim_poly(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


@dataclass(frozen=True)
class MonomialBasis:
    center: np.ndarray
    scale: float
    degree: int
    exps: list[tuple[int, int]] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "exps", exponents(self.degree))

    def __len__(self):
        return len(self.exps)

    def homogeneous_slice(self, j: int) -> slice:
        return slice(dim_poly(j - 1) if j > 0 else 0, dim_poly(j))

    def eval(self, points, order: int = 0) -> np.ndarray:
        """Evaluate the basis at ``points`` of shape (P, 2).

        Returns (P, n) values for ``order=0``, (P, n, 2) gradients for ``order=1`` and
        (P, n, 2, 2) Hessians for ``order=2``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s = (pts - self.center) / self.scale
        h = self.scale

        def powr(base, p):
            return base**p if p >= 0 else np.zeros_like(base)

        sx, sy = s[:, 0], s[:, 1]
        if order == 0:
            return np.stack([powr(sx, a) * powr(sy, b) for a, b in self.exps], axis=1)
        if order == 1:
            gx = [a * powr(sx, a - 1) * powr(sy, b) / h for a, b in self.exps]
            gy = [b * powr(sx, a) * powr(sy, b - 1) / h for a, b in self.exps]
            return np.stack([np.stack(gx, 1), np.stack(gy, 1)], axis=2)
        if order == 2:
            hxx = [a * (a - 1) * powr(sx, a - 2) * powr(sy, b) / h**2 for a, b in self.exps]
            hxy = [a * b * powr(sx, a - 1) * powr(sy, b - 1) / h**2 for a, b in self.exps]
            hyy = [b * (b - 1) * powr(sx, a) * powr(sy, b - 2) / h**2 for a, b in self.exps]
            hxx, hxy, hyy = (np.stack(v, 1) for v in (hxx, hxy, hyy))
            return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], axis=-2)
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


@lru_cache(maxsize=None)
def gauss_legendre(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = roots_legendre(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def exact_cell_moments(points: np.ndarray, degree: int, center, scale: float) -> np.ndarray:
    """Integrals over the polygon of every scaled monomial up to ``degree``.

    Uses Euler's identity for homogeneous functions, so each moment reduces to
    ``1/(|b| + 2) * sum_e ((x - x_c) . n_e) * int_e m_b`` and the edge integrals are
    evaluated exactly by Gauss-Legendre.
    """
    pts = np.asarray(points, dtype=float)
    if abs(_signed_area(pts)) <= 1e-300:
        raise ValueError("degenerate (zero-area) polygon")
    basis = MonomialBasis(center, scale, degree)
    t, w = gauss_legendre(degree // 2 + 1)
    nxt = np.roll(pts, -1, axis=0)
    seg = nxt - pts
    normal = np.stack([seg[:, 1], -seg[:, 0]], axis=1)  # outward, scaled by edge length
    support = ((pts - basis.center) * normal).sum(1)  # ((x - x_c).n_e) * |e|
    qp = pts[:, None, :] + t[None, :, None] * seg[:, None, :]
    vals = basis.eval(qp.reshape(-1, 2)).reshape(len(pts), len(t), -1)
    edge_int = np.einsum("q,eqb->eb", w, vals)  # (1/|e|) int_e m_b
    deg = np.array([a + b for a, b in basis.exps])
    return (support[:, None] * edge_int).sum(0) / (deg + 2)


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def reference_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed (conical product) Gauss rule on the triangle (0,0), (1,0), (0,1).

    Exact for polynomials of total degree ``degree``; all weights are positive.
    """
    n = degree // 2 + 1
    xa, wa = roots_jacobi(n, 1.0, 0.0)  # weight (1 - x) for the collapsed direction
    xb, wb = roots_legendre(n)
    u = 0.5 * (xa + 1.0)
    wu = wa / 4.0
    v = 0.5 * (xb + 1.0)
    wv = 0.5 * wb
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.stack([U.ravel(), ((1.0 - U) * V).ravel()], axis=1)
    return pts, W.ravel()


def triangle_rule(tri: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    ref_pts, ref_w = reference_triangle_rule(degree)
    a, b, c = tri
    jac = np.array([b - a, c - a]).T
    det = abs(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    return a + ref_pts @ jac.T, ref_w * det


def cell_quadrature(points: np.ndarray, degree: int = DEFAULT_QUAD_ORDER,
                    centroid: np.ndarray | None = None) -> QuadratureRule:
    """Quadrature on a polygon exact to ``degree``.

    Triangles use the triangle rule directly; other cells are split into a fan of
    triangles around the centroid, which must see every edge.
    """
    pts = np.asarray(points, dtype=float)
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    if len(pts) == 3:
        q, w = triangle_rule(pts, degree)
        return QuadratureRule(q, w, degree)
    if centroid is None:
        from .mesh import polygon_centroid
        centroid = polygon_centroid(pts)
    nxt = np.roll(pts, -1, axis=0)
    cross = (pts[:, 0] - centroid[0]) * (nxt[:, 1] - centroid[1]) - \
            (pts[:, 1] - centroid[1]) * (nxt[:, 0] - centroid[0])
    if (cross <= 0).any():
        raise ValueError("cell is not star-shaped with respect to its centroid; "
                         "split or repair the cell before integrating")
    qs, ws = [], []
    for a, b in zip(pts, nxt):
        q, w = triangle_rule(np.array([centroid, a, b]), degree)
        qs.append(q)
        ws.append(w)
    return QuadratureRule(np.concatenate(qs), np.concatenate(ws), degree)


def edge_quadrature(a, b, degree: int = DEFAULT_QUAD_ORDER) -> QuadratureRule:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t, w = gauss_legendre(degree // 2 + 1)
    length = float(np.hypot(*(b - a)))
    return QuadratureRule(a + t[:, None] * (b - a), w * length, degree)
