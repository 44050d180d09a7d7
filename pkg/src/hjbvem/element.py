"""Local virtual elements of order k = 2: DOFs, projectors and stabilisation.

Two families are supported:

* ``conforming`` (C1): per vertex the value and the gradient scaled by ``h_xi``.
  Edge traces are cubic Hermite and normal derivatives are linear.
* ``nonconforming`` (C0): vertex values, edge means ``(1/h_e) int_e v`` and edge
  normal fluxes ``int_e dv/dn`` taken with the *outward* normal of the cell.

Every computable quantity is a matrix acting on the local DOF vector. Polynomials are
expressed in the scaled monomial basis of the cell (centroid, diameter).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .basis import MonomialBasis, edge_quadrature, exact_cell_moments, gauss_legendre
from .mesh import PolygonalMesh

FAMILIES = ("conforming", "nonconforming")

# Constant Hessians (times h_K^2) of the quadratic monomials (2,0), (1,1), (0,2).
_QUAD_HESS = np.array([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]])  # rows: H11, H12, H22


class ElementError(RuntimeError):
    pass


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True)
class DofDescriptor:
    kind: str      # vertex_value, vertex_gradient_x/y, edge_value_moment, edge_normal_moment
    anchor: int    # global vertex or edge index
    moment: int
    scale: float


def _check(family: str, k: int):
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if k != 2:
        raise UnsupportedOrderError(f"only k = 2 is implemented, got k = {k}")


def dof_layout(mesh: PolygonalMesh, cell: int, family: str, k: int = 2) -> list[DofDescriptor]:
    _check(family, k)
    verts = mesh.cells[cell]
    edges = mesh.cell_edges[cell]
    out = []
    if family == "conforming":
        for v in verts:
            hv = float(mesh.vertex_h[v])
            out += [DofDescriptor("vertex_value", int(v), 0, 1.0),
                    DofDescriptor("vertex_gradient_x", int(v), 0, hv),
                    DofDescriptor("vertex_gradient_y", int(v), 0, hv)]
    else:
        out += [DofDescriptor("vertex_value", int(v), 0, 1.0) for v in verts]
        out += [DofDescriptor("edge_value_moment", int(e), 0, 1.0 / mesh.edge_lengths[e])
                for e in edges]
        out += [DofDescriptor("edge_normal_moment", int(e), 0, 1.0) for e in edges]
    return out


@dataclass
class CellGeometry:
    points: np.ndarray     # (n, 2) CCW
    vertex_h: np.ndarray   # (n,)
    area: float
    centroid: np.ndarray
    diameter: float

    def __post_init__(self):
        nxt = np.roll(self.points, -1, axis=0)
        seg = nxt - self.points
        self.lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.tangents = seg / self.lengths[:, None]
        self.normals = np.stack([self.tangents[:, 1], -self.tangents[:, 0]], axis=1)

    @property
    def n(self) -> int:
        return len(self.points)

    @classmethod
    def from_mesh(cls, mesh: PolygonalMesh, cell: int) -> "CellGeometry":
        return cls(mesh.cell_points(cell), mesh.vertex_h[mesh.cells[cell]],
                   float(mesh.areas[cell]), mesh.centroids[cell], float(mesh.diameters[cell]))


class _Functionals:
    """Boundary functionals of a local space expressed on its DOF vector."""

    def __init__(self, geo: CellGeometry, family: str):
        self.geo = geo
        self.family = family
        n = geo.n
        self.ndof = 3 * n if family == "conforming" else 3 * n

    def vertex_values(self) -> np.ndarray:
        n = self.geo.n
        out = np.zeros((n, self.ndof))
        if self.family == "conforming":
            out[np.arange(n), 3 * np.arange(n)] = 1.0
        else:
            out[np.arange(n), np.arange(n)] = 1.0
        return out

    def _tangential_vertex_derivs(self):
        """Rows giving t_e . grad v at the start and end vertex of each edge (conforming)."""
        g = self.geo
        n = g.n
        start = np.zeros((n, self.ndof))
        end = np.zeros((n, self.ndof))
        nstart = np.zeros((n, self.ndof))
        nend = np.zeros((n, self.ndof))
        for i in range(n):
            j = (i + 1) % n
            t, nn = g.tangents[i], g.normals[i]
            start[i, 3 * i + 1:3 * i + 3] = t / g.vertex_h[i]
            end[i, 3 * j + 1:3 * j + 3] = t / g.vertex_h[j]
            nstart[i, 3 * i + 1:3 * i + 3] = nn / g.vertex_h[i]
            nend[i, 3 * j + 1:3 * j + 3] = nn / g.vertex_h[j]
        return start, end, nstart, nend

    def edge_integrals(self) -> np.ndarray:
        """Rows for int_e v."""
        g = self.geo
        n = g.n
        if self.family == "conforming":
            vals = self.vertex_values()
            ts, te, _, _ = self._tangential_vertex_derivs()
            L = g.lengths[:, None]
            return 0.5 * L * (vals + np.roll(vals, -1, axis=0)) + L**2 / 12.0 * (ts - te)
        out = np.zeros((n, self.ndof))
        out[np.arange(n), n + np.arange(n)] = g.lengths
        return out

    def edge_normal_integrals(self) -> np.ndarray:
        """Rows for int_e dv/dn with the outward normal."""
        g = self.geo
        n = g.n
        if self.family == "conforming":
            _, _, ns, ne = self._tangential_vertex_derivs()
            return 0.5 * g.lengths[:, None] * (ns + ne)
        out = np.zeros((n, self.ndof))
        out[np.arange(n), 2 * n + np.arange(n)] = 1.0
        return out

    def edge_tangential_integrals(self) -> np.ndarray:
        vals = self.vertex_values()
        return np.roll(vals, -1, axis=0) - vals

    def gradient_quasi_average(self) -> np.ndarray:
        g = self.geo
        n = g.n
        out = np.zeros((2, self.ndof))
        if self.family == "conforming":
            for i in range(n):
                out[:, 3 * i + 1:3 * i + 3] += np.eye(2) / g.vertex_h[i]
            return out / n
        # mean over edges of the edge-averaged gradient (dv/dn) n + (dv/dt) t
        dn = self.edge_normal_integrals() / g.lengths[:, None]
        dt = self.edge_tangential_integrals() / g.lengths[:, None]
        out = (g.normals.T @ dn + g.tangents.T @ dt) / n
        return out

    def trace(self, s: np.ndarray) -> np.ndarray:
        """Evaluation of v at edge parameters ``s`` in [0, 1]: array (n_edges, len(s), ndof)."""
        g = self.geo
        n = g.n
        vals = self.vertex_values()
        va, vb = vals, np.roll(vals, -1, axis=0)
        s = np.asarray(s, dtype=float)
        if self.family == "conforming":
            ts, te, _, _ = self._tangential_vertex_derivs()
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            L = g.lengths[:, None, None]
            return (h00[None, :, None] * va[:, None, :] + h01[None, :, None] * vb[:, None, :]
                    + L * (h10[None, :, None] * ts[:, None, :] + h11[None, :, None] * te[:, None, :]))
        mean = self.edge_integrals() / g.lengths[:, None]
        bubble = 6.0 * (mean - 0.5 * (va + vb))
        return ((1 - s)[None, :, None] * va[:, None, :] + s[None, :, None] * vb[:, None, :]
                + (s * (1 - s))[None, :, None] * bubble[:, None, :])


@dataclass
class LocalElement:
    """Projector and stabilisation matrices of one cell.

    All projector matrices act on the local DOF vector. ``P_H`` and ``P_val`` return
    coefficients in ``basis``; ``P0_hess`` returns the cell means (H11, H12, H22);
    ``P0_grad`` the mean gradient, ``P0_val`` the mean value; ``P1_grad[d]`` the
    coefficients of the L2 projection of d-th gradient component onto P1.
    """

    family: str
    k: int
    cell: int
    geometry: CellGeometry
    basis: MonomialBasis
    lam: float
    D: np.ndarray
    P_H: np.ndarray
    P0_hess: np.ndarray
    P0_grad: np.ndarray
    P0_val: np.ndarray
    P1_grad: np.ndarray
    moments: np.ndarray
    s_K: float
    S: np.ndarray

    @property
    def ndof(self) -> int:
        return self.D.shape[0]

    @property
    def P_val(self) -> np.ndarray:
        # the enhancement makes the L2 projection onto P_k equal P_H for k <= 4
        return self.P_H

    @property
    def Q(self) -> np.ndarray:
        """Stacked constant projections (H11, H12, H22, g1, g2, s): shape (6, ndof)."""
        return np.vstack([self.P0_hess, self.P0_grad, self.P0_val[None, :]])

    def hessian(self, dofs) -> np.ndarray:
        h11, h12, h22 = self.P0_hess @ dofs
        return np.array([[h11, h12], [h12, h22]])

    def stabilization_form(self, u, v) -> float:
        return float(u @ self.S @ v)


def stabilization_scale(h_K: float, lam: float) -> float:
    return h_K**-2 + 2.0 * lam + lam**2 * h_K**2


def polynomial_dofs(geo: CellGeometry, family: str, basis: MonomialBasis,
                    coeffs: np.ndarray | None = None) -> np.ndarray:
    """DOF values of the basis monomials (columns), or of ``basis @ coeffs`` if given."""
    n = geo.n
    nb = len(basis)
    if family == "conforming":
        D = np.zeros((3 * n, nb))
        val = basis.eval(geo.points, 0)
        grad = basis.eval(geo.points, 1)
        D[0::3] = val
        D[1::3] = geo.vertex_h[:, None] * grad[:, :, 0]
        D[2::3] = geo.vertex_h[:, None] * grad[:, :, 1]
    else:
        D = np.zeros((3 * n, nb))
        D[:n] = basis.eval(geo.points, 0)
        t, w = gauss_legendre(3)
        for i in range(n):
            a = geo.points[i]
            seg = geo.points[(i + 1) % n] - a
            qp = a + t[:, None] * seg
            D[n + i] = w @ basis.eval(qp, 0)
            D[2 * n + i] = geo.lengths[i] * (w @ (basis.eval(qp, 1) @ geo.normals[i]))
    return D if coeffs is None else D @ coeffs


def build_element(geo: CellGeometry, family: str, lam: float = 0.0, k: int = 2,
                  cell: int = -1) -> LocalElement:
    _check(family, k)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    basis = MonomialBasis(geo.centroid, geo.diameter, k)
    F = _Functionals(geo, family)
    h = geo.diameter

    dn = F.edge_normal_integrals()
    dt = F.edge_tangential_integrals()
    nx, ny = geo.normals[:, 0], geo.normals[:, 1]
    tx, ty = geo.tangents[:, 0], geo.tangents[:, 1]
    # (D^2 v, Psi)_K = sum_e (n.Psi.n) int_e dv/dn + (t.Psi.n) int_e dv/dt for constant Psi
    hess_int = np.vstack([
        (nx * nx) @ dn + (tx * nx) @ dt,
        (nx * ny) @ dn + (0.5 * (tx * ny + ty * nx)) @ dt,
        (ny * ny) @ dn + (ty * ny) @ dt,
    ])

    B = np.zeros((len(basis), F.ndof))
    B[0] = F.vertex_values().mean(axis=0)
    B[1:3] = F.gradient_quasi_average()
    # (D^2 psi, D^2 m_b)_K = H11 I11 + 2 H12 I12 + H22 I22 with H = hess(m_b)
    weights = _QUAD_HESS * np.array([1.0, 2.0, 1.0])[:, None] / h**2
    B[3:6] = weights.T @ hess_int

    D = polynomial_dofs(geo, family, basis)
    G = B @ D
    try:
        P_H = linalg.dense_solve(G, B)
    except linalg.SingularMatrixError as exc:
        raise ElementError(f"H2 projector is singular on cell {cell}: {exc}") from exc

    moments = exact_cell_moments(geo.points, 2 * k, geo.centroid, h)
    P0_hess = hess_int / geo.area
    P0_grad = geo.normals.T @ F.edge_integrals() / geo.area
    P0_val = moments[: len(basis)] @ P_H / geo.area

    # L2 projection of grad v onto P1: (grad v, w m_j) = int_dK v m_j w.n - int_K v div(w m_j)
    t, w = gauss_legendre(3)
    tr = F.trace(t)  # (ne, q, ndof)
    b1 = MonomialBasis(geo.centroid, h, 1)
    rhs = np.zeros((2, 3, F.ndof))
    for i in range(geo.n):
        qp = geo.points[i] + t[:, None] * (geo.points[(i + 1) % geo.n] - geo.points[i])
        m = b1.eval(qp)  # (q, 3)
        edge = geo.lengths[i] * np.einsum("q,qj,qd->jd", w, m, tr[i])
        rhs[0] += nx[i] * edge
        rhs[1] += ny[i] * edge
    mean_v = moments[: len(basis)] @ P_H  # int_K v
    rhs[0, 1] -= mean_v / h
    rhs[1, 2] -= mean_v / h
    gram1 = _gram(moments, 1)
    P1_grad = np.stack([linalg.dense_solve(gram1, rhs[d]) for d in range(2)])

    s_K = stabilization_scale(h, lam)
    R = np.eye(F.ndof) - D @ P_H
    S = s_K * (R.T @ R)
    S = 0.5 * (S + S.T)

    return LocalElement(family=family, k=k, cell=cell, geometry=geo, basis=basis, lam=lam,
                        D=D, P_H=P_H, P0_hess=P0_hess, P0_grad=P0_grad, P0_val=P0_val,
                        P1_grad=P1_grad, moments=moments, s_K=s_K, S=S)


def _gram(moments: np.ndarray, degree: int) -> np.ndarray:
    """Gram matrix of scaled monomials of ``degree`` from moments up to ``2*degree``."""
    from .basis import exponents
    exps = exponents(2 * degree)
    pos = {e: i for i, e in enumerate(exps)}
    low = exponents(degree)
    return np.array([[moments[pos[(a[0] + b[0], a[1] + b[1])]] for b in low] for a in low])


def build_projectors(mesh: PolygonalMesh, cell: int, family: str, k: int = 2,
                     lam: float = 0.0) -> LocalElement:
    return build_element(CellGeometry.from_mesh(mesh, cell), family, lam=lam, k=k, cell=cell)


def build_elements(mesh: PolygonalMesh, family: str, lam: float = 0.0, k: int = 2) -> list[LocalElement]:
    return [build_projectors(mesh, c, family, k=k, lam=lam) for c in range(mesh.n_cells)]


def dofs_of_polynomial(mesh: PolygonalMesh, cell: int, family: str, coeffs) -> np.ndarray:
    geo = CellGeometry.from_mesh(mesh, cell)
    basis = MonomialBasis(geo.centroid, geo.diameter, 2)
    return polynomial_dofs(geo, family, basis, np.asarray(coeffs, dtype=float))


def interpolate(geo: CellGeometry, family: str, func, grad, quad_order: int = 8) -> np.ndarray:
    """Canonical interpolant: DOF functionals of a smooth function.

    ``func(points) -> (P,)`` and ``grad(points) -> (P, 2)`` must accept point arrays.
    The nonconforming normal fluxes use the outward normal of the cell.
    """
    n = geo.n
    out = np.zeros(3 * n)
    if family == "conforming":
        out[0::3] = func(geo.points)
        g = grad(geo.points)
        out[1::3] = geo.vertex_h * g[:, 0]
        out[2::3] = geo.vertex_h * g[:, 1]
        return out
    out[:n] = func(geo.points)
    for i in range(n):
        rule = edge_quadrature(geo.points[i], geo.points[(i + 1) % n], quad_order)
        out[n + i] = rule.integrate(func(rule.points)) / geo.lengths[i]
        out[2 * n + i] = rule.integrate(grad(rule.points) @ geo.normals[i])
    return out
