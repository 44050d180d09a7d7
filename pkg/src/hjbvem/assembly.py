"""Global DOF numbering, frozen-control selection and assembly of the linearised scheme.

On every cell the discrete forms only see the constant projections
``Q v = (H11, H12, H22, g1, g2, s)`` of the local DOF vector (Hessian mean, gradient
mean, value mean) plus the stabilisation. With ``w = gamma (A11, 2 A12, A22, b1, b2, -c)``
and ``l = (1, 0, 1, 0, 0, -lambda)``::

    gamma L^a v = w . Q v,        L_lambda v = l . Q v,
    B_*(u, v)   = |K| (Q u)^T G (Q v),   G = diag(1, 2, 1, 2 lambda, 2 lambda, lambda^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .basis import DEFAULT_QUAD_ORDER, cell_quadrature
from .element import LocalElement, build_elements, interpolate
from .mesh import PolygonalMesh
from .problem import ControlSet, HJBProblem, gamma_from

DEFAULT_THETA = 0.5


@dataclass
class DofMap:
    """Local-to-free map: local DOF ``i`` of cell ``K`` equals ``coef[K][i] * u[index[K][i]]``.

    ``index == -1`` marks DOFs fixed to zero by the boundary condition.
    """

    family: str
    n_free: int
    index: list[np.ndarray]
    coef: list[np.ndarray]
    labels: list[tuple]

    def to_local(self, u: np.ndarray, cell: int) -> np.ndarray:
        # index -1 picks the appended zero
        return self.coef[cell] * np.append(u, 0.0)[self.index[cell]]


def _boundary_normals(mesh: PolygonalMesh, tol: float = 1e-10) -> dict[int, np.ndarray | None]:
    """Outward normal at straight boundary vertices, ``None`` at corners."""
    out = {}
    for v, edges in mesh.vertex_boundary_edges().items():
        n0 = mesh.edge_normals[edges[0]]
        if len(edges) == 2 and abs(n0 @ mesh.edge_normals[edges[1]] - 1.0) < tol:
            out[v] = n0
        else:
            out[v] = None
    return out


def build_dof_map(mesh: PolygonalMesh, family: str, k: int = 2) -> DofMap:
    if k != 2:
        raise ValueError(f"only k = 2 is implemented, got k = {k}")
    labels: list[tuple] = []
    if family == "conforming":
        bnormal = _boundary_normals(mesh)
        vmap = np.full((mesh.n_vertices, 3), -1, dtype=np.int64)
        vcoef = np.zeros((mesh.n_vertices, 3))
        for v in range(mesh.n_vertices):
            if not mesh.boundary_vertices[v]:
                vmap[v] = len(labels) + np.arange(3)
                vcoef[v] = 1.0
                labels += [("value", v), ("grad_x", v), ("grad_y", v)]
            elif bnormal[v] is not None:
                vmap[v, 1:] = len(labels)
                vcoef[v, 1:] = bnormal[v]
                labels.append(("grad_n", v))
        index = [vmap[c].reshape(-1) for c in mesh.cells]
        coef = [vcoef[c].reshape(-1) for c in mesh.cells]
        return DofMap(family, len(labels), index, coef, labels)

    if family != "nonconforming":
        raise ValueError(f"unknown family {family!r}")
    vmap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    for v in range(mesh.n_vertices):
        if not mesh.boundary_vertices[v]:
            vmap[v] = len(labels)
            labels.append(("value", v))
    emean = np.full(mesh.n_edges, -1, dtype=np.int64)
    for e in range(mesh.n_edges):
        if not mesh.boundary_edges[e]:
            emean[e] = len(labels)
            labels.append(("edge_mean", e))
    eflux = np.arange(mesh.n_edges) + len(labels)
    labels += [("edge_flux", e) for e in range(mesh.n_edges)]
    index, coef = [], []
    for c, verts in enumerate(mesh.cells):
        edges = mesh.cell_edges[c]
        index.append(np.concatenate([vmap[verts], emean[edges], eflux[edges]]))
        coef.append(np.concatenate([np.ones(2 * len(verts)), mesh.cell_edge_signs[c]]))
    return DofMap(family, len(labels), index, coef, labels)


@dataclass
class QuadratureData:
    points: np.ndarray    # (P, 2)
    weights: np.ndarray   # (P,)
    cell: np.ndarray      # (P,) owning cell
    offsets: np.ndarray   # (C + 1,) start of each cell's block

    def cell_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum of per-point values (leading axis) over each cell."""
        return np.add.reduceat(values, self.offsets[:-1], axis=0)


def mesh_quadrature(mesh: PolygonalMesh, order: int = DEFAULT_QUAD_ORDER) -> QuadratureData:
    pts, wts, owner = [], [], []
    for k in range(mesh.n_cells):
        rule = cell_quadrature(mesh.cell_points(k), order, mesh.centroids[k])
        pts.append(rule.points)
        wts.append(rule.weights)
        owner.append(np.full(len(rule.weights), k))
    sizes = np.array([len(w) for w in wts])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return QuadratureData(np.concatenate(pts), np.concatenate(wts), np.concatenate(owner), offsets)


class Discretization:
    """Mesh, local elements, DOF map and quadrature of one scheme."""

    def __init__(self, mesh: PolygonalMesh, family: str, lam: float,
                 quad_order: int = DEFAULT_QUAD_ORDER, elements: list[LocalElement] | None = None):
        self.mesh = mesh
        self.family = family
        self.lam = float(lam)
        self.quad_order = quad_order
        self.elements = elements if elements is not None else build_elements(mesh, family, lam)
        self.dofmap = build_dof_map(mesh, family)
        self.quad = mesh_quadrature(mesh, quad_order)
        self.areas = mesh.areas
        self.ell = np.array([1.0, 0.0, 1.0, 0.0, 0.0, -self.lam])
        self.G = np.diag([1.0, 2.0, 1.0, 2 * self.lam, 2 * self.lam, self.lam**2])
        self._common_cache: dict[int, np.ndarray] = {}
        self._static_cache: dict[float, dict] = {}

        groups: dict[int, list[int]] = {}
        for k, el in enumerate(self.elements):
            groups.setdefault(el.ndof, []).append(k)
        self.groups = []
        for n, cells in sorted(groups.items()):
            cells = np.array(cells)
            self.groups.append({
                "cells": cells,
                "Q": np.stack([self.elements[k].Q for k in cells]),
                "S": np.stack([self.elements[k].S for k in cells]),
                "index": np.stack([self.dofmap.index[k] for k in cells]),
                "coef": np.stack([self.dofmap.coef[k] for k in cells]),
            })

    @property
    def n_free(self) -> int:
        return self.dofmap.n_free

    def common_source(self, problem: HJBProblem) -> np.ndarray | None:
        if problem.f_common is None:
            return None
        key = id(problem.f_common)
        if key not in self._common_cache:
            self._common_cache[key] = problem.f_common(self.quad.points)
        return self._common_cache[key]

    def local_dofs(self, u: np.ndarray) -> list[np.ndarray]:
        return [self.dofmap.to_local(u, k) for k in range(self.mesh.n_cells)]

    def projected_state(self, u: np.ndarray) -> np.ndarray:
        """(C, 6) array of (H11, H12, H22, g1, g2, s) per cell."""
        out = np.empty((self.mesh.n_cells, 6))
        for g in self.groups:
            loc = _gather(u, g["index"], g["coef"])
            out[g["cells"]] = np.einsum("cij,cj->ci", g["Q"], loc)
        return out

    def hessian_norm(self, u: np.ndarray) -> float:
        """(sum_K ||Pi_0 D^2 u||^2_{0,K})^(1/2)."""
        st = self.projected_state(u)
        return float(np.sqrt((self.areas * (st[:, 0]**2 + 2 * st[:, 1]**2 + st[:, 2]**2)).sum()))

    def energy_norm(self, u: np.ndarray) -> float:
        """Discrete B-norm: projected B_* form plus stabilisation."""
        st = self.projected_state(u)
        val = (self.areas * np.einsum("ci,ij,cj->c", st, self.G, st)).sum()
        for g in self.groups:
            loc = _gather(u, g["index"], g["coef"])
            val += np.einsum("ci,cij,cj->", loc, g["S"], loc)
        return float(np.sqrt(max(val, 0.0)))

    def _static(self, theta: float) -> list[np.ndarray]:
        if theta not in self._static_cache:
            mats = []
            for g in self.groups:
                Q, area = g["Q"], self.areas[g["cells"]]
                ql = np.einsum("cij,i->cj", Q, self.ell)  # Q^T l
                mats.append(theta * area[:, None, None] * np.einsum("cki,kl,clj->cij", Q, self.G, Q)
                            - theta * area[:, None, None] * np.einsum("ci,cj->cij", ql, ql)
                            + g["S"])
            self._static_cache[theta] = mats
        return self._static_cache[theta]

    def interpolate(self, func, grad) -> np.ndarray:
        """Free DOF vector of the canonical interpolant of a function vanishing on the boundary."""
        num = np.zeros(self.n_free)
        den = np.zeros(self.n_free)
        for k, el in enumerate(self.elements):
            loc = interpolate(el.geometry, self.family, func, grad, self.quad_order)
            idx, coef = self.dofmap.index[k], self.dofmap.coef[k]
            m = idx >= 0
            np.add.at(num, idx[m], coef[m] * loc[m])
            np.add.at(den, idx[m], coef[m] ** 2)
        return num / den


def _gather(u: np.ndarray, index: np.ndarray, coef: np.ndarray) -> np.ndarray:
    return coef * np.append(u, 0.0)[index]


def _scatter_matrix(disc: Discretization, mats: list[np.ndarray]) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for g, M in zip(disc.groups, mats):
        idx, coef = g["index"], g["coef"]
        n = idx.shape[1]
        r = np.broadcast_to(idx[:, :, None], (len(idx), n, n))
        c = np.broadcast_to(idx[:, None, :], (len(idx), n, n))
        v = coef[:, :, None] * coef[:, None, :] * M
        mask = (r >= 0) & (c >= 0)
        rows.append(r[mask])
        cols.append(c[mask])
        vals.append(v[mask])
    n = disc.n_free
    return linalg.csr_from_triplets(np.concatenate(rows), np.concatenate(cols),
                                    np.concatenate(vals), (n, n))


def _scatter_vector(disc: Discretization, vecs: list[np.ndarray]) -> np.ndarray:
    out = np.zeros(disc.n_free)
    for g, v in zip(disc.groups, vecs):
        idx, coef = g["index"], g["coef"]
        mask = idx >= 0
        np.add.at(out, idx[mask], (coef * v)[mask])
    return out


@dataclass
class FrozenControlField:
    """Per quadrature point: selected control and its coefficients."""

    index: np.ndarray
    gamma: np.ndarray
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    f: np.ndarray
    objective: np.ndarray   # value of the maximised objective
    weighted: bool = True

    def changed(self, other: "FrozenControlField | None") -> int:
        if other is None:
            return len(self.index)
        return int((self.index != other.index).sum())


def select_argmax_controls(disc: Discretization, problem: HJBProblem, controls: ControlSet,
                           u: np.ndarray, weighted: bool = True,
                           state: np.ndarray | None = None) -> FrozenControlField:
    """Pointwise maximiser of ``gamma^a (L^a u - f^a)`` over the sampled controls.

    With ``weighted=False`` the unscaled objective ``L^a u - f^a`` is maximised instead.
    Ties keep the lowest control index.
    """
    if state is None:
        if len(u) != disc.n_free:
            raise ValueError(f"state has {len(u)} entries, expected {disc.n_free}")
        state = disc.projected_state(u)
    pt_state = state[disc.quad.cell]
    H = np.stack([np.stack([pt_state[:, 0], pt_state[:, 1]], -1),
                  np.stack([pt_state[:, 1], pt_state[:, 2]], -1)], axis=-2)
    gvec, sval = pt_state[:, 3:5], pt_state[:, 5]
    x = disc.quad.points
    common = disc.common_source(problem)
    P = len(x)
    best = np.full(P, -np.inf)
    out = FrozenControlField(np.zeros(P, dtype=np.int64), np.zeros(P), np.zeros((P, 2, 2)),
                             np.zeros((P, 2)), np.zeros(P), np.zeros(P), best, weighted)
    for i, alpha in enumerate(controls):
        A, b, c, f = problem.coefficients(x, alpha, common)
        gam = gamma_from(A, b, c, problem.lam, problem.has_lower_order)
        val = np.einsum("pij,pij->p", A, H) + np.einsum("pi,pi->p", b, gvec) - c * sval - f
        obj = gam * val if weighted else val
        better = obj > best
        if i == 0:
            better[:] = True
        if better.any():
            best = np.where(better, obj, best)
            out.index[better] = i
            out.gamma[better] = np.broadcast_to(gam, (P,))[better]
            out.A[better] = A[better]
            out.b[better] = b[better]
            out.c[better] = np.broadcast_to(c, (P,))[better]
            out.f[better] = f[better]
    out.objective = best
    return out


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap = field(repr=False)

    def solve(self) -> np.ndarray:
        return linalg.sparse_solve(self.matrix, self.rhs)


def _weighted_coefficients(disc: Discretization, fld: FrozenControlField):
    """Per-cell integrals of gamma*(A11, 2A12, A22, b1, b2, -c) and gamma*f."""
    w = disc.quad.weights * fld.gamma
    vec = np.stack([fld.A[:, 0, 0], 2 * fld.A[:, 0, 1], fld.A[:, 1, 1],
                    fld.b[:, 0], fld.b[:, 1], -fld.c], axis=1)
    W = disc.quad.cell_sum(w[:, None] * vec)
    F = disc.quad.cell_sum(w * fld.f)
    return W, F


def local_systems(disc: Discretization, fld: FrozenControlField,
                  theta: float = DEFAULT_THETA) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-group stacks of element matrices (rows = test DOFs) and element loads."""
    if len(fld.index) != len(disc.quad.weights):
        raise ValueError("frozen field does not match the quadrature of this discretisation")
    W, F = _weighted_coefficients(disc, fld)
    static = disc._static(theta)
    mats, loads = [], []
    for g, Ms in zip(disc.groups, static):
        Q = g["Q"]
        cells = g["cells"]
        ql = np.einsum("cij,i->cj", Q, disc.ell)
        qw = np.einsum("cij,ci->cj", Q, W[cells])
        # static already holds theta*B_* - theta*l l^T + S, which combined with
        # (gamma L^a u - L_lambda u, L_lambda v) + (1 - theta)(L_lambda u, L_lambda v)
        # leaves only the frozen-coefficient term
        mats.append(Ms + np.einsum("ci,cj->cij", ql, qw))
        loads.append(ql * F[cells][:, None])
    return mats, loads


def cell_system(disc: Discretization, fld: FrozenControlField, cell: int,
                theta: float = DEFAULT_THETA) -> tuple[np.ndarray, np.ndarray]:
    """Element matrix and load of one cell, in local DOF numbering."""
    mats, loads = local_systems(disc, fld, theta)
    for g, M, F in zip(disc.groups, mats, loads):
        hit = np.flatnonzero(g["cells"] == cell)
        if len(hit):
            return M[hit[0]], F[hit[0]]
    raise IndexError(f"cell {cell} out of range")


def assemble_linearized(disc: Discretization, problem: HJBProblem, fld: FrozenControlField,
                        theta: float = DEFAULT_THETA) -> LinearSystem:
    """Matrix and load of ``a_h^a(u, v) = l_a(v)`` for the frozen control field."""
    mats, loads = local_systems(disc, fld, theta)
    return LinearSystem(_scatter_matrix(disc, mats), _scatter_vector(disc, loads), disc.dofmap)


def residual_vector(disc: Discretization, problem: HJBProblem, controls: ControlSet,
                    u: np.ndarray, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Components ``a_h(u; phi_i)`` of the nonlinear form for every free basis function."""
    fld = select_argmax_controls(disc, problem, controls, u, weighted=True)
    Fhat = disc.quad.cell_sum(disc.quad.weights * fld.objective)  # int_K F_gamma[u]
    static = disc._static(theta)
    vecs = []
    for g, Ms in zip(disc.groups, static):
        loc = _gather(u, g["index"], g["coef"])
        ql = np.einsum("cij,i->cj", g["Q"], disc.ell)
        vecs.append(np.einsum("cij,cj->ci", Ms, loc) + ql * Fhat[g["cells"]][:, None])
    return _scatter_vector(disc, vecs)


def residual_form(disc: Discretization, problem: HJBProblem, controls: ControlSet,
                  u: np.ndarray, v: np.ndarray, theta: float = DEFAULT_THETA) -> float:
    return float(residual_vector(disc, problem, controls, u, theta) @ v)
