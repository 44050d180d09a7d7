"""Polygonal meshes: data model, structured generators, text I/O and quality checks."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np
from scipy.optimize import linprog


class MeshError(ValueError):
    """Raised for invalid mesh topology or geometry."""


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def polygon_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(points: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def polygon_diameter(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def _is_simple(points: np.ndarray) -> bool:
    n = len(points)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(points[i], points[(i + 1) % n], points[j], points[(j + 1) % n]):
                return False
    return True


class PolygonalMesh:
    """Conforming polygonal mesh of a 2D domain.

    Cells are counter-clockwise vertex loops. Edges are derived: each edge is stored
    with its vertices ordered as traversed by its *left* cell (the lower cell index),
    so the unit normal ``edge_normals[e]`` points from the left cell to the right cell
    (outward on the boundary) and ``edge_tangents[e]`` is that normal rotated by +90°.
    """

    def __init__(self, vertices, cells: Iterable[Iterable[int]], nominal_h: float | None = None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (N, 2) array")
        self.cells = [np.asarray(c, dtype=np.int64) for c in cells]
        nv = len(self.vertices)
        if not self.cells:
            raise MeshError("mesh has no cells")

        used = np.zeros(nv, dtype=bool)
        for k, cell in enumerate(self.cells):
            if len(cell) < 3:
                raise MeshError(f"cell {k} has fewer than 3 vertices")
            if cell.min() < 0 or cell.max() >= nv:
                raise MeshError(f"cell {k} references a vertex index out of range")
            if len(np.unique(cell)) != len(cell):
                raise MeshError(f"cell {k} repeats a vertex")
            used[cell] = True
        if not used.all():
            raise MeshError(f"vertex {int(np.argmin(used))} is not used by any cell")

        nc = len(self.cells)
        self.areas = np.empty(nc)
        self.centroids = np.empty((nc, 2))
        self.diameters = np.empty(nc)
        for k, cell in enumerate(self.cells):
            pts = self.vertices[cell]
            area = polygon_area(pts)
            if area <= 0.0:
                raise MeshError(f"cell {k} is not counter-clockwise (signed area {area:.3e})")
            if not _is_simple(pts):
                raise MeshError(f"cell {k} is not a simple polygon")
            self.areas[k] = area
            self.centroids[k] = polygon_centroid(pts)
            self.diameters[k] = polygon_diameter(pts)

        self._build_edges()

        vertex_diam_sum = np.zeros(nv)
        vertex_count = np.zeros(nv)
        for k, cell in enumerate(self.cells):
            vertex_diam_sum[cell] += self.diameters[k]
            vertex_count[cell] += 1
        self.vertex_h = vertex_diam_sum / vertex_count
        self.h = float(self.diameters.max())
        self.nominal_h = float(nominal_h) if nominal_h is not None else self.h

    def _build_edges(self):
        lookup: dict[tuple[int, int], int] = {}
        ev, left, right = [], [], []
        cell_edges, cell_signs = [], []
        for k, cell in enumerate(self.cells):
            ids, signs = [], []
            for a, b in zip(cell, np.roll(cell, -1)):
                a, b = int(a), int(b)
                key = (min(a, b), max(a, b))
                e = lookup.get(key)
                if e is None:
                    e = len(ev)
                    lookup[key] = e
                    ev.append((a, b))
                    left.append(k)
                    right.append(-1)
                    signs.append(1.0)
                else:
                    if right[e] != -1:
                        raise MeshError(f"edge {key} is shared by more than two cells")
                    if ev[e] != (b, a):
                        raise MeshError(f"cells {left[e]} and {k} overlap along edge {key}")
                    right[e] = k
                    signs.append(-1.0)
                ids.append(e)
            cell_edges.append(np.array(ids, dtype=np.int64))
            cell_signs.append(np.array(signs))

        self.edge_vertices = np.array(ev, dtype=np.int64)
        self.edge_cells = np.stack([np.array(left), np.array(right)], axis=1)
        self.cell_edges = cell_edges
        self.cell_edge_signs = cell_signs
        seg = self.vertices[self.edge_vertices[:, 1]] - self.vertices[self.edge_vertices[:, 0]]
        self.edge_lengths = np.hypot(seg[:, 0], seg[:, 1])
        if (self.edge_lengths <= 0).any():
            raise MeshError("zero-length edge")
        self.edge_tangents = seg / self.edge_lengths[:, None]
        self.edge_normals = np.stack([self.edge_tangents[:, 1], -self.edge_tangents[:, 0]], axis=1)
        self.boundary_edges = self.edge_cells[:, 1] < 0
        self.boundary_vertices = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_vertices[self.edge_vertices[self.boundary_edges].ravel()] = True

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edge_vertices)

    def cell_points(self, k: int) -> np.ndarray:
        return self.vertices[self.cells[k]]

    def vertex_boundary_edges(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for e in np.flatnonzero(self.boundary_edges):
            for v in self.edge_vertices[e]:
                out.setdefault(int(v), []).append(int(e))
        return out

    def __repr__(self):
        return f"PolygonalMesh(vertices={self.n_vertices}, edges={self.n_edges}, cells={self.n_cells})"


# ---------------------------------------------------------------------------
# structured generators

MESH_KINDS = ("triangle", "square", "hexagon", "distorted_quad")


def _grid(n, domain):
    x0, x1, y0, y1 = domain
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def _clip_to_box(poly: np.ndarray, domain) -> np.ndarray:
    """Sutherland-Hodgman clipping of a convex polygon against an axis-aligned box."""
    x0, x1, y0, y1 = domain
    planes = [(0, x0, 1.0), (0, x1, -1.0), (1, y0, 1.0), (1, y1, -1.0)]
    pts = [tuple(p) for p in poly]
    for axis, value, sgn in planes:
        if not pts:
            break
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            dc = sgn * (cur[axis] - value)
            dp = sgn * (prev[axis] - value)
            if dc >= 0:
                if dp < 0:
                    s = dp / (dp - dc)
                    out.append(tuple(prev[j] + s * (cur[j] - prev[j]) for j in range(2)))
                out.append(cur)
            elif dp >= 0:
                s = dp / (dp - dc)
                out.append(tuple(prev[j] + s * (cur[j] - prev[j]) for j in range(2)))
        pts = out
    clipped = np.array(pts, dtype=float).reshape(-1, 2)
    if len(clipped):
        keep = np.ones(len(clipped), dtype=bool)
        for i in range(len(clipped)):
            if np.allclose(clipped[i], clipped[i - 1], atol=1e-13) and len(clipped) > 1:
                keep[i] = False
        clipped = clipped[keep]
    return clipped


def _merge_polygons(polys: list[np.ndarray], scale: float) -> tuple[np.ndarray, list[list[int]]]:
    index: dict[tuple[int, int], int] = {}
    verts: list[np.ndarray] = []
    cells = []
    q = 1e-9 * scale
    for poly in polys:
        ids = []
        for p in poly:
            key = (int(round(p[0] / q)), int(round(p[1] / q)))
            if key not in index:
                index[key] = len(verts)
                verts.append(p)
            ids.append(index[key])
        cells.append(ids)
    return np.array(verts), cells


def _hexagon_mesh(n, domain):
    x0, x1, y0, y1 = domain
    nx = n
    ny = max(1, int(round(n * 2.0 / np.sqrt(3.0))))
    a = 0.5 / nx
    dy = 1.0 / ny
    polys = []
    for r in range(ny + 1):
        shift = 0.5 if r % 2 else 0.0
        for j in range(-1, nx + 2):
            cx, cy = (j + shift) / nx, r * dy
            hexagon = np.array([
                [cx, cy - 2 * dy / 3], [cx + a, cy - dy / 3], [cx + a, cy + dy / 3],
                [cx, cy + 2 * dy / 3], [cx - a, cy + dy / 3], [cx - a, cy - dy / 3],
            ])
            clipped = _clip_to_box(hexagon, (0.0, 1.0, 0.0, 1.0))
            if len(clipped) >= 3 and polygon_area(clipped) > 1e-12 * dy * a:
                polys.append(clipped)
    verts, cells = _merge_polygons(polys, 1.0)
    verts = np.stack([x0 + (x1 - x0) * verts[:, 0], y0 + (y1 - y0) * verts[:, 1]], axis=1)
    return verts, cells


def generate_structured(kind: str, n: int, domain=(0.0, 1.0, 0.0, 1.0), seed: int = 0,
                        diagonal: str = "anti") -> PolygonalMesh:
    """Build one of the structured mesh families.

    ``triangle`` splits each square of an ``n x n`` grid along one diagonal: ``anti``
    (lower-left to upper-right, the default) or ``main`` (upper-left to lower-right).
    ``distorted_quad`` moves every interior vertex of the square grid by a random
    vector of length at most ``0.2 * min(cell side)`` drawn from ``seed``.
    """
    if kind not in MESH_KINDS:
        raise MeshError(f"unknown mesh kind {kind!r}; expected one of {MESH_KINDS}")
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"domain {domain} is inverted or degenerate")
    n = int(n)
    domain = (x0, x1, y0, y1)
    nominal_h = max(x1 - x0, y1 - y0) / n

    if kind == "hexagon":
        verts, cells = _hexagon_mesh(n, domain)
        return PolygonalMesh(verts, cells, nominal_h=nominal_h)

    verts = _grid(n, domain)
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[row=j, col=i]
    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx[j, i], idx[j, i + 1], idx[j + 1, i + 1], idx[j + 1, i]
            if kind == "triangle":
                if diagonal == "anti":
                    cells += [[a, b, c], [a, c, d]]
                elif diagonal == "main":
                    cells += [[a, b, d], [b, c, d]]
                else:
                    raise MeshError(f"unknown diagonal {diagonal!r}")
            else:
                cells.append([a, b, c, d])

    if kind == "distorted_quad":
        rng = np.random.default_rng(seed)
        side = min((x1 - x0), (y1 - y0)) / n
        interior = np.ones((n + 1, n + 1), dtype=bool)
        interior[[0, -1], :] = False
        interior[:, [0, -1]] = False
        interior = interior.ravel()
        m = int(interior.sum())
        radius = 0.2 * side * np.sqrt(rng.random(m))
        angle = 2.0 * np.pi * rng.random(m)
        verts[interior] += np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)

    return PolygonalMesh(verts, cells, nominal_h=nominal_h)


# ---------------------------------------------------------------------------
# text format: "NV NC", NV lines "x y", NC lines "m i_1 ... i_m"; '#' starts a comment line


def export_mesh(mesh: PolygonalMesh, stream: TextIO | None = None) -> str:
    lines = [f"{mesh.n_vertices} {mesh.n_cells}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [" ".join(str(v) for v in [len(c), *c.tolist()]) for c in mesh.cells]
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def import_mesh(stream: TextIO | str) -> PolygonalMesh:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = []
    for lineno, raw in enumerate(stream, start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        rows.append((lineno, s.split()))
    if not rows:
        raise MeshParseError("empty mesh file")

    lineno, head = rows[0]
    try:
        nv, nc = (int(t) for t in head)
    except ValueError:
        raise MeshParseError(f"expected header 'NV NC', got {' '.join(head)!r}", lineno) from None
    if nv < 3 or nc < 1:
        raise MeshParseError(f"invalid counts NV={nv}, NC={nc}", lineno)
    if len(rows) != 1 + nv + nc:
        raise MeshParseError(
            f"header announces {nv} vertices and {nc} cells but file has {len(rows) - 1} data lines",
            lineno)

    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, tok = rows[1 + i]
        if len(tok) != 2:
            raise MeshParseError(f"vertex line needs 2 coordinates, got {len(tok)}", lineno)
        try:
            verts[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshParseError(f"bad coordinate in {' '.join(tok)!r}", lineno) from None

    cells = []
    for i in range(nc):
        lineno, tok = rows[1 + nv + i]
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError(f"bad cell line {' '.join(tok)!r}", lineno) from None
        m = vals[0]
        if m < 3 or len(vals) != m + 1:
            raise MeshParseError(f"cell declares {m} vertices but lists {len(vals) - 1}", lineno)
        ids = vals[1:]
        if min(ids) < 0 or max(ids) >= nv:
            raise MeshParseError(f"cell references vertex outside 0..{nv - 1}", lineno)
        if polygon_area(verts[ids]) <= 0:
            raise MeshParseError("cell vertices are not in counter-clockwise order", lineno)
        cells.append(ids)
    return PolygonalMesh(verts, cells)


# ---------------------------------------------------------------------------
# quality


@dataclass(frozen=True)
class MeshQualityReport:
    edge_ratio: float          # min h_e / h_K over cells and their edges
    diameter_ratio: float      # min h_K / h
    star_ratios: np.ndarray    # per cell: radius of largest disk in the kernel / h_K
    convex: np.ndarray         # per cell convexity flag

    @property
    def star_ratio(self) -> float:
        return float(self.star_ratios.min())

    @property
    def all_convex(self) -> bool:
        return bool(self.convex.all())


def _kernel_radius(points: np.ndarray) -> float:
    """Radius of the largest disk contained in every interior half-plane of the edges."""
    seg = np.roll(points, -1, axis=0) - points
    length = np.hypot(seg[:, 0], seg[:, 1])
    normal = np.stack([seg[:, 1], -seg[:, 0]], axis=1) / length[:, None]  # outward
    # maximise r subject to normal_i . c + r <= normal_i . p_i
    a_ub = np.hstack([normal, np.ones((len(points), 1))])
    b_ub = (normal * points).sum(1)
    res = linprog([0.0, 0.0, -1.0], A_ub=a_ub, b_ub=b_ub,
                  bounds=[(None, None), (None, None), (0, None)], method="highs")
    if not res.success:
        return 0.0
    return max(float(res.x[2]), 0.0)


def _is_convex(points: np.ndarray, tol: float = 1e-12) -> bool:
    d1 = np.roll(points, -1, axis=0) - points
    d2 = np.roll(d1, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = (np.hypot(d1[:, 0], d1[:, 1]) * np.hypot(d2[:, 0], d2[:, 1])).max()
    return bool((cross >= -tol * scale).all())


def assess_quality(mesh: PolygonalMesh) -> MeshQualityReport:
    edge_ratio = np.inf
    stars = np.empty(mesh.n_cells)
    convex = np.empty(mesh.n_cells, dtype=bool)
    for k in range(mesh.n_cells):
        pts = mesh.cell_points(k)
        hk = mesh.diameters[k]
        edge_ratio = min(edge_ratio, mesh.edge_lengths[mesh.cell_edges[k]].min() / hk)
        stars[k] = _kernel_radius(pts) / hk
        convex[k] = _is_convex(pts)
    return MeshQualityReport(
        edge_ratio=float(edge_ratio),
        diameter_ratio=float(mesh.diameters.min() / mesh.h),
        star_ratios=stars,
        convex=convex,
    )
