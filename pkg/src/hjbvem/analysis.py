"""Error norms, convergence orders and the refinement study driver."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import Discretization
from .basis import cell_quadrature
from .mesh import generate_structured
from .newton import NewtonConfig, solve_hjb
from .problem import ControlSet, HJBProblem

CSV_COLUMNS = ("family", "mesh", "inv_h", "ndof", "E2", "rate2", "E1", "rate1",
               "E0", "rate0", "newton_iters", "seconds")


class StudyError(RuntimeError):
    pass


def error_norms(disc: Discretization, u: np.ndarray, problem: HJBProblem) -> tuple[float, float, float]:
    """(E0, E1, E2): L2 errors of Pi_H u_h, Pi_1 grad u_h and Pi_0 D^2 u_h against u."""
    if problem.u is None or problem.grad_u is None or problem.hess_u is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution callbacks")
    q = disc.quad
    ex_u = problem.u(q.points)
    ex_g = problem.grad_u(q.points)
    ex_h = problem.hess_u(q.points)
    e0 = e1 = e2 = 0.0
    for k, el in enumerate(disc.elements):
        sl = slice(q.offsets[k], q.offsets[k + 1])
        pts, w = q.points[sl], q.weights[sl]
        loc = disc.dofmap.to_local(u, k)
        mono = el.basis.eval(pts)
        val = mono @ (el.P_H @ loc)
        grad = mono[:, :3] @ (el.P1_grad @ loc).T
        h11, h12, h22 = el.P0_hess @ loc
        dh = ex_h[sl] - np.array([[h11, h12], [h12, h22]])
        e0 += w @ (ex_u[sl] - val) ** 2
        e1 += w @ ((ex_g[sl] - grad) ** 2).sum(1)
        e2 += w @ (dh ** 2).sum((1, 2))
    return math.sqrt(e0), math.sqrt(e1), math.sqrt(e2)


def eoc(errors, hs) -> list[float]:
    """Rates log(e_{i-1}/e_i) / log(h_{i-1}/h_i) for i >= 1."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if len(e) != len(h):
        raise ValueError("errors and mesh sizes differ in length")
    if (e <= 0).any():
        raise ValueError("errors must be positive to compute convergence orders")
    if (np.diff(h) >= 0).any():
        raise ValueError("mesh sizes must be strictly decreasing")
    return (np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])).tolist()


@dataclass
class ReportRow:
    family: str
    mesh: str
    inv_h: float
    ndof: int
    E2: float
    E1: float
    E0: float
    newton_iters: int
    seconds: float
    converged: bool = True
    rate2: float | None = None
    rate1: float | None = None
    rate0: float | None = None


@dataclass
class ConvergenceReport:
    problem: str
    rows: list[ReportRow] = field(default_factory=list)

    def _update_rates(self):
        rows = self.rows
        for i in range(1, len(rows)):
            hs = [1 / rows[i - 1].inv_h, 1 / rows[i].inv_h]
            for name in ("E2", "E1", "E0"):
                pair = [getattr(rows[i - 1], name), getattr(rows[i], name)]
                setattr(rows[i], "rate" + name[1], eoc(pair, hs)[0])

    def add(self, row: ReportRow):
        self.rows.append(row)
        self._update_rates()

    def last_rates(self) -> tuple[float, float, float]:
        r = self.rows[-1]
        return r.rate2, r.rate1, r.rate0

    def to_csv(self, timing: bool = False) -> str:
        """CSV text; ``seconds`` stays empty unless ``timing`` so reruns are byte-identical."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)

        def fmt(v, spec=".6e"):
            return "" if v is None else format(v, spec)

        for r in self.rows:
            writer.writerow([r.family, r.mesh, format(r.inv_h, "g"), r.ndof,
                             fmt(r.E2), fmt(r.rate2, ".4f"), fmt(r.E1), fmt(r.rate1, ".4f"),
                             fmt(r.E0), fmt(r.rate0, ".4f"), r.newton_iters,
                             fmt(r.seconds, ".3f") if timing else ""])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'1/h':>6} {'ndof':>7} {'E2':>10} {'rate':>6} {'E1':>10} {'rate':>6} "
                 f"{'E0':>10} {'rate':>6} {'its':>4}"]
        for r in self.rows:
            def rt(x):
                return f"{x:6.2f}" if x is not None else " " * 6
            lines.append(f"{r.inv_h:6g} {r.ndof:7d} {r.E2:10.3e} {rt(r.rate2)} {r.E1:10.3e} "
                         f"{rt(r.rate1)} {r.E0:10.3e} {rt(r.rate0)} {r.newton_iters:4d}")
        return "\n".join(lines)


@dataclass
class StudyConfig:
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    seed: int = 0
    diagonal: str = "anti"
    quad_order: int = 8
    require_convergence: bool = True


def convergence_study(problem: HJBProblem, controls: ControlSet, family: str, mesh_kind: str,
                      levels, config: StudyConfig | None = None) -> ConvergenceReport:
    """Solve on each ``n`` in ``levels`` (cells per side) and tabulate the errors."""
    config = config or StudyConfig()
    report = ConvergenceReport(problem.name)
    width = problem.domain[1] - problem.domain[0]
    for n in levels:
        try:
            t0 = time.perf_counter()
            mesh = generate_structured(mesh_kind, int(n), problem.domain, seed=config.seed,
                                       diagonal=config.diagonal)
            disc = Discretization(mesh, family, problem.lam, config.quad_order)
            u, trace = solve_hjb(mesh, family, problem, controls, config.newton, disc=disc)
            seconds = time.perf_counter() - t0
            if config.require_convergence and not trace.converged:
                raise StudyError(f"Newton did not converge in {config.newton.itermax} iterations "
                                 f"(last err {trace.errors[-1]:.3e})")
            E0, E1, E2 = error_norms(disc, u, problem)
        except Exception as exc:
            raise StudyError(f"refinement n = {n} ({mesh_kind}, {family}): {exc}") from exc
        report.add(ReportRow(family, mesh_kind, n / width, disc.n_free, E2, E1, E0,
                             trace.iterations, seconds, trace.converged))
    return report


def miranda_talenti_sample(rng: np.random.Generator, quad_order: int = 10) -> tuple[float, float]:
    """(||D^2 v||, ||Laplace v||) on the unit square for v = x(1-x)y(1-y) p with random p in P2."""
    c = rng.standard_normal(6)
    mesh = generate_structured("square", 4)
    rule_pts, rule_w = [], []
    for k in range(mesh.n_cells):
        r = cell_quadrature(mesh.cell_points(k), quad_order)
        rule_pts.append(r.points)
        rule_w.append(r.weights)
    pts, w = np.concatenate(rule_pts), np.concatenate(rule_w)
    x, y = pts[:, 0], pts[:, 1]
    # v = b p with b = x(1-x)y(1-y)
    b = x * (1 - x) * y * (1 - y)
    bx, by = (1 - 2 * x) * y * (1 - y), x * (1 - x) * (1 - 2 * y)
    bxx, byy, bxy = -2 * y * (1 - y), -2 * x * (1 - x), (1 - 2 * x) * (1 - 2 * y)
    p = c[0] + c[1] * x + c[2] * y + c[3] * x**2 + c[4] * x * y + c[5] * y**2
    px, py = c[1] + 2 * c[3] * x + c[4] * y, c[2] + c[4] * x + 2 * c[5] * y
    pxx, pxy, pyy = 2 * c[3], c[4], 2 * c[5]
    vxx = bxx * p + 2 * bx * px + b * pxx
    vyy = byy * p + 2 * by * py + b * pyy
    vxy = bxy * p + bx * py + by * px + b * pxy
    hess = math.sqrt(w @ (vxx**2 + 2 * vxy**2 + vyy**2))
    lap = math.sqrt(w @ (vxx + vyy) ** 2)
    return hess, lap
