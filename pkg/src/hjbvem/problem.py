"""HJB problem data: control sets, coefficients, Cordes scaling and the built-in examples."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

Array = np.ndarray
PointFn = Callable[[Array], Array]
CoefFn = Callable[[Array, Any], Array]

CORDES_SLACK = 1e-12


@dataclass(frozen=True)
class ControlSet:
    """Finite, ordered sample of the control space. Ties are resolved by lowest index."""

    controls: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.controls) == 0:
            raise ValueError("control set must not be empty")

    def __len__(self):
        return len(self.controls)

    def __iter__(self):
        return iter(self.controls)

    def __getitem__(self, i):
        return self.controls[i]


def sample_control_set(spec: dict) -> ControlSet:
    """Enumerate a control set.

    ``{"list": [...]}`` keeps the listed controls in order. ``{"theta": N}`` samples
    ``N`` angles on the closed interval ``theta_range`` (default ``[0, pi/3]``); adding
    ``"phi": M`` forms the product with ``M`` rotation angles on ``[0, 2 pi)``.
    """
    if not spec:
        raise ValueError("empty control specification")
    if "list" in spec:
        items = tuple(spec["list"])
        if not items:
            raise ValueError("empty control list")
        return ControlSet(items, {"kind": "list"})
    if "theta" in spec:
        nt = int(spec["theta"])
        if nt < 1:
            raise ValueError("theta grid size must be >= 1")
        lo, hi = spec.get("theta_range", (0.0, np.pi / 3))
        thetas = np.linspace(lo, hi, nt) if nt > 1 else np.array([lo])
        if "phi" not in spec:
            return ControlSet(tuple(float(t) for t in thetas), {"theta": nt})
        nphi = int(spec["phi"])
        if nphi < 1:
            raise ValueError("phi grid size must be >= 1")
        phis = 2 * np.pi * np.arange(nphi) / nphi
        ctrls = tuple((float(t), float(p)) for t, p in itertools.product(thetas, phis))
        return ControlSet(ctrls, {"theta": nt, "phi": nphi})
    raise ValueError(f"unrecognised control specification keys {sorted(spec)}")


@dataclass
class HJBProblem:
    """Coefficient family of ``sup_a (A:D2u + b.grad u - c u - f) = 0`` with u = 0 on the boundary.

    Callbacks take points of shape (P, 2) and a single control record and return
    arrays of shape (P, 2, 2), (P, 2), (P,) and (P,). ``f_common`` is an optional
    control-independent part of the source, added to ``f`` for every control.
    """

    name: str
    domain: tuple[float, float, float, float]
    A: CoefFn
    b: CoefFn
    c: CoefFn
    f: CoefFn
    lam: float
    eps: float
    has_lower_order: bool
    f_common: PointFn | None = None
    u: PointFn | None = None
    grad_u: PointFn | None = None
    hess_u: PointFn | None = None

    def __post_init__(self):
        if self.has_lower_order and not self.lam > 0:
            raise ValueError("lambda must be positive when lower-order terms are present")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def has_exact_solution(self) -> bool:
        return self.u is not None and self.grad_u is not None and self.hess_u is not None

    def source(self, x: Array, alpha, common: Array | None = None) -> Array:
        val = np.broadcast_to(self.f(x, alpha), (len(x),)).astype(float)
        if self.f_common is not None:
            val = val + (self.f_common(x) if common is None else common)
        return val

    def coefficients(self, x: Array, alpha, common: Array | None = None):
        n = len(x)
        A = np.broadcast_to(self.A(x, alpha), (n, 2, 2))
        b = np.broadcast_to(self.b(x, alpha), (n, 2))
        c = np.broadcast_to(self.c(x, alpha), (n,))
        return A, b, c, self.source(x, alpha, common)


def gamma_from(A: Array, b: Array, c: Array, lam: float, lower_order: bool) -> Array:
    trA = A[..., 0, 0] + A[..., 1, 1]
    normA2 = (A**2).sum(axis=(-1, -2))
    if lower_order:
        if lam <= 0:
            raise ValueError("lambda must be positive when lower-order terms are present")
        denom = normA2 + (b**2).sum(-1) / (2 * lam) + (c / lam) ** 2
        return (trA + c / lam) / denom
    if np.any(normA2 == 0):
        raise ValueError("|A| = 0: gamma undefined")
    return trA / normA2


def cordes_ratio_from(A: Array, b: Array, c: Array, lam: float, lower_order: bool) -> Array:
    trA = A[..., 0, 0] + A[..., 1, 1]
    normA2 = (A**2).sum(axis=(-1, -2))
    if lower_order:
        return (normA2 + (b**2).sum(-1) / (2 * lam) + (c / lam) ** 2) / (trA + c / lam) ** 2
    return normA2 / trA**2


def gamma(problem: HJBProblem, x, alpha) -> Array:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    A, b, c, _ = problem.coefficients(x, alpha, common=np.zeros(len(x)))
    return gamma_from(A, b, c, problem.lam, problem.has_lower_order)


@dataclass(frozen=True)
class CordesReport:
    sup_ratio: float
    implied_eps: float
    declared_eps: float
    passed: bool
    rho1: float
    rho2: float
    branch: int
    worst_point: tuple[float, float]
    worst_control: Any

    @property
    def note(self) -> str:
        bound = "1/(2+eps)" if self.branch == 1 else "1/(1+eps)"
        diff = self.implied_eps - self.declared_eps
        if abs(diff) <= 1e-10:
            rel = "matches the declared value"
        elif diff > 0:
            rel = f"exceeds the declared value {self.declared_eps:.6g} by {diff:.3g}"
        else:
            rel = f"is below the declared value {self.declared_eps:.6g} by {-diff:.3g}"
        return (f"sup ratio {self.sup_ratio:.12g} <= {bound}; implied eps {self.implied_eps:.12g} {rel}")

    def summary(self) -> str:
        return "\n".join([
            f"branch            : {self.branch} ({'lower-order terms' if self.branch == 1 else 'pure second order'})",
            f"sup Cordes ratio  : {self.sup_ratio:.12g}",
            f"implied eps       : {self.implied_eps:.12g}",
            f"declared eps      : {self.declared_eps:.12g}",
            f"ellipticity       : rho1 = {self.rho1:.6g}, rho2 = {self.rho2:.6g}",
            f"worst point       : ({self.worst_point[0]:.6g}, {self.worst_point[1]:.6g}), control {self.worst_control!r}",
            f"status            : {'pass' if self.passed else 'FAIL'}",
            f"note              : {self.note}",
        ])


def default_sample_points(domain, n: int = 41, quad_order: int = 4) -> Array:
    """Tensor grid plus the quadrature points of a reference triangle mesh."""
    from .basis import cell_quadrature
    from .mesh import generate_structured

    x0, x1, y0, y1 = domain
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
    pts = [np.stack([X.ravel(), Y.ravel()], axis=1)]
    mesh = generate_structured("triangle", 8, domain)
    pts += [cell_quadrature(mesh.cell_points(k), quad_order).points for k in range(mesh.n_cells)]
    return np.concatenate(pts)


def cordes_check(problem: HJBProblem, controls: ControlSet, points: Array | None = None) -> CordesReport:
    pts = default_sample_points(problem.domain) if points is None else np.atleast_2d(points)
    branch = 1 if problem.has_lower_order else 2
    worst, worst_pt, worst_ctrl = -np.inf, (np.nan, np.nan), None
    rho1, rho2 = np.inf, -np.inf
    zero = np.zeros(len(pts))
    for alpha in controls:
        A, b, c, _ = problem.coefficients(pts, alpha, common=zero)
        ratio = cordes_ratio_from(A, b, c, problem.lam, problem.has_lower_order)
        i = int(np.argmax(ratio))
        if ratio[i] > worst:
            worst, worst_pt, worst_ctrl = float(ratio[i]), tuple(pts[i].tolist()), alpha
        eig = np.linalg.eigvalsh(A)
        rho1, rho2 = min(rho1, float(eig[:, 0].min())), max(rho2, float(eig[:, 1].max()))
    offset = 2.0 if branch == 1 else 1.0
    implied = 1.0 / worst - offset
    passed = worst <= 1.0 / (offset + problem.eps) + CORDES_SLACK
    return CordesReport(worst, implied, problem.eps, bool(passed), rho1, rho2, branch,
                        worst_pt, worst_ctrl)


# ---------------------------------------------------------------------------
# built-in examples

PI = np.pi


def _sin_sin(x):
    return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])


def _sin_sin_grad(x):
    sx, cx = np.sin(PI * x[:, 0]), np.cos(PI * x[:, 0])
    sy, cy = np.sin(PI * x[:, 1]), np.cos(PI * x[:, 1])
    return PI * np.stack([cx * sy, sx * cy], axis=1)


def _sin_sin_hess(x):
    sx, cx = np.sin(PI * x[:, 0]), np.cos(PI * x[:, 0])
    sy, cy = np.sin(PI * x[:, 1]), np.cos(PI * x[:, 1])
    d = -PI**2 * sx * sy
    o = PI**2 * cx * cy
    return np.stack([np.stack([d, o], -1), np.stack([o, d], -1)], axis=-2)


def _exp_sin_sin(x):
    return np.exp(x[:, 0] * x[:, 1]) * _sin_sin(x)


def _exp_sin_sin_grad(x):
    E = np.exp(x[:, 0] * x[:, 1])
    S = _sin_sin(x)
    g = _sin_sin_grad(x)
    return E[:, None] * (np.stack([x[:, 1] * S, x[:, 0] * S], axis=1) + g)


def _exp_sin_sin_hess(x):
    x1, x2 = x[:, 0], x[:, 1]
    E = np.exp(x1 * x2)
    S = _sin_sin(x)
    Sx, Sy = _sin_sin_grad(x).T
    H = _sin_sin_hess(x)
    hxx = E * (x2**2 * S + 2 * x2 * Sx + H[:, 0, 0])
    hyy = E * (x1**2 * S + 2 * x1 * Sy + H[:, 1, 1])
    hxy = E * (x1 * x2 * S + x1 * Sx + S + x2 * Sy + H[:, 0, 1])
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], axis=-2)


def _sin_sin_unit(x):
    return np.sin(x[:, 0]) * np.sin(x[:, 1])


def _sin_sin_unit_grad(x):
    return np.stack([np.cos(x[:, 0]) * np.sin(x[:, 1]), np.sin(x[:, 0]) * np.cos(x[:, 1])], axis=1)


def _sin_sin_unit_hess(x):
    d = -np.sin(x[:, 0]) * np.sin(x[:, 1])
    o = np.cos(x[:, 0]) * np.cos(x[:, 1])
    return np.stack([np.stack([d, o], -1), np.stack([o, d], -1)], axis=-2)


def _const(value, shape):
    value = np.asarray(value, dtype=float)

    def fn(x, alpha=None):
        return np.broadcast_to(value, (len(x), *shape))
    return fn


def apply_operator(A: Array, b: Array, c: Array, u: Array, g: Array, H: Array) -> Array:
    """A:H + b.g - c u evaluated pointwise."""
    return np.einsum("pij,pij->p", A, H) + np.einsum("pi,pi->p", b, g) - c * u


def _example1() -> tuple[HJBProblem, ControlSet]:
    A0 = np.array([[2.0, 1.0], [1.0, 2.0]])
    A = _const(A0, (2, 2))
    c = _const(3.0, ())

    def b(x, alpha=None):
        return np.array(x, dtype=float)

    def f(x, alpha=None):
        n = len(x)
        return apply_operator(np.broadcast_to(A0, (n, 2, 2)), b(x), np.full(n, 3.0),
                              _sin_sin(x), _sin_sin_grad(x), _sin_sin_hess(x))

    prob = HJBProblem("example1", (0.0, 1.0, 0.0, 1.0), A, b, c, f, lam=1.0, eps=9.0 / 20.0,
                      has_lower_order=True, u=_sin_sin, grad_u=_sin_sin_grad, hess_u=_sin_sin_hess)
    return prob, ControlSet((0,), {"kind": "singleton"})


def example2_diffusion(theta: float, phi: float) -> Array:
    R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    sigma = R @ np.array([[1.0, np.sin(theta)], [0.0, np.cos(theta)]])
    return 0.5 * sigma @ sigma.T


def _example2(n_theta: int = 16, n_phi: int = 16) -> tuple[HJBProblem, ControlSet]:
    controls = sample_control_set({"theta": n_theta, "phi": n_phi})
    mats = {alpha: example2_diffusion(*alpha) for alpha in controls}
    shift = np.sqrt(3.0) / PI**2
    lam = 8.0 * PI**2 / 7.0

    def A(x, alpha):
        return np.broadcast_to(mats[alpha], (len(x), 2, 2))

    def f(x, alpha):
        return np.full(len(x), shift * np.sin(alpha[0]) ** 2)

    stack = np.array([mats[a] for a in controls])            # (N, 2, 2)
    offsets = np.array([shift * np.sin(a[0]) ** 2 for a in controls])

    def g(x):
        # control-independent part of the source chosen so that the sampled
        # supremum of (L^a u - f^a) vanishes identically
        H = _exp_sin_sin_hess(x)
        vals = np.einsum("nij,pij->pn", stack, H) - offsets[None, :]
        return vals.max(axis=1) - PI**2 * _exp_sin_sin(x)

    prob = HJBProblem("example2", (0.0, 1.0, 0.0, 1.0), A, _const(np.zeros(2), (2,)),
                      _const(PI**2, ()), f, lam=lam, eps=1.0 / 7.0, has_lower_order=True,
                      f_common=g, u=_exp_sin_sin, grad_u=_exp_sin_sin_grad, hess_u=_exp_sin_sin_hess)
    return prob, controls


def _sign(v):
    return np.where(v >= 0, 1.0, -1.0)


def _example3() -> tuple[HJBProblem, ControlSet]:
    base = {1: np.array([[2.0, 0.5], [0.5, 1.5]]), 2: np.array([[1.5, 0.5], [0.5, 2.0]])}
    jump = {1: np.array([[1.0, 0.5], [0.5, 0.5]]), 2: np.array([[0.5, 0.5], [0.5, 1.0]])}

    def A(x, alpha):
        s = _sign(x[:, 0]) * _sign(x[:, 1])
        return base[alpha][None] + s[:, None, None] * jump[alpha][None]

    b = _const(np.array([1.0, 0.0]), (2,))
    c = _const(1.0, ())

    def f(x, alpha):
        n = len(x)
        return apply_operator(A(x, alpha), b(x), np.ones(n), _sin_sin_unit(x),
                              _sin_sin_unit_grad(x), _sin_sin_unit_hess(x))

    prob = HJBProblem("example3", (-PI, PI, -PI, PI), A, b, c, f, lam=1.0, eps=1.0 / 6.0,
                      has_lower_order=True, u=_sin_sin_unit, grad_u=_sin_sin_unit_grad,
                      hess_u=_sin_sin_unit_hess)
    return prob, ControlSet((1, 2), {"kind": "list"})


BUILTIN = ("example1", "example2", "example3")


def make_builtin(name: str, n_theta: int = 16, n_phi: int = 16,
                 lam: float | None = None) -> tuple[HJBProblem, ControlSet]:
    if n_theta < 1 or n_phi < 1:
        raise ValueError("control grid sizes must be >= 1")
    if name == "example1":
        prob, ctrl = _example1()
    elif name == "example2":
        prob, ctrl = _example2(n_theta, n_phi)
    elif name == "example3":
        prob, ctrl = _example3()
    else:
        raise ValueError(f"unknown problem {name!r}; expected one of {BUILTIN}")
    if lam is not None:
        prob.lam = float(lam)
        prob.__post_init__()
    return prob, ctrl


def make_linear(A, b, c, solution: str, lam: float, eps: float,
                domain=(0.0, 1.0, 0.0, 1.0), name: str = "inline") -> tuple[HJBProblem, ControlSet]:
    """Linear problem with constant coefficients and a symbolic exact solution in ``x``, ``y``.

    The source is ``L u`` and derivatives of the solution are obtained symbolically.
    """
    import sympy as sym

    x, y = sym.symbols("x y")
    u = sym.sympify(solution, locals={"x": x, "y": y})
    derivs = {
        "u": u, "ux": sym.diff(u, x), "uy": sym.diff(u, y),
        "uxx": sym.diff(u, x, 2), "uxy": sym.diff(u, x, y), "uyy": sym.diff(u, y, 2),
    }
    fn = {k: sym.lambdify((x, y), v, "numpy") for k, v in derivs.items()}

    def ev(key, p):
        return np.broadcast_to(np.asarray(fn[key](p[:, 0], p[:, 1]), dtype=float), (len(p),))

    def uu(p):
        return ev("u", p)

    def grad(p):
        return np.stack([ev("ux", p), ev("uy", p)], axis=1)

    def hess(p):
        xx, xy, yy = ev("uxx", p), ev("uxy", p), ev("uyy", p)
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], axis=-2)

    A0 = np.asarray(A, dtype=float).reshape(2, 2)
    if not np.allclose(A0, A0.T):
        raise ValueError("A must be symmetric")
    b0 = np.asarray(b, dtype=float).reshape(2)
    c0 = float(c)

    def f(p, alpha=None):
        n = len(p)
        return apply_operator(np.broadcast_to(A0, (n, 2, 2)), np.broadcast_to(b0, (n, 2)),
                              np.full(n, c0), uu(p), grad(p), hess(p))

    lower = bool(np.any(b0 != 0) or c0 != 0)
    prob = HJBProblem(name, tuple(map(float, domain)), _const(A0, (2, 2)), _const(b0, (2,)),
                      _const(c0, ()), f, lam=float(lam), eps=float(eps), has_lower_order=lower,
                      u=uu, grad_u=grad, hess_u=hess)
    return prob, ControlSet((0,), {"kind": "singleton"})
