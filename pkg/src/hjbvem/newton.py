"""Semismooth Newton (policy iteration) for the discrete HJB problem."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import DEFAULT_THETA, Discretization, assemble_linearized, select_argmax_controls
from .mesh import PolygonalMesh
from .problem import ControlSet, HJBProblem, cordes_check

log = logging.getLogger(__name__)

METRICS = ("hessian", "energy")


class NewtonConfigError(ValueError):
    pass


class CordesViolation(RuntimeError):
    pass


@dataclass
class NewtonConfig:
    tol: float = 1e-8
    itermax: int = 30
    initial_guess: str = "zero"        # or "interpolant"
    guess_function: tuple | None = None  # (u, grad u) for the interpolant policy
    metric: str = "hessian"            # stopping quantity, "energy" uses the B-norm
    theta: float = DEFAULT_THETA
    weighted_selection: bool = True
    check_cordes: bool = True
    allow_cordes_violation: bool = False

    def validate(self):
        if not (0 < self.tol < 1):
            raise NewtonConfigError(f"tol must lie in (0, 1), got {self.tol}")
        if self.itermax < 1:
            raise NewtonConfigError(f"itermax must be >= 1, got {self.itermax}")
        if self.initial_guess not in ("zero", "interpolant"):
            raise NewtonConfigError(f"unknown initial guess policy {self.initial_guess!r}")
        if self.initial_guess == "interpolant" and self.guess_function is None:
            raise NewtonConfigError("interpolant initial guess needs guess_function=(u, grad_u)")
        if self.metric not in METRICS:
            raise NewtonConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")


@dataclass
class NewtonTrace:
    errors: list[float] = field(default_factory=list)         # stopping metric per iteration
    hessian_errors: list[float] = field(default_factory=list)
    energy_errors: list[float] = field(default_factory=list)
    changed: list[int] = field(default_factory=list)          # quadrature points with a new control
    residuals: list[float] = field(default_factory=list)      # relative linear-solve residual
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.errors)


def solve_hjb(mesh: PolygonalMesh, family: str, problem: HJBProblem, controls: ControlSet,
              config: NewtonConfig | None = None,
              disc: Discretization | None = None) -> tuple[np.ndarray, NewtonTrace]:
    """Policy iteration: freeze the maximising controls, solve the linear scheme, repeat.

    Returns the last iterate and the trace; ``trace.converged`` is False if the
    stopping quantity did not reach ``tol`` within ``itermax`` solves.
    """
    config = config or NewtonConfig()
    config.validate()
    if config.check_cordes:
        report = cordes_check(problem, controls)
        if not report.passed:
            if not config.allow_cordes_violation:
                raise CordesViolation(report.summary())
            warnings.warn(f"proceeding despite failed Cordes check: {report.summary()}")
    if disc is None:
        disc = Discretization(mesh, family, problem.lam)
    elif disc.family != family or disc.mesh is not mesh:
        raise ValueError("discretisation does not match the given mesh and family")

    if config.initial_guess == "zero":
        u = np.zeros(disc.n_free)
    else:
        u = disc.interpolate(*config.guess_function)

    trace = NewtonTrace()
    prev = None
    for j in range(config.itermax):
        fld = select_argmax_controls(disc, problem, controls, u, weighted=config.weighted_selection)
        trace.changed.append(fld.changed(prev))
        prev = fld
        system = assemble_linearized(disc, problem, fld, config.theta)
        u_new = system.solve()
        rnorm = np.linalg.norm(system.rhs)
        res = np.linalg.norm(system.matrix @ u_new - system.rhs)
        trace.residuals.append(float(res / rnorm) if rnorm > 0 else float(res))
        du = u_new - u
        trace.hessian_errors.append(disc.hessian_norm(du))
        trace.energy_errors.append(disc.energy_norm(du))
        err = trace.hessian_errors[-1] if config.metric == "hessian" else trace.energy_errors[-1]
        trace.errors.append(err)
        u = u_new
        log.debug("newton it %d: err %.3e, changed %d", j + 1, err, trace.changed[-1])
        if err <= config.tol:
            trace.converged = True
            break
    if not trace.converged:
        log.warning("Newton did not converge in %d iterations (err %.3e)",
                    config.itermax, trace.errors[-1])
    return u, trace
