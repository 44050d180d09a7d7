"""Command line front end: ``hjbvem {run,convergence,check-cordes,make-mesh}``.

Settings come from an optional INI file (``--config``) and are overridden by flags.
"""

from __future__ import annotations

import os

# must happen before numpy loads its BLAS
_threads = os.environ.get("VEMHJB_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import configparser  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402

import numpy as np  # noqa: E402

from . import analysis, mesh as meshmod, newton, problem as probmod  # noqa: E402
from .assembly import Discretization  # noqa: E402
from .element import FAMILIES  # noqa: E402

log = logging.getLogger("hjbvem")


class ConfigError(ValueError):
    pass


# section -> key -> converter
def _floats(s):
    return [float(v) for v in str(s).replace(",", " ").split()]


def _ints(s):
    return [int(v) for v in str(s).replace(",", " ").split()]


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


SCHEMA = {
    "problem": {
        "name": str, "n_theta": int, "n_phi": int, "lam": float, "eps": float,
        "A": _floats, "b": _floats, "c": float, "solution": str, "domain": _floats,
    },
    "discretization": {
        "family": str, "mesh": str, "mesh_file": str, "levels": _ints, "n": int,
        "quad_order": int, "seed": int, "diagonal": str,
    },
    "newton": {
        "tol": float, "itermax": int, "initial_guess": str, "metric": str,
        "weighted_selection": _bool, "skip_cordes": _bool,
    },
    "output": {"path": str, "timing": _bool},
}

DEFAULTS = {
    "problem": {"name": "example1", "n_theta": 16, "n_phi": 16},
    "discretization": {"family": "conforming", "mesh": "triangle", "levels": [8, 16, 32],
                       "n": 8, "quad_order": 8, "seed": 0, "diagonal": "anti"},
    "newton": {"tol": 1e-8, "itermax": 30, "initial_guess": "zero", "metric": "hessian",
               "weighted_selection": True, "skip_cordes": False},
    "output": {"timing": False},
}

# flag dest -> (section, key)
FLAG_KEYS = {
    "problem": ("problem", "name"), "n_theta": ("problem", "n_theta"), "n_phi": ("problem", "n_phi"),
    "lam": ("problem", "lam"), "eps": ("problem", "eps"),
    "family": ("discretization", "family"), "mesh": ("discretization", "mesh"),
    "mesh_file": ("discretization", "mesh_file"), "levels": ("discretization", "levels"),
    "n": ("discretization", "n"), "quad_order": ("discretization", "quad_order"),
    "seed": ("discretization", "seed"), "diagonal": ("discretization", "diagonal"),
    "tol": ("newton", "tol"), "itermax": ("newton", "itermax"),
    "initial_guess": ("newton", "initial_guess"), "metric": ("newton", "metric"),
    "skip_cordes": ("newton", "skip_cordes"),
    "output": ("output", "path"), "timing": ("output", "timing"),
}


def load_config(path: str | None) -> dict:
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    for sec in SCHEMA:
        cfg.setdefault(sec, {})
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep "A" upper case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            try:
                cfg[sec][key] = SCHEMA[sec][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {exc}") from exc
    return cfg


def apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    for dest, (sec, key) in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is None or (val is False and dest in ("timing", "skip_cordes")):
            continue
        if dest == "levels":
            val = _ints(val)
        cfg[sec][key] = val
    return cfg


def validate(cfg: dict):
    d, p, nw = cfg["discretization"], cfg["problem"], cfg["newton"]
    if d["family"] not in FAMILIES:
        raise ConfigError(f"discretization.family must be one of {FAMILIES}, got {d['family']!r}")
    if d["mesh"] not in meshmod.MESH_KINDS:
        raise ConfigError(f"discretization.mesh must be one of {meshmod.MESH_KINDS}")
    if not d["levels"] or any(n < 1 for n in d["levels"]):
        raise ConfigError("discretization.levels must be positive integers")
    if list(d["levels"]) != sorted(set(d["levels"])):
        raise ConfigError("discretization.levels must be strictly increasing")
    if p["name"] not in probmod.BUILTIN + ("inline",):
        raise ConfigError(f"problem.name must be one of {probmod.BUILTIN + ('inline',)}")
    if p["name"] == "inline":
        missing = [k for k in ("A", "b", "c", "solution", "lam", "eps") if k not in p]
        if missing:
            raise ConfigError("inline problem needs problem." + ", problem.".join(missing))
    if not (0 < nw["tol"] < 1):
        raise ConfigError("newton.tol must lie in (0, 1)")
    if nw["itermax"] < 1:
        raise ConfigError("newton.itermax must be >= 1")


def build_problem(cfg: dict):
    p = cfg["problem"]
    if p["name"] == "inline":
        domain = p.get("domain", [0.0, 1.0, 0.0, 1.0])
        prob, ctrl = probmod.make_linear(p["A"], p["b"], p["c"], p["solution"], p["lam"], p["eps"],
                                         domain=tuple(domain))
    else:
        prob, ctrl = probmod.make_builtin(p["name"], p["n_theta"], p["n_phi"], p.get("lam"))
    if "eps" in p and p["name"] != "inline":
        prob.eps = float(p["eps"])
    return prob, ctrl


def newton_config(cfg: dict, prob) -> newton.NewtonConfig:
    nw = cfg["newton"]
    ncfg = newton.NewtonConfig(tol=nw["tol"], itermax=nw["itermax"],
                               initial_guess=nw["initial_guess"], metric=nw["metric"],
                               weighted_selection=nw["weighted_selection"],
                               check_cordes=not nw["skip_cordes"],
                               allow_cordes_violation=nw["skip_cordes"])
    if ncfg.initial_guess == "interpolant":
        if prob.u is None:
            raise ConfigError("interpolant initial guess needs a problem with an exact solution")
        ncfg.guess_function = (prob.u, prob.grad_u)
    return ncfg


def _write(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_run(cfg, args) -> int:
    prob, ctrl = build_problem(cfg)
    d = cfg["discretization"]
    if d.get("mesh_file"):
        with open(d["mesh_file"]) as fh:
            mesh = meshmod.import_mesh(fh)
        label = d["mesh_file"]
    else:
        mesh = meshmod.generate_structured(d["mesh"], d["n"], prob.domain, seed=d["seed"],
                                           diagonal=d["diagonal"])
        label = f"{d['mesh']} n={d['n']}"
    ncfg = newton_config(cfg, prob)
    disc = Discretization(mesh, d["family"], prob.lam, d["quad_order"])
    t0 = time.perf_counter()
    u, trace = newton.solve_hjb(mesh, d["family"], prob, ctrl, ncfg, disc=disc)
    seconds = time.perf_counter() - t0
    lines = [f"problem   : {prob.name}", f"family    : {d['family']}", f"mesh      : {label}",
             f"free dofs : {disc.n_free}",
             f"newton    : {'converged' if trace.converged else 'NOT converged'} after "
             f"{trace.iterations} iterations, err {trace.errors[-1]:.3e}"]
    if prob.u is not None:
        E0, E1, E2 = analysis.error_norms(disc, u, prob)
        lines.append(f"errors    : E2 {E2:.6e}  E1 {E1:.6e}  E0 {E0:.6e}")
    if cfg["output"].get("timing"):
        lines.append(f"seconds   : {seconds:.3f}")
    print("\n".join(lines))
    out = cfg["output"].get("path")
    if out:
        body = "".join(f"{v!r}\n" for v in u.tolist())
        _write(f"# {prob.name} {d['family']} {label} ndof={disc.n_free}\n" + body, out)
    return 0 if trace.converged else 1


def cmd_convergence(cfg, args) -> int:
    prob, ctrl = build_problem(cfg)
    d = cfg["discretization"]
    study = analysis.StudyConfig(newton=newton_config(cfg, prob), seed=d["seed"],
                                 diagonal=d["diagonal"], quad_order=d["quad_order"])
    report = analysis.convergence_study(prob, ctrl, d["family"], d["mesh"], d["levels"], study)
    text = report.to_csv(timing=cfg["output"].get("timing", False))
    out = cfg["output"].get("path")
    _write(text, out)
    if out not in (None, "-"):
        print(report.table())
    return 0


def cmd_check_cordes(cfg, args) -> int:
    prob, ctrl = build_problem(cfg)
    report = probmod.cordes_check(prob, ctrl)
    print(f"problem           : {prob.name}")
    print(report.summary())
    return 0 if report.passed else 1


def cmd_make_mesh(cfg, args) -> int:
    domain = tuple(_floats(args.domain)) if args.domain else (0.0, 1.0, 0.0, 1.0)
    if len(domain) != 4:
        raise ConfigError("--domain takes four numbers x0,x1,y0,y1")
    m = meshmod.generate_structured(args.kind, args.n, domain, seed=args.seed, diagonal=args.diagonal)
    _write(meshmod.export_mesh(m), args.output)
    if args.output not in (None, "-"):
        print(f"wrote {m.n_cells} cells, {m.n_vertices} vertices to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjbvem", description="Virtual element solver for HJB "
                                 "equations in nondivergence form under the Cordes condition.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, solve=True):
        p.add_argument("--config", help="INI file with [problem], [discretization], [newton], [output]")
        p.add_argument("--problem", help="example1, example2, example3 or inline (config only)")
        p.add_argument("--n-theta", dest="n_theta", type=int)
        p.add_argument("--n-phi", dest="n_phi", type=int)
        p.add_argument("--lam", type=float, help="override lambda")
        p.add_argument("--eps", type=float, help="override the declared Cordes epsilon")
        if not solve:
            return
        p.add_argument("--family", choices=FAMILIES)
        p.add_argument("--mesh", choices=meshmod.MESH_KINDS)
        p.add_argument("--seed", type=int)
        p.add_argument("--diagonal", choices=("anti", "main"))
        p.add_argument("--quad-order", dest="quad_order", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--itermax", type=int)
        p.add_argument("--initial-guess", dest="initial_guess", choices=("zero", "interpolant"))
        p.add_argument("--metric", choices=newton.METRICS)
        p.add_argument("--skip-cordes", dest="skip_cordes", action="store_true",
                       help="solve even if the Cordes check fails (warns)")
        p.add_argument("-o", "--output")
        p.add_argument("--timing", action="store_true", help="fill in wall-clock seconds")

    p = sub.add_parser("run", help="solve once and write the free DOF vector")
    common(p)
    p.add_argument("--n", type=int, help="cells per side")
    p.add_argument("--mesh-file", dest="mesh_file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("convergence", help="refinement study, CSV output")
    common(p)
    p.add_argument("--levels", help="comma separated cells per side, e.g. 8,16,32")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("check-cordes", help="sample the Cordes condition")
    common(p, solve=False)
    p.set_defaults(func=cmd_check_cordes)

    p = sub.add_parser("make-mesh", help="write a structured mesh file")
    p.add_argument("--kind", choices=meshmod.MESH_KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--diagonal", choices=("anti", "main"), default="anti")
    p.add_argument("--domain", help="x0,x1,y0,y1")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_make_mesh)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-mesh":
            return args.func(None, args)
        cfg = apply_flags(load_config(args.config), args)
        validate(cfg)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"hjbvem: config error: {exc}", file=sys.stderr)
        return 2
    except (meshmod.MeshError, newton.CordesViolation, analysis.StudyError, OSError, ValueError,
            np.linalg.LinAlgError) as exc:
        print(f"hjbvem: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
