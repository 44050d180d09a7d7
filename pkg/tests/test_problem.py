import numpy as np
import pytest
import sympy as sym

from hjbvem.problem import (BUILTIN, ControlSet, cordes_check, cordes_ratio_from, example2_diffusion,
                            gamma, gamma_from, make_builtin, make_linear, sample_control_set)


def random_points(problem, n, rng):
    x0, x1, y0, y1 = problem.domain
    return np.stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)], 1)


def test_gamma_identity_branch2():
    prob, _ = make_linear(np.eye(2), [0, 0], 0, "x*(1-x)*y*(1-y)", lam=0, eps=1.0)
    assert not prob.has_lower_order
    assert gamma(prob, [[0.3, 0.4]], 0)[0] == pytest.approx(1.0)


def test_gamma_example1():
    prob, ctrl = make_builtin("example1")
    assert len(ctrl) == 1
    assert gamma(prob, [[0.0, 0.0]], ctrl[0])[0] == pytest.approx(7 / 19)
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (20, 2))
    expected = (4 + 3) / (10 + (x**2).sum(1) / 2 + 9)
    assert np.allclose(gamma(prob, x, ctrl[0]), expected)


def test_gamma_example2_theta_zero():
    prob, ctrl = make_builtin("example2")
    A = example2_diffusion(0.0, 0.7)
    assert np.trace(A) == pytest.approx(1.0)
    assert (A**2).sum() == pytest.approx(0.5)
    assert gamma(prob, [[0.2, 0.9]], ctrl[0])[0] == pytest.approx(120 / 81)
    for t in np.linspace(0, np.pi / 3, 5):
        A = example2_diffusion(t, 1.3)
        assert np.trace(A) == pytest.approx(1.0)
        assert (A**2).sum() == pytest.approx((1 + np.sin(t) ** 2) / 2)


def test_branch2_gamma_times_norm_is_trace():
    rng = np.random.default_rng(5)
    M = rng.standard_normal((50, 2, 2))
    A = M @ M.transpose(0, 2, 1) + 0.1 * np.eye(2)
    g = gamma_from(A, np.zeros((50, 2)), np.zeros(50), 0.0, False)
    assert np.allclose(g * (A**2).sum((1, 2)), np.trace(A, axis1=1, axis2=2))


def test_cordes_example2_implied_eps():
    r = cordes_check(*make_builtin("example2"))
    assert r.passed
    assert abs(r.implied_eps - 1 / 7) < 1e-10
    assert r.worst_control[0] == pytest.approx(np.pi / 3)


def test_cordes_example3_passes_declared():
    prob, ctrl = make_builtin("example3")
    assert prob.eps == pytest.approx(1 / 6)
    r = cordes_check(prob, ctrl)
    assert r.passed and r.implied_eps >= 1 / 6


def test_cordes_example1_ratio_against_symbolic():
    # independent symbolic evaluation of the ratio with lambda = 1
    x1, x2 = sym.symbols("x1 x2", real=True)
    A = sym.Matrix([[2, 1], [1, 2]])
    ratio = (sum(a**2 for a in A) + (x1**2 + x2**2) / 2 + 9) / (A.trace() + 3) ** 2
    assert sym.simplify(ratio - (38 + x1**2 + x2**2) / 98) == 0
    sup = ratio.subs({x1: 1, x2: 1})
    assert sup == sym.Rational(20, 49)
    eps = 1 / sup - 2
    assert eps == sym.Rational(9, 20)
    r = cordes_check(*make_builtin("example1"))
    assert r.sup_ratio == pytest.approx(float(sup), abs=1e-14)
    assert r.implied_eps == pytest.approx(0.45, abs=1e-10)
    assert r.passed


def test_cordes_failure_detected():
    prob, ctrl = make_linear([[10.0, 0.0], [0.0, 0.1]], [0, 0], 0, "x*(1-x)*y*(1-y)",
                             lam=0, eps=0.5)
    r = cordes_check(prob, ctrl)
    assert not r.passed
    assert "FAIL" in r.summary()


def test_control_set_sampling():
    assert sample_control_set({"theta": 2}).controls == (0.0, pytest.approx(np.pi / 3))
    assert len(sample_control_set({"theta": 4, "phi": 8})) == 32
    s = sample_control_set({"list": [1, 2]})
    assert s.controls == (1, 2)
    with pytest.raises(ValueError):
        sample_control_set({})
    with pytest.raises(ValueError):
        ControlSet(())
    with pytest.raises(ValueError):
        make_builtin("example9")


@pytest.mark.parametrize("name", BUILTIN)
def test_sup_residual_of_exact_solution_vanishes(name):
    prob, ctrl = make_builtin(name)
    rng = np.random.default_rng(3)
    x = random_points(prob, 200, rng)
    res = np.full(len(x), -np.inf)
    for a in ctrl:
        A, b, c, f = prob.coefficients(x, a)
        Lu = (np.einsum("pij,pij->p", A, prob.hess_u(x)) + np.einsum("pi,pi->p", b, prob.grad_u(x))
              - c * prob.u(x))
        res = np.maximum(res, Lu - f)
    assert np.abs(res).max() < 1e-10


@pytest.mark.parametrize("name", BUILTIN)
def test_exact_derivatives_against_symbolic(name):
    x, y = sym.symbols("x y")
    expr = {"example1": sym.sin(sym.pi * x) * sym.sin(sym.pi * y),
            "example2": sym.exp(x * y) * sym.sin(sym.pi * x) * sym.sin(sym.pi * y),
            "example3": sym.sin(x) * sym.sin(y)}[name]
    prob, _ = make_builtin(name)
    pts = random_points(prob, 5, np.random.default_rng(9))
    fns = [sym.lambdify((x, y), e) for e in
           (expr, sym.diff(expr, x), sym.diff(expr, y), sym.diff(expr, x, 2), sym.diff(expr, x, y),
            sym.diff(expr, y, 2))]
    v = np.array([[float(f(*p)) for f in fns] for p in pts])
    assert np.allclose(prob.u(pts), v[:, 0])
    assert np.allclose(prob.grad_u(pts), v[:, 1:3])
    H = prob.hess_u(pts)
    assert np.allclose(H[:, 0, 0], v[:, 3]) and np.allclose(H[:, 0, 1], v[:, 4])
    assert np.allclose(H[:, 1, 0], v[:, 4]) and np.allclose(H[:, 1, 1], v[:, 5])


def test_example3_sign_convention():
    prob, _ = make_builtin("example3")
    x = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 1.0]])
    A = prob.coefficients(x, 1)[0]
    assert np.allclose(A[0], [[3, 1], [1, 2]])   # sign(0) = +1
    assert np.allclose(A[1], [[3, 1], [1, 2]])
    assert np.allclose(A[2], np.eye(2))           # sign(-1) sign(0) = -1
    assert np.allclose(A[3], np.eye(2))


@pytest.mark.parametrize("name", BUILTIN)
def test_pointwise_cordes_bound(name):
    """|F[w] - F[v] - L_lam(w - v)| <= sqrt(1 - eps) |(dH, dg, ds)|_lam for 10^3 random pairs."""
    prob, ctrl = make_builtin(name)
    eps = cordes_check(prob, ctrl).implied_eps
    lam = prob.lam
    rng = np.random.default_rng(17)
    n = 1000
    x = random_points(prob, n, rng)

    def state():
        H = rng.standard_normal((n, 2, 2)) * rng.uniform(0.1, 10, (n, 1, 1))
        return 0.5 * (H + H.transpose(0, 2, 1)), rng.standard_normal((n, 2)), rng.standard_normal(n)

    def F(H, g, s):
        best = np.full(n, -np.inf)
        for a in ctrl:
            A, b, c, f = prob.coefficients(x, a)
            gam = gamma_from(A, b, c, lam, prob.has_lower_order)
            val = gam * (np.einsum("pij,pij->p", A, H) + np.einsum("pi,pi->p", b, g) - c * s - f)
            best = np.maximum(best, val)
        return best

    w, v = state(), state()
    dH, dg, ds = (a - b for a, b in zip(w, v))
    lhs = np.abs(F(*w) - F(*v) - (np.trace(dH, axis1=1, axis2=2) - lam * ds))
    rhs = np.sqrt(1 - eps) * np.sqrt((dH**2).sum((1, 2)) + 2 * lam * (dg**2).sum(1) + lam**2 * ds**2)
    assert (lhs <= rhs * (1 + 1e-12) + 1e-12).all()


def test_cordes_ratio_consistency():
    rng = np.random.default_rng(2)
    A = np.broadcast_to(np.eye(2), (10, 2, 2))
    b = rng.standard_normal((10, 2))
    c = rng.uniform(0, 2, 10)
    r = cordes_ratio_from(A, b, c, 2.0, True)
    g = gamma_from(A, b, c, 2.0, True)
    assert np.allclose(r, 1 / (g * (2 + c / 2.0)))
