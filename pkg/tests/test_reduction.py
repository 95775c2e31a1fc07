import numpy as np
import pytest

from daebasin.errors import ConvergenceError, DivergenceError, PreconditionError
from daebasin.model import builtin, problem_from_dict
from daebasin.reduction import (check_inverse, fd_jacobians, implicit_u, linearize,
                                nonlinear_remainder, recover_u_first_order, reduced_field)


@pytest.fixture(scope="module")
def ex2():
    return linearize(builtin("example2"))


@pytest.fixture(scope="module")
def ex1():
    return linearize(builtin("example1", {"N": 64}))


def test_linearize_example2(ex2):
    assert ex2.A1[0, 0] == pytest.approx(-0.5, abs=1e-8)
    assert ex2.A2[0, 0] == pytest.approx(-1.0, abs=1e-8)
    assert ex2.A3[0, 0] == pytest.approx(-1.0, abs=1e-8)
    assert ex2.A4[0, 0] == pytest.approx(2.0, abs=1e-8)
    assert ex2.a4_invertible
    assert ex2.M[0, 0] == pytest.approx(-1.0, abs=1e-8)
    assert check_inverse(ex2) <= 1e-12


def test_linearize_example1(ex1):
    assert np.max(np.abs(ex1.M + np.eye(64))) <= 1e-12
    assert not ex1.warnings


def test_linearize_example3_is_degenerate():
    lin = linearize(builtin("example3", {"alpha": -1, "beta": 1, "a": 3, "b": 2}))
    assert lin.A4[0, 0] == pytest.approx(0.0)
    assert not lin.a4_invertible
    assert lin.M is None
    with pytest.raises(PreconditionError):
        implicit_u(lin, [0.1])


def test_remainders_vanish_at_rest(ex2, ex1):
    for lin in (ex2, ex1):
        assert np.max(np.abs(lin.R(lin.x0, lin.u0))) == 0.0
        assert np.max(np.abs(lin.r(lin.x0, lin.u0))) == 0.0


def test_finite_difference_jacobians_match_analytic():
    p = builtin("example1", {"N": 16})
    fd = fd_jacobians(p)
    for key, given in p.jacobians.items():
        scale = max(1.0, np.max(np.abs(given)))
        assert np.max(np.abs(fd[key] - given)) <= 1e-5 * scale


def test_wrong_supplied_jacobian_is_flagged():
    doc = {
        "n": 1, "m": 1, "A": [1.0],
        "F": ["-x1/2 - u1 + x1^2"], "G": ["2*u1 - x1 + 2*u1*sin(u1) - x1*sin(u1)"],
        "rest_point": {"x0": [0.0], "u0": [0.0]},
        "jacobians": {"A1": [[-0.7]]},
    }
    lin = linearize(problem_from_dict(doc))
    assert lin.A1[0, 0] == pytest.approx(-0.7)
    assert any("A1" in w for w in lin.warnings)


def test_implicit_u_example2(ex2):
    u = implicit_u(ex2, [0.1])
    assert u[0] == pytest.approx(0.05, abs=1e-12)
    assert implicit_u(ex2, [0.0])[0] == 0.0


def test_implicit_u_example1_residual(ex1):
    x = np.full(64, 0.01)
    u = implicit_u(ex1, x)
    assert np.linalg.norm(ex1.problem.g(x, u)) <= 1e-12


def test_implicit_u_trust_radius(ex2):
    with pytest.raises(PreconditionError):
        implicit_u(ex2, [1.5])
    assert implicit_u(ex2, [1.5], trust_radius=None)[0] == pytest.approx(0.75, abs=1e-12)


def test_implicit_u_iteration_limits():
    # A4 = 1; the cubic term defeats the chord map far from the rest point
    doc = {
        "n": 1, "m": 1, "A": [1.0], "F": ["-x1 + u1"], "G": ["u1 - x1 + 0.9*u1^3"],
        "rest_point": {"x0": [0.0], "u0": [0.0]},
    }
    lin = linearize(problem_from_dict(doc), trust_radius=None)
    with pytest.raises(ConvergenceError):
        implicit_u(lin, [0.5], max_iter=2)
    with pytest.raises(DivergenceError):
        implicit_u(lin, [50.0])


def test_first_order_recovery(ex2, ex1):
    assert recover_u_first_order(ex2, [0.1])[0] == pytest.approx(0.05)
    assert recover_u_first_order(ex2, [0.0])[0] == 0.0
    x = np.random.default_rng(0).uniform(-0.3, 0.3, 64)
    assert not recover_u_first_order(ex1, x).any()


def test_first_order_error_is_superlinear(ex1):
    d = np.random.default_rng(1).standard_normal(64)
    d /= np.linalg.norm(d)
    ratios = []
    for r in (1e-1, 1e-2, 1e-3):
        x = r * d
        ratios.append(np.linalg.norm(implicit_u(ex1, x) - recover_u_first_order(ex1, x)) / r)
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 1e-2


def test_reduced_field_example2(ex2):
    assert reduced_field(ex2, [0.1])[0] == pytest.approx(-0.09, abs=1e-12)
    assert reduced_field(ex2, [0.0])[0] == 0.0
    for x in np.linspace(-0.9, 0.9, 7):
        assert reduced_field(ex2, [x])[0] == pytest.approx(-x + x * x, abs=1e-12)


def test_reduced_field_decomposition(ex1):
    x = np.random.default_rng(2).uniform(-0.1, 0.1, 64)
    lhs = reduced_field(ex1, x)
    rhs = ex1.M @ x + ex1.A_solver.solve(nonlinear_remainder(ex1, x))
    assert np.allclose(lhs, rhs, atol=1e-14)


def test_remainder_is_little_o(ex1):
    d = np.random.default_rng(4).standard_normal(64)
    d /= np.linalg.norm(d)
    ratios = [np.linalg.norm(nonlinear_remainder(ex1, r * d)) / r for r in (1e-1, 1e-2, 1e-3)]
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 1e-2
