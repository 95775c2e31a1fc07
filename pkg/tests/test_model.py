import json

import numpy as np
import pytest

from daebasin.errors import ProblemError, RestPointError, UsageError
from daebasin.linalg import linear_solve
from daebasin.model import (QuadratureScheme, builtin, discretize_integro,
                            inverse_rank_one_coefficient, load_problem,
                            problem_from_dict, problem_to_dict)

EX2_DOC = {
    "name": "example2",
    "n": 1,
    "m": 1,
    "A": [1.0],
    "F": ["-x1/2 - u1 + x1^2"],
    "G": ["2*u1 - x1 + 2*u1*sin(u1) - x1*sin(u1)"],
    "rest_point": {"x0": [0.0], "u0": [0.0]},
}


def write(tmp_path, doc, name="p.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_load_example2_file(tmp_path):
    p = load_problem(write(tmp_path, EX2_DOC))
    assert (p.n, p.m) == (1, 1)
    assert np.array_equal(p.A, [[1.0]])
    x, u = np.array([0.3]), np.array([0.2])
    assert p.f(x, u)[0] == pytest.approx(-0.15 - 0.2 + 0.09)


def test_load_rejects_rest_point_residual(tmp_path):
    doc = dict(EX2_DOC, G=["u1 + 0.5"])
    with pytest.raises(RestPointError) as info:
        load_problem(write(tmp_path, doc))
    assert info.value.residual == pytest.approx(0.5)


def test_load_rejects_singular_A(tmp_path):
    with pytest.raises(ProblemError) as info:
        load_problem(write(tmp_path, dict(EX2_DOC, A=[[0.0]])))
    assert info.value.field == "A"


@pytest.mark.parametrize("patch,field", [
    ({"n": 0}, "n"),
    ({"F": ["x1", "x1"]}, "F"),
    ({"A": [1.0, 2.0]}, "A"),
    ({"F": ["x1 +"]}, "F[0]"),
    ({"G": ["u2"]}, "G[0]"),
    ({"rest_point": {"x0": [0.0]}}, "rest_point"),
    ({"jacobians": {"A5": [1.0]}}, "jacobians"),
])
def test_schema_violations_name_the_field(patch, field):
    with pytest.raises(ProblemError) as info:
        problem_from_dict(dict(EX2_DOC, **patch))
    assert info.value.field.startswith(field)


def test_missing_file_and_bad_json(tmp_path):
    with pytest.raises(ProblemError):
        load_problem(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ProblemError):
        load_problem(bad)


def test_dict_round_trip():
    p = builtin("example3", {"alpha": -1, "beta": 1, "a": 3, "b": 2})
    q = problem_from_dict(json.loads(json.dumps(problem_to_dict(p))))
    x, u = np.array([0.2]), np.array([-0.1])
    assert q.f(x, u) == pytest.approx(p.f(x, u), rel=1e-15)
    assert q.g(x, u) == pytest.approx(p.g(x, u), rel=1e-15)
    assert q.branching.coefficients == p.branching.coefficients


def test_perturbations_require_decay_assertion():
    doc = dict(EX2_DOC, perturbations={"A1_tilde": ["0.1*exp(-t)"], "decay_asserted": False})
    with pytest.raises(ProblemError):
        problem_from_dict(doc)
    doc["perturbations"]["decay_asserted"] = True
    p = problem_from_dict(doc)
    x = np.array([0.3])
    u = np.array([0.15])
    assert p.f(x, u, 1.0) - p.F(x, u, 1.0) == pytest.approx(0.1 * np.exp(-1.0) * 0.3)


def test_builtin_example2():
    p = builtin("example2")
    assert (p.n, p.m) == (1, 1)
    x, u = np.array([0.4]), np.array([0.3])
    assert p.F(x, u)[0] == pytest.approx(-0.2 - 0.3 + 0.16)
    assert p.G(x, u)[0] == pytest.approx(0.6 - 0.4 + 0.6 * np.sin(0.3) - 0.4 * np.sin(0.3))


def test_builtin_example3_constraint():
    p = builtin("example3", {"alpha": -1, "beta": 1, "a": 3, "b": 2})
    x, u = np.array([0.5]), np.array([0.25])
    assert p.G(x, u)[0] == pytest.approx(3 * 0.25 + 4 * 0.125 + 0.0625)
    assert p.branching.coefficients == ((3.0, 4.0, 1.0),)


def test_builtin_errors():
    with pytest.raises(UsageError):
        builtin("example4")
    with pytest.raises(UsageError):
        builtin("example3", {"alpha": 1.0})


def test_builtin_rest_residuals():
    for p in (builtin("example1", {"N": 16}), builtin("example2"),
              builtin("example3", {"alpha": 2, "beta": 1, "a": 3, "b": 2})):
        assert p.rest_residual() <= 1e-12


def test_example1_fast_path_matches_expressions():
    p = builtin("example1", {"N": 12})
    rng = np.random.default_rng(3)
    x, u = rng.uniform(-0.5, 0.5, (2, 12))
    assert np.allclose(p.F(x, u), p.F.reference(x, u), rtol=1e-13, atol=1e-15)
    assert np.allclose(p.G(x, u), p.G.reference(x, u), rtol=1e-13, atol=1e-15)


def test_quadrature_validation():
    with pytest.raises(ProblemError):
        QuadratureScheme(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(ProblemError):
        QuadratureScheme(np.array([0.0, 1.0]), np.array([1.5, -0.5]))
    assert QuadratureScheme.gauss_legendre(64).weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_discretize_trapezoid_two_nodes():
    K = discretize_integro("z*s", QuadratureScheme.trapezoid(2))
    assert np.array_equal(K, [[0.0, 0.0], [0.0, 0.5]])


def test_discretize_zero_kernel():
    K = discretize_integro(lambda z, s: 0.0, QuadratureScheme.gauss_legendre(5))
    assert not K.any()


def test_discretize_rank_one_spectrum():
    K = discretize_integro("z*s", QuadratureScheme.gauss_legendre(64))
    eig = np.sort(np.linalg.eigvals(K).real)
    assert eig[-1] == pytest.approx(1 / 3, abs=1e-10)
    assert np.max(np.abs(eig[:-1])) <= 1e-10
    assert np.allclose(K @ K, K / 3, atol=1e-12)


def test_example1_integral_operator_inverse():
    p = builtin("example1", {"N": 64})
    K = p.meta["kernel_matrix"]
    A4 = np.eye(64) + K
    v = np.random.default_rng(7).standard_normal(64)
    assert np.max(np.abs(linear_solve(A4, A4 @ v) - v)) <= 1e-8

    c, resid = inverse_rank_one_coefficient(K)
    assert c == pytest.approx(0.75, abs=1e-10)
    assert resid <= 1e-10
    # the coefficient 2/3 does not invert I + K
    wrong = (np.eye(64) + K) @ (np.eye(64) - 2 / 3 * K) - np.eye(64)
    assert np.max(np.abs(wrong)) > 1e-3


def test_branching_block_cross_check():
    doc = {
        "n": 1, "m": 1, "A": [1.0],
        "F": ["-x1 + u1"], "G": ["3*x1^2 + 4*x1*u1 + u1^2"],
        "rest_point": {"x0": [0.0], "u0": [0.0]},
        "branching": {"coefficients": [[3.0, 4.0, 1.0]]},
    }
    assert problem_from_dict(doc).branching.coefficients == ((3.0, 4.0, 1.0),)
    doc["branching"]["coefficients"] = [[3.0, 5.0, 1.0]]
    with pytest.raises(ProblemError):
        problem_from_dict(doc)
