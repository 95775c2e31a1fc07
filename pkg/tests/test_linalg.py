from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daebasin.errors import DimensionError, DomainError, NumericError, SingularMatrixError
from daebasin.linalg import (LUSolver, eigenvalues, linear_solve, matrix_exponential,
                             operator_norm, polynomial_real_roots)
from daebasin.model import QuadratureScheme, discretize_integro


def test_eigenvalues_small_cases():
    assert eigenvalues([[-1.0]]).values.tolist() == [-1.0]
    spec = eigenvalues(np.eye(2))
    assert np.allclose(spec.values, [1.0, 1.0])
    assert all(spec.multiple)
    # lambda^2 + 3 lambda + 2 = (lambda + 1)(lambda + 2)
    spec = eigenvalues([[0.0, 1.0], [-2.0, -3.0]])
    assert np.allclose(np.sort(spec.values.real), [-2.0, -1.0], atol=1e-12)
    assert spec.abscissa == pytest.approx(-1.0)


def test_eigenvalues_rejects_non_square():
    with pytest.raises(DimensionError):
        eigenvalues(np.ones((2, 3)))


def test_eigenvalues_conjugate_pairs():
    spec = eigenvalues([[0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(np.sort(spec.values.imag), [-1.0, 1.0])
    assert np.allclose(spec.values.real, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_eigenvalues_transpose_invariant(n, seed):
    M = np.random.default_rng(seed).standard_normal((n, n))
    a = np.sort_complex(eigenvalues(M).values)
    b = np.sort_complex(eigenvalues(M.T).values)
    assert np.allclose(a, b, atol=1e-8)


def test_matrix_exponential_cases():
    assert np.array_equal(matrix_exponential(np.zeros((3, 3)), 7.0), np.eye(3))
    assert matrix_exponential([[-1.0]], 1.0)[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-14)
    t = 2.5
    E = matrix_exponential([[0.0, 1.0], [0.0, 0.0]], t)
    assert np.allclose(E, [[1.0, t], [0.0, 1.0]], atol=1e-14)


def test_matrix_exponential_overflow():
    with pytest.raises(NumericError):
        matrix_exponential([[1000.0]], 10.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000),
       st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_matrix_exponential_semigroup(n, seed, t, s):
    M = np.random.default_rng(seed).standard_normal((n, n))
    lhs = matrix_exponential(M, t + s)
    rhs = matrix_exponential(M, t) @ matrix_exponential(M, s)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_linear_solve_cases():
    B = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(linear_solve(np.eye(3), B), B)
    assert linear_solve([[2.0]], [4.0]).tolist() == [2.0]


def test_linear_solve_singular_reports_pivot():
    with pytest.raises(SingularMatrixError) as info:
        linear_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])
    assert info.value.pivot < 1e-12
    with pytest.raises(SingularMatrixError):
        LUSolver([[0.0]])


def test_linear_solve_integral_operator():
    K = discretize_integro("z*s", QuadratureScheme.gauss_legendre(64))
    A4 = np.eye(64) + K
    u = np.sin(np.linspace(0.0, 3.0, 64))
    assert np.max(np.abs(linear_solve(A4, A4 @ u) - u)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_linear_solve_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    B = rng.standard_normal((n, 2))
    X = linear_solve(A, B)
    assert np.linalg.norm(A @ X - B) <= 1e-10 * max(1.0, np.linalg.norm(B))


def test_operator_norm_cases():
    assert operator_norm(np.eye(4)) == pytest.approx(1.0)
    assert operator_norm(np.diag([3.0, -5.0])) == pytest.approx(5.0, rel=1e-12)
    assert operator_norm([[0.0, 2.0], [0.0, 0.0]]) == pytest.approx(2.0, rel=1e-12)


def test_operator_norm_rejects_non_finite():
    with pytest.raises(NumericError):
        operator_norm([[np.nan]])


def test_polynomial_roots_examples():
    roots = polynomial_real_roots([3.0, 4.0, 1.0])
    assert [r for r, _ in roots] == pytest.approx([-3.0, -1.0], abs=1e-12)
    assert all(simple for _, simple in roots)

    (r, simple), = polynomial_real_roots([0.0, 0.0, 1.0])
    assert r == pytest.approx(0.0, abs=1e-12) and not simple

    assert polynomial_real_roots([-0.5, 1.0]) == [(0.5, True)]


def test_polynomial_roots_edge_cases():
    assert polynomial_real_roots([1.0, 0.0, 1.0]) == []
    (r, simple), = polynomial_real_roots([4.0, 4.0, 1.0])
    assert r == pytest.approx(-2.0, abs=1e-7) and not simple
    with pytest.raises(DomainError):
        polynomial_real_roots([0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5.0, 5.0), min_size=1, max_size=5, unique=True))
def test_polynomial_roots_recover_factors(rs):
    rs = sorted(rs)
    if len(rs) > 1 and np.min(np.diff(rs)) < 0.05:
        return
    coeffs = np.polynomial.polynomial.polyfromroots(rs)
    found = polynomial_real_roots(coeffs)
    assert len(found) == len(rs)
    assert np.allclose([r for r, _ in found], rs, atol=1e-7)
    assert all(simple for _, simple in found)


def test_shared_solver_is_thread_safe():
    solver = LUSolver([[2.0, 1.0], [0.0, 4.0]])
    A = np.array([[2.0, 1.0], [0.0, 4.0]])

    def work(k):
        rng = np.random.default_rng(k)
        for _ in range(3000):
            b = rng.standard_normal(2)
            if not np.allclose(A @ solver.solve(b), b):
                return False
        return True

    with ThreadPoolExecutor(max_workers=4) as pool:
        assert all(pool.map(work, range(8)))
