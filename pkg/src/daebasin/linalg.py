"""Dense real linear algebra for small systems.

Thin, contract-checking wrappers around LAPACK (through numpy/scipy) plus a
real-root finder for the branch polynomials.
"""
import threading
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (ConvergenceError, DimensionError, DomainError,
                     NumericError, SingularMatrixError)

__all__ = [
    "Spectrum",
    "as_matrix",
    "eigenvalues",
    "matrix_exponential",
    "linear_solve",
    "LUSolver",
    "operator_norm",
    "polynomial_real_roots",
    "PIVOT_RTOL",
]

#: Relative pivot threshold below which a matrix is treated as singular.
PIVOT_RTOL = 1e-12


def as_matrix(M, name="matrix", square=False):
    A = np.atleast_2d(np.asarray(M, dtype=float))
    if A.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got ndim={A.ndim}")
    if square and A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{name} has non-finite entries")
    return A


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a real square matrix.

    ``multiple[i]`` is set when ``values[i]`` coincides (to tolerance) with
    another eigenvalue.
    """

    values: np.ndarray
    multiple: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def abscissa(self):
        """Largest real part, -inf for an empty spectrum."""
        if len(self.values) == 0:
            return -np.inf
        return float(np.max(self.values.real))


def eigenvalues(M, tol=1e-8):
    M = as_matrix(M, "M", square=True)
    n = M.shape[0]
    if n == 0:
        return Spectrum(np.zeros(0, complex), np.zeros(0, bool))
    try:
        vals = scipy.linalg.eigvals(M, check_finite=False)
    except np.linalg.LinAlgError as exc:
        # LAPACK reports the index of the eigenvalue that failed to converge
        raise ConvergenceError(f"QR iteration failed: {exc}") from exc
    vals = np.asarray(vals, dtype=complex)
    # restore exact conjugate symmetry and exact zeros in imaginary parts
    scale = max(1.0, float(np.max(np.abs(vals))))
    vals = np.where(np.abs(vals.imag) <= 1e-14 * scale, vals.real + 0j, vals)
    order = np.lexsort((vals.imag, vals.real))
    vals = vals[order]

    dist = np.abs(vals[:, None] - vals[None, :])
    np.fill_diagonal(dist, np.inf)
    multiple = np.min(dist, axis=1) <= tol * scale if n > 1 else np.zeros(1, bool)
    return Spectrum(vals, multiple)


def matrix_exponential(M, t=1.0):
    """``exp(M t)`` by scaling and squaring with a Pade approximant."""
    M = as_matrix(M, "M", square=True)
    if not np.isfinite(t):
        raise NumericError(f"time must be finite, got {t}")
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(M * float(t))
    if not np.all(np.isfinite(E)):
        raise NumericError(f"matrix exponential overflowed (||M t|| = {np.linalg.norm(M) * abs(t):.3e})")
    return E


class LUSolver:
    """Pivoted LU factorization with an explicit singularity test.

    The matrix is rejected when the smallest pivot falls below
    ``PIVOT_RTOL * ||A||_2``.
    """

    def __init__(self, A, rtol=PIVOT_RTOL):
        A = as_matrix(A, "A", square=True)
        self.n = A.shape[0]
        norm = operator_norm(A) if self.n else 0.0
        if self.n == 0:
            self.min_pivot = np.inf
            self._lu = None
            return
        with warnings.catch_warnings():
            # singularity is judged by the pivot test below
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
        self.min_pivot = float(np.min(np.abs(np.diag(lu))))
        if norm == 0.0 or self.min_pivot < rtol * norm:
            raise SingularMatrixError(self.min_pivot)
        self._lu = (lu, piv)
        # lu_solve on shared factors is not reentrant in every scipy build
        self._lock = threading.Lock()

    def solve(self, B):
        B = np.asarray(B, dtype=float)
        if self.n == 0:
            return B.copy()
        if B.shape[0] != self.n:
            raise DimensionError(f"right-hand side has {B.shape[0]} rows, expected {self.n}")
        with self._lock:
            return scipy.linalg.lu_solve(self._lu, B, check_finite=False)


def linear_solve(A, B):
    """Solve ``A X = B``; raises :class:`SingularMatrixError` for singular ``A``."""
    return LUSolver(A).solve(B)


def operator_norm(M):
    """Induced 2-norm (largest singular value)."""
    M = as_matrix(M, "M")
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def _polyval(coeffs, w):
    # coeffs ascending: sum coeffs[s] * w**s
    return np.polynomial.polynomial.polyval(w, coeffs)


def polynomial_real_roots(coeffs, imag_tol=1e-7, simple_tol=1e-8):
    """Real roots of ``sum(coeffs[s] * w**s)``, sorted ascending.

    Parameters
    ----------
    coeffs : sequence of float
        Coefficients in ascending powers of ``w``. Trailing (highest-order)
        zeros are dropped.

    Returns
    -------
    list of (float, bool)
        ``(root, simple)`` pairs. A root is simple when ``|p'(root)|``
        exceeds ``simple_tol`` times the coefficient scale. Repeated roots are
        reported once.
    """
    c = np.asarray(coeffs, dtype=float).ravel()
    if not np.all(np.isfinite(c)):
        raise DomainError("polynomial coefficients must be finite")
    nz = np.flatnonzero(c)
    if nz.size == 0:
        raise DomainError("zero polynomial has no isolated roots")
    c = c[: nz[-1] + 1]
    if c.size == 1:
        return []
    scale = float(np.max(np.abs(c)))
    c = c / scale
    dc = np.polynomial.polynomial.polyder(c)

    raw = np.roots(c[::-1])
    mag = max(1.0, float(np.max(np.abs(raw))))
    cand = np.sort(raw[np.abs(raw.imag) <= imag_tol * mag].real)

    # merge clusters that come from one multiple root
    clusters = []
    for r in cand:
        if clusters and abs(r - clusters[-1][-1]) <= 1e-6 * max(1.0, abs(r)):
            clusters[-1].append(r)
        else:
            clusters.append([r])

    out = []
    for cl in clusters:
        r = float(np.mean(cl))
        if len(cl) == 1:
            # Newton polish on a simple root
            for _ in range(3):
                d = _polyval(dc, r)
                if d == 0.0:
                    break
                step = _polyval(c, r) / d
                r -= step
                if abs(step) <= 1e-16 * max(1.0, abs(r)):
                    break
        simple = len(cl) == 1 and abs(_polyval(dc, r)) > simple_tol
        out.append((r, bool(simple)))
    return out
