"""Finite-dimensional delayed system on the unstable modes and its Kalman test."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .errors import SpectralWarning
from .expm import matrix_exponential


@dataclass(frozen=True)
class ReducedSystem:
    """``X1' = A1 X1 + B1 alpha(t - D)`` with ``X1 = (u_D, w_1, ..., w_n)``."""

    A1: np.ndarray
    B1: np.ndarray
    lambda_unstable: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def n(self):
        return self.lambda_unstable.size

    @property
    def dim(self):
        return self.n + 1

    @classmethod
    def from_coefficients(cls, lambdas, a, b):
        lambdas = np.asarray(lambdas, dtype=float).ravel()
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        n = lambdas.size
        if a.size != n or b.size != n:
            raise ValueError("lambdas, a and b must have the same length")
        A1 = np.zeros((n + 1, n + 1))
        A1[1:, 0] = a
        A1[np.arange(1, n + 1), np.arange(1, n + 1)] = lambdas
        B1 = np.concatenate(([1.0], b))
        return cls(A1, B1, lambdas, a, b)


def build_reduced_system(dec, coeffs):
    n = dec.n
    return ReducedSystem.from_coefficients(
        dec.eigenvalues[:n], coeffs.a[:n], coeffs.b[:n])


def controllability_matrix(A, B):
    cols = [np.asarray(B, dtype=float)]
    for _ in range(A.shape[0] - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def numerical_rank(C):
    """Rank from a column-pivoted QR.

    Diagonal entries of R below ``dim * eps * |R_00|`` count as zero;
    ``|R_00|`` approximates the largest singular value.
    """
    _, R, _ = qr(C, pivoting=True, mode="economic")
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return 0
    tol = C.shape[0] * np.finfo(float).eps * d[0]
    return int(np.count_nonzero(d > tol))


def kalman_rank(sys, D):
    """Rank of the controllability matrix of ``(A1, exp(-D A1) B1)``.

    The rank of the undelayed pair ``(A1, B1)`` is computed as well; the two
    agree in exact arithmetic since ``exp(-D A1)`` is invertible and commutes
    with ``A1``.
    """
    if D < 0:
        raise ValueError(f"delay must be nonnegative, got {D}")
    Bd = matrix_exponential(sys.A1, -D) @ sys.B1
    rank = numerical_rank(controllability_matrix(sys.A1, Bd))
    rank0 = numerical_rank(controllability_matrix(sys.A1, sys.B1))
    if rank != rank0:
        warnings.warn(
            f"delayed pair has rank {rank} but undelayed pair has rank {rank0} "
            f"(D = {D}); controllability is numerically borderline",
            SpectralWarning, stacklevel=2)
    return {"rank": rank, "rank_undelayed": rank0,
            "controllable": rank == sys.dim and rank0 == sys.dim}


def vandermonde(lambdas):
    """``prod_{i<j} (lambda_j - lambda_i)``."""
    lam = np.asarray(lambdas, dtype=float)
    out = 1.0
    for j in range(lam.size):
        for i in range(j):
            out *= lam[j] - lam[i]
    return out


def kalman_determinant_closed_form(sys):
    """``prod_j (a_j + lambda_j b_j) * VdM(lambda_1..lambda_n)``.

    With the columns ordered ``(B1, A1 B1, ..., A1^n B1)`` this equals the
    direct determinant including its sign. For ``n = 0`` the empty product 1
    is returned with a warning.
    """
    if sys.n == 0:
        warnings.warn("n = 0: closed-form determinant is the empty product 1",
                      SpectralWarning, stacklevel=2)
        return 1.0
    return float(np.prod(sys.a + sys.lambda_unstable * sys.b)
                 * vandermonde(sys.lambda_unstable))


def kalman_determinant_direct(sys):
    return float(np.linalg.det(controllability_matrix(sys.A1, sys.B1)))
