"""Dense float64 linear-algebra kernels.

Everything here operates on 2-D float64 numpy arrays ("matrices"). Model
weights are stored float32, but clustering and reconstruction are too
ill-conditioned at that precision, so all solver arithmetic runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConvergenceError, ShapeError, SingularMatrixError

JACOBI_MAX_SWEEPS = 100
JACOBI_OFF_TOL = 1e-12


def as_matrix(a) -> np.ndarray:
    """Validate and return `a` as a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def soft_threshold(x, t):
    """Proximal operator of the L1 norm: sign(x) * max(|x| - t, 0)."""
    if t < 0:
        raise ValueError(f"threshold must be nonnegative, got {t}")
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass(frozen=True)
class EigenDecomposition:
    """Full symmetric spectrum; eigenvalues ascending, eigenvector j in column j."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eigen(a) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as (A + A^T) / 2 before iterating. Robust for the
    small (at most a few hundred rows) matrices arising in clustering.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ShapeError(f"eigendecomposition needs a square matrix, got {a.shape}")
    w = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1:
        return EigenDecomposition(np.array([w[0, 0]]), v)

    def off_norm(x):
        off = x - np.diag(np.diag(x))
        return float(np.linalg.norm(off))

    # Absolute 1e-12 is unreachable in float64 once the matrix norm is large;
    # scale the stopping threshold by the initial off-diagonal mass.
    tol = JACOBI_OFF_TOL * max(1.0, off_norm(w))
    for _ in range(JACOBI_MAX_SWEEPS):
        if off_norm(w) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = w[p, q]
                if abs(apq) <= tol / (n * n):
                    continue
                theta = (w[q, q] - w[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * w[:, p] - s * w[:, q]
                rot_q = s * w[:, p] + c * w[:, q]
                w[:, p] = rot_p
                w[:, q] = rot_q
                rot_p = c * w[p, :] - s * w[q, :]
                rot_q = s * w[p, :] + c * w[q, :]
                w[p, :] = rot_p
                w[q, :] = rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p] = rot_p
                v[:, q] = rot_q
    else:
        raise ConvergenceError(
            f"Jacobi sweep budget ({JACOBI_MAX_SWEEPS}) exhausted, "
            f"off-diagonal norm {off_norm(w):.3e}"
        )

    eigenvalues = np.diag(w).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return EigenDecomposition(eigenvalues[order], v[:, order])


def ridge_least_squares(a, b, ridge: float) -> np.ndarray:
    """Minimize ||A X - B||_F^2 + ridge ||X||_F^2 via normal equations.

    Solves (A^T A + ridge I) X = A^T B with a Cholesky factorization; A^T A is
    small here (columns = retained channels x kernel area).
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row mismatch: A has {a.shape[0]} rows, B has {b.shape[0]}")
    if ridge < 0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")
    gram = a.T @ a
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0])
    rhs = a.T @ b
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "normal matrix is not positive definite; retry with ridge > 0"
        ) from exc
    y = solve_triangular(chol, rhs, lower=True)
    return solve_triangular(chol.T, y, lower=False)
