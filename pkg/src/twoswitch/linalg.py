"""Shared dense linear algebra at desk scale.

Spectral radius, induced 2-norm, positive-semidefiniteness checks, a
fixed-point discrete Riccati solver, and LQR gain synthesis. Everything
works on small dense float64 arrays and is pure and reentrant.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, SolverError

# Eigenvalues above this floor count as nonnegative; floating-point slack.
PSD_FLOOR = -1e-9


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float array and reject non-finite entries."""
    A = np.atleast_2d(np.asarray(M, dtype=float))
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def require_square(M, name: str = "matrix") -> np.ndarray:
    A = as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    return A


def symmetrize(M) -> np.ndarray:
    """(M + M^T) / 2, used after every covariance update to kill drift."""
    A = np.asarray(M, dtype=float)
    return 0.5 * (A + A.T)


def spectral_radius(M) -> float:
    """max |lambda_i(M)| of a square matrix."""
    A = require_square(M, "spectral_radius input")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def induced_two_norm(M) -> float:
    """Largest singular value, i.e. the operator norm induced by l2."""
    A = as_matrix(M, "induced_two_norm input")
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of the symmetrized input."""
    A = require_square(M)
    return float(np.min(np.linalg.eigvalsh(symmetrize(A))))


def is_psd(M, floor: float = PSD_FLOOR) -> bool:
    return min_eigenvalue(M) >= floor


def is_pd(M, floor: float = 0.0) -> bool:
    return min_eigenvalue(M) > floor


def nearest_psd(M, floor: float = 0.0) -> np.ndarray:
    """Project onto the PSD cone by clipping negative eigenvalues.

    Used for covariance inputs that are indefinite after symmetrization;
    ``floor`` > 0 yields a strictly positive-definite result.
    """
    A = symmetrize(as_matrix(M))
    w, Q = np.linalg.eigh(A)
    return symmetrize((Q * np.maximum(w, floor)) @ Q.T)


def psd_factor(M) -> np.ndarray:
    """Factor L with L L^T = M for a (possibly singular) PSD matrix.

    Eigendecomposition-based, so rank-deficient covariances can still be
    sampled from; eigenvalues below the PSD floor raise.
    """
    A = symmetrize(as_matrix(M))
    w, Q = np.linalg.eigh(A)
    if np.min(w) < PSD_FLOOR * max(1.0, float(np.max(np.abs(w)))):
        raise ValueError("psd_factor input is not positive semidefinite")
    return Q * np.sqrt(np.maximum(w, 0.0))


def solve_dare(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation.

        P = A^T P A - A^T P B (R + B^T P B)^-1 B^T P A + Q

    Solved by fixed-point iteration of the Riccati map from P = Q, which
    converges for stabilizable (A, B) and detectable (A, Q^1/2). Simple and
    adequate for systems with at most a handful of states.

    Raises SolverError if the iteration does not converge within
    ``max_iter`` steps or the residual check fails, and DimensionError /
    ValueError for malformed inputs (R must be positive definite).
    """
    A = require_square(A, "A")
    n = A.shape[0]
    B = as_matrix(B, "B")
    if B.shape[0] != n:
        raise DimensionError(f"B must have {n} rows, got {B.shape}")
    Q = require_square(Q, "Q")
    if Q.shape[0] != n:
        raise DimensionError(f"Q must be {n}x{n}, got {Q.shape}")
    R = require_square(R, "R")
    if R.shape[0] != B.shape[1]:
        raise DimensionError(f"R must be {B.shape[1]}x{B.shape[1]}, got {R.shape}")
    if not is_psd(Q):
        raise ValueError("Q must be positive semidefinite")
    if not is_pd(R):
        raise ValueError("R must be positive definite")

    P = symmetrize(Q)
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = symmetrize(A.T @ P @ (A - B @ gain) + Q)
        if np.linalg.norm(P_next - P, "fro") <= tol * (1.0 + np.linalg.norm(P_next, "fro")):
            P = P_next
            break
        P = P_next
    else:
        raise SolverError(f"Riccati iteration did not converge in {max_iter} steps")

    BtP = B.T @ P
    residual = A.T @ P @ A - P - (A.T @ P @ B) @ np.linalg.solve(R + BtP @ B, BtP @ A) + Q
    scale = 1.0 + np.linalg.norm(P, "fro")
    if np.linalg.norm(residual, "fro") >= 1e-8 * scale:
        raise SolverError("Riccati residual check failed after convergence")
    return P


def lqr_gain(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Infinite-horizon LQR gain F with u = -F x and rho(A - B F) < 1."""
    A = require_square(A, "A")
    B = as_matrix(B, "B")
    P = solve_dare(A, B, Q, R, tol=tol, max_iter=max_iter)
    BtP = B.T @ P
    F = np.linalg.solve(as_matrix(R) + BtP @ B, BtP @ A)
    if spectral_radius(A - B @ F) >= 1.0:
        raise SolverError("LQR synthesis produced an unstable closed loop")
    return F
