"""Dense linear-algebra kernel shared by the predictor and QP layers.

Thin, contract-checked wrappers around LAPACK (via numpy/scipy). Everything
is double precision; pseudo-inverses and ranks use a relative singular-value
cutoff so that all modules truncate consistently.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

DEFAULT_RCOND = 1e-10


class NotSpdError(ValueError):
    """Raised when a matrix handed to solve_spd is not positive definite."""


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def svd(a):
    """Full-rank-revealing SVD, A = U @ diag(s) @ V.T.

    Returns:
        (U, s, V) with s non-increasing and U, V column-orthonormal.
    """
    a = _as_matrix(a, "svd input")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    return u, s, vh.T


def pinv(a, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD truncation at rcond * sigma_max."""
    a = _as_matrix(a, "pinv input")
    u, s, v = svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rcond * s[0]
    u = u[:, keep]
    v = v[:, keep]
    inv_s = 1.0 / s[keep]
    return (v * inv_s) @ u.T


def numerical_rank(a, rcond: float = DEFAULT_RCOND) -> int:
    """Number of singular values above rcond * sigma_max."""
    a = _as_matrix(a, "rank input")
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rcond * s[0]))


def solve_spd(h, b):
    """Solve H x = b for symmetric positive definite H via Cholesky.

    Raises:
        NotSpdError: if the factorization fails (H not SPD).
    """
    h = _as_matrix(h, "solve_spd matrix")
    b = np.asarray(b, dtype=float)
    try:
        factor = sla.cho_factor(h, lower=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NotSpdError(f"matrix is not symmetric positive definite: {exc}") from exc
    return sla.cho_solve(factor, b, check_finite=False)


def least_squares(a, b, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Minimum-norm X minimizing ||A X - B||_F, computed as pinv(A) @ B."""
    a = _as_matrix(a, "least_squares lhs")
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("least_squares rhs contains non-finite entries")
    return pinv(a, rcond=rcond) @ b
