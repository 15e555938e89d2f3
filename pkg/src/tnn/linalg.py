"""Dense symmetric solves for the coefficient step.

The Gram matrix of the least-squares coefficient problem is positive
semidefinite but may be numerically singular, so :func:`solve_spd` walks a
ladder: plain Cholesky, Cholesky with a growing ridge shift, and finally an
eigendecomposition pseudo-inverse. It never aborts on a merely
ill-conditioned system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve

from .errors import InvalidArgumentError, SingularSystemError


@dataclass(frozen=True)
class RidgePolicy:
    initial_scale: float = 1e-10  # lambda_0 = initial_scale * trace(A) / p
    max_doublings: int = 6
    pinv_cutoff: float = 1e-12  # relative to the largest eigenvalue


class SpdSolution(NamedTuple):
    x: np.ndarray
    path: str  # "cholesky", "ridge" or "pinv"
    shift: float


def _validate(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError("matrix has non-finite entries")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * max(scale, 1e-300):
        raise InvalidArgumentError("matrix is not symmetric")
    return A


def cholesky(A: np.ndarray) -> np.ndarray | None:
    """Lower factor ``L`` with ``L L^T = A``, or ``None`` if a pivot is not positive."""
    A = _validate(A)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.diag(L) > 0.0) or not np.all(np.isfinite(L)):
        return None
    return L


def solve_spd(A: np.ndarray, B: np.ndarray, policy: RidgePolicy = RidgePolicy()) -> SpdSolution:
    A = _validate(A)
    B = np.asarray(B, dtype=float)
    p = A.shape[0]
    if B.shape[0] != p or not np.all(np.isfinite(B)):
        raise InvalidArgumentError(f"right-hand side must be finite with leading dimension {p}")
    L = cholesky(A)
    if L is not None:
        return SpdSolution(cho_solve((L, True), B), "cholesky", 0.0)
    lam = policy.initial_scale * max(np.trace(A), 0.0) / p
    if lam > 0.0:
        eye = np.eye(p)
        for _ in range(policy.max_doublings + 1):
            L = cholesky(A + lam * eye)
            if L is not None:
                return SpdSolution(cho_solve((L, True), B), "ridge", lam)
            lam *= 2.0
    evals, evecs = np.linalg.eigh(A)
    top = np.max(evals) if evals.size else 0.0
    if not top > 0.0:
        raise SingularSystemError("system matrix has no positive eigenvalue")
    keep = evals > policy.pinv_cutoff * top
    x = evecs[:, keep] @ ((evecs[:, keep].T @ B) / (evals[keep][:, None] if B.ndim == 2 else evals[keep]))
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("pseudo-inverse solve produced non-finite values")
    return SpdSolution(x, "pinv", float(lam))
