"""Lyapunov equation ``A0^T P + P A0 = -I`` for the bidiagonal gain matrix.

``A0`` has ``-c_i`` on the diagonal and ones on the superdiagonal.  Writing
the equation entrywise gives

    (c_i + c_j) P_ij = delta_ij + P_{i-1,j} + P_{i,j-1}

(indices below 1 contribute zero), so ``P`` is filled anti-diagonal by
anti-diagonal without any linear solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LyapunovPair:
    A0: np.ndarray
    P: np.ndarray

    def residual(self) -> float:
        n = len(self.P)
        return float(np.linalg.norm(self.A0.T @ self.P + self.P @ self.A0 + np.eye(n)))


def gain_matrix(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return -np.diag(c) + np.diag(np.ones(len(c) - 1), 1)


def _structured(c: np.ndarray) -> np.ndarray:
    n = len(c)
    P = np.zeros((n, n))
    for d in range(2 * n - 1):
        for i in range(max(0, d - n + 1), min(d, n - 1) + 1):
            j = d - i
            if j < i:
                continue
            acc = 1.0 if i == j else 0.0
            if i > 0:
                acc += P[i - 1, j]
            if j > 0:
                acc += P[i, j - 1]
            P[i, j] = P[j, i] = acc / (c[i] + c[j])
    return P


def solve_P(c, method: str = "structured") -> LyapunovPair:
    """Return ``(A0, P)``; ``method`` is ``"structured"`` or ``"dense"``.

    Raises :class:`NotPositiveDefinite` if the Cholesky check on ``P`` fails,
    which happens only when some ``c_i <= 0`` slipped past validation.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or len(c) == 0:
        raise ValueError("c must be a non-empty vector")
    A0 = gain_matrix(c)
    if method == "structured":
        if np.any(c <= 0):
            raise NotPositiveDefinite(f"gains must be positive, got {c.tolist()}")
        P = _structured(c)
    elif method == "dense":
        P = scipy.linalg.solve_continuous_lyapunov(A0.T, -np.eye(len(c)))
        P = 0.5 * (P + P.T)
    else:
        raise ValueError(f"unknown method {method!r}")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"P is not positive definite for c = {c.tolist()}") from None
    return LyapunovPair(A0, P)
