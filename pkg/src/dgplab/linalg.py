"""Shared dense linear algebra helpers (jittered Cholesky factorization)."""

from __future__ import annotations

import numpy as np
import scipy.linalg

#: Largest diagonal jitter, relative to trace/n, tried before giving up.
MAX_JITTER_REL = 1e-8


class FactorizationError(RuntimeError):
    """Raised when a Gram matrix cannot be factorized within the jitter budget."""


def safe_cholesky(K: np.ndarray, max_jitter_rel: float = MAX_JITTER_REL):
    """Lower Cholesky factor of K + jitter*I, escalating jitter geometrically.

    Returns (L, jitter).  The jitter cap is max_jitter_rel * trace(K)/n.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    scale = np.trace(K) / n
    if scale <= 0:
        scale = 1.0
    jitter = 0.0
    while True:
        try:
            L = scipy.linalg.cholesky(K + jitter * np.eye(n), lower=True)
            return L, jitter
        except scipy.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = 1e-14 * scale
            else:
                jitter *= 10.0
            if jitter > max_jitter_rel * scale:
                raise FactorizationError(
                    f"matrix not factorizable within jitter {max_jitter_rel:.1e} * trace/n"
                ) from None


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b given the lower Cholesky factor."""
    y = scipy.linalg.solve_triangular(L, b, lower=True)
    return scipy.linalg.solve_triangular(L.T, y, lower=False)
