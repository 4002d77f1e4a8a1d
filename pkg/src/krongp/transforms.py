"""Constraining transforms with log-Jacobians and their reverse-mode gradients."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ._small import corr_chol_backward, corr_chol_forward

LOG2 = np.log(2.0)


def n_corr_params(m: int) -> int:
    return m * (m - 1) // 2


def log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)**2)``, finite for any finite ``u``."""
    a = np.abs(u)
    return 2.0 * (LOG2 - a - np.log1p(np.exp(-2.0 * a)))


def corr_cholesky(u: np.ndarray, m: int, lkj_shape: float | None = None):
    """Map unconstrained values to the Cholesky factor of a correlation matrix.

    ``u`` holds one value per strictly-lower entry in row-major order. Each
    value goes through ``tanh`` to a canonical partial correlation and rows
    are completed to unit norm. Returns ``(L, log_jacobian, lkj_term, cache)``
    where ``lkj_term`` is the unnormalized LKJ-Cholesky log density (0 when
    ``lkj_shape`` is None) and ``cache`` feeds :func:`corr_cholesky_grad`.
    """
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != (n_corr_params(m),):
        raise ValueError(f"expected {n_corr_params(m)} values for a {m}x{m} factor")
    if m == 0:
        return np.zeros((0, 0)), 0.0, 0.0, None
    shape = -1.0 if lkj_shape is None else float(lkj_shape)
    L, logjac, lkj, W, ell, half = corr_chol_forward(u, m, shape)
    return L, logjac, lkj, (W, ell, half, shape)


def corr_cholesky_grad(gL: np.ndarray, L: np.ndarray, cache) -> np.ndarray:
    """Gradient w.r.t. ``u`` of ``sum(gL * L) + log_jacobian + lkj_term``."""
    if cache is None:
        return np.zeros(0)
    W, ell, half, shape = cache
    return corr_chol_backward(np.ascontiguousarray(gL, dtype=float), L, W, ell, half, shape)


def corr_cholesky_inverse(L: np.ndarray) -> np.ndarray:
    """Unconstrained values reproducing ``L``."""
    L = np.asarray(L, dtype=float)
    m = L.shape[0]
    out = np.empty(n_corr_params(m))
    pos = 0
    for i in range(1, m):
        rem = 1.0
        for j in range(i):
            out[pos] = np.arctanh(L[i, j] / np.sqrt(rem))
            rem -= L[i, j] ** 2
            pos += 1
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def log_sigmoid(u):
    return -np.logaddexp(0.0, -u)


__all__ = [
    "corr_cholesky",
    "corr_cholesky_grad",
    "corr_cholesky_inverse",
    "expit",
    "log1m_tanh2",
    "log_sigmoid",
    "logit",
    "n_corr_params",
]
