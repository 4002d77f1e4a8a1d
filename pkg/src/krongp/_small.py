"""Compiled kernels for the small dense matrices on the gradient hot path.

Everything here works on matrices of a few dozen rows at most, where numpy's
per-call overhead dominates the arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG2 = math.log(2.0)


@njit(cache=True)
def log1m_tanh2_scalar(u):
    a = abs(u)
    return 2.0 * (LOG2 - a - math.log1p(math.exp(-2.0 * a)))


@njit(cache=True)
def corr_chol_forward(u, m, lkj_shape):
    """Correlation Cholesky factor from canonical partial correlations.

    Returns ``L, log_jacobian, lkj_term, W, ell, half`` where ``W`` holds the
    partial correlations, ``ell = log(1 - W**2)`` and ``half[i, j]`` is the
    square root of the norm left in row ``i`` before column ``j``. A
    non-positive ``lkj_shape`` disables the LKJ term.
    """
    L = np.zeros((m, m))
    W = np.zeros((m, m))
    ell = np.zeros((m, m))
    half = np.ones((m, m))
    L[0, 0] = 1.0
    logjac = 0.0
    lkj = 0.0
    k = 0
    for i in range(1, m):
        logr = 0.0
        for j in range(i):
            w = math.tanh(u[k])
            e = log1m_tanh2_scalar(u[k])
            k += 1
            h = math.exp(0.5 * logr)
            W[i, j] = w
            ell[i, j] = e
            half[i, j] = h
            L[i, j] = w * h
            if j >= 1:
                logjac += 0.5 * logr
            logjac += e
            logr += e
        half[i, i] = math.exp(0.5 * logr)
        L[i, i] = half[i, i]
        if lkj_shape > 0:
            lkj += (m - i - 1 + 2.0 * (lkj_shape - 1.0)) * 0.5 * logr
    return L, logjac, lkj, W, ell, half


@njit(cache=True)
def corr_chol_backward(gL, L, W, ell, half, lkj_shape):
    """Gradient of ``sum(gL * L) + log_jacobian + lkj_term`` w.r.t. ``u``."""
    m = L.shape[0]
    out = np.empty(m * (m - 1) // 2)
    a = np.empty(m)
    k = 0
    for i in range(1, m):
        # a[j]: derivative w.r.t. the log remaining norm before column j
        for j in range(i):
            a[j] = 0.5 * gL[i, j] * L[i, j]
            if j >= 1:
                a[j] += 0.5
        a[i] = 0.5 * gL[i, i] * L[i, i]
        if lkj_shape > 0:
            a[i] += 0.5 * (m - i - 1 + 2.0 * (lkj_shape - 1.0))
        tail = 0.0
        for j in range(i, -1, -1):
            a_j = a[j]
            a[j] = tail  # sum over columns after j
            tail += a_j
        for j in range(i):
            out[k + j] = gL[i, j] * half[i, j] * math.exp(ell[i, j]) - 2.0 * W[i, j] * (a[j] + 1.0)
        k += i
    return out


@njit(cache=True)
def se_matrix(dist, inv_rho2, diag_add):
    """``exp(-0.5 * sum_d dist[d] * inv_rho2[d]) + diag_add * I``."""
    p, n = dist.shape[0], dist.shape[1]
    K = np.empty((n, n))
    for i in range(n):
        K[i, i] = 1.0 + diag_add
        for j in range(i):
            s = 0.0
            for d in range(p):
                s += dist[d, i, j] * inv_rho2[d]
            v = math.exp(-0.5 * s)
            K[i, j] = v
            K[j, i] = v
    return K


@njit(cache=True)
def cholesky(K):
    """Lower Cholesky factor; second value is False if ``K`` is not PD."""
    n = K.shape[0]
    C = np.zeros((n, n))
    for j in range(n):
        s = K[j, j]
        for k in range(j):
            s -= C[j, k] * C[j, k]
        if not s > 0.0:
            return C, False
        d = math.sqrt(s)
        C[j, j] = d
        for i in range(j + 1, n):
            s = K[i, j]
            for k in range(j):
                s -= C[i, k] * C[j, k]
            C[i, j] = s / d
    return C, True


@njit(cache=True)
def tri_inv(C):
    """Inverse of a lower-triangular matrix."""
    n = C.shape[0]
    X = np.zeros((n, n))
    for j in range(n):
        X[j, j] = 1.0 / C[j, j]
        for i in range(j + 1, n):
            s = 0.0
            for k in range(j, i):
                s += C[i, k] * X[k, j]
            X[i, j] = -s / C[i, i]
    return X


@njit(cache=True)
def chol_backward(C, gC):
    """Symmetric gradient w.r.t. ``K`` from the gradient w.r.t. ``C = chol(K)``.

    Only the lower triangle of ``gC`` is used.
    """
    n = C.shape[0]
    P = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = 0.0
            for k in range(i, n):
                s += C[k, i] * gC[k, j]
            P[i, j] = 0.5 * s if i == j else s
    Ci = tri_inv(C)
    S = Ci.T @ P @ Ci
    return 0.5 * (S + S.T)
