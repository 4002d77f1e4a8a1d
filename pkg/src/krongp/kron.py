"""Kronecker-product linear algebra.

Factors are always ordered slowest-varying first, so ``factors[0]`` acts on
the leading axis of the C-order tensor view of a vector. With the grid layout
used throughout the package this is ``[A_out, A_3, A_2, A_1]``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

DENSE_CAP = 10_000
BASE_JITTER = 1e-8
MAX_JITTER = 1e-4


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a matrix stays indefinite after the full jitter ladder."""


def _check_factors(factors: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = []
    for i, a in enumerate(factors):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"factor {i} is not square: shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"factor {i} has non-finite entries")
        out.append(a)
    if not out:
        raise ValueError("need at least one factor")
    return out


def kron_size(factors: Sequence[np.ndarray]) -> int:
    return int(np.prod([np.shape(a)[0] for a in factors]))


def mode_product(t: np.ndarray, a: np.ndarray, axis: int) -> np.ndarray:
    """Multiply tensor ``t`` by matrix ``a`` along ``axis`` (``a @ t`` on that mode)."""
    shape = t.shape
    lead = int(np.prod(shape[:axis], dtype=int))
    n = shape[axis]
    out = a @ t.reshape(lead, n, -1)
    return out.reshape(shape[:axis] + (a.shape[0],) + shape[axis + 1:])


def kron_matvec(factors: Sequence[np.ndarray], v: np.ndarray) -> np.ndarray:
    """Compute ``(A_0 kron A_1 kron ... ) @ v`` without forming the product.

    Works by reshaping ``v`` into a tensor with one axis per factor and
    contracting each mode in turn, slowest factor first.
    """
    factors = _check_factors(factors)
    v = np.asarray(v, dtype=float)
    sizes = tuple(a.shape[0] for a in factors)
    if v.ndim != 1 or v.shape[0] != int(np.prod(sizes)):
        raise ValueError(
            f"vector length {v.shape} does not match Kronecker size {int(np.prod(sizes))}"
        )
    t = v.reshape(sizes)
    for axis, a in enumerate(factors):
        t = mode_product(t, a, axis)
    return t.reshape(-1)


def dense_kron(factors: Sequence[np.ndarray], cap: int = DENSE_CAP) -> np.ndarray:
    """Materialize the Kronecker product. Intended as a test oracle only."""
    factors = _check_factors(factors)
    size = kron_size(factors)
    if size > cap:
        raise ValueError(f"dense Kronecker product of size {size} exceeds cap {cap}")
    out = np.ones((1, 1))
    for a in factors:
        # blockwise rule: block (i, j) of out kron a is out[i, j] * a
        n, k = out.shape[0], a.shape[0]
        out = (out[:, None, :, None] * a[None, :, None, :]).reshape(n * k, n * k)
    return out


def chol_factor(m: np.ndarray, jitter: float = BASE_JITTER, max_jitter: float = MAX_JITTER) -> np.ndarray:
    """Lower Cholesky factor of ``m + jitter * I`` with positive diagonal.

    If the factorization fails the jitter is multiplied by 10 until it
    exceeds ``max_jitter``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    eye = np.eye(m.shape[0])
    current = jitter
    while True:
        try:
            return np.linalg.cholesky(m + current * eye)
        except np.linalg.LinAlgError:
            pass
        current = max(current * 10.0, 1e-12)
        if current > max_jitter * (1 + 1e-9):
            raise CholeskyError(
                f"matrix is not positive definite after jitter {max_jitter:g}"
            )


def kron_logdet(factors: Sequence[np.ndarray]) -> float:
    """log det of a Kronecker product of SPD factors.

    Uses ``log det(kron_i A_i) = sum_i (N / N_i) log det A_i``.
    """
    factors = _check_factors(factors)
    total = kron_size(factors)
    out = 0.0
    for a in factors:
        try:
            c = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Kronecker factor is not positive definite") from exc
        out += (total // a.shape[0]) * 2.0 * np.sum(np.log(np.diag(c)))
    return float(out)
