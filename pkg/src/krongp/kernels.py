"""Covariance functions for the grid components and the output factor."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .kron import BASE_JITTER

SE_ARD = "se_ard"
LINEAR = "linear"
KERNEL_KINDS = (SE_ARD, LINEAR)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice for one grid component.

    ``active_columns`` selects covariate columns of the component; ``None``
    means all of them. Component kernels carry no amplitude of their own; all
    scale lives in the output factor.
    """

    kind: str = SE_ARD
    active_columns: Optional[tuple[int, ...]] = None
    add_random_effect: bool = False

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.active_columns is not None:
            object.__setattr__(self, "active_columns", tuple(int(c) for c in self.active_columns))

    def columns(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.active_columns is None:
            return X
        return X[:, list(self.active_columns)]

    def n_lengthscales(self, n_columns: int) -> int:
        if self.kind != SE_ARD:
            return 0
        n = n_columns if self.active_columns is None else len(self.active_columns)
        if n < 1:
            raise ValueError("SE_ARD kernel needs at least one active column")
        return n

    def with_kind(self, kind: str) -> "KernelSpec":
        return replace(self, kind=kind)


def sq_dist_by_dim(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape ``(p, n, n)``."""
    X = np.asarray(X, dtype=float)
    diff = X.T[:, :, None] - X.T[:, None, :]
    return diff * diff


def se_ard(X: np.ndarray, rho: Sequence[float]) -> np.ndarray:
    """Unit-variance squared-exponential kernel with one lengthscale per column."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if rho.shape[0] != X.shape[1]:
        raise ValueError(f"need {X.shape[1]} lengthscales, got {rho.shape[0]}")
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise ValueError("lengthscales must be positive and finite")
    d2 = sq_dist_by_dim(X)
    return np.exp(-0.5 * np.tensordot(1.0 / rho**2, d2, axes=1))


def linear(X: np.ndarray) -> np.ndarray:
    """``1 + x^T x'``: linear kernel with an intercept feature."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return 1.0 + X @ X.T


def component_matrix(
    spec: KernelSpec,
    X: np.ndarray,
    rho: Optional[Sequence[float]] = None,
    sigma2_re: float = 0.0,
    jitter: float = BASE_JITTER,
) -> np.ndarray:
    """Kernel matrix for one grid component.

    Adds ``sigma2_re * I`` when the spec carries the random effect, then the
    repository jitter.
    """
    Xa = spec.columns(X)
    if spec.kind == SE_ARD:
        if rho is None:
            raise ValueError("SE_ARD kernel needs lengthscales")
        k = se_ard(Xa, rho)
    else:
        if rho is not None and len(np.atleast_1d(rho)) > 0:
            raise ValueError("linear kernel takes no lengthscales")
        k = linear(Xa)
    n = k.shape[0]
    if spec.add_random_effect:
        if sigma2_re < 0:
            raise ValueError("random-effect variance must be non-negative")
        k = k + sigma2_re * np.eye(n)
    return k + jitter * np.eye(n)


def output_cov_factor(alpha: Sequence[float], L: np.ndarray) -> np.ndarray:
    """``diag(alpha) @ L``; its Gram matrix is the output covariance."""
    alpha = np.asarray(alpha, dtype=float)
    L = np.asarray(L, dtype=float)
    if L.shape != (alpha.shape[0], alpha.shape[0]):
        raise ValueError("alpha and L sizes disagree")
    if np.any(alpha <= 0):
        raise ValueError("output scales must be positive")
    if np.any(np.triu(L, 1) != 0) or np.any(np.diag(L) <= 0):
        raise ValueError("L must be lower triangular with positive diagonal")
    if not np.allclose(np.sum(L**2, axis=1), 1.0, atol=1e-10):
        raise ValueError("rows of a correlation Cholesky factor must have unit norm")
    return alpha[:, None] * L
