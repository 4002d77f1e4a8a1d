"""scikit-learn style wrapper around :func:`~krongp.fit.fit_model`.

The model lives on a complete grid, so prediction is transductive: the
posterior covers every cell of the grid spanned by the training rows, and
``predict`` looks cells up by their covariates. To predict held-out cells,
pass them to ``fit`` with ``NaN`` outcomes; they are then imputed along with
everything else.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fit import fit_model
from .grid import GAUSSIAN, grid_from_table
from .model import MODEL_NAMES
from .sampler import SamplerSettings


class KronGPRegressor(RegressorMixin, BaseEstimator):
    """Multi-output Kronecker GP fitted by NUTS.

    Parameters
    ----------
    components : sequence of three sequences of int
        Columns of ``X`` forming grid components 1, 2 and 3. An empty
        sequence gives a component with a single grid point.
    families : sequence of str, optional
        ``"gaussian"`` or ``"bernoulli"`` per column of ``Y``; all Gaussian
        by default. Gaussian columns must come first.
    model : {"gp.f", "gp.m", "lin.f", "lin.m"}
    chains, warmup, samples, target_accept, max_tree_depth, seed
        Sampler settings.
    standardize : bool
        Fit on standardized covariates and Gaussian outputs.
    threads : int, optional
        Worker processes for the chains.

    Attributes
    ----------
    result_ : FitResult
    design_ : GridDesign
    f_mean_ : ndarray of shape (n_outputs, n_cells)
        Posterior mean of the latent field in original units.
    """

    def __init__(
        self,
        components: Sequence[Sequence[int]] = ((0,), (1,), (2,)),
        families: Optional[Sequence[str]] = None,
        model: str = "gp.f",
        chains: int = 4,
        warmup: int = 500,
        samples: int = 500,
        target_accept: float = 0.8,
        max_tree_depth: int = 10,
        seed: int = 0,
        standardize: bool = True,
        threads: Optional[int] = None,
    ):
        self.components = components
        self.families = families
        self.model = model
        self.chains = chains
        self.warmup = warmup
        self.samples = samples
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.seed = seed
        self.standardize = standardize
        self.threads = threads

    def _validate_params(self, n_features: int, n_outputs: int):
        if str(self.model).lower() not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODEL_NAMES}")
        comps = [tuple(int(c) for c in cols) for cols in self.components]
        if len(comps) != 3:
            raise ValueError("components must list the columns of exactly three grid components")
        used = [c for cols in comps for c in cols]
        if len(set(used)) != len(used) or any(not 0 <= c < n_features for c in used):
            raise ValueError("component columns must be distinct indices into X")
        fams = [GAUSSIAN] * n_outputs if self.families is None else [str(f).lower() for f in self.families]
        if len(fams) != n_outputs:
            raise ValueError(f"families has {len(fams)} entries for {n_outputs} outputs")
        return comps, fams

    def _table(self, X: np.ndarray, comps) -> pd.DataFrame:
        cols = {}
        for idx in comps:
            for c in idx:
                cols[f"x{c}"] = X[:, c]
        return pd.DataFrame(cols)

    def fit(self, X, Y):
        """Fit to long-format rows ``X`` (covariates) and ``Y`` (outcomes, ``NaN`` = missing)."""
        X = check_array(X, dtype=float)
        Y = check_array(Y, dtype=float, ensure_all_finite="allow-nan", ensure_2d=False)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[0] != X.shape[0]:
            raise ValueError("X and Y have different numbers of rows")
        comps, fams = self._validate_params(X.shape[1], Y.shape[1])
        table = self._table(X, comps)
        schema = {}
        for i, idx in enumerate(comps):
            for c in idx:
                schema[f"x{c}"] = f"component{i + 1}"
        for k, fam in enumerate(fams):
            table[f"y{k}"] = Y[:, k]
            schema[f"y{k}"] = f"outcome:{fam}"
        design, y = grid_from_table(table, schema)
        if design.output_names != [f"y{k}" for k in range(Y.shape[1])]:
            raise ValueError("Gaussian outputs must come before Bernoulli outputs in Y")
        settings = SamplerSettings(
            chains=self.chains,
            warmup=self.warmup,
            samples=self.samples,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
            seed=self.seed,
            threads=self.threads,
        )
        self.result_ = fit_model(design, y, str(self.model).lower(), settings, standardized=self.standardize)
        self.design_ = design
        self.f_mean_ = self.result_.f_mean()
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        self._comps = comps
        self._lookup = [
            {tuple(row): r for r, row in enumerate(comp.X)} for comp in design.components
        ]
        return self

    def _cells(self, X: np.ndarray) -> np.ndarray:
        n1, n2, _ = self.design_.sizes
        idx = []
        for i, cols in enumerate(self._comps):
            lookup = self._lookup[i]
            keys = [tuple(row) for row in X[:, list(cols)]] if cols else [()] * X.shape[0]
            try:
                idx.append(np.array([lookup[k] for k in keys], dtype=int))
            except KeyError as exc:
                raise ValueError(f"covariates {exc.args[0]} of component {i + 1} are not on the fitted grid") from None
        return (idx[2] * n2 + idx[1]) * n1 + idx[0]

    def predict(self, X):
        """Posterior mean of the latent field at the grid cells of ``X``, shape ``(n, n_outputs)``.

        Bernoulli columns are on the probit scale; see :meth:`predict_proba`.
        """
        check_is_fitted(self, "f_mean_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = self.f_mean_[:, self._cells(X)].T
        return out[:, 0] if self.n_outputs_ == 1 else out

    def predict_proba(self, X):
        """``Phi(f_pm)`` for the Bernoulli outputs, shape ``(n, n_bernoulli)``."""
        from scipy.special import ndtr

        check_is_fitted(self, "f_mean_")
        X = check_array(X, dtype=float)
        return ndtr(self.f_mean_[self.design_.n_gaussian :, self._cells(X)].T)

    def summary(self) -> pd.DataFrame:
        check_is_fitted(self, "result_")
        return self.result_.summary()


__all__ = ["KronGPRegressor"]
