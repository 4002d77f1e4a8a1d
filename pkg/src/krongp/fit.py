"""Fit one model variant to a grid dataset and collect its posterior."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .diagnostics import check_diagnostics, summarize
from .grid import GridDesign, OutcomeMatrix, StandardizationRecord, standardize
from .model import KronGPPosterior, ModelConfig
from .sampler import PosteriorDraws, SamplerSettings, nuts_sample

logger = logging.getLogger(__name__)


class _DrawRecorder:
    """Picklable per-draw transforms of an unconstrained vector.

    With a standardization record, output-scale quantities (the kernel
    scale and noise scale of Gaussian outputs, imputed Gaussian outcomes and
    the Gaussian rows of the latent field) are mapped back to the original
    units. Lengthscales stay in standardized covariate units.
    """

    def __init__(self, posterior: KronGPPosterior, record: Optional[StandardizationRecord] = None):
        self.posterior = posterior
        p = posterior
        n_g = p.n_g
        self.scale = np.ones(p.m)
        self.shift = np.zeros(p.m)
        if record is not None:
            for k in range(n_g):
                r = record.outputs[k]
                if r is not None:
                    self.shift[k], self.scale[k] = r
        names = p.scalar_names()
        self.scalar_scale = np.ones(len(names))
        for j, name in enumerate(names):
            if name.startswith("alpha[") or name.startswith("alpha_n["):
                k = int(name[name.index("[") + 1 : -1]) - 1
                self.scalar_scale[j] = self.scale[k]
        miss_k = [int(i) // p.n_cells for i in p.layout.miss_gauss]
        self.miss_scale = np.concatenate([self.scale[miss_k], np.ones(len(p.layout.miss_bern))])
        self.miss_shift = np.concatenate([self.shift[miss_k], np.zeros(len(p.layout.miss_bern))])

    def values(self, theta: np.ndarray) -> np.ndarray:
        p = self.posterior
        return np.concatenate(
            [p.scalars(theta) * self.scalar_scale, p.missing_values(theta) * self.miss_scale + self.miss_shift]
        )

    def latent(self, theta: np.ndarray) -> np.ndarray:
        p = self.posterior
        return p.latent_f(p.constrain(theta)) * self.scale[:, None] + self.shift[:, None]


@dataclass
class FitResult:
    model: str
    posterior: KronGPPosterior
    draws: PosteriorDraws
    settings: SamplerSettings
    record: Optional[StandardizationRecord] = None

    @property
    def scalar_names(self) -> list[str]:
        return self.posterior.scalar_names()

    def f_mean(self) -> np.ndarray:
        """Posterior mean of the latent field, shape ``(N4, N1*N2*N3)``, in original units."""
        if self.draws.latent is None:
            raise ValueError("latent draws were not recorded")
        return self.draws.latent.mean(axis=(0, 1))

    def summary(self, names: Optional[list[str]] = None) -> pd.DataFrame:
        """Posterior summary of the interpretable scalars (or of ``names``)."""
        return summarize(self.draws, self.scalar_names if names is None else names)

    def max_rhat(self) -> float:
        r = self.summary()["Rhat"]
        return float(r.max()) if r.notna().any() else float("nan")

    def warnings(self, rhat_max: float = 1.1) -> list[str]:
        return check_diagnostics(self.summary(), self.draws.divergence_rate(), rhat_max=rhat_max)


def fit_model(
    design: GridDesign,
    y: OutcomeMatrix,
    model: str = "gp.f",
    settings: SamplerSettings = SamplerSettings(),
    config: Optional[ModelConfig] = None,
    record_latent: bool = True,
    standardized: bool = True,
) -> FitResult:
    """Sample the posterior of a named variant (``gp.f``, ``gp.m``, ``lin.f``, ``lin.m``).

    Stored draws hold the interpretable scalars followed by the imputed
    missing outcomes; the latent field is recorded per draw when
    ``record_latent`` is set. With ``standardized`` the model is fit to
    standardized covariates and Gaussian outputs (see
    :func:`~krongp.grid.standardize`) and output-scale quantities are
    reported in original units.
    """
    cfg = config if config is not None else ModelConfig.variant(model)
    record = None
    if standardized:
        design, y, record = standardize(design, y)
    post = KronGPPosterior(design, y, cfg)
    rec = _DrawRecorder(post, record)
    names = post.scalar_names() + post.missing_names()
    logger.info("fitting %s: %d unconstrained parameters", model, post.dim)
    draws = nuts_sample(
        post.logp_and_grad,
        post.dim,
        settings,
        names=names,
        transform=rec.values,
        latent=rec.latent if record_latent else None,
    )
    return FitResult(model, post, draws, settings, record)
