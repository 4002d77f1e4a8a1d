"""Synthetic benchmark: two nonlinear latent functions observed on a 3-D grid.

Outputs 1-2 are the noisy latents themselves (Gaussian family); outputs 3-4
are binary, ``1[f + noise > 0]`` (the probit of the noisy latent rounded to
the nearest integer).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import BERNOULLI, GAUSSIAN, GridComponent, GridDesign, OutcomeMatrix, cell_covariates, write_long_csv


@dataclass(frozen=True)
class SimConfig:
    n1: int = 20
    n2: int = 7
    n3: int = 3
    noise_sd: float = 0.1
    covariate_range: tuple[float, float] = (-5.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("n1", "n2", "n3"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be non-negative")
        lo, hi = self.covariate_range
        if not lo < hi:
            raise ValueError("covariate_range must be increasing")


@dataclass
class SimTruth:
    """Noiseless and noisy latents, shape ``(4, n_cells)`` in grid order."""

    latent: np.ndarray
    noisy: np.ndarray
    config: SimConfig


def latent_functions(x1, x2, x3):
    """The four benchmark latents ``(f1, f2, f3, f4)``."""
    x1, x2, x3 = (np.asarray(v, dtype=float) for v in (x1, x2, x3))
    f1 = np.exp(0.15 * x1) - 0.6 * x2**2 + np.sin(3.0 * x3)
    f2 = -np.exp(-0.15 * x1) + np.abs(3.0 * x2) - np.cos(3.0 * x3)
    return f1, f2, -f1, f2


def simulate_dataset(cfg: SimConfig = SimConfig()) -> tuple[GridDesign, OutcomeMatrix, SimTruth]:
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.covariate_range
    # one draw per unique grid point, shared by every cell that uses it
    xs = [rng.uniform(lo, hi, n) for n in (cfg.n1, cfg.n2, cfg.n3)]
    comps = [GridComponent(x[:, None], columns=(f"x{i + 1}",)) for i, x in enumerate(xs)]
    design = GridDesign(
        comps,
        [GAUSSIAN, GAUSSIAN, BERNOULLI, BERNOULLI],
        output_names=["y1", "y2", "y3", "y4"],
    )
    i1, i2, i3 = cell_covariates(design)
    latent = np.stack(latent_functions(xs[0][i1], xs[1][i2], xs[2][i3]))
    noisy = latent + cfg.noise_sd * rng.standard_normal(latent.shape)
    values = noisy.copy()
    values[2:] = (noisy[2:] > 0).astype(float)
    y = OutcomeMatrix(values, np.ones_like(values, dtype=bool))
    return design, y, SimTruth(latent, noisy, cfg)


def write_dataset(cfg: SimConfig, out_dir, stem: str = "simulated") -> tuple[Path, Path]:
    """Simulate and write ``<stem>.csv`` (one row per cell and output) and ``<stem>.schema.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    design, y, _ = simulate_dataset(cfg)
    csv_path = out_dir / f"{stem}.csv"
    schema_path = out_dir / f"{stem}.schema.json"
    write_long_csv(design, y, csv_path, schema_path, per_output=True)
    return csv_path, schema_path
