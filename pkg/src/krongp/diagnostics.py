"""Convergence diagnostics and posterior summaries."""

from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
from scipy.special import ndtri
from scipy.stats import rankdata

SUMMARY_COLUMNS = ["mean", "sd", "l-95% CI", "u-95% CI", "n.eff", "Rhat"]


class DegenerateChainError(ValueError):
    """Raised when a diagnostic is undefined because chains do not vary."""


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    if x.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    # an odd draw count drops the middle draw
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def rhat(x) -> float:
    """Split potential scale reduction factor for a ``(chains, draws)`` array."""
    s = _split(_as_chains(x))
    n = s.shape[1]
    w = s.var(axis=1, ddof=1).mean()
    if not w > 0:
        raise DegenerateChainError("degenerate chain: zero variance across draws")
    b = n * s.mean(axis=1).var(ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance of each row via FFT (biased, divided by ``n``)."""
    n = x.shape[1]
    centred = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(centred, n=size, axis=1)
    acov = np.fft.irfft(spec * np.conj(spec), n=size, axis=1)[:, :n]
    return acov / n


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def ess(x, rank_normalize: bool = True) -> float:
    """Effective sample size from split chains with Geyer's initial monotone sequence.

    By default the draws are replaced by normal scores of their pooled ranks
    first, which makes the estimate robust to heavy tails.
    """
    s = _split(_as_chains(x))
    if not s.var(axis=1).mean() > 0:
        raise DegenerateChainError("degenerate chain: zero variance across draws")
    if rank_normalize:
        s = _rank_normalize(s)
    m, n = s.shape
    acov = _autocov(s)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    if not mean_var > 0:
        raise DegenerateChainError("degenerate chain: zero variance across draws")
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += s.mean(axis=1).var(ddof=1)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # sum consecutive pairs while positive, then enforce monotonicity
    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        pairs.append(p)
        t += 2
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def summarize(draws, names=None) -> pd.DataFrame:
    """Posterior summary table with columns :data:`SUMMARY_COLUMNS`.

    ``draws`` is either a :class:`~krongp.sampler.PosteriorDraws`, in which
    case ``names`` selects parameters (all by default), or an array of shape
    ``(chains, samples, k)`` labelled by ``names``. Quantities that are
    constant across all draws get ``n.eff`` and ``Rhat`` of NaN and a
    ``degenerate`` flag.
    """
    if hasattr(draws, "values") and hasattr(draws, "names"):
        if names is None:
            names, values = list(draws.names), draws.values
        else:
            names = list(names)
            values = np.stack([draws.get(n) for n in names], axis=-1)
    else:
        values = np.asarray(draws, dtype=float)
        if values.ndim == 2:
            values = values[None]
    if values.size == 0:
        raise ValueError("no draws to summarize")
    if names is None:
        names = [f"theta[{i + 1}]" for i in range(values.shape[2])]
    rows = []
    degenerate = []
    for j in range(values.shape[2]):
        x = values[:, :, j]
        flat = x.ravel()
        try:
            r, e, deg = rhat(x), ess(x), False
        except DegenerateChainError:
            r, e, deg = np.nan, np.nan, True
        rows.append(
            [
                flat.mean(),
                flat.std(ddof=1) if flat.size > 1 else 0.0,
                np.quantile(flat, 0.025),
                np.quantile(flat, 0.975),
                e,
                r,
            ]
        )
        degenerate.append(deg)
    table = pd.DataFrame(rows, index=list(names), columns=SUMMARY_COLUMNS)
    table["degenerate"] = degenerate
    return table


def check_diagnostics(table: pd.DataFrame, divergence_rate: float, rhat_max: float = 1.1, min_ess: float = 100.0) -> list[str]:
    """Human-readable warnings; empty when the run looks healthy."""
    out = []
    live = table[~table["degenerate"]] if "degenerate" in table else table
    bad_r = live.index[live["Rhat"] > rhat_max].tolist()
    if bad_r:
        out.append(f"Rhat above {rhat_max} for: {', '.join(bad_r)}")
    low = live.index[live["n.eff"] < min_ess].tolist()
    if low:
        out.append(f"n.eff below {min_ess:g} for: {', '.join(low)}")
    if divergence_rate > 0.01:
        out.append(f"divergent transitions: {100 * divergence_rate:.1f}% of draws")
    for msg in out:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return out
