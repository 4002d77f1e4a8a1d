"""Cross-validation, predictive losses and paired rank tests between methods."""

from __future__ import annotations

import itertools
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm, rankdata

from .grid import GAUSSIAN, GridDesign, OutcomeMatrix
from .probit import log_ndtr
from .sampler import SamplerSettings

logger = logging.getLogger(__name__)

EXACT_MAX_N = 12
METHOD_LABELS = {"gp.f": "GP.f", "gp.m": "GP.m", "lin.f": "LIN.f", "lin.m": "LIN.m"}


# --------------------------------------------------------------------------
# folds and losses


def cv_folds(design: GridDesign, y: OutcomeMatrix, k: int = 10, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the observed entries of ``y`` uniformly at random into ``k`` folds.

    Returns ``(train, test)`` boolean masks shaped like ``y.values``; each
    observed entry is in exactly one test mask and unobserved entries are in
    none.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    y.validate(design)
    obs = np.flatnonzero(y.observed.ravel())
    if k > obs.size:
        raise ValueError(f"cannot make {k} folds from {obs.size} observed entries")
    perm = np.random.default_rng(seed).permutation(obs)
    out = []
    for part in np.array_split(perm, k):
        test = np.zeros(y.observed.size, dtype=bool)
        test[part] = True
        test = test.reshape(y.observed.shape)
        out.append((y.observed & ~test, test))
    return out


def loss_gaussian(y, f_pm):
    """Absolute error ``|y - f_pm|``."""
    return np.abs(np.asarray(y, dtype=float) - np.asarray(f_pm, dtype=float))


def loss_bernoulli(y, f_pm):
    """Log probability of the wrong label under a probit link, ``log Phi(-f_pm (2y - 1))``."""
    y = np.asarray(y, dtype=float)
    return log_ndtr(-np.asarray(f_pm, dtype=float) * (2.0 * y - 1.0))


@dataclass
class LossRecord:
    method: str
    output: str
    cell: int
    loss: float
    family: str
    fold: int = -1


# --------------------------------------------------------------------------
# Wilcoxon signed-rank test


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    r: float
    w_plus: float
    w_minus: float
    n: int
    method: str


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    n = ranks.size
    signs = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
    totals = signs @ ranks
    centre = ranks.sum() / 2.0
    dev = abs(w_plus - centre)
    return float(np.mean(np.abs(totals - centre) >= dev - 1e-9))


def _normal_p(ranks: np.ndarray, w_plus: float) -> float:
    n = ranks.size
    _, ties = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(ties**3 - ties) / 48.0
    if var <= 0:
        return 1.0
    dev = abs(w_plus - n * (n + 1) / 4.0)
    z = max(dev - 0.5, 0.0) / math.sqrt(var)  # continuity correction
    return float(min(1.0, 2.0 * norm.sf(z)))


def wilcoxon_paired(a, b, method: str = "auto") -> WilcoxonResult:
    """Wilcoxon signed-rank test of ``a - b`` with the rank-biserial correlation.

    Zero differences are dropped. ``method`` is ``"exact"`` (enumerate all
    sign assignments), ``"normal"`` (tie-corrected normal approximation with
    continuity correction) or ``"auto"``: exact up to 12 pairs. ``r`` is
    ``(W+ - W-) / (W+ + W-)``, so ``r = -1`` when ``a`` is smaller on every
    pair.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D arrays of equal length")
    d = a - b
    if not np.all(np.isfinite(d)):
        raise ValueError("differences must be finite")
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("all differences zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if method == "auto":
        method = "exact" if d.size <= EXACT_MAX_N else "normal"
    if method == "exact":
        if d.size > 25:
            raise ValueError("exact enumeration is limited to 25 pairs")
        p = _exact_p(ranks, w_plus)
    elif method == "normal":
        p = _normal_p(ranks, w_plus)
    else:
        raise ValueError(f"unknown method {method!r}")
    r = (w_plus - w_minus) / (w_plus + w_minus)
    return WilcoxonResult(p, r, w_plus, w_minus, int(d.size), method)


# --------------------------------------------------------------------------
# comparison matrices


@dataclass
class ComparisonMatrix:
    """Pairwise tests among methods for one output.

    ``p[i, j]`` (``i > j``) is the corrected p-value and ``r[i, j]``
    (``i < j``) the rank-biserial correlation of method ``i`` against method
    ``j``; diagonals are NaN.
    """

    methods: list[str]
    p: np.ndarray
    r: np.ndarray
    correction: float

    def to_frame(self) -> pd.DataFrame:
        """Triangular layout: p below the diagonal, r above, ``-`` on it."""
        m = len(self.methods)
        cells = [["-"] * m for _ in range(m)]
        for i, j in itertools.product(range(m), range(m)):
            if i > j:
                cells[i][j] = self.p[i, j]
            elif i < j:
                cells[i][j] = self.r[i, j]
        return pd.DataFrame(cells, index=self.methods, columns=self.methods)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, correction: float = 4.0) -> "ComparisonMatrix":
        methods = [str(c) for c in frame.columns]
        m = len(methods)
        p = np.full((m, m), np.nan)
        r = np.full((m, m), np.nan)
        for i, j in itertools.product(range(m), range(m)):
            if i > j:
                p[i, j] = float(frame.iat[i, j])
            elif i < j:
                r[i, j] = float(frame.iat[i, j])
        return cls(methods, p, r, correction)


def _aligned(losses: Mapping[str, object]) -> dict[str, np.ndarray]:
    series = {}
    for name, v in losses.items():
        series[name] = v if isinstance(v, pd.Series) else pd.Series(np.asarray(v, dtype=float))
    index = next(iter(series.values())).index
    for name, s in series.items():
        if len(s) != len(index) or not s.index.sort_values().equals(index.sort_values()):
            raise ValueError(f"loss set for {name!r} is not paired with the others")
    return {name: s.loc[index].to_numpy(dtype=float) for name, s in series.items()}


def compare_methods(losses: Mapping[str, object], correction: float = 4.0) -> ComparisonMatrix:
    """Pairwise Wilcoxon tests; p-values Bonferroni-scaled by ``correction`` and capped at 1.

    ``losses`` maps method name to losses; pandas Series are paired by index,
    plain arrays by position.
    """
    if len(losses) < 2:
        raise ValueError("need at least two methods to compare")
    aligned = _aligned(losses)
    methods = list(aligned)
    m = len(methods)
    p = np.full((m, m), np.nan)
    r = np.full((m, m), np.nan)
    for i, j in itertools.combinations(range(m), 2):
        # row method against column method
        res = wilcoxon_paired(aligned[methods[j]], aligned[methods[i]])
        p[j, i] = min(1.0, correction * res.p_value)
        r[i, j] = -res.r
    return ComparisonMatrix(methods, p, r, correction)


def format_comparison(cm: ComparisonMatrix, digits: int = 3) -> str:
    """Aligned text table; p-values below ``10**-digits`` print as ``<.001``."""
    floor = 10.0**-digits

    def fmt_p(v):
        if not np.isfinite(v):
            return "NA"
        if v < floor:
            return "<" + f"{floor:.{digits}f}".lstrip("0")
        return f"{v:.{digits}f}"

    frame = cm.to_frame()
    rows = [[""] + list(cm.methods)]
    for i, name in enumerate(cm.methods):
        row = [name]
        for j in range(len(cm.methods)):
            if i == j:
                row.append("-")
            elif i > j:
                row.append(fmt_p(frame.iat[i, j]))
            else:
                v = frame.iat[i, j]
                row.append(f"{v:.{digits}f}" if np.isfinite(v) else "NA")
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows)


# --------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentSettings:
    k: int = 10
    seed: int = 0
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    correction: float = 4.0
    folds: Optional[list[int]] = None  # subset of fold indices to run; all by default
    standardized: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least 2 folds")


@dataclass
class ExperimentReport:
    methods: list[str]
    losses: pd.DataFrame
    comparisons: dict[str, ComparisonMatrix]
    summaries: dict[str, pd.DataFrame]
    manifest: dict

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for output, cm in self.comparisons.items():
            path = out / f"comparison_{output}.csv"
            cm.to_frame().to_csv(path, lineterminator="\n", float_format="%.10g")
            paths.append(path)
        path = out / "losses.csv"
        self.losses.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
        paths.append(path)
        for method, table in self.summaries.items():
            path = out / f"summary_fold1_{method}.csv"
            table.to_csv(path, lineterminator="\n", float_format="%.10g")
            paths.append(path)
        path = out / "manifest.json"
        path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(path)
        return paths


def read_report(bundle_dir) -> dict[str, ComparisonMatrix]:
    """Comparison matrices of a written report bundle, keyed by output name."""
    bundle = Path(bundle_dir)
    manifest_path = bundle / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} not found")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    out = {}
    for output in manifest["outputs"]:
        path = bundle / f"comparison_{output}.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        frame = pd.read_csv(path, index_col=0, keep_default_na=False)
        out[output] = ComparisonMatrix.from_frame(frame, manifest.get("correction", 4.0))
    return out


def fold_losses(design: GridDesign, y: OutcomeMatrix, test: np.ndarray, f_mean: np.ndarray) -> list[tuple[str, int, float, str]]:
    """``(output, cell, loss, family)`` for every test entry."""
    rows = []
    for k, (name, fam) in enumerate(zip(design.output_names, design.output_families)):
        cells = np.flatnonzero(test[k])
        if fam == GAUSSIAN:
            vals = loss_gaussian(y.values[k, cells], f_mean[k, cells])
        else:
            vals = loss_bernoulli(y.values[k, cells], f_mean[k, cells])
        rows += [(name, int(c), float(v), fam) for c, v in zip(cells, vals)]
    return rows


def run_experiment(
    design: GridDesign,
    y: OutcomeMatrix,
    methods: Sequence[str] = ("gp.f", "lin.f"),
    settings: ExperimentSettings = ExperimentSettings(),
) -> ExperimentReport:
    """Cross-validate each method and compare their held-out losses.

    For every fold the test entries are marked missing, each method is fit
    to the rest, and the posterior mean of the latent field at the test
    entries is scored. Failed fits are logged and recorded in the manifest;
    the remaining folds still run.
    """
    from .fit import fit_model  # local import keeps the module importable without numba warm-up

    from . import __version__

    methods = [m.lower() for m in methods]
    if len(set(methods)) != len(methods) or len(methods) < 1:
        raise ValueError("methods must be distinct and nonempty")
    folds = cv_folds(design, y, settings.k, settings.seed)
    run = settings.folds if settings.folds is not None else list(range(settings.k))
    records = []
    summaries = {}
    failures = []
    for fi in run:
        train, test = folds[fi]
        y_train = OutcomeMatrix(y.values, train)
        sampler = replace(settings.sampler, seed=settings.seed + 1000 * (fi + 1))
        for method in methods:
            logger.info("fold %d/%d, %s", fi + 1, settings.k, method)
            try:
                res = fit_model(design, y_train, method, sampler, standardized=settings.standardized)
            except Exception as exc:  # noqa: BLE001 - a failed fit must not stop the experiment
                logger.warning("fold %d, %s failed: %s", fi + 1, method, exc)
                failures.append({"fold": fi + 1, "method": method, "error": str(exc)})
                continue
            f_mean = res.f_mean()
            for output, cell, loss, fam in fold_losses(design, y, test, f_mean):
                records.append(LossRecord(METHOD_LABELS.get(method, method), output, cell, loss, fam, fi + 1))
            if fi == run[0]:
                summaries[METHOD_LABELS.get(method, method)] = res.summary()
    losses = pd.DataFrame([asdict(r) for r in records], columns=["method", "output", "cell", "loss", "family", "fold"])

    comparisons = {}
    labels = [METHOD_LABELS.get(m, m) for m in methods]
    if len(labels) >= 2 and not losses.empty:
        for output in design.output_names:
            sub = losses[losses["output"] == output]
            wide = sub.pivot_table(index="cell", columns="method", values="loss", aggfunc="first")
            wide = wide.reindex(columns=labels).dropna()
            if wide.empty:
                continue
            comparisons[output] = compare_methods({m: wide[m] for m in labels}, settings.correction)

    manifest = {
        "command": "cv",
        "methods": labels,
        "outputs": list(comparisons),
        "k": settings.k,
        "folds_run": [f + 1 for f in run],
        "seed": settings.seed,
        "correction": settings.correction,
        "standardized": settings.standardized,
        "sampler": settings.sampler.to_dict(),
        "failures": failures,
        "versions": {
            "krongp": __version__,
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "python": platform.python_version(),
        },
    }
    return ExperimentReport(labels, losses, comparisons, summaries, manifest)
