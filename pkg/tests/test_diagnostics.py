import numpy as np
import pandas as pd
import pytest

from krongp.diagnostics import SUMMARY_COLUMNS, DegenerateChainError, check_diagnostics, ess, rhat, summarize
from krongp.sampler import PosteriorDraws


def _ar1(rng, phi, chains, n):
    x = np.empty((chains, n))
    x[:, 0] = rng.normal(size=chains) / np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + rng.normal(size=chains)
    return x


def _draws(values, names):
    c, s, _ = values.shape
    z = np.zeros((c, s))
    return PosteriorDraws(names, values, z, z.astype(bool), z.astype(int), z.astype(int), z, np.ones(c), np.ones((c, 1)))


class TestRhat:
    def test_same_distribution(self, rng):
        assert rhat(rng.normal(size=(4, 500))) < 1.05

    def test_offset_chains(self, rng):
        x = rng.normal(size=(2, 500))
        x[1] += 10
        assert rhat(x) > 1.5

    def test_detects_trend_within_chain(self):
        # split halves disagree even though the chain is alone
        x = np.linspace(0, 10, 400)[None] + np.random.default_rng(0).normal(size=(1, 400))
        assert rhat(x) > 1.5

    def test_degenerate(self):
        with pytest.raises(DegenerateChainError, match="degenerate chain"):
            rhat(np.ones((4, 100)))

    def test_too_short(self):
        with pytest.raises(ValueError):
            rhat(np.zeros((2, 3)))


class TestESS:
    def test_iid(self, rng):
        x = rng.normal(size=(4, 1000))
        assert abs(ess(x) - 4000) < 0.3 * 4000

    @pytest.mark.parametrize("phi", [0.5, 0.8])
    def test_ar1(self, rng, phi):
        # integrated autocorrelation time of AR(1) is (1 + phi) / (1 - phi)
        x = _ar1(rng, phi, 4, 5000)
        expect = x.size * (1 - phi) / (1 + phi)
        assert abs(ess(x) - expect) < 0.2 * expect

    def test_antithetic_exceeds_draw_count(self, rng):
        x = _ar1(rng, -0.5, 4, 2000)
        assert ess(x) > x.size

    def test_rank_normalization_handles_heavy_tails(self, rng):
        x = rng.standard_cauchy(size=(4, 1000))
        assert abs(ess(x) - 4000) < 0.3 * 4000

    def test_degenerate(self):
        with pytest.raises(DegenerateChainError):
            ess(np.full((2, 10), 3.0))


class TestSummarize:
    def test_columns_in_order(self, rng):
        t = summarize(rng.normal(size=(2, 100, 2)), ["a", "b"])
        assert list(t.columns[:6]) == ["mean", "sd", "l-95% CI", "u-95% CI", "n.eff", "Rhat"]
        assert list(t.columns[:6]) == SUMMARY_COLUMNS
        assert list(t.index) == ["a", "b"]

    def test_normal_interval(self, rng):
        t = summarize(rng.normal(size=(4, 5000, 1)))
        assert t["l-95% CI"].iloc[0] == pytest.approx(-1.96, abs=0.1)
        assert t["u-95% CI"].iloc[0] == pytest.approx(1.96, abs=0.1)

    def test_constant_parameter(self, rng):
        values = np.stack([np.ones((2, 50)), rng.normal(size=(2, 50))], axis=-1)
        t = summarize(_draws(values, ["fixed", "free"]))
        assert t.loc["fixed", "mean"] == 1.0 and t.loc["fixed", "sd"] == 0.0
        assert bool(t.loc["fixed", "degenerate"]) and not bool(t.loc["free", "degenerate"])
        assert np.isnan(t.loc["fixed", "Rhat"])

    def test_selects_names(self, rng):
        d = _draws(rng.normal(size=(2, 50, 3)), ["a", "b", "c"])
        assert list(summarize(d, ["c", "a"]).index) == ["c", "a"]

    def test_unknown_name(self, rng):
        d = _draws(rng.normal(size=(2, 50, 1)), ["a"])
        with pytest.raises(KeyError):
            summarize(d, ["zzz"])

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize(np.zeros((1, 0, 0)))

    def test_matches_numpy(self, rng):
        x = rng.gamma(2.0, size=(3, 200, 1))
        t = summarize(x)
        assert t["mean"].iloc[0] == pytest.approx(x.mean())
        assert t["sd"].iloc[0] == pytest.approx(x.std(ddof=1))
        assert t["l-95% CI"].iloc[0] == pytest.approx(np.percentile(x, 2.5))


class TestCheckDiagnostics:
    def test_healthy(self):
        t = pd.DataFrame({"n.eff": [500.0], "Rhat": [1.001], "degenerate": [False]}, index=["a"])
        assert check_diagnostics(t, 0.0) == []

    def test_warnings(self):
        t = pd.DataFrame({"n.eff": [5.0], "Rhat": [1.5], "degenerate": [False]}, index=["a"])
        with pytest.warns(RuntimeWarning):
            msgs = check_diagnostics(t, 0.05)
        assert len(msgs) == 3
