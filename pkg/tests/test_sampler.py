import numpy as np
import pytest

from krongp.diagnostics import ess
from krongp.sampler import (
    DualAveraging,
    InitializationError,
    PosteriorDraws,
    SamplerSettings,
    WindowedVariance,
    _Chain,
    _State,
    nuts_sample,
    read_draws,
    write_draws,
)

from targets import Gaussian, correlated_cov, never_finite


@pytest.fixture(scope="module")
def normal_1d():
    return nuts_sample(Gaussian([0.0], [[1.0]]), 1, SamplerSettings(chains=4, warmup=500, samples=500, seed=3, threads=1))


@pytest.fixture(scope="module")
def corr_2d():
    target = Gaussian([1.0, -2.0], [[1.0, 0.8], [0.8, 1.0]])
    return target, nuts_sample(target, 2, SamplerSettings(chains=4, warmup=500, samples=1000, seed=11, threads=1))


class TestCalibration:
    def test_standard_normal(self, normal_1d):
        x = normal_1d.values[..., 0]
        assert abs(x.mean()) < 0.1
        assert 0.8 <= x.var() <= 1.2

    def test_no_divergences(self, normal_1d):
        assert normal_1d.divergence_rate() < 0.001

    def test_correlation(self, corr_2d):
        _, draws = corr_2d
        x = draws.values.reshape(-1, 2)
        assert abs(np.corrcoef(x.T)[0, 1] - 0.8) < 0.05

    def test_moments_within_mc_error(self, corr_2d):
        target, draws = corr_2d
        for j in range(2):
            x = draws.values[..., j]
            sd = np.sqrt(target.cov[j, j])
            assert abs(x.mean() - target.mean[j]) < 3 * sd / np.sqrt(ess(x))
            # second central moment: the draws of (x - mu)^2 have sd sqrt(2) * var
            sq = (x - target.mean[j]) ** 2
            assert abs(sq.mean() - target.cov[j, j]) < 3 * np.sqrt(2) * target.cov[j, j] / np.sqrt(ess(sq))

    def test_stats_shapes(self, corr_2d):
        _, draws = corr_2d
        assert draws.values.shape == (4, 1000, 2)
        assert draws.tree_depth.shape == (4, 1000)
        assert np.all(draws.tree_depth >= 1) and np.all(draws.tree_depth <= 10)
        assert np.all((draws.accept_stat >= 0) & (draws.accept_stat <= 1))
        assert draws.step_size.shape == (4,)


class TestDeterminism:
    def test_same_seed_bitwise(self):
        target = Gaussian([0.0, 0.0], correlated_cov(2, 0.3))
        s = SamplerSettings(chains=2, warmup=50, samples=50, seed=5, threads=1)
        a = nuts_sample(target, 2, s)
        b = nuts_sample(target, 2, s)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.step_size, b.step_size)

    def test_worker_count_irrelevant(self):
        target = Gaussian([0.0, 0.0], correlated_cov(2, 0.3))
        a = nuts_sample(target, 2, SamplerSettings(chains=2, warmup=30, samples=30, seed=5, threads=1))
        b = nuts_sample(target, 2, SamplerSettings(chains=2, warmup=30, samples=30, seed=5, threads=2))
        assert np.array_equal(a.values, b.values)

    def test_chains_use_distinct_streams(self):
        target = Gaussian([0.0], [[1.0]])
        d = nuts_sample(target, 1, SamplerSettings(chains=2, warmup=20, samples=20, seed=0, threads=1))
        assert not np.array_equal(d.values[0], d.values[1])

    def test_different_seed_differs(self):
        target = Gaussian([0.0], [[1.0]])
        a = nuts_sample(target, 1, SamplerSettings(chains=1, warmup=20, samples=20, seed=0, threads=1))
        b = nuts_sample(target, 1, SamplerSettings(chains=1, warmup=20, samples=20, seed=1, threads=1))
        assert not np.array_equal(a.values, b.values)


class TestLeapfrog:
    def test_energy_error_second_order(self):
        target = Gaussian(np.zeros(3), correlated_cov(3, 0.6, [1.0, 2.0, 0.5]))
        chain = _Chain(target, 3, SamplerSettings(), np.random.default_rng(0))
        q = np.array([0.3, -1.0, 0.2])
        lp, g = target(q)
        z0 = _State(q, np.array([0.5, 0.1, -0.7]), g, lp)
        h0 = chain.hamiltonian(z0)
        errors = []
        for eps in (0.1, 0.05, 0.025):
            z = z0
            for _ in range(int(round(0.8 / eps))):
                z = chain.leapfrog(z, eps)
            errors.append(abs(chain.hamiltonian(z) - h0))
        ratios = np.array(errors[:-1]) / np.array(errors[1:])
        assert np.all((ratios > 3.0) & (ratios < 5.0))

    def test_reversible(self):
        target = Gaussian(np.zeros(2), correlated_cov(2, 0.5))
        chain = _Chain(target, 2, SamplerSettings(), np.random.default_rng(0))
        q = np.array([0.4, -0.2])
        lp, g = target(q)
        z = _State(q, np.array([1.0, 0.3]), g, lp)
        fwd = chain.leapfrog(chain.leapfrog(z, 0.1), 0.1)
        back = chain.leapfrog(chain.leapfrog(_State(fwd.q, -fwd.p, fwd.grad, fwd.lp), 0.1), 0.1)
        np.testing.assert_allclose(back.q, q, atol=1e-12)


class TestAdaptation:
    def test_dual_averaging_converges(self):
        # acceptance falls with step size as exp(-eps); the fixed point is log(1/0.8)
        da = DualAveraging(0.8)
        da.restart(1.0)
        eps = 1.0
        for _ in range(2000):
            eps = da.update(np.exp(-eps))
        assert da.final() == pytest.approx(np.log(1 / 0.8), rel=0.05)

    def test_window_schedule(self):
        w = WindowedVariance(1, 500)
        ends = [i for i in range(500) if w.learn(np.zeros(1)) is not None]
        assert ends == [99, 149, 249, 449]

    def test_short_warmup_schedule(self):
        w = WindowedVariance(1, 100)
        ends = [i for i in range(100) if w.learn(np.zeros(1)) is not None]
        assert ends == [89]

    def test_metric_learns_scales(self):
        target = Gaussian(np.zeros(2), np.diag([100.0, 0.01]))
        d = nuts_sample(target, 2, SamplerSettings(chains=1, warmup=300, samples=10, seed=2, threads=1))
        ratio = d.inv_metric[0, 0] / d.inv_metric[0, 1]
        assert 1e3 < ratio < 1e5


class TestErrors:
    def test_initialization_failure(self):
        with pytest.raises(InitializationError):
            nuts_sample(never_finite, 2, SamplerSettings(chains=1, warmup=1, samples=1, threads=1))

    def test_bad_supplied_init(self):
        with pytest.raises(InitializationError):
            nuts_sample(never_finite, 1, SamplerSettings(chains=1, warmup=1, samples=1, threads=1), init=[np.zeros(1)])

    @pytest.mark.parametrize(
        "kwargs",
        [{"chains": 0}, {"samples": 0}, {"warmup": -1}, {"target_accept": 1.0}, {"target_accept": 0.0}, {"max_tree_depth": 0}],
    )
    def test_settings_validation(self, kwargs):
        with pytest.raises(ValueError):
            SamplerSettings(**kwargs)

    def test_divergences_reported_not_raised(self):
        def cliff(q):
            if abs(q[0]) > 1.0:
                return -np.inf, np.zeros(1)
            return -0.5 * float(q[0] ** 2), -q

        d = nuts_sample(cliff, 1, SamplerSettings(chains=1, warmup=50, samples=200, seed=0, threads=1, init_radius=0.5))
        assert np.all(np.abs(d.values) <= 1.0)

    def test_unknown_name(self, normal_1d):
        with pytest.raises(KeyError, match="unknown parameter"):
            normal_1d.get("nope")


class TestPersistence:
    def test_round_trip(self, tmp_path, corr_2d):
        _, draws = corr_2d
        paths = write_draws(draws, tmp_path)
        assert [p.name for p in paths] == [f"draws_chain{c}.csv" for c in range(1, 5)]
        back = read_draws(paths)
        assert back.names == draws.names
        np.testing.assert_array_equal(back.values, draws.values)
        np.testing.assert_array_equal(back.divergent, draws.divergent)
        np.testing.assert_array_equal(back.tree_depth, draws.tree_depth)

    def test_header(self, tmp_path, normal_1d):
        path = write_draws(normal_1d, tmp_path)[0]
        header = path.read_text().splitlines()[0].split(",")
        assert header == ["lp__", "accept_stat__", "stepsize__", "treedepth__", "n_leapfrog__", "divergent__", "theta[1]"]
        assert len(path.read_text().splitlines()) == 501
