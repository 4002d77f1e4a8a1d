import json

import numpy as np
import pytest

from krongp.grid import BERNOULLI, GAUSSIAN, cell_covariates, ingest_long_csv
from krongp.simulate import SimConfig, latent_functions, simulate_dataset, write_dataset


class TestLatentFunctions:
    def test_origin(self):
        assert [float(v) for v in latent_functions(0.0, 0.0, 0.0)] == [1.0, -2.0, -1.0, -2.0]

    def test_even_in_x2(self, rng):
        x1, x2, x3 = rng.uniform(-5, 5, (3, 50))
        a = latent_functions(x1, x2, x3)
        b = latent_functions(x1, -x2, x3)
        np.testing.assert_allclose(a[0], b[0])
        np.testing.assert_allclose(a[1], b[1])

    def test_ones(self):
        f1, f2, f3, f4 = latent_functions(1.0, 1.0, 1.0)
        assert f1 == pytest.approx(np.exp(0.15) - 0.6 + np.sin(3.0), abs=1e-14)
        assert f2 == pytest.approx(-np.exp(-0.15) + 3.0 - np.cos(3.0), abs=1e-14)
        assert f3 == -f1 and f4 == f2


class TestSimulateDataset:
    def test_default_size(self):
        design, y, truth = simulate_dataset(SimConfig())
        assert design.sizes == (20, 7, 3)
        assert y.values.size == 1680 and y.observed.all()
        assert design.output_families == [GAUSSIAN, GAUSSIAN, BERNOULLI, BERNOULLI]
        assert truth.latent.shape == (4, 420)

    def test_covariates_in_range_and_shared(self):
        design, _, truth = simulate_dataset(SimConfig(seed=4))
        for comp in design.components:
            assert np.all((comp.X >= -5) & (comp.X <= 5))
        i1, i2, i3 = cell_covariates(design)
        x = [c.X[:, 0] for c in design.components]
        np.testing.assert_allclose(truth.latent, np.stack(latent_functions(x[0][i1], x[1][i2], x[2][i3])))

    def test_zero_noise(self):
        _, y, truth = simulate_dataset(SimConfig(noise_sd=0.0, seed=2))
        np.testing.assert_array_equal(y.values[:2], truth.latent[:2])
        np.testing.assert_array_equal(y.values[2:], (truth.latent[2:] > 0).astype(float))

    def test_sign_antisymmetry(self):
        _, y, truth = simulate_dataset(SimConfig(noise_sd=0.0, seed=5))
        nonzero = truth.latent[0] != 0
        np.testing.assert_array_equal(y.values[2][nonzero], 1.0 - (truth.latent[0][nonzero] > 0))

    def test_noise_level(self):
        _, y, truth = simulate_dataset(SimConfig(seed=0))
        resid = y.values[:2] - truth.latent[:2]
        for k in range(2):
            assert 0.09 <= resid[k].std() <= 0.11
        # the binary outputs threshold the same noisy latents
        np.testing.assert_array_equal(y.values[2:], (truth.noisy[2:] > 0).astype(float))

    def test_deterministic(self):
        _, a, _ = simulate_dataset(SimConfig(seed=9))
        _, b, _ = simulate_dataset(SimConfig(seed=9))
        _, c, _ = simulate_dataset(SimConfig(seed=10))
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    @pytest.mark.parametrize("kwargs", [{"n1": 0}, {"noise_sd": -1.0}, {"covariate_range": (1.0, 1.0)}])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)


class TestWriteDataset:
    def test_round_trip_through_ingestion(self, tmp_path):
        cfg = SimConfig(n1=4, n2=3, n3=2, seed=1)
        csv, schema = write_dataset(cfg, tmp_path)
        assert len(csv.read_text().splitlines()) == 1 + 4 * 24
        json.loads(schema.read_text())
        design, y = ingest_long_csv(csv, schema)
        d0, y0, _ = simulate_dataset(cfg)
        np.testing.assert_array_equal(y.values, y0.values)
        for a, b in zip(design.components, d0.components):
            np.testing.assert_array_equal(a.X, b.X)

    def test_default_row_count(self, tmp_path):
        csv, _ = write_dataset(SimConfig(), tmp_path)
        assert len(csv.read_text().splitlines()) == 1681

    def test_byte_identical(self, tmp_path):
        a, _ = write_dataset(SimConfig(seed=7), tmp_path / "a")
        b, _ = write_dataset(SimConfig(seed=7), tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
