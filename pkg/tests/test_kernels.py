import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krongp.kernels import KernelSpec, component_matrix, linear, output_cov_factor, se_ard
from krongp.kron import dense_kron


class TestSEARD:
    def test_unit_diagonal(self, rng):
        X = rng.normal(size=(6, 2))
        K = se_ard(X, [0.7, 1.3])
        np.testing.assert_array_equal(np.diag(K), 1.0)
        np.testing.assert_allclose(K, K.T)

    def test_closed_form(self):
        K = se_ard(np.array([[0.0], [1.0]]), [1.0])
        assert K[0, 1] == pytest.approx(0.6065306597126334, abs=1e-12)

    def test_large_lengthscale_limit(self):
        X = np.linspace(-5, 5, 11)[:, None]
        assert np.max(np.abs(se_ard(X, [1e6]) - 1.0)) < 1e-9

    @pytest.mark.parametrize("rho", [[0.0], [-1.0], [np.inf]])
    def test_bad_lengthscale(self, rho):
        with pytest.raises(ValueError):
            se_ard(np.zeros((2, 1)), rho)

    def test_wrong_number_of_lengthscales(self):
        with pytest.raises(ValueError):
            se_ard(np.zeros((2, 2)), [1.0])

    def test_translation_invariant(self, rng):
        X = rng.normal(size=(5, 2))
        np.testing.assert_allclose(se_ard(X, [1.0, 2.0]), se_ard(X + 3.7, [1.0, 2.0]), atol=1e-14)

    def test_ard_ignores_long_dimension(self, rng):
        X = rng.normal(size=(5, 2))
        np.testing.assert_allclose(se_ard(X, [0.8, 1e8]), se_ard(X[:, :1], [0.8]), atol=1e-12)


class TestLinear:
    def test_origin(self):
        assert linear(np.zeros((1, 1)))[0, 0] == 1.0

    def test_identity_rows(self):
        np.testing.assert_array_equal(linear(np.eye(2)), [[2.0, 1.0], [1.0, 2.0]])

    def test_intercept_only(self):
        np.testing.assert_array_equal(linear(np.zeros((3, 0))), np.ones((3, 3)))

    def test_not_translation_invariant(self, rng):
        X = rng.normal(size=(4, 1))
        assert np.max(np.abs(linear(X) - linear(X + 1.0))) > 0.1


class TestComponentMatrix:
    def test_random_effect_shifts_diagonal(self):
        spec = KernelSpec(add_random_effect=True)
        K = component_matrix(spec, np.array([[0.0], [1.0], [2.5]]), rho=[1.0], sigma2_re=0.5, jitter=0.0)
        np.testing.assert_allclose(np.diag(K), 1.5)

    def test_without_random_effect(self, rng):
        X = rng.normal(size=(4, 1))
        K = component_matrix(KernelSpec(), X, rho=[0.9], sigma2_re=0.5, jitter=0.0)
        np.testing.assert_array_equal(K, se_ard(X, [0.9]))

    def test_jitter(self, rng):
        X = rng.normal(size=(3, 1))
        K = component_matrix(KernelSpec(), X, rho=[1.0], jitter=1e-6)
        np.testing.assert_allclose(np.diag(K), 1.0 + 1e-6)

    def test_active_columns(self, rng):
        X = rng.normal(size=(4, 3))
        K = component_matrix(KernelSpec(active_columns=(0, 2)), X, rho=[1.0, 2.0], jitter=0.0)
        np.testing.assert_allclose(K, se_ard(X[:, [0, 2]], [1.0, 2.0]))

    def test_linear_rejects_lengthscales(self):
        with pytest.raises(ValueError):
            component_matrix(KernelSpec(kind="linear"), np.zeros((2, 1)), rho=[1.0])

    def test_se_needs_lengthscales(self):
        with pytest.raises(ValueError):
            component_matrix(KernelSpec(), np.zeros((2, 1)))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            KernelSpec(kind="matern")

    def test_se_needs_a_column(self):
        with pytest.raises(ValueError):
            KernelSpec().n_lengthscales(0)

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        n=st.integers(1, 8),
        p=st.integers(1, 3),
        kind=st.sampled_from(["se_ard", "linear"]),
        s2=st.floats(0.0, 3.0),
    )
    def test_psd(self, seed, n, p, kind, s2):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-3, 3, size=(n, p))
        rho = rng.uniform(0.1, 5.0, size=p) if kind == "se_ard" else None
        spec = KernelSpec(kind=kind, add_random_effect=True)
        K = component_matrix(spec, X, rho=rho, sigma2_re=s2, jitter=0.0)
        np.testing.assert_allclose(K, K.T, atol=1e-12)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * max(1.0, np.abs(K).max())

    def test_spherical_noise_does_not_factor(self):
        # (K1 + s2 I) kron K2 is not K1 kron K2 + s2 I unless K2 is a multiple of I
        K1 = np.array([[1.0, 0.3], [0.3, 1.0]])
        K2 = np.array([[1.0, 0.8], [0.8, 1.0]])
        lhs = np.kron(K1 + np.eye(2), K2)
        rhs = np.kron(K1, K2) + np.eye(4)
        assert np.max(np.abs(lhs - rhs)) > 0.1
        K2 = 2.0 * np.eye(2)
        np.testing.assert_allclose(np.kron(K1 + 0.5 * np.eye(2), K2), np.kron(K1, K2) + np.eye(4))


class TestOutputCovFactor:
    def test_single_output(self):
        np.testing.assert_array_equal(output_cov_factor([2.0], np.eye(1)), [[2.0]])

    def test_independent(self):
        np.testing.assert_array_equal(output_cov_factor([1.0, 1.0], np.eye(2)), np.eye(2))

    def test_gram(self):
        C = output_cov_factor([1.0, 2.0], np.array([[1.0, 0.0], [0.6, 0.8]]))
        np.testing.assert_allclose(C @ C.T, [[1.0, 1.2], [1.2, 4.0]], atol=1e-14)

    def test_rejects_non_unit_rows(self):
        with pytest.raises(ValueError):
            output_cov_factor([1.0, 1.0], np.array([[1.0, 0.0], [0.5, 0.5]]))

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            output_cov_factor([0.0], np.eye(1))

    def test_dense_product(self):
        C = output_cov_factor([1.0, 2.0], np.array([[1.0, 0.0], [0.6, 0.8]]))
        K = dense_kron([C @ C.T, np.eye(2)])
        assert K[0, 2] == pytest.approx(1.2)
