import os
import unittest
import numpy as np
from scipy import stats
from bifactorid.estimate import (
    DivergenceError,
    FitResult,
    ProjectionError,
    StemConfig,
    complete_data_gradient,
    complete_data_loglik,
    draw_augmented,
    draw_latent,
    fit_covariance,
    fit_dataset,
    project_correlation,
    rmse,
    stem_fit,
)
from bifactorid.fixtures import example, fixture
from bifactorid.moments import implied_covariance_linear
from bifactorid.simulate import rng_stream, simulate

SLOW = os.environ.get("BIFID_SLOW") == "1"


class TestStemConfigMethods(unittest.TestCase):
    """Unit tests for the StemConfig class."""

    def test_defaults(self):
        """Test the default protocol."""
        config = StemConfig()
        self.assertEqual((config.n_iter, config.burn_in), (3000, 1500))
        self.assertEqual(config.m_steps, 5)

    def test_paper_scale(self):
        """Test the long protocol with an override."""
        config = StemConfig.paper_scale(seed=4)
        self.assertEqual((config.n_iter, config.burn_in, config.seed), (10000, 5000, 4))

    def test_bad_burn_in(self):
        """Test a burn-in that leaves no kept iterations."""
        self.assertRaises(ValueError, StemConfig, n_iter=100, burn_in=100)
        self.assertRaises(ValueError, StemConfig, learning_rate=0.0)

    def test_digest(self):
        """Test that the digest follows the settings."""
        self.assertEqual(StemConfig().digest(), StemConfig().digest())
        self.assertNotEqual(StemConfig().digest(), StemConfig(seed=1).digest())


class TestStemHelperMethods(unittest.TestCase):
    """Unit tests for the stochastic EM building blocks."""

    def test_project_correlation(self):
        """Test projection of an indefinite block."""
        block = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        projected = project_correlation(block)
        np.testing.assert_allclose(np.diag(projected), 1.0)
        self.assertTrue(np.all(np.linalg.eigvalsh(projected) > 0))
        np.testing.assert_allclose(projected, projected.T)

    def test_project_correlation_valid(self):
        """Test that a valid correlation matrix is kept."""
        block = np.array([[1.0, 0.3], [0.3, 1.0]])
        np.testing.assert_allclose(project_correlation(block), block)

    def test_project_correlation_nan(self):
        """Test projection of a block with missing entries."""
        self.assertRaises(ProjectionError, project_correlation, np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_draw_augmented_signs(self):
        """Test that augmented draws agree with the responses."""
        rng = rng_stream(0)
        mean = rng.standard_normal((200, 4)) * 3.0
        responses = (rng.random((200, 4)) < 0.5).astype(np.int8)
        draws = draw_augmented(mean, responses, rng)
        self.assertTrue(np.all(draws[responses == 1] >= 0))
        self.assertTrue(np.all(draws[responses == 0] <= 0))
        self.assertTrue(np.all(np.isfinite(draws)))

    def test_draw_augmented_extreme(self):
        """Test augmented draws far in the tail."""
        mean = np.array([[-40.0, 40.0]])
        draws = draw_augmented(mean, np.array([[1, 0]]), rng_stream(1))
        self.assertTrue(np.all(np.isfinite(draws)))

    def test_gradient(self):
        """Test the gradient against central differences at 20 random
        points."""
        rng = rng_stream(2)
        pattern = example("probit-nine").structure.pattern()
        step = 1e-4
        for _ in range(20):
            A = rng.uniform(-2.0, 2.0, pattern.shape) * pattern
            d = rng.normal(size=pattern.shape[0])
            latent = rng.standard_normal((50, pattern.shape[1]))
            augmented = rng.standard_normal((50, pattern.shape[0])) * 2.0
            grad_a, grad_d = complete_data_gradient(A, d, latent, augmented, pattern)
            numeric_a = np.zeros_like(A)
            for j, k in zip(*np.nonzero(pattern)):
                up, down = A.copy(), A.copy()
                up[j, k] += step
                down[j, k] -= step
                numeric_a[j, k] = (
                    complete_data_loglik(up, d, latent, augmented)
                    - complete_data_loglik(down, d, latent, augmented)
                ) / (2 * step)
            numeric_d = np.zeros_like(d)
            for j in range(d.size):
                up, down = d.copy(), d.copy()
                up[j] += step
                down[j] -= step
                numeric_d[j] = (
                    complete_data_loglik(A, up, latent, augmented)
                    - complete_data_loglik(A, down, latent, augmented)
                ) / (2 * step)
            np.testing.assert_allclose(grad_a, numeric_a, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(grad_d, numeric_d, rtol=1e-6, atol=1e-9)
            self.assertTrue(np.all(grad_a[~pattern] == 0.0))

    def test_draw_augmented_conditional(self):
        """Test augmented draws against the truncated normal they should
        follow."""
        n = 50000
        for mean, response in ((0.7, 1), (0.7, 0), (-1.5, 1), (2.5, 0)):
            draws = draw_augmented(
                np.full((n, 1), mean), np.full((n, 1), response), rng_stream(5, response)
            )[:, 0]
            if response == 1:
                law = stats.truncnorm(-mean, np.inf, loc=mean)
            else:
                law = stats.truncnorm(-np.inf, -mean, loc=mean)
            self.assertAlmostEqual(draws.mean(), law.mean(), delta=5 * law.std() / np.sqrt(n))
            self.assertGreater(stats.kstest(draws, law.cdf).pvalue, 1e-4)

    def test_draw_latent_conditional(self):
        """Test latent draws against the conditional normal of the factors
        given one augmented response vector."""
        params = fixture(5)
        A, d, cov = params.loadings, params.intercepts, params.latent_cov
        z = d + 2.0 * rng_stream(8).standard_normal(params.n_items)
        gain = cov @ A.T @ np.linalg.inv(A @ cov @ A.T + np.eye(params.n_items))
        expected_mean = gain @ (z - d)
        expected_cov = cov - gain @ A @ cov

        n = 40000
        draws = draw_latent(np.tile(z, (n, 1)), A, d, cov, rng_stream(6))
        tolerance = 5 * np.sqrt(np.diag(expected_cov) / n)
        self.assertTrue(np.all(np.abs(draws.mean(axis=0) - expected_mean) < tolerance))
        np.testing.assert_allclose(np.cov(draws, rowvar=False), expected_cov, atol=0.03)


class TestFitMethods(unittest.TestCase):
    """Unit tests for stem_fit(), fit_covariance() and rmse()."""

    def test_fit_covariance_exact(self):
        """Test recovery of case 1 from its implied covariance."""
        truth = fixture(1, "linear")
        moments = implied_covariance_linear(truth)
        fit = fit_covariance(moments.covariance, moments.mean, truth.structure)
        self.assertEqual(fit.method, "covariance")
        np.testing.assert_allclose(fit.estimates.loadings, truth.loadings, atol=0.05)
        np.testing.assert_allclose(fit.estimates.unique_vars, truth.unique_vars, atol=0.05)
        self.assertEqual(list(fit.trace.columns), ["iteration", "mean_abs_a", "objective"])

    def test_fit_covariance_extended(self):
        """Test that the testlet correlations of case 6 are recovered."""
        truth = fixture(6, "linear")
        moments = implied_covariance_linear(truth)
        fit = fit_covariance(moments.covariance, moments.mean, truth.structure, kind="extended")
        np.testing.assert_allclose(fit.estimates.testlet_cov, truth.testlet_cov, atol=0.05)

    def test_linear_dataset(self):
        """Test fit_dataset() on simulated linear data."""
        truth = fixture(3, "linear")
        data = simulate(truth, 5000, seed=9)
        fit = fit_dataset(data, truth.structure)
        table = rmse([fit], truth)
        self.assertLess(table.groups["a"], 0.2)
        self.assertLess(table.groups["d"], 0.1)
        self.assertNotIn("sigma", table.groups)

    def test_stem_fit_short(self):
        """Test a short stochastic EM run."""
        truth = example("probit-nine")
        data = simulate(truth, 400, seed=1)
        config = StemConfig(n_iter=40, burn_in=20, seed=1)
        fit = stem_fit(data, truth.structure, config=config)
        self.assertIsInstance(fit, FitResult)
        self.assertEqual(fit.method, "stem")
        self.assertEqual(len(fit.trace), 40)
        self.assertEqual(fit.estimates.link, "probit")
        self.assertTrue(np.all(np.isfinite(fit.estimates.loadings)))
        np.testing.assert_array_equal(fit.estimates.structure.pattern(), truth.structure.pattern())
        self.assertEqual(sorted(fit.draw_sd), ["A", "Sigma", "d"])

    def test_stem_fit_reproducible(self):
        """Test that the same seed gives the same estimates."""
        truth = example("probit-nine")
        data = simulate(truth, 200, seed=1)
        config = StemConfig(n_iter=10, burn_in=5, seed=3)
        first = stem_fit(data, truth.structure, config=config).estimates.loadings
        second = stem_fit(data, truth.structure, config=config).estimates.loadings
        np.testing.assert_array_equal(first, second)

    def test_stem_fit_extended(self):
        """Test that the extended kind estimates the testlet correlations."""
        truth = fixture(5)
        data = simulate(truth, 300, seed=2)
        config = StemConfig(n_iter=10, burn_in=5, seed=2)
        fit = stem_fit(data, truth.structure, kind="extended", config=config)
        cov = fit.estimates.testlet_cov
        np.testing.assert_allclose(np.diag(cov), 1.0)
        self.assertTrue(np.all(np.linalg.eigvalsh(cov) > 0))
        self.assertIn("sigma", rmse([fit], truth).groups)

    def test_stem_fit_divergence(self):
        """Test that the divergence guard names the block."""
        truth = example("probit-nine")
        data = simulate(truth, 100, seed=1)
        config = StemConfig(n_iter=10, burn_in=5, divergence_bound=1e-3)
        with self.assertRaises(DivergenceError) as context:
            stem_fit(data, truth.structure, config=config)
        self.assertEqual(context.exception.iteration, 0)
        self.assertEqual(context.exception.block, "A")

    def test_stem_fit_rejects_linear(self):
        """Test stem_fit() on continuous data."""
        truth = fixture(4, "linear")
        data = simulate(truth, 50, seed=1)
        self.assertRaises(ValueError, stem_fit, data, truth.structure)

    def test_rmse_of_truth(self):
        """Test that the truth has zero RMSE against itself."""
        truth = fixture(2)
        table = rmse([truth, truth], truth)
        self.assertEqual(table.n_fits, 2)
        self.assertEqual(table.groups, {"a": 0.0, "d": 0.0})
        self.assertEqual(table.to_dict()["per_entry"]["A"], np.zeros((20, 3)).tolist())

    def test_rmse_empty(self):
        """Test rmse() without fits."""
        self.assertRaises(ValueError, rmse, [], fixture(1))

    @unittest.skipUnless(SLOW, "set BIFID_SLOW=1 to run the desk-scale reproduction")
    def test_case1_desk_scale(self):
        """Test that case 1 loadings are recovered at N = 2000."""
        truth = fixture(1)
        fits = []
        for rep in range(5):
            rng = rng_stream(0, 1, 0, rep)
            data = simulate(truth, 2000, rng=rng)
            fits.append(stem_fit(data, truth.structure, config=StemConfig(), rng=rng))
        self.assertLess(rmse(fits, truth).groups["a"], 0.3)


if __name__ == "__main__":
    unittest.main()
