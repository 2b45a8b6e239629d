import unittest
import numpy as np
from bifactorid.fixtures import example, fixture
from bifactorid.model import (
    InvalidParameterError,
    LoadingStructure,
    ModelParams,
    UnrestrictedRhoParams,
    normalize_signs,
    validate,
)
from bifactorid.moments import moment_distance


def _structure(A, assignment=(1, 1, 1, 2, 2, 2)):
    return LoadingStructure(np.array(A, dtype=float), list(assignment))


class TestModelParamsMethods(unittest.TestCase):
    """Unit tests for the ModelParams class and parameter validation."""

    def setUp(self):
        self.A = [
            [1.0, 0.5, 0.0],
            [0.8, 0.7, 0.0],
            [0.6, 0.9, 0.0],
            [0.4, 0.0, 1.1],
            [0.9, 0.0, 0.3],
            [0.7, 0.0, 0.8],
        ]
        self.params = ModelParams(_structure(self.A), np.zeros(6), None, np.ones(6))

    def test_init(self):
        """Test the constructor defaults."""
        np.testing.assert_array_equal(self.params.latent_cov, np.eye(3))
        self.assertEqual(self.params.kind, "standard")
        self.assertEqual(self.params.link, "linear")
        self.assertEqual(self.params.n_items, 6)
        self.assertIsNone(validate(self.params))

    def test_init_bad_structure(self):
        """Test the constructor with a bad structure type."""
        self.assertRaisesRegex(
            TypeError,
            "Unexpected parameter type: expected LoadingStructure object",
            ModelParams,
            np.array(self.A),
            np.zeros(6),
        )

    def test_init_bad_kind(self):
        """Test the constructor with an unknown kind."""
        self.assertRaises(ValueError, ModelParams, _structure(self.A), np.zeros(6), kind="tree")

    def test_init_bad_intercepts(self):
        """Test the constructor with intercepts of the wrong length."""
        self.assertRaises(ValueError, ModelParams, _structure(self.A), np.zeros(5))

    def test_cross_loading(self):
        """Test validate() with an item loading on another testlet."""
        A = np.array(self.A)
        A[0, 2] = 0.2
        params = ModelParams(_structure(A), np.zeros(6), None, np.ones(6))
        self.assertRaisesRegex(
            InvalidParameterError,
            "item 1 of testlet 1 has nonzero loading on testlet 2",
            validate,
            params,
        )

    def test_empty_testlet(self):
        """Test validate() with a testlet that has no items."""
        A = np.array(self.A)
        A[:, 1] = 0.5
        A[:, 2] = 0.0
        params = ModelParams(_structure(A, [1] * 6), np.zeros(6), None, np.ones(6))
        self.assertRaisesRegex(InvalidParameterError, "testlet 2 has no items", validate, params)

    def test_negative_leading_loading(self):
        """Test validate() with a negative first nonzero loading."""
        A = np.array(self.A)
        A[:, 0] *= -1.0
        params = ModelParams(_structure(A), np.zeros(6), None, np.ones(6))
        self.assertRaisesRegex(InvalidParameterError, "column 1", validate, params)

    def test_not_positive_definite(self):
        """Test validate() with an indefinite testlet correlation."""
        cov = np.eye(3)
        cov[1, 2] = cov[2, 1] = 1.2
        params = ModelParams(_structure(self.A), np.zeros(6), cov, np.ones(6), kind="extended")
        self.assertRaisesRegex(InvalidParameterError, "not positive definite", validate, params)

    def test_standard_requires_identity(self):
        """Test validate() with correlated testlets in a standard model."""
        cov = np.eye(3)
        cov[1, 2] = cov[2, 1] = 0.3
        params = ModelParams(_structure(self.A), np.zeros(6), cov, np.ones(6))
        self.assertRaisesRegex(InvalidParameterError, "Sigma = I", validate, params)
        validate(params.replace(kind="extended"))

    def test_cross_block(self):
        """Test validate() with a primary-testlet correlation."""
        cov = np.eye(3)
        cov[0, 1] = cov[1, 0] = 0.3
        params = ModelParams(_structure(self.A), np.zeros(6), cov, np.ones(6), kind="extended")
        self.assertRaisesRegex(InvalidParameterError, "primary-testlet", validate, params)

    def test_unique_variances(self):
        """Test validate() on the unique variances of each link."""
        params = ModelParams(_structure(self.A), np.zeros(6))
        self.assertRaisesRegex(InvalidParameterError, "requires unique variances", validate, params)
        params = self.params.replace(link="probit")
        self.assertRaisesRegex(InvalidParameterError, "fixes the error scale", validate, params)
        lam = np.ones(6)
        lam[3] = 0.0
        params = self.params.replace(unique_vars=lam)
        self.assertRaisesRegex(InvalidParameterError, "item 4", validate, params)

    def test_replace(self):
        """Test the replace() method."""
        other = self.params.replace(loadings=np.array(self.A) * 2.0)
        self.assertEqual(other.structure.assignment, self.params.structure.assignment)
        self.assertEqual(other.loadings[0, 0], 2.0)
        self.assertEqual(self.params.loadings[0, 0], 1.0)

    def test_normalize_signs(self):
        """Test that normalize_signs() keeps the implied moments."""
        A = np.array(self.A)
        A[:, 2] *= -1.0
        cov = np.eye(3)
        cov[1, 2] = cov[2, 1] = 0.4
        params = ModelParams(_structure(A), np.zeros(6), cov, np.ones(6), kind="extended")
        normalized = normalize_signs(params)
        validate(normalized)
        self.assertAlmostEqual(normalized.latent_cov[1, 2], -0.4)
        self.assertLess(moment_distance(params, normalized), 1e-12)

    def test_normalize_signs_unchanged(self):
        """Test normalize_signs() on an already normalized set."""
        self.assertIs(normalize_signs(self.params), self.params)

    def test_to_document(self):
        """Test the to_document() method."""
        document = self.params.to_document()
        self.assertEqual(document["G"], 2)
        self.assertEqual(document["assignment"], [1, 1, 1, 2, 2, 2])
        self.assertEqual(document["lambda"], [1.0] * 6)
        self.assertNotIn("lambda", fixture(1).to_document())


class TestUnrestrictedRhoParamsMethods(unittest.TestCase):
    """Unit tests for the UnrestrictedRhoParams class."""

    def test_from_params(self):
        """Test the from_params() constructor."""
        base = example("p2-example")
        params = UnrestrictedRhoParams.from_params(base, [0.2, -0.1])
        np.testing.assert_allclose(params.rho, [0.2, -0.1])
        self.assertEqual(params.kind, "extended")
        self.assertIsNone(validate(params))
        self.assertEqual(params.to_document()["rho"], [0.2, -0.1])

    def test_from_params_bad_length(self):
        """Test from_params() with one rho per item instead of per testlet."""
        self.assertRaises(
            ValueError, UnrestrictedRhoParams.from_params, example("p2-example"), [0.1] * 7
        )


if __name__ == "__main__":
    unittest.main()
