import unittest
import numpy as np
from bifactorid.model import LoadingStructure


class TestLoadingStructureMethods(unittest.TestCase):
    """Unit tests for the LoadingStructure class."""

    def setUp(self):
        self.A = np.array(
            [
                [1.0, 0.5, 0.0],
                [0.8, 0.7, 0.0],
                [0.6, 0.0, 0.9],
                [0.4, 0.0, 1.1],
                [0.2, 0.0, 1e-14],
            ]
        )
        self.structure = LoadingStructure(self.A, [1, 1, 2, 2, 2])

    def test_init(self):
        """Test the constructor."""
        self.assertEqual(self.structure.n_items, 5)
        self.assertEqual(self.structure.n_primary, 1)
        self.assertEqual(self.structure.n_testlets, 2)
        self.assertEqual(self.structure.n_factors, 3)
        self.assertEqual(self.structure.assignment, (1, 1, 2, 2, 2))

    def test_init_bad_n_primary(self):
        """Test the constructor with a non-integer number of primaries."""
        self.assertRaisesRegex(
            TypeError,
            "Unexpected parameter type: expected integer value for 'n_primary'",
            LoadingStructure,
            self.A,
            [1, 1, 2, 2, 2],
            "1",
        )

    def test_init_bad_assignment_type(self):
        """Test the constructor with a non-numeric assignment."""
        self.assertRaises(TypeError, LoadingStructure, self.A, ["a", "b", "c", "d", "e"])

    def test_init_assignment_length(self):
        """Test the constructor with an assignment of the wrong length."""
        self.assertRaises(ValueError, LoadingStructure, self.A, [1, 1, 2])

    def test_init_assignment_range(self):
        """Test the constructor with a testlet number outside 1..G."""
        self.assertRaises(ValueError, LoadingStructure, self.A, [1, 1, 2, 2, 3])

    def test_init_no_testlets(self):
        """Test the constructor with no testlet columns."""
        self.assertRaises(ValueError, LoadingStructure, self.A[:, :1], [1] * 5)

    def test_loadings_read_only(self):
        """Test that loadings returns a copy."""
        loadings = self.structure.loadings
        loadings[0, 0] = 5.0
        self.assertEqual(self.structure.loadings[0, 0], 1.0)

    def test_items(self):
        """Test the items() method."""
        self.assertEqual(list(self.structure.items(1)), [0, 1])
        self.assertEqual(list(self.structure.items(2)), [2, 3, 4])
        self.assertEqual(list(self.structure.items_of([1, 2])), [0, 1, 2, 3, 4])

    def test_items_bad_testlet(self):
        """Test the items() method with an unknown testlet."""
        self.assertRaises(ValueError, self.structure.items, 3)

    def test_testlet_column(self):
        """Test the testlet_column() method."""
        self.assertEqual(self.structure.testlet_column(1), 1)
        self.assertEqual(self.structure.testlet_column(2), 2)

    def test_testlet_block(self):
        """Test the testlet_block() method."""
        block = self.structure.testlet_block(1)
        np.testing.assert_array_equal(block, [[1.0, 0.5], [0.8, 0.7]])

    def test_group_block(self):
        """Test the group_block() method."""
        block = self.structure.group_block([2, 1])
        self.assertEqual(block.shape, (5, 3))

    def test_thresholded(self):
        """Test that tiny entries count as zero."""
        self.assertFalse(self.structure.pattern()[4, 2])
        self.assertEqual(self.structure.thresholded()[4, 2], 0.0)
        self.assertTrue(self.structure.pattern(zero_tol=1e-15)[4, 2])

    def test_subset(self):
        """Test that subset() drops and renumbers testlets."""
        subset = self.structure.subset([2, 3, 0])
        self.assertEqual(subset.assignment, (1, 1, 2))
        self.assertEqual(subset.n_testlets, 2)
        np.testing.assert_array_equal(subset.loadings[2], [1.0, 0.0, 0.5])

    def test_subset_drop(self):
        """Test subset() with a testlet left empty."""
        subset = self.structure.subset([2, 3])
        self.assertEqual(subset.n_testlets, 1)
        self.assertEqual(subset.assignment, (1, 1))

    def test_eq(self):
        """Test the __eq__() method."""
        same = LoadingStructure(self.A.copy(), [1, 1, 2, 2, 2])
        self.assertEqual(same, self.structure)
        self.assertNotEqual(self.structure.with_loadings(self.A * 2), self.structure)

    def test_repr(self):
        """Test the __repr__() method."""
        self.assertEqual(repr(self.structure), "LoadingStructure(J=5, L=1, G=2)")


if __name__ == "__main__":
    unittest.main()
