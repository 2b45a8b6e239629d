import os
import unittest
import numpy as np
from bifactorid.fixtures import example, fixture
from bifactorid.model import LoadingStructure
from bifactorid.structural import (
    SearchBudgetError,
    check_c0,
    check_c1,
    compute_h1,
    compute_h2,
    compute_h3,
    compute_h4,
    compute_h5,
    compute_h6,
    compute_q,
    compute_q0,
    contains_identity,
    exact_rank,
    h2_partition,
    kruskal_rank,
    numeric_rank,
    rank_margin,
    structural_report,
    t3s_partition,
)

N_RANDOM = 10000 if os.environ.get("BIFID_SLOW") == "1" else 300


class TestRankMethods(unittest.TestCase):
    """Unit tests for the rank helpers."""

    def test_numeric_rank(self):
        """Test numeric_rank() on full and deficient matrices."""
        self.assertEqual(numeric_rank(np.eye(3)), 3)
        self.assertEqual(numeric_rank([[1.0, 2.0], [2.0, 4.0]]), 1)
        self.assertEqual(numeric_rank(np.zeros((2, 2))), 0)

    def test_numeric_rank_empty(self):
        """Test numeric_rank() on an empty matrix."""
        self.assertRaises(ValueError, numeric_rank, np.zeros((0, 2)))

    def test_rank_margin(self):
        """Test rank_margin()."""
        rank, margin = rank_margin(np.diag([2.0, 1.0]))
        self.assertEqual(rank, 2)
        self.assertAlmostEqual(margin, 0.5)
        self.assertEqual(rank_margin(np.zeros((2, 2))), (0, 0.0))

    def test_exact_rank(self):
        """Test exact_rank() against a nearly deficient matrix."""
        self.assertEqual(exact_rank([[1.0, 2.0], [2.0, 4.0]]), 1)
        self.assertEqual(exact_rank([[0.5, 0.25], [0.2, 0.1]]), 1)
        self.assertEqual(exact_rank(np.eye(4)), 4)

    def test_exact_rank_small_entries(self):
        """Test that exact_rank() keeps entries far below one part in a
        million."""
        self.assertEqual(exact_rank([[1.0, 0.0], [0.0, 1e-7]]), 2)
        self.assertEqual(exact_rank([[1e-9]]), 1)
        self.assertEqual(exact_rank([[1.0, 1e-7], [1.0, 0.0]]), 2)

    def test_kruskal_rank(self):
        """Test kruskal_rank()."""
        self.assertEqual(kruskal_rank([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]), 2)
        self.assertEqual(kruskal_rank([[1.0, 2.0], [2.0, 4.0]]), 1)
        self.assertEqual(kruskal_rank([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]]), 0)

    def test_kruskal_rank_refused(self):
        """Test that kruskal_rank() refuses too many columns."""
        M = np.random.default_rng(0).standard_normal((3, 14))
        self.assertRaises(SearchBudgetError, kruskal_rank, M)


class TestStructuralSetMethods(unittest.TestCase):
    """Unit tests for the structural sets Q, Q0 and H1..H6."""

    def test_case1(self):
        """Test the sets of simulation case 1."""
        structure = fixture(1).structure
        self.assertEqual(len(compute_q(structure, 1)), 10)
        self.assertEqual(compute_q0(structure, 2), tuple(range(10, 20)))
        self.assertEqual(compute_h1(structure), (1, 2, 3))
        self.assertEqual(compute_h6(structure), (1, 2, 3))
        self.assertEqual(compute_h3(structure), (3,))
        self.assertEqual(list(compute_h2(structure)), [3])

    def test_case4(self):
        """Test the sets of simulation case 4."""
        structure = fixture(4).structure
        self.assertEqual(compute_q(structure, 1), (0,))
        self.assertEqual(compute_q(structure, 2), (1, 2))
        self.assertEqual(compute_h6(structure), (2, 3))

    def test_main_scaling(self):
        """Test H1 and H6 for testlets with one main-loaded item each."""
        structure = example("main-scaling").structure
        self.assertEqual(compute_h1(structure), (1, 2))
        self.assertEqual(compute_h6(structure), ())

    def test_h2_witness(self):
        """Test that the H2 witness splits into two rank-2 sets."""
        structure = example("p2-example").structure
        witness = compute_h2(structure)
        self.assertEqual(list(witness), [1])
        first, second = witness[1]
        self.assertTrue(set(first).isdisjoint(second))
        for side in (first, second):
            block = structure.loadings[np.ix_(side, [0, 1])]
            self.assertEqual(numeric_rank(block), 2)

    def test_h2_partition_none(self):
        """Test h2_partition() on a rank-one block."""
        block = np.array([[1.0, 2.0]] * 4)
        self.assertIsNone(h2_partition(block))

    def test_h2_partition_refused(self):
        """Test that h2_partition() refuses large blocks."""
        block = np.random.default_rng(1).standard_normal((25, 2))
        self.assertRaises(SearchBudgetError, h2_partition, block)

    def test_bifactor_only(self):
        """Test that H1 is refused for two-tier structures."""
        structure = example("two-tier-split").structure
        self.assertRaises(ValueError, compute_h1, structure)

    def test_h4_h5(self):
        """Test H4 and H5 on a two-tier structure."""
        structure = example("two-tier-split").structure
        self.assertEqual(compute_h4(structure), ())
        self.assertEqual(compute_h5(structure), ())
        A = np.zeros((6, 4))
        A[:, 0] = 1.0
        A[[0, 2, 3, 5], 1] = (1.0, 2.0, 1.0, 2.0)
        A[0:3, 2] = (1.0, 2.0, 3.0)
        A[3:6, 3] = (3.0, 1.0, 2.0)
        structure = LoadingStructure(A, [1, 1, 1, 2, 2, 2], 2)
        self.assertEqual(compute_h4(structure), (1, 2))
        self.assertEqual(compute_h5(structure), (1, 2))


class TestTwoTierConditionMethods(unittest.TestCase):
    """Unit tests for the two-tier conditions."""

    def test_c0_too_few_rows(self):
        """Test check_c0() rejecting a short loading matrix."""
        result = check_c0(example("two-tier-confined").loadings)
        self.assertFalse(result.holds)
        self.assertEqual(result.reason, "9 rows, at least 11 needed")

    def test_c0_holds(self):
        """Test check_c0() with a witness for every deleted row."""
        A = example("two-tier-split").loadings
        result = check_c0(A)
        self.assertTrue(result.holds)
        self.assertEqual(len(result.witness), 16)
        for deleted, (first, second) in result.witness.items():
            self.assertNotIn(deleted, first + second)
            self.assertEqual(numeric_rank(A[list(first)]), 6)
            self.assertEqual(numeric_rank(A[list(second)]), 6)

    def test_c0_thin_column(self):
        """Test check_c0() with a column loaded by two rows only."""
        A = np.vstack([np.eye(2)] * 3)
        A[4:, 1] = 0.0
        result = check_c0(A)
        self.assertFalse(result.holds)
        self.assertIn("fewer than 3", result.reason)

    def test_c1_holds(self):
        """Test check_c1() on a structure that satisfies it."""
        A = example("two-tier-split").loadings
        result = check_c1(A)
        self.assertTrue(result.holds)
        basis, rest, removable = result.witness
        self.assertEqual(numeric_rank(A[list(basis)]), 6)
        self.assertEqual(numeric_rank(A[list(removable)]), 6)

    def test_contains_identity(self):
        """Test contains_identity()."""
        holds, witness = contains_identity([[0.0, 2.0], [1.0, 0.0]])
        self.assertTrue(holds)
        self.assertEqual(witness, {0: 1, 1: 0})
        self.assertFalse(contains_identity([[1.0, 1.0], [0.0, 1.0]])[0])
        self.assertFalse(contains_identity([[-1.0, 0.0], [0.0, 1.0]])[0])

    def test_t3s_partition(self):
        """Test t3s_partition()."""
        self.assertEqual(t3s_partition(example("two-tier-split").structure), ((1, 2), (3, 4)))
        self.assertIsNone(t3s_partition(example("two-tier-confined").structure))


class TestStructuralReportMethods(unittest.TestCase):
    """Unit tests for structural_report()."""

    def test_bifactor_report(self):
        """Test the report of simulation case 3."""
        report = structural_report(fixture(3).structure)
        self.assertEqual(report.q_sizes(), {1: 10, 2: 10})
        self.assertEqual(report.size("H1"), 2)
        self.assertEqual(report.h_sets["H2"], (2,))
        document = report.to_dict()
        self.assertEqual(document["Q_sizes"], {1: 10, 2: 10})
        self.assertEqual(document["Q"][1], list(range(1, 11)))
        self.assertEqual(document["zero_tol"], 1e-12)
        self.assertIn("rank_tol", document)

    def test_h2_refused(self):
        """Test that a testlet above the search bound is reported as refused."""
        structure = fixture(1).structure
        report = structural_report(structure, row_limit=5)
        self.assertEqual(report.h2_refused, (1, 2, 3))
        self.assertEqual(report.h_sets["H2"], ())
        self.assertEqual(report.to_dict()["H2_refused"], [1, 2, 3])

    def test_two_tier_report(self):
        """Test the report of a two-tier structure."""
        report = structural_report(example("two-tier-split").structure, two_tier=True)
        self.assertEqual(report.identity, {"H4_items": False, "all_items": True})
        self.assertEqual(report.t3s, ((1, 2), (3, 4)))
        self.assertTrue(report.c0.holds)
        self.assertIsNone(report.c1)
        document = report.to_dict()
        self.assertTrue(document["C0"]["holds"])

def random_bifactor_structure(rng):
    """Draw an L=1 structure with random zeros and, now and then, a testlet
    whose testlet loadings are proportional to its main loadings."""
    G = int(rng.integers(1, 5))
    assignment = np.repeat(np.arange(1, G + 1), rng.integers(1, 7, size=G))
    A = np.zeros((assignment.size, 1 + G))
    A[:, 0] = rng.uniform(0.2, 2.0, assignment.size) * (rng.random(assignment.size) > 0.4)
    for g in range(1, G + 1):
        rows = assignment == g
        if rng.random() < 0.3:
            A[rows, g] = rng.uniform(0.5, 1.5) * A[rows, 0]
        else:
            A[rows, g] = rng.uniform(0.2, 2.0, rows.sum()) * (rng.random(rows.sum()) > 0.2)
    return LoadingStructure(A, assignment)


def random_two_tier_structure(rng):
    """Draw a two-tier structure with random zeros and, now and then,
    repeated primary columns."""
    L = int(rng.integers(1, 4))
    G = int(rng.integers(2, 5))
    assignment = np.repeat(np.arange(1, G + 1), rng.integers(1, 7, size=G))
    J = assignment.size
    A = np.zeros((J, L + G))
    A[:, :L] = rng.uniform(0.2, 2.0, (J, L)) * (rng.random((J, L)) > 0.4)
    if L > 1 and rng.random() < 0.3:
        A[:, 1] = A[:, 0]
    for g in range(1, G + 1):
        rows = assignment == g
        A[rows, L + g - 1] = rng.uniform(0.2, 2.0, rows.sum()) * (rng.random(rows.sum()) > 0.2)
    return LoadingStructure(A, assignment, L)


class TestStructuralPropertyMethods(unittest.TestCase):
    """Unit tests for the nesting of the structural sets on random
    structures."""

    def test_bifactor_nesting(self):
        """Test H2 <= H6 <= H1 and H2 <= H3."""
        rng = np.random.default_rng(17)
        for _ in range(N_RANDOM):
            structure = random_bifactor_structure(rng)
            h1 = set(compute_h1(structure))
            h6 = set(compute_h6(structure))
            h2 = set(compute_h2(structure))
            self.assertLessEqual(h2, h6)
            self.assertLessEqual(h6, h1)
            self.assertLessEqual(h2, set(compute_h3(structure)))

    def test_two_tier_nesting(self):
        """Test H5 <= H4."""
        rng = np.random.default_rng(18)
        for _ in range(N_RANDOM):
            structure = random_two_tier_structure(rng)
            self.assertLessEqual(set(compute_h5(structure)), set(compute_h4(structure)))

    def test_kruskal_below_rank(self):
        """Test that the Kruskal rank never exceeds the rank."""
        rng = np.random.default_rng(19)
        for _ in range(N_RANDOM):
            n_rows, n_cols = (int(k) for k in rng.integers(1, 7, size=2))
            inner = int(rng.integers(1, min(n_rows, n_cols) + 1))
            M = rng.normal(size=(n_rows, inner)) @ rng.normal(size=(inner, n_cols))
            if n_cols > 1 and rng.random() < 0.3:
                M[:, -1] = M[:, 0]
            if rng.random() < 0.1:
                M[:, 0] = 0.0
            self.assertLessEqual(kruskal_rank(M), numeric_rank(M))


if __name__ == "__main__":
    unittest.main()
