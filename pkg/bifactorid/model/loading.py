import numpy as np

ZERO_TOL = 1e-12


def _frozen(array):
    array = np.array(array, dtype=float)
    array.flags.writeable = False
    return array


class LoadingStructure:
    """
    Container class storing a loading matrix and the item-to-testlet
    assignment map.

    Columns are ordered primary factors first (L of them), then one column
    per testlet. Items are indexed from 0 internally; testlets are numbered
    1..G everywhere, matching the assignment map.
    """

    def __init__(self, loadings, assignment, n_primary=1):
        """
        LoadingStructure class constructor.

        Parameters:
            loadings: J by (L+G) array of factor loadings
            assignment: length-J sequence with the testlet (1..G) of
                each item
            n_primary: number of primary factors L
        """
        if isinstance(n_primary, bool) or not isinstance(n_primary, (int, np.integer)):
            raise TypeError(
                "Unexpected parameter type: expected integer value for 'n_primary'"
            )
        try:
            loadings = np.array(loadings, dtype=float)
        except (TypeError, ValueError):
            raise TypeError(
                "Unexpected parameter type: expected numeric matrix for 'loadings'"
            )
        try:
            assignment = tuple(int(g) for g in assignment)
        except (TypeError, ValueError):
            raise TypeError(
                "Unexpected parameter type: expected sequence of integers \
for 'assignment'"
            )

        if loadings.ndim != 2:
            raise ValueError("loadings must be a two-dimensional matrix")
        if n_primary < 1:
            raise ValueError("n_primary must be at least 1")
        n_items, n_columns = loadings.shape
        n_testlets = n_columns - n_primary
        if n_items < 1 or n_testlets < 1:
            raise ValueError(
                "loadings of shape {} leave no items or no testlet columns".format(
                    loadings.shape
                )
            )
        if len(assignment) != n_items:
            raise ValueError(
                "assignment has {} entries for {} items".format(len(assignment), n_items)
            )
        for j, g in enumerate(assignment):
            if not 1 <= g <= n_testlets:
                raise ValueError(
                    "item {} assigned to testlet {} outside 1..{}".format(
                        j + 1, g, n_testlets
                    )
                )

        self._loadings = _frozen(loadings)
        self._assignment = assignment
        self._n_primary = int(n_primary)

    def __eq__(self, other):
        if not isinstance(other, LoadingStructure):
            return NotImplemented
        return (
            self._n_primary == other._n_primary
            and self._assignment == other._assignment
            and np.array_equal(self._loadings, other._loadings)
        )

    def __repr__(self):
        return "LoadingStructure(J={}, L={}, G={})".format(
            self.n_items, self.n_primary, self.n_testlets
        )

    @property
    def loadings(self):
        return self._loadings.copy()

    @property
    def assignment(self):
        return self._assignment

    @property
    def n_items(self):
        return self._loadings.shape[0]

    @property
    def n_primary(self):
        return self._n_primary

    @property
    def n_testlets(self):
        return self._loadings.shape[1] - self._n_primary

    @property
    def n_factors(self):
        return self._loadings.shape[1]

    def testlets(self):
        """Return the testlet numbers 1..G."""
        return range(1, self.n_testlets + 1)

    def testlet_column(self, g):
        """Return the column index of testlet g."""
        self._check_testlet(g)
        return self._n_primary + g - 1

    def items(self, g):
        """Return the (0-based) indices of the items assigned to testlet g."""
        self._check_testlet(g)
        return np.array([j for j, h in enumerate(self._assignment) if h == g], dtype=int)

    def items_of(self, testlets):
        """Return the items belonging to any testlet in the given collection."""
        wanted = set(testlets)
        return np.array(
            [j for j, h in enumerate(self._assignment) if h in wanted], dtype=int
        )

    def testlet_block(self, g):
        """Return A-bar_g: rows of testlet g over the primary columns and the
        column of testlet g."""
        rows = self.items(g)
        columns = list(range(self._n_primary)) + [self.testlet_column(g)]
        return self._loadings[np.ix_(rows, columns)].copy()

    def group_block(self, testlets):
        """Return A-bar for a set of testlets: their rows over the primary
        columns and their own testlet columns."""
        testlets = sorted(testlets)
        rows = self.items_of(testlets)
        columns = list(range(self._n_primary)) + [
            self.testlet_column(g) for g in testlets
        ]
        return self._loadings[np.ix_(rows, columns)].copy()

    def pattern(self, zero_tol=ZERO_TOL):
        """Return the boolean sparsity pattern |A| > zero_tol."""
        return np.abs(self._loadings) > zero_tol

    def thresholded(self, zero_tol=ZERO_TOL):
        """Return a copy of A with entries at or below zero_tol set to 0."""
        loadings = self._loadings.copy()
        loadings[~self.pattern(zero_tol)] = 0.0
        return loadings

    def with_loadings(self, loadings):
        """Return a structure with the same assignment and new loadings."""
        return LoadingStructure(loadings, self._assignment, self._n_primary)

    def subset(self, items):
        """
        Return the structure restricted to the given items (0-based, in the
        given order). Testlets left without items are dropped and the rest
        renumbered in order of first appearance.
        """
        items = [int(j) for j in items]
        kept = []
        for j in items:
            if self._assignment[j] not in kept:
                kept.append(self._assignment[j])
        renumber = {g: i + 1 for i, g in enumerate(kept)}
        columns = list(range(self._n_primary)) + [self.testlet_column(g) for g in kept]
        loadings = self._loadings[np.ix_(items, columns)]
        assignment = [renumber[self._assignment[j]] for j in items]
        return LoadingStructure(loadings, assignment, self._n_primary)

    def _check_testlet(self, g):
        if not 1 <= g <= self.n_testlets:
            raise ValueError("Invalid testlet {}".format(g))
