"""
Structural sets and rank quantities of a loading matrix.

Every set is computed on the thresholded loadings (entries with
|a| <= zero_tol count as zero). Items are 0-based inside the package and
reported 1-based by StructuralReport.to_dict(); testlets are 1..G.
"""
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from math import comb
import logging
from typing import Optional
import numpy as np
from .model import ZERO_TOL

RANK_TOL = 1e-10
EXACT_ROW_LIMIT = 24
KRUSKAL_COLUMN_LIMIT = 12
C1_COMBINATION_LIMIT = 20000
RANDOM_TRIES = 200
TESTLET_PARTITION_LIMIT = 20

logger = logging.getLogger(__name__)


class SearchBudgetError(ValueError):
    """An exhaustive search was refused because it exceeds its bound."""

    pass


def numeric_rank(M, tol=RANK_TOL):
    """Number of singular values above tol times the largest one."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        raise ValueError("numeric_rank of an empty matrix")
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def rank_margin(M, tol=RANK_TOL):
    """Return (rank, margin) where margin is the smallest retained singular
    value relative to the largest. A zero matrix has margin 0."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, 0.0
    kept = s[s > tol * s[0]]
    return int(kept.size), float(kept[-1] / s[0])


def exact_rank(M):
    """Rank over the rationals. Each float entry is taken at its exact
    binary value."""
    rows = [
        [Fraction(float(x)) for x in row]
        for row in np.atleast_2d(np.asarray(M, dtype=float))
    ]
    rank = 0
    n_cols = len(rows[0]) if rows else 0
    for col in range(n_cols):
        pivot = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][col] != 0:
                factor = rows[r][col] / rows[rank][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[rank])]
        rank += 1
    return rank


def _rank(M, tol=RANK_TOL, exact=False):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] == 0 or M.shape[1] == 0:
        return 0
    return exact_rank(M) if exact else numeric_rank(M, tol)


def _require_bifactor(structure, name):
    if structure.n_primary != 1:
        raise ValueError("{} is defined for bifactor structures (L=1)".format(name))


def _require_two_tier(structure, name):
    if structure.n_primary < 1:
        raise ValueError("{} needs primary factors".format(name))


def compute_q(structure, g, zero_tol=ZERO_TOL):
    """Items of testlet g with nonzero testlet loading."""
    A = structure.loadings
    column = structure.testlet_column(g)
    return tuple(int(j) for j in structure.items(g) if abs(A[j, column]) > zero_tol)


def compute_q0(structure, g, zero_tol=ZERO_TOL):
    """Items of testlet g with nonzero main-factor loading."""
    _require_bifactor(structure, "Q0")
    A = structure.loadings
    return tuple(int(j) for j in structure.items(g) if abs(A[j, 0]) > zero_tol)


def compute_h1(structure, zero_tol=ZERO_TOL):
    """Testlets with at least one nonzero main-factor loading."""
    _require_bifactor(structure, "H1")
    return tuple(g for g in structure.testlets() if compute_q0(structure, g, zero_tol))


def compute_h6(structure, zero_tol=ZERO_TOL):
    """Testlets with at least two nonzero main-factor loadings."""
    _require_bifactor(structure, "H6")
    return tuple(
        g for g in structure.testlets() if len(compute_q0(structure, g, zero_tol)) >= 2
    )


def h2_partition(block, tol=RANK_TOL, exact=False, row_limit=EXACT_ROW_LIMIT):
    """
    Split the rows of a two-column block into two disjoint sets that both
    have rank 2. Returns (rows1, rows2) with local row indices, or None.
    """
    n = block.shape[0]
    if n > row_limit:
        raise SearchBudgetError(
            "search refused: {} items exceed the exhaustive bound {}".format(n, row_limit)
        )
    pairs = [
        (i, j)
        for i, j in combinations(range(n), 2)
        if _rank(block[[i, j]], tol, exact) == 2
    ]
    for first, second in combinations(pairs, 2):
        if set(first).isdisjoint(second):
            rest = [r for r in range(n) if r not in first and r not in second]
            return tuple(sorted(first + tuple(rest))), second
    return None


def compute_h2(structure, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False, row_limit=EXACT_ROW_LIMIT):
    """
    Testlets whose items split into two disjoint sets, each with full-rank
    A-bar_g. Returns a dict mapping each such testlet to its witness
    partition (0-based item indices).
    """
    _require_bifactor(structure, "H2")
    thresholded = structure.with_loadings(structure.thresholded(zero_tol))
    found = {}
    for g in structure.testlets():
        items = structure.items(g)
        split = h2_partition(thresholded.testlet_block(g), tol, exact, row_limit)
        if split is not None:
            found[g] = tuple(tuple(int(items[r]) for r in side) for side in split)
    return found


def compute_h3(structure, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Testlets with rank(A-bar_g) = 2."""
    _require_bifactor(structure, "H3")
    thresholded = structure.with_loadings(structure.thresholded(zero_tol))
    return tuple(
        g for g in structure.testlets() if _rank(thresholded.testlet_block(g), tol, exact) == 2
    )


def compute_h4(structure, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Testlets whose main-factor rows have full column rank L."""
    _require_two_tier(structure, "H4")
    A = structure.thresholded(zero_tol)
    L = structure.n_primary
    return tuple(
        g for g in structure.testlets() if _rank(A[structure.items(g), :L], tol, exact) == L
    )


def compute_h5(structure, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Testlets with rank(A-bar_g) = L + 1."""
    _require_two_tier(structure, "H5")
    thresholded = structure.with_loadings(structure.thresholded(zero_tol))
    L = structure.n_primary
    return tuple(
        g
        for g in structure.testlets()
        if _rank(thresholded.testlet_block(g), tol, exact) == L + 1
    )


def kruskal_rank(M, tol=RANK_TOL, exact=False, column_limit=KRUSKAL_COLUMN_LIMIT):
    """
    Largest R such that every R columns of M are linearly independent.
    Subsets larger than pairs are only searched when M has at most
    column_limit columns.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        raise ValueError("kruskal_rank of an empty matrix")
    n_rows, n_cols = M.shape
    if n_cols > column_limit and min(n_rows, n_cols) > 2:
        raise SearchBudgetError(
            "search refused: {} columns exceed the Kruskal bound {}".format(
                n_cols, column_limit
            )
        )
    kruskal = 0
    for size in range(1, min(n_rows, n_cols) + 1):
        if all(
            _rank(M[:, list(subset)], tol, exact) == size
            for subset in combinations(range(n_cols), size)
        ):
            kruskal = size
        else:
            break
    return kruskal


@dataclass(frozen=True)
class SearchResult:
    """Outcome of a partition search. holds is None when the search was
    inconclusive within its budget."""

    holds: Optional[bool]
    witness: object = None
    reason: str = ""

    def to_dict(self):
        return {"holds": self.holds, "witness": _one_based(self.witness), "reason": self.reason}


def _one_based(value):
    if value is None:
        return None
    if isinstance(value, dict):
        return {int(k) + 1: _one_based(v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        if all(isinstance(v, (int, np.integer)) for v in value):
            return [int(v) + 1 for v in value]
        return [_one_based(v) for v in value]
    return value


class _Independence:
    """Row-independence oracle over a fixed matrix."""

    def __init__(self, A, tol=RANK_TOL, exact=False):
        self.A = A
        self.tol = tol
        self.exact = exact

    def __call__(self, rows):
        rows = list(rows)
        if not rows:
            return True
        if len(rows) > self.A.shape[1]:
            return False
        return _rank(self.A[rows], self.tol, self.exact) == len(rows)

    def rank(self, rows):
        rows = list(rows)
        return _rank(self.A[rows], self.tol, self.exact) if rows else 0

    def greedy_basis(self, order):
        basis = []
        for r in order:
            if len(basis) == self.A.shape[1]:
                break
            if self(basis + [r]):
                basis.append(r)
        return basis


def _augment(independent, sets, s):
    """Insert s into one of the two independent sets along a shortest
    exchange path. Returns False when no path exists."""
    parent = {s: None}
    queue = deque([s])
    while queue:
        x = queue.popleft()
        for k in (0, 1):
            if x in sets[k]:
                continue
            current = sets[k]
            if independent(current + [x]):
                z, target = x, k
                sets[target].append(z)
                while parent[z] is not None:
                    x_prev, k_prev = parent[z]
                    sets[k_prev].remove(z)
                    sets[k_prev].append(x_prev)
                    z = x_prev
                return True
            for y in current:
                if y in parent:
                    continue
                if independent([r for r in current if r != y] + [x]):
                    parent[y] = (x, k)
                    queue.append(y)
    return False


def two_disjoint_bases(independent, rows, n_columns):
    """Edmonds' matroid partition for two copies of the row matroid.
    Returns two disjoint bases drawn from rows, or None."""
    sets = ([], [])
    for s in rows:
        if len(sets[0]) == n_columns and len(sets[1]) == n_columns:
            break
        _augment(independent, sets, s)
    if len(sets[0]) == n_columns and len(sets[1]) == n_columns:
        return sets
    return None


def _quick_rejection(A, zero_tol):
    J, K = A.shape
    if J < 2 * K + 1:
        return "{} rows, at least {} needed".format(J, 2 * K + 1)
    counts = np.sum(np.abs(A) > zero_tol, axis=0)
    thin = np.flatnonzero(counts < 3)
    if thin.size:
        return "column {} has fewer than 3 nonzero rows".format(int(thin[0]) + 1)
    return None


def check_c0(
    A,
    zero_tol=ZERO_TOL,
    tol=RANK_TOL,
    exact=False,
    row_limit=EXACT_ROW_LIMIT,
    n_tries=RANDOM_TRIES,
    seed=0,
):
    """
    Anderson-Rubin condition: after deleting any row, the remaining rows
    split into two disjoint sets of full column rank. The witness maps
    each deleted row to its partition.
    """
    A = np.array(A, dtype=float)
    A[np.abs(A) <= zero_tol] = 0.0
    rejection = _quick_rejection(A, zero_tol)
    if rejection is not None:
        return SearchResult(False, reason=rejection)

    J, K = A.shape
    independent = _Independence(A, tol, exact)
    rng = np.random.default_rng(seed)
    use_exact = J <= row_limit
    witnesses = {}
    for deleted in range(J):
        rows = [r for r in range(J) if r != deleted]
        if use_exact:
            bases = two_disjoint_bases(independent, rows, K)
            if bases is None:
                return SearchResult(
                    False,
                    reason="no partition after deleting row {}".format(deleted + 1),
                )
        else:
            bases = None
            for _ in range(n_tries):
                order = [int(r) for r in rng.permutation(rows)]
                first = independent.greedy_basis(order)
                second = independent.greedy_basis([r for r in order if r not in first])
                if len(first) == K and len(second) == K:
                    bases = (first, second)
                    break
            if bases is None:
                logger.info("C0 randomized search gave up after deleting row %d", deleted + 1)
                return SearchResult(
                    None,
                    reason="randomized search found no partition after deleting row {}".format(
                        deleted + 1
                    ),
                )
        first, second = bases
        if independent.rank(first) != K or independent.rank(second) != K:
            raise RuntimeError("C0 witness failed rank verification")
        leftover = [r for r in rows if r not in first and r not in second]
        witnesses[deleted] = (tuple(sorted(first + leftover)), tuple(sorted(second)))
    return SearchResult(True, witness=witnesses)


def _c1_split(independent, basis, J, K):
    rest = [r for r in range(J) if r not in basis]
    removable = [j for j in rest if independent.rank([r for r in rest if r != j]) == K]
    if removable and independent.rank(removable) == K:
        return tuple(sorted(basis)), tuple(rest), tuple(removable)
    return None


def check_c1(
    A,
    zero_tol=ZERO_TOL,
    tol=RANK_TOL,
    exact=False,
    row_limit=EXACT_ROW_LIMIT,
    combination_limit=C1_COMBINATION_LIMIT,
    n_tries=RANDOM_TRIES,
    seed=0,
):
    """
    Covariance condition for the probit two-tier model: a partition
    B1 | B2 with A[B1] of full column rank, and a subset B2a of B2 of full
    column rank such that A[B2 minus j] keeps full column rank for every j
    in B2a. Witness is (B1, B2, B2a).
    """
    A = np.array(A, dtype=float)
    A[np.abs(A) <= zero_tol] = 0.0
    rejection = _quick_rejection(A, zero_tol)
    if rejection is not None:
        return SearchResult(False, reason=rejection)

    J, K = A.shape
    independent = _Independence(A, tol, exact)
    if independent.rank(range(J)) < K:
        return SearchResult(False, reason="A does not have full column rank")

    rng = np.random.default_rng(seed)
    for _ in range(n_tries):
        basis = independent.greedy_basis([int(r) for r in rng.permutation(J)])
        split = _c1_split(independent, basis, J, K)
        if split is not None:
            return SearchResult(True, witness=split)

    if J <= row_limit and comb(J, K) <= combination_limit:
        for basis in combinations(range(J), K):
            if not independent(basis):
                continue
            split = _c1_split(independent, list(basis), J, K)
            if split is not None:
                return SearchResult(True, witness=split)
        return SearchResult(False, reason="no basis leaves a valid complement")
    logger.info("C1 search inconclusive: %d rows, %d columns", J, K)
    return SearchResult(None, reason="randomized search inconclusive beyond exhaustive budget")


def contains_identity(main_rows, zero_tol=ZERO_TOL):
    """
    Check whether the rows contain, after positive row scaling, the L by L
    identity: for each main factor some row loads on it alone and
    positively. Returns (holds, witness) with witness mapping factor to the
    local row index found.
    """
    main_rows = np.atleast_2d(np.asarray(main_rows, dtype=float))
    pattern = np.abs(main_rows) > zero_tol
    witness = {}
    for l in range(main_rows.shape[1]):
        for r in range(main_rows.shape[0]):
            if pattern[r, l] and pattern[r].sum() == 1 and main_rows[r, l] > 0:
                witness[l] = r
                break
        else:
            return False, witness
    return True, witness


def t3s_partition(structure, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """
    Search a testlet partition G1 | G2 with A-bar over G1 of full column
    rank and the main-factor rows of G2 of full column rank. Returns
    (G1, G2) or None; raises SearchBudgetError above the testlet bound.
    """
    G, L = structure.n_testlets, structure.n_primary
    if G > TESTLET_PARTITION_LIMIT:
        raise SearchBudgetError(
            "search refused: {} testlets exceed the partition bound".format(G)
        )
    thresholded = structure.with_loadings(structure.thresholded(zero_tol))
    A = thresholded.loadings
    testlets = list(structure.testlets())
    for size in range(1, G):
        for first in combinations(testlets, size):
            second = [g for g in testlets if g not in first]
            block = thresholded.group_block(first)
            if _rank(block, tol, exact) != L + len(first):
                continue
            if _rank(A[structure.items_of(second), :L], tol, exact) == L:
                return tuple(first), tuple(second)
    return None


@dataclass
class StructuralReport:
    """Structural sets of one loading structure, as used by the checkers."""

    n_items: int
    n_primary: int
    n_testlets: int
    q: dict
    zero_tol: float = ZERO_TOL
    rank_tol: float = RANK_TOL
    q0: Optional[dict] = None
    h_sets: dict = field(default_factory=dict)
    h2_witness: dict = field(default_factory=dict)
    h2_refused: tuple = ()
    margins: dict = field(default_factory=dict)
    kruskal: dict = field(default_factory=dict)
    identity: Optional[dict] = None
    t3s: object = None
    c0: Optional[SearchResult] = None
    c1: Optional[SearchResult] = None

    def q_sizes(self):
        return {g: len(items) for g, items in self.q.items()}

    def size(self, name):
        return len(self.h_sets[name])

    def to_dict(self):
        out = {
            "n_items": self.n_items,
            "n_primary": self.n_primary,
            "n_testlets": self.n_testlets,
            "zero_tol": self.zero_tol,
            "rank_tol": self.rank_tol,
            "Q": {g: _one_based(items) for g, items in self.q.items()},
            "Q_sizes": self.q_sizes(),
            "H": {name: list(members) for name, members in self.h_sets.items()},
            "H_sizes": {name: len(members) for name, members in self.h_sets.items()},
            "H2_witness": {g: _one_based(split) for g, split in self.h2_witness.items()},
            "rank_margins": self.margins,
        }
        if self.q0 is not None:
            out["Q0"] = {g: _one_based(items) for g, items in self.q0.items()}
        if self.h2_refused:
            out["H2_refused"] = list(self.h2_refused)
        if self.kruskal:
            out["kruskal"] = self.kruskal
        if self.identity is not None:
            out["contains_identity"] = self.identity
        if self.t3s is not None:
            out["T3S_partition"] = self.t3s
        if self.c0 is not None:
            out["C0"] = self.c0.to_dict()
        if self.c1 is not None:
            out["C1"] = self.c1.to_dict()
        return out


def structural_report(
    structure,
    two_tier=False,
    link="linear",
    zero_tol=ZERO_TOL,
    tol=RANK_TOL,
    exact=False,
    row_limit=EXACT_ROW_LIMIT,
    seed=0,
):
    """
    Compute the structural sets a checker needs. Bifactor structures (L=1,
    not two-tier) get Q, Q0 and H1/H2/H3/H6; two-tier structures get Q,
    H4/H5, the contains-identity tests, the T3S partition and C0 (linear)
    or C1 (probit).
    """
    thresholded = structure.with_loadings(structure.thresholded(zero_tol))
    report = StructuralReport(
        n_items=structure.n_items,
        n_primary=structure.n_primary,
        n_testlets=structure.n_testlets,
        q={g: compute_q(structure, g, zero_tol) for g in structure.testlets()},
        zero_tol=zero_tol,
        rank_tol=tol,
    )
    for g in structure.testlets():
        report.margins[g] = rank_margin(thresholded.testlet_block(g), tol)[1]

    if not two_tier:
        _require_bifactor(structure, "bifactor report")
        report.q0 = {g: compute_q0(structure, g, zero_tol) for g in structure.testlets()}
        report.h_sets["H1"] = compute_h1(structure, zero_tol)
        report.h_sets["H6"] = compute_h6(structure, zero_tol)
        report.h_sets["H3"] = compute_h3(structure, zero_tol, tol, exact)
        refused = []
        witness = {}
        for g in structure.testlets():
            items = structure.items(g)
            try:
                split = h2_partition(thresholded.testlet_block(g), tol, exact, row_limit)
            except SearchBudgetError:
                refused.append(g)
                continue
            if split is not None:
                witness[g] = tuple(tuple(int(items[r]) for r in side) for side in split)
        report.h_sets["H2"] = tuple(sorted(witness))
        report.h2_witness = witness
        report.h2_refused = tuple(refused)
        return report

    L = structure.n_primary
    A = thresholded.loadings
    report.h_sets["H4"] = compute_h4(structure, zero_tol, tol, exact)
    report.h_sets["H5"] = compute_h5(structure, zero_tol, tol, exact)
    h4_rows = structure.items_of(report.h_sets["H4"])
    in_h4 = contains_identity(A[h4_rows, :L], zero_tol)[0] if h4_rows.size else False
    in_all = contains_identity(A[:, :L], zero_tol)[0]
    report.identity = {"H4_items": bool(in_h4), "all_items": bool(in_all)}
    try:
        report.t3s = t3s_partition(structure, zero_tol, tol, exact)
    except SearchBudgetError:
        report.t3s = "refused"
    if link == "linear":
        report.c0 = check_c0(A, zero_tol, tol, exact, row_limit, seed=seed)
    else:
        report.c1 = check_c1(A, zero_tol, tol, exact, row_limit, seed=seed)
    return report
