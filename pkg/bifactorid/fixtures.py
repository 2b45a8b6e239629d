"""
Reference parameter sets: the six simulation cases and a library of named
worked examples. Every fixture comes back sign-normalized, so testlets whose
first loading is negative in the design have their column (and the matching
rows and columns of Sigma) flipped.
"""
import numpy as np
from .model import LoadingStructure, ModelParams, normalize_signs, validate

# Design of the 40-item master pool: items 1-10 load on testlet 1, 11-20 on
# testlet 2, 21-30 on testlet 3 and 31-40 on testlet 4.
INTERCEPTS = (
    1.51, .39, -.62, -2.21, 1.12, -.04, -.02, .94, .82, .59,
    .92, .78, .07, -1.99, .62, -.06, -.16, -1.47, -.48, .42,
    1.36, -.10, .39, -.05, -1.38, -.41, -.39, -.06, 1.10, .76,
    -.16, -.25, .70, .56, -.69, -.71, .36, .77, -.11, .88,
)  # fmt: skip
MAIN_LOADINGS = (1.0,) * 10 + (2.0,) * 10 + (1.0,) * 10 + (2.0,) * 10
TESTLET_LOADINGS = (
    (2.0,) * 10,
    (1.0,) * 10,
    (-.63, .18, -.84, 1.60, .33, -.82, .49, .74, .58, -.31),
    (-.56, -.23, 1.56, .07, .13, 1.72, .46, -1.27, -.69, -.45),
)
TESTLET_CORRELATIONS = np.array(
    [
        [1.0, .44, .32, .26],
        [.44, 1.0, .52, .21],
        [.32, .52, 1.0, .29],
        [.26, .21, .29, 1.0],
    ]
)

CASES = {
    1: ("standard", tuple(range(30))),
    2: ("standard", tuple(range(20))),
    3: ("standard", tuple(range(10)) + tuple(range(20, 30))),
    4: ("standard", (0, 10, 11) + tuple(range(20, 30))),
    5: ("extended", tuple(range(30))),
    6: ("extended", tuple(range(10)) + tuple(range(30, 40)) + tuple(range(20, 30))),
}


def _master_loadings():
    A = np.zeros((40, 5))
    A[:, 0] = MAIN_LOADINGS
    for g, column in enumerate(TESTLET_LOADINGS):
        A[10 * g : 10 * (g + 1), g + 1] = column
    return A


def fixture(case_id, link="probit"):
    """
    Return the parameter set of simulation case 1..6. The probit fixtures
    carry no unique variances; the linear analogues use lambda_j = 1.
    """
    if case_id not in CASES:
        raise ValueError("Unknown simulation case {!r}; expected 1..6".format(case_id))
    kind, items = CASES[case_id]
    master = LoadingStructure(_master_loadings(), [j // 10 + 1 for j in range(40)])
    structure = master.subset(items)
    kept = []
    for j in items:
        if j // 10 not in kept:
            kept.append(j // 10)

    cov = np.eye(1 + len(kept))
    if kind == "extended":
        cov[1:, 1:] = TESTLET_CORRELATIONS[np.ix_(kept, kept)]
    params = ModelParams(
        structure,
        np.array(INTERCEPTS)[list(items)],
        cov,
        np.ones(len(items)) if link == "linear" else None,
        kind=kind,
        link=link,
    )
    params = normalize_signs(params)
    validate(params)
    return params


def _bifactor(
    rows, assignment, intercepts=None, unique_vars=None, cov=None, kind="standard", link="linear"
):
    """Assemble an L=1 bifactor parameter set from (main, testlet) rows."""
    G = max(assignment)
    A = np.zeros((len(rows), 1 + G))
    for j, ((main, own), g) in enumerate(zip(rows, assignment)):
        A[j, 0] = main
        A[j, g] = own
    if intercepts is None:
        intercepts = np.zeros(len(rows))
    if link == "linear" and unique_vars is None:
        unique_vars = np.ones(len(rows))
    return ModelParams(
        LoadingStructure(A, assignment), intercepts, cov, unique_vars, kind=kind, link=link
    )


def _p2_example():
    a, b, c, d, e, f = 1.0, 0.8, 0.6, 1.2, 0.9, 0.7
    rows = [(a, b), (a, b), (c, d), (c, d), (e, f), (e, f), (e, f)]
    return _bifactor(rows, [1, 1, 1, 1, 2, 2, 2])


def _probit_nine():
    rows = [(0.9, 1.1), (0.8, 1.3), (1.0, 0.9),
            (1.2, 0.7), (0.6, 1.0), (0.9, 0.8),
            (1.0, 0.6), (0.7, 0.9), (1.1, 0.8)]  # fmt: skip
    d = [0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, -0.6, 0.4]
    return _bifactor(rows, [1, 1, 1, 2, 2, 2, 3, 3, 3], intercepts=d, link="probit")


def _probit_eight():
    rows = [(0.9, 1.1), (0.8, 1.3), (1.0, 0.9),
            (1.2, 0.7), (0.6, 1.0), (0.9, 0.8),
            (1.1, 0.6), (0.7, 1.2)]  # fmt: skip
    d = [0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, -0.6]
    return _bifactor(rows, [1, 1, 1, 2, 2, 2, 3, 3], intercepts=d, link="probit")


def _homogeneous(first, second):
    """Four items per testlet with identical (main, testlet) rows and unit
    observed variances."""
    rows = [first] * 4 + [second] * 4
    lam = [1.0 - a0 ** 2 - ag ** 2 for a0, ag in rows]
    return _bifactor(rows, [1] * 4 + [2] * 4, unique_vars=lam)


def _extended_two_item():
    rows = [(1.0, 0.7), (0.8, 1.2),
            (1.2, 0.9), (0.7, -0.4), (1.1, 0.5), (0.6, 1.3),
            (0.9, 1.1), (1.3, -0.6), (0.5, 0.8)]  # fmt: skip
    cov = np.eye(4)
    cov[1, 2] = cov[2, 1] = 0.3
    cov[1, 3] = cov[3, 1] = 0.25
    cov[2, 3] = cov[3, 2] = 0.4
    return _bifactor(rows, [1, 1, 2, 2, 2, 2, 3, 3, 3], cov=cov, kind="extended")


def _two_tier(A, assignment, n_primary):
    A = np.asarray(A, dtype=float)
    structure = LoadingStructure(A, assignment, n_primary)
    params = ModelParams(
        structure, np.zeros(A.shape[0]), None, np.ones(A.shape[0]), kind="two_tier"
    )
    return normalize_signs(params)


def _two_tier_confined():
    A = np.zeros((9, 5))
    A[0:3, 0] = 1.0
    A[0:3, 2] = (2.0, 3.0, 4.0)
    A[3:9, 1] = 1.0
    A[3:6, 3] = 1.0
    A[6:9, 4] = 3.0
    return _two_tier(A, [1] * 3 + [2] * 3 + [3] * 3, 2)


def _two_tier_rotated():
    A = np.zeros((9, 6))
    A[0:3, 0:3] = (0.0, 1.0, -1.0)
    A[0:3, 3] = (1.0, 2.0, 3.0)
    A[3:6, 0:3] = (2.0, 0.0, 1.0)
    A[3:6, 4] = (3.0, 2.0, 1.0)
    A[6:9, 0:3] = (1.0, 1.0, 0.0)
    A[6:9, 5] = (2.0, 3.0, 1.0)
    return _two_tier(A, [1] * 3 + [2] * 3 + [3] * 3, 3)


def _two_tier_split():
    A = np.zeros((16, 6))
    spread = (0.5, 1.0, 1.5, 2.0)
    for g in range(4):
        rows = slice(4 * g, 4 * g + 4)
        A[rows, g % 2] = 1.0
        A[rows, 2 + g] = spread
    return _two_tier(A, [g for g in (1, 2, 3, 4) for _ in range(4)], 2)


def _main_scaling():
    rows = [(0.8, 1.0), (0.0, 0.9), (0.0, 1.1), (0.6, 0.7), (0.0, 1.2), (0.0, 0.8)]
    return _bifactor(rows, [1, 1, 1, 2, 2, 2])


def _single_testlet():
    rows = [(0.9, 0.5), (0.7, 0.8), (0.8, 0.6), (0.0, 1.0), (0.0, 0.7), (0.0, 0.9)]
    return _bifactor(rows, [1, 1, 1, 2, 2, 2])


EXAMPLES = {
    "p2-example": _p2_example,
    "probit-nine": _probit_nine,
    "probit-eight": _probit_eight,
    "hwhb-equal": lambda: _homogeneous((0.8, 0.3), (0.8, 0.3)),
    "hwhb-unequal": lambda: _homogeneous((0.7, 0.4), (0.8, 0.3)),
    "extended-two-item": _extended_two_item,
    "two-tier-confined": _two_tier_confined,
    "two-tier-rotated": _two_tier_rotated,
    "two-tier-split": _two_tier_split,
    "main-scaling": _main_scaling,
    "single-testlet": _single_testlet,
}


def example(name):
    """Return the named worked example; see EXAMPLES for the names."""
    try:
        build = EXAMPLES[name]
    except KeyError:
        raise ValueError(
            "Unknown example {!r}; expected one of {}".format(name, ", ".join(sorted(EXAMPLES)))
        )
    params = build()
    validate(params)
    return params
