"""
Identifiability verdicts and observational-equivalence certificates.

The checkers map a parameter set to a Verdict using the structural report
alone. The constructors build a second, different parameter set with the
same observable moments; every certificate they hand out has been verified
numerically. Probit models are handled through their linear view (reduced
loadings with unique variances 1 - a~^T Sigma a~), on which the probit
moments are the off-diagonal covariances.
"""
from itertools import permutations
import logging
import numpy as np
from scipy import linalg, optimize
from .model import (
    Certificate,
    InvalidParameterError,
    UnrestrictedRhoParams,
    Verdict,
    ZERO_TOL,
    normalize_signs,
    validate,
)
from .moments import MomentError, moment_distance, quad_form, recover_rows, reduce_rows
from .simulate import rng_stream
from .structural import (
    RANK_TOL,
    compute_h1,
    compute_h3,
    compute_h6,
    compute_q,
    compute_q0,
    kruskal_rank,
    structural_report,
)

MOMENT_TOL = 1e-8
PARAM_GAP = 1e-3
RANGE_TOL = 1e-8
PROBE_RESTARTS = 20
PROBE_FIT_TOL = 1e-10
PROBE_PATTERN_FLOOR = 1e-6
CONSTRUCTIONS = (
    "scaling",
    "main-scaling",
    "case2c",
    "rotation",
    "main-block",
    "rho-perturb",
    "theorem10",
    "free-rho",
    "probe",
)
FREE_RHO_RULE = "Theorem10"

logger = logging.getLogger(__name__)


class PreconditionError(ValueError):
    """The parameter set does not meet a constructor's precondition."""

    pass


class CertificateError(RuntimeError):
    """A construction did not produce a verified equivalent parameter set."""

    pass


_CONSTRUCTION_FAILURES = (CertificateError, InvalidParameterError, MomentError, linalg.LinAlgError)


def param_distance(first, second):
    """Max-norm gap between two parameter sets of the same shape."""
    gaps = [
        np.max(np.abs(first.loadings - second.loadings)),
        np.max(np.abs(first.intercepts - second.intercepts)),
        np.max(np.abs(first.latent_cov - second.latent_cov)),
    ]
    if first.unique_vars is not None and second.unique_vars is not None:
        gaps.append(np.max(np.abs(first.unique_vars - second.unique_vars)))
    return float(max(gaps))


def verify_certificate(certificate, link=None):
    """Recompute the moment distance of a certificate."""
    return moment_distance(certificate.original, certificate.alternate, link)


def _linear_view(params):
    """Linear-link counterpart of a probit model with identical off-diagonal
    moments; linear models are returned unchanged."""
    if params.link == "linear":
        return params
    cov = params.latent_cov
    reduced = reduce_rows(params.loadings, cov)
    return params.replace(
        loadings=reduced, unique_vars=1.0 - quad_form(reduced, cov), link="linear"
    )


def _from_view(view, original):
    """Map an alternate linear view back to the link of original."""
    if original.link == "linear":
        return view
    cov = view.latent_cov
    loadings = recover_rows(view.loadings, cov)
    scale_before = np.sqrt(quad_form(original.loadings, original.latent_cov) + 1.0)
    scale_after = np.sqrt(quad_form(loadings, cov) + 1.0)
    return view.replace(
        loadings=loadings,
        intercepts=original.intercepts * scale_after / scale_before,
        unique_vars=None,
        link="probit",
    )


def _preserve_diagonal(view, loadings, cov):
    """Unique variances that keep the implied variances of view fixed."""
    lam = view.unique_vars + quad_form(view.loadings, view.latent_cov) - quad_form(loadings, cov)
    if np.any(lam <= 0):
        j = int(np.flatnonzero(lam <= 0)[0])
        raise CertificateError(
            "unique variance of item {} would become {:.4g}".format(j + 1, lam[j])
        )
    return lam


def _finish(original, view, alternate_loadings, alternate_cov, construction):
    """Assemble, normalize and verify the alternate parameter set."""
    lam = _preserve_diagonal(view, alternate_loadings, alternate_cov)
    alternate = view.replace(
        loadings=alternate_loadings, latent_cov=alternate_cov, unique_vars=lam
    )
    alternate = normalize_signs(_from_view(alternate, original))
    validate(alternate)
    if original.kind == "two_tier" and not np.array_equal(
        original.structure.pattern(), alternate.structure.pattern()
    ):
        raise CertificateError("alternate changes the two-tier sparsity pattern")
    moments_gap = moment_distance(original, alternate)
    params_gap = param_distance(original, alternate)
    if moments_gap >= MOMENT_TOL:
        raise CertificateError(
            "{} alternate misses the moments by {:.3g}".format(construction, moments_gap)
        )
    if params_gap <= PARAM_GAP:
        raise CertificateError(
            "{} alternate is only {:.3g} away from the original".format(construction, params_gap)
        )
    logger.info(
        "%s certificate: moment distance %.3g, parameter distance %.3g",
        construction,
        moments_gap,
        params_gap,
    )
    return Certificate(original, alternate, construction, moments_gap, params_gap)


def _search_knob(build, center, first_step=0.25, n_halvings=10):
    """Try center +/- step for shrinking steps until build succeeds."""
    last_error = None
    step = first_step
    for _ in range(n_halvings):
        for knob in (center + step, center - step):
            try:
                return build(knob)
            except _CONSTRUCTION_FAILURES as e:
                last_error = e
        step /= 2.0
    raise CertificateError("no admissible knob near {}: {}".format(center, last_error))


def _run(build, knob, center, first_step=0.25):
    if knob is None:
        return _search_knob(build, center, first_step)
    try:
        return build(knob)
    except (InvalidParameterError, MomentError, linalg.LinAlgError) as e:
        raise CertificateError("knob {} rejected: {}".format(knob, e))


def _require_bifactor(params, construction):
    if params.structure.n_primary != 1 or params.kind == "two_tier":
        raise PreconditionError(
            "{} needs a bifactor model with one primary factor".format(construction)
        )


def _correlated(params, g, zero_tol):
    if params.kind != "extended":
        return False
    cov = params.testlet_cov
    return bool(np.any(np.abs(np.delete(cov[g - 1], g - 1)) > zero_tol))


def construct_scaling_certificate(params, g=None, c=None, zero_tol=ZERO_TOL):
    """
    Rescale the testlet loadings of a testlet with at most two items:
    a_g[j1] * c and a_g[j2] / c, or a single a_g * c with unique variances
    absorbing the change. A single-item testlet that correlates with other
    testlets also has its Sigma_G row divided by c.
    """
    if isinstance(params, UnrestrictedRhoParams):
        raise PreconditionError("scaling does not apply to unrestricted-rho parameters")
    structure = params.structure
    candidates = [h for h in structure.testlets() if len(compute_q(structure, h, zero_tol)) <= 2]
    if g is None:
        usable = [
            h
            for h in candidates
            if len(compute_q(structure, h, zero_tol)) == 1 or not _correlated(params, h, zero_tol)
        ]
        if not usable:
            raise PreconditionError("no testlet has |Q_g| <= 2")
        g = usable[0]
    q = compute_q(structure, g, zero_tol)
    if len(q) > 2:
        raise PreconditionError("testlet {} has |Q_g| = {} >= 3".format(g, len(q)))
    correlated = _correlated(params, g, zero_tol)
    if len(q) == 2 and correlated:
        raise PreconditionError(
            "testlet {} has two loaded items and correlates with other testlets".format(g)
        )
    column = structure.testlet_column(g)
    view = _linear_view(params)

    def build(factor):
        A = view.loadings
        cov = view.latent_cov
        A[q[0], column] *= factor
        if len(q) == 2:
            A[q[1], column] /= factor
        elif correlated:
            others = [k for k in range(cov.shape[0]) if k != column]
            cov[column, others] /= factor
            cov[others, column] /= factor
        return _finish(params, view, A, cov, "scaling")

    return _run(build, c, 1.0)


def construct_main_scaling_certificate(params, c=None, zero_tol=ZERO_TOL):
    """
    With two main-loaded testlets, each holding a single main-loaded item
    j1 and j2, scale a0[j1] by c and a0[j2] by 1/c.
    """
    _require_bifactor(params, "main-scaling")
    if isinstance(params, UnrestrictedRhoParams):
        raise PreconditionError("main-scaling does not apply to unrestricted-rho parameters")
    structure = params.structure
    h1 = compute_h1(structure, zero_tol)
    if len(h1) != 2 or compute_h6(structure, zero_tol):
        raise PreconditionError("main-scaling needs |H1| = 2 and an empty H6")
    j1 = compute_q0(structure, h1[0], zero_tol)[0]
    j2 = compute_q0(structure, h1[1], zero_tol)[0]
    view = _linear_view(params)

    def build(factor):
        A = view.loadings
        A[j1, 0] *= factor
        A[j2, 0] /= factor
        return _finish(params, view, A, view.latent_cov, "main-scaling")

    return _run(build, c, 1.0)


def _rank_one_offdiagonal(target, reference, tol=1e-9):
    """
    Solve x_i x_j = target[i, j] for all i != j. The sign of the solution
    follows reference at the anchor item.
    """
    n = target.shape[0]
    scale = max(np.max(np.abs(target)), 1.0)
    for i, j, k in permutations(range(n), 3):
        if j > k:
            continue
        t_ij, t_ik, t_jk = target[i, j], target[i, k], target[j, k]
        if min(abs(t_ij), abs(t_ik), abs(t_jk)) <= tol * scale:
            continue
        square = t_ij * t_ik / t_jk
        if square <= 0:
            raise CertificateError("testlet loadings have no real solution at this knob")
        anchor = np.sqrt(square) * (-1.0 if reference[i] < 0 else 1.0)
        x = target[i] / anchor
        x[i] = anchor
        residual = np.outer(x, x) - target
        np.fill_diagonal(residual, 0.0)
        if np.max(np.abs(residual)) > tol * scale:
            raise CertificateError("off-diagonal target is not of rank one")
        return x
    raise CertificateError("no anchor triple with nonzero off-diagonal entries")


def construct_case2c_certificate(params, g=None, c=None, zero_tol=ZERO_TOL):
    """
    For two main-loaded testlets with at least three loaded items each and no
    H2 testlet: scale the main loadings by c on testlet g and by 1/c on the
    other, then re-solve each testlet column so that the within-testlet
    off-diagonal covariances are unchanged.
    """
    _require_bifactor(params, "case2c")
    if params.kind != "standard":
        raise PreconditionError("case2c applies to the standard bifactor model")
    report = structural_report(params.structure, zero_tol=zero_tol)
    h1 = report.h_sets["H1"]
    if (
        len(h1) != 2
        or min(report.q_sizes().values()) < 3
        or not report.h_sets["H6"]
        or report.h_sets["H2"]
        or report.h2_refused
    ):
        raise PreconditionError(
            "case2c needs |Q_g| >= 3, |H1| = 2, a nonempty H6 and an empty H2"
        )
    if g is None:
        g = h1[0]
    if g not in h1:
        raise PreconditionError("testlet {} has no main loadings".format(g))
    other = h1[1] if g == h1[0] else h1[0]
    structure = params.structure
    view = _linear_view(params)

    def build(factor):
        A0 = view.loadings
        A = A0.copy()
        for h, f in ((g, factor), (other, 1.0 / factor)):
            rows = structure.items(h)
            column = structure.testlet_column(h)
            a0, ag = A0[rows, 0], A0[rows, column]
            A[rows, 0] = f * a0
            target = (1.0 - f * f) * np.outer(a0, a0) + np.outer(ag, ag)
            A[rows, column] = _rank_one_offdiagonal(target, ag)
        return _finish(params, view, A, view.latent_cov, "case2c")

    return _run(build, c, 1.0, first_step=0.1)


def rotation_pairs(params, zero_tol=ZERO_TOL):
    """
    (primary column, testlet) pairs whose loadings can be rotated jointly:
    the primary factor loads only inside that testlet and both factors are
    uncorrelated with every other factor.
    """
    structure = params.structure
    A = structure.thresholded(zero_tol)
    cov = params.latent_cov
    L = structure.n_primary
    pairs = []
    for l in range(L):
        support = np.flatnonzero(A[:, l])
        testlets = {structure.assignment[j] for j in support}
        if len(testlets) != 1:
            continue
        g = testlets.pop()
        column = structure.testlet_column(g)
        off = [k for k in range(cov.shape[0]) if k not in (l, column)]
        if np.any(np.abs(cov[[l, column]][:, off]) > zero_tol) or abs(cov[l, column]) > zero_tol:
            continue
        rows = structure.items(g)
        if params.kind == "two_tier" and not np.all(A[rows][:, [l, column]] != 0):
            continue
        pairs.append((l, g))
    return pairs


def construct_rotation_certificate(params, theta=None, pair=None, zero_tol=ZERO_TOL):
    """
    Rotate the (primary, testlet) loading pair of one testlet by theta. The
    two factors are independent with unit variance, so every implied
    covariance is unchanged.
    """
    pairs = rotation_pairs(params, zero_tol)
    if pair is None:
        if not pairs:
            raise PreconditionError("no primary factor is confined to a single testlet")
        pair = pairs[0]
    elif tuple(pair) not in pairs:
        raise PreconditionError("pair {} cannot be rotated".format(tuple(pair)))
    l, g = pair
    structure = params.structure
    rows = structure.items(g)
    columns = [l, structure.testlet_column(g)]
    view = _linear_view(params)

    def build(angle):
        A = view.loadings
        A[np.ix_(rows, columns)] = A[np.ix_(rows, columns)] @ _rotation(angle)
        return _finish(params, view, A, view.latent_cov, "rotation")

    return _run(build, theta, 0.0, first_step=0.4)


def _zero_constraints(main, zero_tol):
    """Per primary column, an orthonormal basis of the main rows that must
    stay orthogonal to the new column."""
    L = main.shape[1]
    bases = []
    for l in range(L):
        rows = main[np.abs(main[:, l]) <= zero_tol]
        rows = rows[np.any(np.abs(rows) > zero_tol, axis=1)]
        bases.append(linalg.orth(rows.T) if rows.size else np.zeros((L, 0)))
    return bases


def construct_main_block_certificate(params, delta=None, seed=0, zero_tol=ZERO_TOL):
    """
    Two-tier change of basis of the primary block: A_main T with
    T^-1 Sigma_L T^-T of unit diagonal, and T keeping every zero of A_main.
    A direction is taken from the null space of the linearized constraints
    at T = I and projected back onto the constraint set.
    """
    if params.kind != "two_tier":
        raise PreconditionError("main-block applies to the two-tier model")
    structure = params.structure
    L = structure.n_primary
    if L < 2:
        raise PreconditionError("main-block needs at least two primary factors")
    view = _linear_view(params)
    A0 = view.loadings
    main = structure.thresholded(zero_tol)[:, :L]
    sigma = view.latent_cov[:L, :L]
    bases = _zero_constraints(main, zero_tol)

    def residual(flat):
        T = flat.reshape(L, L)
        parts = [bases[l].T @ T[:, l] for l in range(L)]
        inverse = np.linalg.inv(T)
        parts.append(np.diag(inverse @ sigma @ inverse.T) - 1.0)
        return np.concatenate(parts)

    rows = []
    for l in range(L):
        for b in bases[l].T:
            row = np.zeros((L, L))
            row[:, l] = b
            rows.append(row.ravel())
    for l in range(L):
        row = np.zeros((L, L))
        row[l, :] = -2.0 * sigma[:, l]
        rows.append(row.ravel())
    directions = linalg.null_space(np.array(rows))
    if directions.shape[1] == 0:
        raise PreconditionError("primary block admits no pattern-preserving change of basis")
    rng = rng_stream(seed)
    direction = directions @ rng.standard_normal(directions.shape[1])
    direction /= np.linalg.norm(direction)

    def build(step):
        start = np.eye(L).ravel() + step * direction
        solution = optimize.least_squares(residual, start, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if np.max(np.abs(solution.fun)) > 1e-10:
            raise CertificateError("projection onto the constraint set failed")
        T = solution.x.reshape(L, L)
        inverse = np.linalg.inv(T)
        new_sigma = inverse @ sigma @ inverse.T
        new_sigma = (new_sigma + new_sigma.T) / 2.0
        scale = np.sqrt(np.diag(new_sigma))
        new_sigma /= np.outer(scale, scale)
        new_main = (A0[:, :L] @ T) * scale
        zeros = np.abs(main) <= zero_tol
        if np.max(np.abs(new_main[zeros]), initial=0.0) > 1e-8:
            raise CertificateError("change of basis does not keep the zero pattern")
        new_main[zeros] = 0.0
        if np.any(np.abs(new_main[~zeros]) <= PROBE_PATTERN_FLOOR):
            raise CertificateError("change of basis creates a new zero loading")
        A = A0.copy()
        A[:, :L] = new_main
        cov = view.latent_cov
        cov[:L, :L] = new_sigma
        return _finish(params, view, A, cov, "main-block")

    return _run(build, delta, 0.0, first_step=0.3)


def _rotation(angle):
    return np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])


def construct_extended_rho_perturbation(params, delta=None, zero_tol=ZERO_TOL):
    """
    Extended model with at most one testlet of rank 2: rotate the (main,
    testlet) loadings of an anchor testlet by delta and solve for the
    rotations of the other testlets and the testlet correlations that keep
    every cross-testlet covariance. delta shrinks until Sigma stays positive
    definite.
    """
    if params.kind != "extended" or isinstance(params, UnrestrictedRhoParams):
        raise PreconditionError("rho-perturb applies to the extended bifactor model")
    structure = params.structure
    h3 = compute_h3(structure, zero_tol)
    if len(h3) > 1:
        raise PreconditionError("rho-perturb needs |H3| <= 1, found {}".format(len(h3)))
    anchor = h3[0] if h3 else 1
    G = structure.n_testlets
    view = _linear_view(params)
    A0 = view.loadings
    sigma = view.testlet_cov
    blocks = {}
    for g in structure.testlets():
        block = A0[np.ix_(structure.items(g), [0, structure.testlet_column(g)])]
        blocks[g] = block if block.shape[0] <= 2 else np.linalg.qr(block, mode="r")
    free = [g for g in structure.testlets() if g != anchor]
    pairs = [(g, h) for g in structure.testlets() for h in structure.testlets() if g < h]

    def unpack(x, angle):
        angles = {anchor: angle}
        angles.update(zip(free, x[: len(free)]))
        return angles, dict(zip(pairs, x[len(free) :]))

    def residual(x, angle):
        angles, correlations = unpack(x, angle)
        parts = []
        for g, h in pairs:
            before = np.diag([1.0, sigma[g - 1, h - 1]])
            after = np.diag([1.0, correlations[(g, h)]])
            middle = _rotation(angles[g]) @ after @ _rotation(angles[h]).T - before
            parts.append((blocks[g] @ middle @ blocks[h].T).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def build(angle):
        x0 = np.concatenate([np.zeros(len(free)), [sigma[g - 1, h - 1] for g, h in pairs]])
        if x0.size:
            solution = optimize.least_squares(
                residual, x0, args=(angle,), xtol=1e-15, ftol=1e-15, gtol=1e-15
            )
            if np.max(np.abs(solution.fun)) > 1e-11:
                raise CertificateError("cross-testlet covariances cannot be matched")
            x = solution.x
        else:
            x = x0
        angles, correlations = unpack(x, angle)
        A = A0.copy()
        cov = view.latent_cov
        for g in structure.testlets():
            rows = structure.items(g)
            columns = [0, structure.testlet_column(g)]
            A[np.ix_(rows, columns)] = A0[np.ix_(rows, columns)] @ _rotation(angles[g])
        for (g, h), value in correlations.items():
            cov[g, h] = cov[h, g] = value
        return _finish(params, view, A, cov, "rho-perturb")

    if delta is not None and delta == 0:
        raise CertificateError("delta = 0 reproduces the original parameters")
    start = 0.2 if delta is None else float(delta)
    last_error = None
    for _ in range(12):
        for angle in ((start, -start) if delta is None else (start,)):
            try:
                return build(angle)
            except _CONSTRUCTION_FAILURES as e:
                last_error = e
        start /= 2.0
    raise CertificateError("no admissible delta: {}".format(last_error))


def free_rho_range(params):
    """Least-squares fit of a0 by the testlet columns: (b0, relative
    residual). a0 lies in the column space when the residual is tiny."""
    A = _linear_view(params).loadings
    a0, testlet_columns = A[:, 0], A[:, 1:]
    b0 = np.linalg.lstsq(testlet_columns, a0, rcond=None)[0]
    relative = np.linalg.norm(testlet_columns @ b0 - a0) / np.linalg.norm(a0)
    return b0, float(relative)


def construct_free_rho_certificate(params, knob=None):
    """
    Equivalent parameters for the extended model with free primary-testlet
    correlations rho. When a0 = A_G b0 the primary loadings shrink to
    (sqrt(1 + c^2) - c) a0 and rho moves to c b0 + (c + sqrt(1 + c^2)) rho.
    Otherwise rho is shifted along a fixed direction, Sigma_G rescaled to
    unit diagonal and A_G stretched to compensate.
    """
    if not isinstance(params, UnrestrictedRhoParams):
        raise PreconditionError("free-rho needs unrestricted-rho parameters")
    view = _linear_view(params)
    A0 = view.loadings
    cov0 = view.latent_cov
    a0, AG = A0[:, 0], A0[:, 1:]
    rho, sigma_g = cov0[0, 1:], cov0[1:, 1:]
    b0, relative = free_rho_range(params)
    in_range = relative < RANGE_TOL
    logger.info("a0 %s the testlet column space (relative residual %.3g)",
                "lies in" if in_range else "is outside", relative)

    def assemble(new_a0, new_AG, new_rho, new_sigma_g):
        A = np.column_stack([new_a0, new_AG])
        cov = np.eye(cov0.shape[0])
        cov[0, 1:] = cov[1:, 0] = new_rho
        cov[1:, 1:] = (new_sigma_g + new_sigma_g.T) / 2.0
        np.fill_diagonal(cov, 1.0)
        return _finish(params, view, A, cov, "free-rho")

    def build_in_range(c):
        root = np.sqrt(1.0 + c * c)
        return assemble((root - c) * a0, AG, c * b0 + (c + root) * rho, sigma_g)

    direction = np.ones(rho.size) / np.sqrt(rho.size)

    def build_generic(eps):
        shifted = rho + eps * direction
        inner = sigma_g - np.outer(rho, rho) + np.outer(shifted, shifted)
        diagonal = np.diag(inner)
        if np.any(diagonal <= 0):
            raise CertificateError("shifted rho leaves no positive testlet variance")
        scale = np.sqrt(diagonal)
        return assemble(
            a0 + AG @ (rho - shifted),
            AG * scale,
            shifted / scale,
            inner / np.outer(scale, scale),
        )

    if in_range:
        return _run(build_in_range, knob, 0.0)
    return _run(build_generic, knob, 0.0, first_step=0.2)


def _probe_layout(view):
    """Free-parameter layout of a linear view: pattern loadings, free
    correlations and log unique variances."""
    structure = view.structure
    pattern = structure.pattern()
    L = structure.n_primary
    K = structure.n_factors
    if isinstance(view, UnrestrictedRhoParams):
        free_cov = [(r, c) for r in range(K) for c in range(r + 1, K)]
    elif view.kind == "extended":
        free_cov = [(r, c) for r in range(L, K) for c in range(r + 1, K)]
    elif view.kind == "two_tier":
        free_cov = [(r, c) for r in range(L) for c in range(r + 1, L)]
    else:
        free_cov = []
    return pattern, free_cov


def probe_equivalence(params, n_restarts=PROBE_RESTARTS, seed=0, scale=0.3):
    """
    Search numerically for a different parameter set with the same moments:
    random restarts around the original, each fitted to its implied
    covariance by nonlinear least squares on the original sparsity pattern.
    Returns a verified Certificate, or None when every restart falls back
    onto the original.
    """
    view = _linear_view(params)
    pattern, free_cov = _probe_layout(view)
    K = view.structure.n_factors
    J = view.n_items
    upper = np.triu_indices(J)
    cov0 = view.latent_cov
    target = (view.loadings @ cov0 @ view.loadings.T + np.diag(view.unique_vars))[upper]
    truth = np.concatenate(
        [
            view.loadings[pattern],
            [cov0[r, c] for r, c in free_cov],
            np.log(view.unique_vars),
        ]
    )
    n_loadings = int(pattern.sum())
    n_cov = len(free_cov)

    def unpack(x):
        A = np.zeros(pattern.shape)
        A[pattern] = x[:n_loadings]
        cov = np.eye(K)
        for (r, c), value in zip(free_cov, x[n_loadings : n_loadings + n_cov]):
            cov[r, c] = cov[c, r] = value
        return A, cov, np.exp(x[n_loadings + n_cov :])

    def residual(x):
        A, cov, lam = unpack(x)
        return (A @ cov @ A.T + np.diag(lam))[upper] - target

    for restart in range(n_restarts):
        rng = rng_stream(seed, restart)
        start = truth + scale * rng.standard_normal(truth.size) * (1.0 + np.abs(truth))
        solution = optimize.least_squares(
            residual, start, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000
        )
        if np.max(np.abs(solution.fun)) > PROBE_FIT_TOL:
            continue
        A, cov, _ = unpack(solution.x)
        if params.kind == "two_tier" and np.any(np.abs(A[pattern]) <= PROBE_PATTERN_FLOOR):
            continue
        try:
            np.linalg.cholesky(cov)
            certificate = _finish(params, view, A, cov, "probe")
        except _CONSTRUCTION_FAILURES as e:
            logger.debug("probe restart %d rejected: %s", restart, e)
            continue
        logger.info("probe found an equivalent parameter set on restart %d", restart)
        return certificate
    return None


def _standard_case(report):
    small = min(report.q_sizes().values()) <= 2
    h1 = report.size("H1")
    if h1 >= 3:
        return "1b" if small else "1a"
    if h1 == 2:
        if small:
            return "2a"
        if report.size("H6") == 0:
            return "2b"
        return "2d" if report.size("H2") >= 1 else "2c"
    return "3"


def _require_kind(params, kind, name):
    if params.kind != kind or isinstance(params, UnrestrictedRhoParams):
        raise PreconditionError("{} needs a {} model, got {}".format(name, kind, params.kind))


def check_standard(params, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Verdict for the standard bifactor model from P1 and P2."""
    _require_kind(params, "standard", "check_standard")
    validate(params, zero_tol)
    report = structural_report(params.structure, zero_tol=zero_tol, tol=tol, exact=exact)
    evidence = report.to_dict()
    case = _standard_case(report)
    if case == "2c" and report.h2_refused:
        return Verdict("undetermined", "H2-search-refused", evidence, proof_case=None)
    if case == "1a":
        return Verdict("identifiable", "P1", evidence, proof_case=case)
    if case == "2d":
        return Verdict("identifiable", "P2", evidence, proof_case=case)
    return Verdict("non_identifiable", "P1-P2-violated", evidence, proof_case=case)


def extended_conditions(params, report, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Truth values of the extended-model conditions with E3S witnesses."""
    q = report.q_sizes()
    isolated = {g: not _correlated(params, g, zero_tol) for g in q}
    h3 = report.h_sets["H3"]
    all_three = min(q.values()) >= 3
    conditions = {
        "E1N": all(size >= 2 and (size >= 3 or not isolated[g]) for g, size in q.items()),
        "E2N": len(h3) >= 2,
        "E1S": all_three and len(h3) >= 3,
        "E2S": all_three and len(h3) == 2 and report.size("H2") >= 1,
    }
    sigma = params.testlet_cov
    witness = None
    for g1 in h3:
        for g2 in h3:
            if g1 == g2 or abs(sigma[g1 - 1, g2 - 1]) <= zero_tol:
                continue
            if q[g1] < 3 or q[g2] < 3:
                continue
            block = params.structure.thresholded(zero_tol)[
                np.ix_(params.structure.items(g1), [0, params.structure.testlet_column(g1)])
            ]
            if kruskal_rank(block.T, tol, exact) == 2:
                witness = (g1, g2)
                break
        if witness is not None:
            break
    conditions["E3S"] = conditions["E1N"] and conditions["E2N"] and witness is not None
    return conditions, witness


def check_extended(params, probe=False, seed=0, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Verdict for the extended bifactor model (correlated testlets)."""
    _require_kind(params, "extended", "check_extended")
    validate(params, zero_tol)
    report = structural_report(params.structure, zero_tol=zero_tol, tol=tol, exact=exact)
    conditions, witness = extended_conditions(params, report, zero_tol, tol, exact)
    evidence = report.to_dict()
    evidence["conditions"] = conditions
    if witness is not None:
        evidence["E3S_pair"] = list(witness)
        evidence["kruskal"] = {witness[0]: 2}

    violated = [name for name in ("E1N", "E2N") if not conditions[name]]
    if violated:
        return Verdict("non_identifiable", "+".join(violated) + "-violated", evidence)
    for name in ("E1S", "E2S", "E3S"):
        if conditions[name]:
            return Verdict("identifiable", name, evidence)
    return _undetermined(params, evidence, probe, seed)


def check_two_tier(params, probe=False, seed=0, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Verdict for the two-tier model: C0 (linear) or C1 (probit) together
    with one of T1S, T2S, T3S."""
    _require_kind(params, "two_tier", "check_two_tier")
    validate(params, zero_tol)
    report = structural_report(
        params.structure, two_tier=True, link=params.link, zero_tol=zero_tol, tol=tol,
        exact=exact, seed=seed,
    )
    evidence = report.to_dict()
    search = report.c0 if params.link == "linear" else report.c1
    name = "C0" if params.link == "linear" else "C1"
    h4, h5 = report.size("H4"), report.size("H5")
    conditions = {
        name: search.holds,
        "T1S": h4 >= 3 and report.identity["H4_items"],
        "T2S": h4 >= 2 and h5 >= 1 and report.identity["H4_items"],
        "T3S": report.identity["all_items"] and isinstance(report.t3s, tuple),
    }
    evidence["conditions"] = conditions
    fired = next((t for t in ("T1S", "T2S", "T3S") if conditions[t]), None)
    if fired is not None and search.holds:
        return Verdict("identifiable", fired, evidence)
    if fired is not None and search.holds is None:
        return Verdict("undetermined", "{}-inconclusive".format(name), evidence)
    return _undetermined(params, evidence, probe, seed)


def _undetermined(params, evidence, probe, seed):
    if probe:
        certificate = probe_equivalence(params, seed=seed)
        if certificate is not None:
            return Verdict("non_identifiable", "probe", evidence, certificate=certificate)
        evidence["probe"] = "no equivalent parameter set found"
    return Verdict("undetermined", "no-sufficient-condition", evidence)


def check_unrestricted_rho(params, knob=None):
    """Extended model with free rho: never identifiable."""
    if not isinstance(params, UnrestrictedRhoParams):
        raise PreconditionError("check_unrestricted_rho needs unrestricted-rho parameters")
    validate(params)
    b0, relative = free_rho_range(params)
    evidence = {"a0_in_testlet_span": relative < RANGE_TOL, "range_residual": relative,
                "b0": b0}  # fmt: skip
    try:
        certificate = construct_free_rho_certificate(params, knob)
    except CertificateError as e:
        evidence["certificate_error"] = str(e)
        certificate = None
    return Verdict("non_identifiable", FREE_RHO_RULE, evidence, certificate=certificate)


def check(params, probe=False, seed=0, zero_tol=ZERO_TOL, tol=RANK_TOL, exact=False):
    """Dispatch to the checker matching the kind of params."""
    if isinstance(params, UnrestrictedRhoParams):
        return check_unrestricted_rho(params)
    if params.kind == "standard":
        return check_standard(params, zero_tol, tol, exact)
    if params.kind == "extended":
        return check_extended(params, probe, seed, zero_tol, tol, exact)
    return check_two_tier(params, probe, seed, zero_tol, tol, exact)


def _extended_offender(params, report, zero_tol):
    for g, size in report.q_sizes().items():
        if size < 2 or (size < 3 and not _correlated(params, g, zero_tol)):
            return g
    return None


def certify(params, construction="auto", knob=None, seed=0):
    """
    Build a verified certificate of non-identifiability. With construction
    "auto" the verdict decides which construction applies; identifiable
    inputs raise PreconditionError.
    """
    if construction != "auto":
        if construction not in CONSTRUCTIONS:
            raise ValueError("Unknown construction {!r}".format(construction))
        if construction == "scaling":
            return construct_scaling_certificate(params, c=knob)
        if construction == "main-scaling":
            return construct_main_scaling_certificate(params, c=knob)
        if construction == "case2c":
            return construct_case2c_certificate(params, c=knob)
        if construction == "rotation":
            return construct_rotation_certificate(params, theta=knob)
        if construction == "main-block":
            return construct_main_block_certificate(params, delta=knob, seed=seed)
        if construction == "rho-perturb":
            return construct_extended_rho_perturbation(params, delta=knob)
        if construction in ("theorem10", "free-rho"):
            return construct_free_rho_certificate(params, knob)
        certificate = probe_equivalence(params, seed=seed)
        if certificate is None:
            raise CertificateError("probe found no equivalent parameter set")
        return certificate

    if isinstance(params, UnrestrictedRhoParams):
        return construct_free_rho_certificate(params, knob)
    verdict = check(params, seed=seed)
    if verdict.identifiable:
        raise PreconditionError("model is identifiable ({})".format(verdict.rule))

    if params.kind == "standard":
        case = verdict.proof_case
        if case in ("1b", "2a"):
            return construct_scaling_certificate(params, c=knob)
        if case == "2b":
            return construct_main_scaling_certificate(params, c=knob)
        if case == "2c":
            return construct_case2c_certificate(params, c=knob)
        if case == "3":
            return construct_rotation_certificate(params, theta=knob)
        raise PreconditionError("no construction for this verdict ({})".format(verdict.rule))

    attempts = []
    if params.kind == "extended":
        report = structural_report(params.structure)
        offender = _extended_offender(params, report, ZERO_TOL)
        if offender is not None:
            return construct_scaling_certificate(params, g=offender, c=knob)
        if report.size("H3") <= 1:
            return construct_extended_rho_perturbation(params, delta=knob)
    else:
        attempts = [
            lambda: construct_rotation_certificate(params, theta=knob),
            lambda: construct_main_block_certificate(params, delta=knob, seed=seed),
        ]
    for attempt in attempts:
        try:
            return attempt()
        except (PreconditionError, CertificateError) as e:
            logger.info("construction skipped: %s", e)
    certificate = probe_equivalence(params, seed=seed)
    if certificate is None:
        raise CertificateError("no equivalent parameter set found")
    return certificate
