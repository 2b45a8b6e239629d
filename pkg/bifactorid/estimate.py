"""
Estimation of bifactor-family models from simulated data.

stem_fit runs stochastic EM on binary probit data: each iteration draws the
augmented responses and the latent traits given the current parameters,
then takes a few gradient-ascent steps on the complete-data log-likelihood.
linear_fit matches the sample covariance of linear data by L-BFGS-B.
"""
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
import numpy as np
import pandas as pd
from scipy import linalg, optimize, special
from .model import ModelParams, ZERO_TOL, normalize_signs
from .simulate import rng_stream

LAMBDA_FLOOR = 1e-4
CORRELATION_BOUND = 0.99
PROGRESS_EVERY = 500

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """A parameter block left the divergence bound."""

    def __init__(self, iteration, block, value):
        self.iteration = iteration
        self.block = block
        self.value = value
        super().__init__(
            "estimates diverged at iteration {}: max |{}| = {:.4g}".format(iteration, block, value)
        )

    def __reduce__(self):
        # Raised in bench worker processes.
        return (DivergenceError, (self.iteration, self.block, self.value))


class ProjectionError(RuntimeError):
    """A latent correlation block could not be projected to a correlation
    matrix."""

    pass


@dataclass(frozen=True)
class StemConfig:
    n_iter: int = 3000
    burn_in: int = 1500
    learning_rate: float = 0.8
    m_steps: int = 5
    grad_tol: float = 1e-6
    divergence_bound: float = 100.0
    eig_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise ValueError(
                "need 0 <= burn_in < n_iter, got burn_in={} n_iter={}".format(
                    self.burn_in, self.n_iter
                )
            )
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.m_steps < 1:
            raise ValueError("m_steps must be at least 1")

    @classmethod
    def paper_scale(cls, **overrides):
        """The long protocol: 10,000 iterations with 5,000 burn-in."""
        values = {"n_iter": 10000, "burn_in": 5000}
        values.update(overrides)
        return cls(**values)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class FitResult:
    """Point estimates with draw spread and the iteration trace."""

    estimates: ModelParams
    draw_sd: dict = field(default_factory=dict)
    trace: pd.DataFrame = None
    method: str = "stem"

    def to_dict(self):
        return {
            "method": self.method,
            "estimates": self.estimates.to_document(),
            "draw_sd": {k: np.asarray(v).tolist() for k, v in self.draw_sd.items()},
        }


def _free_correlations(kind, n_primary, n_factors):
    """Latent columns whose correlations are estimated."""
    if kind == "extended":
        return list(range(n_primary, n_factors))
    if kind == "two_tier":
        return list(range(n_primary))
    return []


def project_correlation(block, eig_floor=1e-6):
    """Nearest-by-clipping correlation matrix: floor the eigenvalues and
    rescale to unit diagonal."""
    block = (np.asarray(block, dtype=float) + np.asarray(block, dtype=float).T) / 2.0
    if not np.all(np.isfinite(block)):
        raise ProjectionError("correlation block has non-finite entries")
    values, vectors = linalg.eigh(block)
    clipped = (vectors * np.maximum(values, eig_floor)) @ vectors.T
    scale = np.sqrt(np.diag(clipped))
    if np.any(scale <= 0):
        raise ProjectionError("projected correlation block has a zero variance")
    projected = clipped / np.outer(scale, scale)
    np.fill_diagonal(projected, 1.0)
    return projected


def draw_augmented(mean, responses, rng):
    """
    Draw Z ~ N(mean, 1) truncated to Z >= 0 where the response is 1 and to
    Z < 0 where it is 0, by inverse CDF in the complementary form.
    """
    u = rng.random(mean.shape)
    tiny = np.finfo(float).tiny
    positive = responses == 1
    draw = np.empty_like(mean)
    draw[positive] = mean[positive] - special.ndtri(
        np.maximum(u[positive] * special.ndtr(mean[positive]), tiny)
    )
    draw[~positive] = mean[~positive] + special.ndtri(
        np.maximum(u[~positive] * special.ndtr(-mean[~positive]), tiny)
    )
    return draw


def draw_latent(augmented, loadings, intercepts, cov, rng):
    """Draw eta_i from its conditional normal given Z_i, with precision
    Sigma^-1 + A^T A."""
    precision = linalg.inv(cov) + loadings.T @ loadings
    chol = linalg.cholesky(precision, lower=True)
    rhs = (augmented - intercepts) @ loadings
    mean = linalg.cho_solve((chol, True), rhs.T).T
    noise = rng.standard_normal(mean.shape)
    return mean + linalg.solve_triangular(chol, noise.T, lower=True, trans="T").T


def complete_data_loglik(loadings, intercepts, latent, augmented):
    """Per-respondent complete-data log-likelihood of (A, d), up to a
    constant."""
    residual = augmented - intercepts - latent @ loadings.T
    return -0.5 * np.sum(residual ** 2) / augmented.shape[0]


def complete_data_gradient(loadings, intercepts, latent, augmented, pattern):
    """Gradient of complete_data_loglik in A (restricted to the pattern) and d."""
    n = augmented.shape[0]
    residual = augmented - intercepts - latent @ loadings.T
    grad_a = (residual.T @ latent) / n
    grad_a[~pattern] = 0.0
    return grad_a, residual.sum(axis=0) / n


def _normalize_state(loadings, cov, latent, pattern):
    flips = np.ones(loadings.shape[1])
    for k in range(loadings.shape[1]):
        nonzero = np.flatnonzero(pattern[:, k])
        if nonzero.size and loadings[nonzero[0], k] < 0:
            flips[k] = -1.0
    if np.all(flips > 0):
        return loadings, cov, latent
    return loadings * flips, cov * np.outer(flips, flips), latent * flips


def _guard(iteration, bound, **blocks):
    for name, values in blocks.items():
        peak = float(np.max(np.abs(values)))
        if not np.isfinite(peak) or peak > bound:
            raise DivergenceError(iteration, name, peak)


def stem_fit(data, pattern, kind="standard", config=None, rng=None):
    """
    Stochastic EM for binary probit data on a fixed loading pattern.

    Parameters:
        data: Dataset with binary responses
        pattern: LoadingStructure whose nonzero entries are the free
            loadings
        kind: "standard", "extended" or "two_tier"; fixes which latent
            correlations are estimated
        config: StemConfig [default: StemConfig()]
    """
    config = StemConfig() if config is None else config
    responses = np.asarray(data.values)
    if not np.all((responses == 0) | (responses == 1)):
        raise ValueError("stem_fit needs binary responses")
    n, J = responses.shape
    if J != pattern.n_items:
        raise ValueError("data has {} items, pattern has {}".format(J, pattern.n_items))
    rng = rng_stream(config.seed) if rng is None else rng
    mask = pattern.pattern()
    K = pattern.n_factors
    free = _free_correlations(kind, pattern.n_primary, K)

    loadings = np.where(mask, 0.5, 0.0)
    p_bar = np.clip(responses.mean(axis=0), 1e-3, 1.0 - 1e-3)
    intercepts = special.ndtri(p_bar)
    cov = np.eye(K)

    latent = np.zeros((n, K))

    kept = config.n_iter - config.burn_in
    sums = {"A": np.zeros_like(loadings), "d": np.zeros(J), "Sigma": np.zeros((K, K))}
    squares = {key: np.zeros_like(value) for key, value in sums.items()}
    trace = []
    for iteration in range(config.n_iter):
        augmented = draw_augmented(intercepts + latent @ loadings.T, responses, rng)
        latent = draw_latent(augmented, loadings, intercepts, cov, rng)
        if free:
            sample = np.corrcoef(latent[:, free], rowvar=False)
            cov[np.ix_(free, free)] = project_correlation(sample, config.eig_floor)

        for _ in range(config.m_steps):
            grad_a, grad_d = complete_data_gradient(loadings, intercepts, latent, augmented, mask)
            loadings = loadings + config.learning_rate * grad_a
            intercepts = intercepts + config.learning_rate * grad_d
            if max(np.max(np.abs(grad_a)), np.max(np.abs(grad_d))) < config.grad_tol:
                break
        loadings, cov, latent = _normalize_state(loadings, cov, latent, mask)
        _guard(iteration, config.divergence_bound, A=loadings, d=intercepts)

        trace.append(
            (
                iteration,
                float(np.mean(np.abs(loadings[mask]))),
                complete_data_loglik(loadings, intercepts, latent, augmented),
            )
        )
        if iteration >= config.burn_in:
            for key, value in (("A", loadings), ("d", intercepts), ("Sigma", cov)):
                sums[key] += value
                squares[key] += value ** 2
        if (iteration + 1) % PROGRESS_EVERY == 0:
            logger.info("StEM iteration %d of %d", iteration + 1, config.n_iter)

    means = {key: value / kept for key, value in sums.items()}
    draw_sd = {
        key: np.sqrt(np.maximum(squares[key] / kept - means[key] ** 2, 0.0)) for key in sums
    }
    estimates = ModelParams(
        pattern.with_loadings(np.where(mask, means["A"], 0.0)),
        means["d"],
        _symmetric_unit(means["Sigma"]),
        None,
        kind=kind,
        link="probit",
    )
    return FitResult(
        estimates=normalize_signs(estimates),
        draw_sd=draw_sd,
        trace=pd.DataFrame(trace, columns=["iteration", "mean_abs_a", "loglik"]),
        method="stem",
    )


def _symmetric_unit(cov):
    cov = (cov + cov.T) / 2.0
    np.fill_diagonal(cov, 1.0)
    return cov


def fit_covariance(
    sample_cov, sample_mean, pattern, kind="standard", max_iter=5000, divergence_bound=100.0
):
    """
    Minimize ||S - A Sigma A^T - diag(lambda)||_F^2 over the loading pattern,
    the unique variances and the free latent correlations. The mean vector
    is taken as the intercept estimate.
    """
    S = np.asarray(sample_cov, dtype=float)
    mask = pattern.pattern()
    J, K = mask.shape
    free = _free_correlations(kind, pattern.n_primary, K)
    pairs = [(r, c) for i, r in enumerate(free) for c in free[i + 1 :]]
    n_a = int(mask.sum())

    def unpack(x):
        A = np.zeros((J, K))
        A[mask] = x[:n_a]
        lam = x[n_a : n_a + J]
        cov = np.eye(K)
        for (r, c), value in zip(pairs, x[n_a + J :]):
            cov[r, c] = cov[c, r] = value
        return A, lam, cov

    def objective(x):
        A, lam, cov = unpack(x)
        residual = A @ cov @ A.T + np.diag(lam) - S
        grad_a = 4.0 * residual @ A @ cov
        grad_lam = 2.0 * np.diag(residual)
        inner = A.T @ residual @ A
        grad_cov = [4.0 * inner[r, c] for r, c in pairs]
        return np.sum(residual ** 2), np.concatenate([grad_a[mask], grad_lam, grad_cov])

    x0 = np.concatenate([np.full(n_a, 0.5), np.diag(S) / 2.0, np.zeros(len(pairs))])
    bounds = (
        [(None, None)] * n_a
        + [(LAMBDA_FLOOR, None)] * J
        + [(-CORRELATION_BOUND, CORRELATION_BOUND)] * len(pairs)
    )
    trace = []

    def record(x):
        A, _, _ = unpack(x)
        trace.append((len(trace), float(np.mean(np.abs(A[mask]))), float(objective(x)[0])))

    solution = optimize.minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=record,
        options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-10},
    )
    A, lam, cov = unpack(solution.x)
    _guard(solution.nit, divergence_bound, A=A, lam=lam)
    if pairs:
        cov[np.ix_(free, free)] = project_correlation(cov[np.ix_(free, free)])
    logger.info("covariance fit: %s after %d iterations", solution.message, solution.nit)
    estimates = ModelParams(
        pattern.with_loadings(A), np.asarray(sample_mean, dtype=float), cov, lam, kind=kind
    )
    return FitResult(
        estimates=normalize_signs(estimates),
        trace=pd.DataFrame(trace, columns=["iteration", "mean_abs_a", "objective"]),
        method="covariance",
    )


def linear_fit(data, pattern, kind="standard", config=None):
    """Fit linear-link data by matching its sample covariance."""
    config = StemConfig() if config is None else config
    values = np.asarray(data.values, dtype=float)
    if values.shape[1] != pattern.n_items:
        raise ValueError(
            "data has {} items, pattern has {}".format(values.shape[1], pattern.n_items)
        )
    return fit_covariance(
        np.cov(values, rowvar=False),
        values.mean(axis=0),
        pattern,
        kind,
        divergence_bound=config.divergence_bound,
    )


def fit_dataset(data, pattern, kind="standard", config=None, rng=None):
    """Dispatch on the link of the data."""
    if data.link == "linear":
        return linear_fit(data, pattern, kind, config)
    return stem_fit(data, pattern, kind, config, rng)


@dataclass(frozen=True)
class RmseTable:
    """Per-entry RMSE across replications and its group averages."""

    per_entry: dict
    groups: dict
    n_fits: int

    def to_dict(self):
        return {
            "n_fits": self.n_fits,
            "groups": dict(self.groups),
            "per_entry": {k: v.tolist() for k, v in self.per_entry.items()},
        }


def rmse(fits, truth, zero_tol=ZERO_TOL):
    """
    Root mean squared error of each parameter entry across fits, with group
    averages over the nonzero loadings ("a"), the intercepts ("d") and the
    free latent correlations ("sigma", only for kinds that estimate them).
    """
    if not fits:
        raise ValueError("rmse needs at least one fit")
    estimates = [fit.estimates if isinstance(fit, FitResult) else fit for fit in fits]

    def entrywise(getter):
        stacked = np.stack([getter(e) for e in estimates])
        return np.sqrt(np.mean((stacked - getter(truth)) ** 2, axis=0))

    per_entry = {
        "A": entrywise(lambda p: p.loadings),
        "d": entrywise(lambda p: p.intercepts),
        "Sigma": entrywise(lambda p: p.latent_cov),
    }
    groups = {
        "a": float(np.mean(per_entry["A"][truth.structure.pattern(zero_tol)])),
        "d": float(np.mean(per_entry["d"])),
    }
    free = _free_correlations(truth.kind, truth.structure.n_primary, truth.structure.n_factors)
    if len(free) > 1:
        block = per_entry["Sigma"][np.ix_(free, free)]
        groups["sigma"] = float(np.mean(block[np.tril_indices(len(free), -1)]))
    return RmseTable(per_entry=per_entry, groups=groups, n_fits=len(estimates))
