"""
Observable moments implied by a parameter set.

Linear link: mean d and covariance A Sigma A^T + diag(lambda). Probit link:
thresholds tau_j = -d_j / s_j and the tetrachoric matrix of the standardized
latent responses, where s_j = sqrt(a_j^T Sigma a_j + 1).
"""
from dataclasses import dataclass
import logging
import numpy as np
import pandas as pd
from scipy import integrate, special
from scipy.stats import qmc

MAX_JOINT_ITEMS = 8
JOINT_SE_TARGET = 1e-4

logger = logging.getLogger(__name__)


class MomentError(ValueError):
    """Invalid input to a moment computation."""

    pass


def quad_form(A, cov):
    """Row-wise a_j^T Sigma a_j."""
    A = np.asarray(A, dtype=float)
    return np.einsum("jk,kl,jl->j", A, np.asarray(cov, dtype=float), A)


def _item_labels(n):
    return ["item_{}".format(j + 1) for j in range(n)]


@dataclass(frozen=True)
class LinearMoments:
    mean: np.ndarray
    covariance: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist()}

    def to_frame(self):
        labels = _item_labels(self.mean.size)
        frame = pd.DataFrame(self.covariance, index=labels, columns=labels)
        frame.insert(0, "mean", self.mean)
        frame.index.name = "item"
        return frame


@dataclass(frozen=True)
class ProbitMoments:
    thresholds: np.ndarray
    tetrachoric: np.ndarray

    def to_dict(self):
        return {
            "thresholds": self.thresholds.tolist(),
            "tetrachoric": self.tetrachoric.tolist(),
        }

    def to_frame(self):
        labels = _item_labels(self.thresholds.size)
        frame = pd.DataFrame(self.tetrachoric, index=labels, columns=labels)
        frame.insert(0, "threshold", self.thresholds)
        frame.index.name = "item"
        return frame


@dataclass(frozen=True)
class JointProbability:
    value: float
    std_error: float


def implied_covariance_linear(params):
    """Mean vector and covariance matrix of a linear-link model."""
    if params.link != "linear":
        raise MomentError("implied covariance needs the linear link")
    A = params.loadings
    covariance = A @ params.latent_cov @ A.T + np.diag(params.unique_vars)
    covariance = (covariance + covariance.T) / 2.0
    return LinearMoments(mean=params.intercepts, covariance=covariance)


def reduce_rows(A, cov):
    """Reduced loadings a_j / sqrt(a_j^T Sigma a_j + 1)."""
    A = np.asarray(A, dtype=float)
    return A / np.sqrt(quad_form(A, cov) + 1.0)[:, None]


def recover_rows(reduced, cov):
    """Invert reduce_rows; every row must have Sigma-norm below 1."""
    reduced = np.asarray(reduced, dtype=float)
    norms = quad_form(reduced, cov)
    if np.any(norms >= 1.0):
        j = int(np.flatnonzero(norms >= 1.0)[0])
        raise MomentError(
            "reduced loadings of item {} have Sigma-norm {:.6g} >= 1".format(j + 1, norms[j])
        )
    return reduced / np.sqrt(1.0 - norms)[:, None]


def reduce_loadings(params):
    return reduce_rows(params.loadings, params.latent_cov)


def recover_loadings(reduced, cov):
    return recover_rows(reduced, cov)


def phi2(a, b, rho):
    """
    Upper orthant probability P(X1 >= a, X2 >= b) of a standard bivariate
    normal with correlation rho, by quadrature over arcsin(rho).
    """
    if not -1.0 < rho < 1.0:
        raise MomentError("correlation {} outside (-1, 1)".format(rho))
    base = special.ndtr(-a) * special.ndtr(-b)
    if rho == 0.0:
        return float(base)

    def integrand(theta):
        cos2 = np.cos(theta) ** 2
        return np.exp(-(a * a + b * b - 2.0 * a * b * np.sin(theta)) / (2.0 * cos2))

    value, _ = integrate.quad(
        integrand, 0.0, np.arcsin(rho), epsabs=1e-13, epsrel=1e-12, limit=200
    )
    return float(base + value / (2.0 * np.pi))


def probit_moments(params):
    """Thresholds and tetrachoric correlations of a probit-link model."""
    if params.link != "probit":
        raise MomentError("probit moments need the probit link")
    A, cov = params.loadings, params.latent_cov
    scale = np.sqrt(quad_form(A, cov) + 1.0)
    reduced = A / scale[:, None]
    tetrachoric = reduced @ cov @ reduced.T
    tetrachoric = (tetrachoric + tetrachoric.T) / 2.0
    np.fill_diagonal(tetrachoric, 1.0)
    return ProbitMoments(thresholds=-params.intercepts / scale, tetrachoric=tetrachoric)


def marginal_prob(params):
    """P(Y_j = 1) for every item of a probit-link model."""
    return special.ndtr(-probit_moments(params).thresholds)


def observable_moments(params):
    if params.link == "linear":
        return implied_covariance_linear(params)
    return probit_moments(params)


def moment_distance(first, second, link=None):
    """
    Max-norm gap between the observable moments of two parameter sets:
    mean and covariance for the linear link, thresholds and tetrachoric
    matrix for the probit link.
    """
    link = link or first.link
    if link == "linear":
        m1, m2 = implied_covariance_linear(first), implied_covariance_linear(second)
        return float(
            max(np.max(np.abs(m1.mean - m2.mean)), np.max(np.abs(m1.covariance - m2.covariance)))
        )
    m1, m2 = probit_moments(first), probit_moments(second)
    return float(
        max(
            np.max(np.abs(m1.thresholds - m2.thresholds)),
            np.max(np.abs(m1.tetrachoric - m2.tetrachoric)),
        )
    )


def _genz_estimate(chol, upper, points):
    """Separation-of-variables estimate of P(W <= upper) for W = chol z."""
    k = upper.size
    tiny = np.finfo(float).tiny
    top = np.nextafter(1.0, 0.0)
    e = np.full(points.shape[0], special.ndtr(upper[0] / chol[0, 0]))
    f = e.copy()
    y = np.zeros((points.shape[0], k - 1))
    for i in range(1, k):
        y[:, i - 1] = special.ndtri(np.clip(points[:, i - 1] * e, tiny, top))
        t = (upper[i] - y[:, :i] @ chol[i, :i]) / chol[i, i]
        e = special.ndtr(t)
        f = f * e
    return float(np.mean(f))


def joint_prob(
    params,
    items,
    pattern=None,
    exact_low_dim=True,
    n_randomizations=16,
    max_points=2 ** 15,
    se_target=JOINT_SE_TARGET,
    seed=0,
):
    """
    Probability that the given items show the response pattern (all ones by
    default) under a probit-link model. One and two items are evaluated
    exactly; more items use randomized quasi-Monte Carlo with a standard
    error estimate.
    """
    items = [int(j) for j in items]
    k = len(items)
    if k == 0:
        raise MomentError("joint_prob needs at least one item")
    if k > MAX_JOINT_ITEMS:
        raise MomentError(
            "{} items exceed the accuracy budget of {}".format(k, MAX_JOINT_ITEMS)
        )
    pattern = np.ones(k, dtype=int) if pattern is None else np.asarray(pattern, dtype=int)
    if pattern.shape != (k,) or not np.all((pattern == 0) | (pattern == 1)):
        raise MomentError("pattern must be a 0/1 vector with one entry per item")

    moments = probit_moments(params)
    signs = np.where(pattern == 1, -1.0, 1.0)
    upper = signs * moments.thresholds[items]
    corr = moments.tetrachoric[np.ix_(items, items)] * np.outer(signs, signs)

    if k == 1:
        return JointProbability(float(special.ndtr(upper[0])), 0.0)
    if k == 2 and exact_low_dim:
        return JointProbability(phi2(-upper[0], -upper[1], corr[0, 1]), 0.0)

    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise MomentError("tetrachoric submatrix is not positive definite")
    rng = np.random.default_rng(seed)
    n_points = 2 ** 10
    while True:
        estimates = [
            _genz_estimate(
                chol, upper, qmc.Sobol(d=k - 1, scramble=True, seed=rng).random(n_points)
            )
            for _ in range(n_randomizations)
        ]
        value = float(np.mean(estimates))
        std_error = float(np.std(estimates, ddof=1) / np.sqrt(n_randomizations))
        if std_error <= se_target or n_points >= max_points:
            break
        n_points *= 2
    if std_error > se_target:
        logger.warning(
            "joint probability standard error %.2g above target %.2g", std_error, se_target
        )
    return JointProbability(value, std_error)
