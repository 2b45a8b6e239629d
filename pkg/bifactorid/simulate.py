"""
Data generation: latent factor draws and linear or binary probit responses,
reproducible from a seed through counter-based random streams.
"""
from dataclasses import dataclass
import json
import logging
from typing import Optional
import numpy as np
import pandas as pd
from scipy import linalg
from .model import ModelParams, validate

logger = logging.getLogger(__name__)


class SimulationError(ValueError):
    """Invalid input to the data generator."""

    pass


def rng_stream(seed, *key):
    """
    Return an independent generator for the stream named by key, e.g.
    rng_stream(seed, n_index, replication). Streams never overlap and do
    not depend on the order in which they are created.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def sample_latent(cov, n, seed=0, rng=None):
    """Draw n rows from N(0, cov)."""
    cov = np.asarray(cov, dtype=float)
    if n < 1:
        raise SimulationError("sample size must be at least 1, got {}".format(n))
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        raise SimulationError("latent covariance is not positive definite")
    rng = rng_stream(seed) if rng is None else rng
    return rng.standard_normal((n, cov.shape[0])) @ chol.T


@dataclass(frozen=True)
class Dataset:
    """Simulated responses together with the seed and generating truth."""

    values: np.ndarray
    link: str
    seed: int
    truth: Optional[ModelParams] = None

    @property
    def n_respondents(self):
        return self.values.shape[0]

    def to_frame(self):
        columns = ["item_{}".format(j + 1) for j in range(self.values.shape[1])]
        return pd.DataFrame(self.values, columns=columns)

    def sidecar(self):
        document = {"link": self.link, "seed": self.seed, "n_respondents": self.n_respondents}
        if self.truth is not None:
            document["truth"] = self.truth.to_document()
        return document

    def to_csv(self, path):
        """Write the responses to path and the metadata to path + '.json'."""
        self.to_frame().to_csv(path, index=False)
        with open("{}.json".format(path), "w") as fh:
            json.dump(self.sidecar(), fh, indent=2)


def simulate(params, n, seed=0, rng=None):
    """
    Draw n respondents from the model. Linear link: Y = d + A eta + e with
    e ~ N(0, diag(lambda)). Probit link: Y_j = 1 exactly when a standard
    normal error is at most d_j + a_j^T eta.
    """
    validate(params)
    if n < 1:
        raise SimulationError("sample size must be at least 1, got {}".format(n))
    rng = rng_stream(seed) if rng is None else rng
    eta = sample_latent(params.latent_cov, n, rng=rng)
    linear_predictor = params.intercepts + eta @ params.loadings.T
    noise = rng.standard_normal(linear_predictor.shape)
    if params.link == "linear":
        values = linear_predictor + noise * np.sqrt(params.unique_vars)
    else:
        values = (noise <= linear_predictor).astype(np.int8)
    logger.info("simulated %d respondents on %d items (%s link)", n, params.n_items, params.link)
    return Dataset(values=values, link=params.link, seed=int(seed), truth=params)
