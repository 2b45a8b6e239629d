from dataclasses import dataclass
from time import perf_counter
from .estimate import StemConfig, fit_dataset
from .fixtures import fixture
from .simulate import rng_stream, simulate


@dataclass(frozen=True)
class BenchCell:
    """One (N, replication) cell of a benchmark grid."""

    case: int
    link: str
    n: int
    n_index: int
    rep: int
    seed: int
    config: StemConfig

    def key(self):
        return "{}|{}|{}|{}|{}|{}".format(
            self.case, self.link, self.n, self.rep, self.seed, self.config.digest()
        )


class Fitter:
    """
    Class for simulating one benchmark cell from its case fixture and
    fitting the model back.
    """

    def __init__(self, **kwargs):
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        pass

    def get_record(self, cell):
        """Simulate and fit the given cell; return the estimates in
        model-spec form with the elapsed time."""
        return fit_cell(cell)


def fit_cell(cell):
    truth = fixture(cell.case, cell.link)
    rng = rng_stream(cell.seed, cell.case, cell.n_index, cell.rep)
    start = perf_counter()
    data = simulate(truth, cell.n, rng=rng)
    fit = fit_dataset(data, truth.structure, truth.kind, cell.config, rng=rng)
    return {"estimates": fit.estimates.to_document(), "seconds": perf_counter() - start}
