from bifactorid.estimate import DivergenceError
from bifactorid.fixtures import fixture


class LocalFitter:
    """A fitter that returns the generating parameters of a cell instead of
    running the estimator."""

    calls = 0

    def __init__(self, **kwargs):
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        pass

    def get_record(self, cell):
        """Return a perfect fit of the given cell."""
        LocalFitter.calls += 1
        truth = fixture(cell.case, cell.link)
        return {"estimates": truth.to_document(), "seconds": 0.0}


class DivergingFitter(LocalFitter):
    """A LocalFitter whose second replication at the smallest N diverges."""

    def get_record(self, cell):
        if cell.n_index == 0 and cell.rep == 1:
            raise DivergenceError(7, "A", 1e3)
        return super().get_record(cell)
