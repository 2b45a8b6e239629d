import shelve
from time import time
from .fitter import Fitter


class FitCache:
    """
    Persistent store of benchmark fit records keyed by cell (case, link, N,
    replication, seed and configuration digest). Records older than the
    expiration interval are refitted.
    """

    def __init__(self, filename="bifidcache", record_fitter=Fitter, expiration_interval=604800.0):
        self.filename = filename
        self.fitter = record_fitter()
        self.expiration_interval = float(expiration_interval)
        self.cache = shelve.open(filename)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()

    def close(self):
        """Close the cache. Later lookups raise ValueError."""
        self.cache.close()

    def is_expired(self, entry):
        return time() - entry["timestamp"] > self.expiration_interval

    def lookup(self, cell):
        """Return a copy of the live record for cell, or None."""
        entry = self.cache.get(cell.key())
        if entry is None or self.is_expired(entry):
            return None
        return dict(entry["record"])

    def store(self, cell, record):
        """Save record for cell, replacing any earlier one."""
        self.cache[cell.key()] = {"record": dict(record), "timestamp": time()}

    def get_record(self, cell):
        """Return the fit record of cell, fitting it on a miss. The record's
        "message" tells which of the two happened."""
        record = self.lookup(cell)
        if record is not None:
            record["message"] = "cache hit"
            return record
        record = self.fitter.get_record(cell)
        self.store(cell, record)
        record["message"] = "cache miss"
        return record
