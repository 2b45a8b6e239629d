from dataclasses import dataclass, field
from typing import Optional
import numpy as np

STATUSES = ("identifiable", "non_identifiable", "undetermined")


def _plain(value):
    """Convert numpy scalars and arrays inside evidence into JSON types."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_plain(v) for v in items]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


@dataclass(frozen=True)
class Certificate:
    """A second parameter set with the same observable moments."""

    original: object
    alternate: object
    construction: str
    moment_distance: float
    param_distance: float

    def to_dict(self, include_params=True):
        out = {
            "construction": self.construction,
            "moment_distance": float(self.moment_distance),
            "param_distance": float(self.param_distance),
        }
        if include_params:
            out["original"] = self.original.to_document()
            out["alternate"] = self.alternate.to_document()
        return out


@dataclass(frozen=True)
class Verdict:
    """Outcome of an identifiability check."""

    status: str
    rule: str
    evidence: dict = field(default_factory=dict)
    proof_case: Optional[str] = None
    certificate: Optional[Certificate] = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError("Unknown verdict status {!r}".format(self.status))

    @property
    def identifiable(self):
        return self.status == "identifiable"

    def to_dict(self):
        out = {
            "status": self.status,
            "rule": self.rule,
            "proof_case": self.proof_case,
            "evidence": _plain(self.evidence),
        }
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_dict()
        return out
