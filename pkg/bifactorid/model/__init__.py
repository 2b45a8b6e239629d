from .loading import LoadingStructure, ZERO_TOL
from .params import (
    InvalidParameterError,
    KINDS,
    LINKS,
    ModelParams,
    UnrestrictedRhoParams,
    normalize_signs,
    validate,
)
from .verdict import Certificate, STATUSES, Verdict
