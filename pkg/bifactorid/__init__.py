from .model import (
    Certificate,
    InvalidParameterError,
    LoadingStructure,
    ModelParams,
    UnrestrictedRhoParams,
    Verdict,
    normalize_signs,
    validate,
)
from .ident import certify, check
from .moments import observable_moments
