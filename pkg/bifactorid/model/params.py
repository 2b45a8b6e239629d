import numpy as np
from .loading import LoadingStructure, ZERO_TOL

KINDS = ("standard", "extended", "two_tier")
LINKS = ("linear", "probit")

# Tolerance on unit diagonals, symmetry and fixed zero blocks of Sigma.
COV_TOL = 1e-10


class InvalidParameterError(ValueError):
    """A parameter set violates an invariant of the model space."""

    pass


class ModelParams:
    """
    Container class storing one point of the parameter space: loadings with
    their testlet map, intercepts, latent covariance and (for the linear
    link) unique variances.
    """

    def __init__(
        self,
        structure,
        intercepts,
        latent_cov=None,
        unique_vars=None,
        kind="standard",
        link="linear",
    ):
        """
        ModelParams class constructor.

        Parameters:
            structure: instance of LoadingStructure
            intercepts: length-J vector d
            latent_cov: (L+G) by (L+G) matrix Sigma [default: identity]
            unique_vars: length-J vector lambda, present iff link is
                linear
            kind: one of "standard", "extended", "two_tier"
            link: one of "linear", "probit"
        """
        if not isinstance(structure, LoadingStructure):
            raise TypeError(
                "Unexpected parameter type: expected LoadingStructure object \
for 'structure'"
            )
        if kind not in KINDS:
            raise ValueError("Unknown model kind {!r}".format(kind))
        if link not in LINKS:
            raise ValueError("Unknown link {!r}".format(link))

        n_items, n_factors = structure.n_items, structure.n_factors
        intercepts = np.array(intercepts, dtype=float).reshape(-1)
        if intercepts.shape != (n_items,):
            raise ValueError(
                "intercepts have {} entries for {} items".format(intercepts.size, n_items)
            )
        if latent_cov is None:
            latent_cov = np.eye(n_factors)
        latent_cov = np.array(latent_cov, dtype=float)
        if latent_cov.shape != (n_factors, n_factors):
            raise ValueError(
                "latent_cov has shape {}, expected {}".format(
                    latent_cov.shape, (n_factors, n_factors)
                )
            )
        if unique_vars is not None:
            unique_vars = np.array(unique_vars, dtype=float).reshape(-1)
            if unique_vars.shape != (n_items,):
                raise ValueError(
                    "unique_vars have {} entries for {} items".format(
                        unique_vars.size, n_items
                    )
                )
            unique_vars.flags.writeable = False
        intercepts.flags.writeable = False
        latent_cov.flags.writeable = False

        self._structure = structure
        self._intercepts = intercepts
        self._latent_cov = latent_cov
        self._unique_vars = unique_vars
        self._kind = kind
        self._link = link

    def __repr__(self):
        return "{}(kind={!r}, link={!r}, J={}, L={}, G={})".format(
            type(self).__name__,
            self._kind,
            self._link,
            self.n_items,
            self._structure.n_primary,
            self._structure.n_testlets,
        )

    @property
    def structure(self):
        return self._structure

    @property
    def loadings(self):
        return self._structure.loadings

    @property
    def intercepts(self):
        return self._intercepts.copy()

    @property
    def latent_cov(self):
        return self._latent_cov.copy()

    @property
    def unique_vars(self):
        return None if self._unique_vars is None else self._unique_vars.copy()

    @property
    def kind(self):
        return self._kind

    @property
    def link(self):
        return self._link

    @property
    def n_items(self):
        return self._structure.n_items

    @property
    def testlet_cov(self):
        """The testlet block of Sigma (Sigma_G)."""
        L = self._structure.n_primary
        return self._latent_cov[L:, L:].copy()

    @property
    def primary_cov(self):
        """The primary block of Sigma (Sigma_L)."""
        L = self._structure.n_primary
        return self._latent_cov[:L, :L].copy()

    def _fields(self):
        return dict(
            structure=self._structure,
            intercepts=self._intercepts,
            latent_cov=self._latent_cov,
            unique_vars=self._unique_vars,
            kind=self._kind,
            link=self._link,
        )

    def replace(self, **changes):
        """Return a copy with the given constructor fields replaced. Passing
        loadings replaces the loading matrix while keeping the assignment."""
        fields = self._fields()
        if "loadings" in changes:
            loadings = changes.pop("loadings")
            base = changes.get("structure", fields["structure"])
            changes["structure"] = base.with_loadings(loadings)
        fields.update(changes)
        return type(self)(**fields)

    def to_document(self):
        """Return the JSON model-spec document for this parameter set."""
        structure = self._structure
        document = {
            "kind": self._kind,
            "link": self._link,
            "L": structure.n_primary,
            "G": structure.n_testlets,
            "assignment": list(structure.assignment),
            "A": structure.loadings.tolist(),
            "d": self._intercepts.tolist(),
            "Sigma": self._latent_cov.tolist(),
        }
        if self._unique_vars is not None:
            document["lambda"] = self._unique_vars.tolist()
        return document


class UnrestrictedRhoParams(ModelParams):
    """
    Extended bifactor parameters whose primary-testlet correlations rho
    (the cross block of Sigma) are free.
    """

    def __init__(
        self,
        structure,
        intercepts,
        latent_cov=None,
        unique_vars=None,
        kind="extended",
        link="linear",
    ):
        if kind != "extended":
            raise ValueError("unrestricted-rho parameters are of extended kind")
        super().__init__(structure, intercepts, latent_cov, unique_vars, kind, link)
        if structure.n_primary != 1:
            raise ValueError("unrestricted-rho parameters need a single primary factor")

    @classmethod
    def from_params(cls, params, rho):
        """Build from a bifactor parameter set by inserting rho into the
        primary-testlet cross block."""
        rho = np.array(rho, dtype=float).reshape(-1)
        cov = params.latent_cov
        if rho.shape != (cov.shape[0] - 1,):
            raise ValueError(
                "rho has {} entries for {} testlets".format(rho.size, cov.shape[0] - 1)
            )
        cov[0, 1:] = rho
        cov[1:, 0] = rho
        return cls(
            params.structure,
            params.intercepts,
            cov,
            params.unique_vars,
            "extended",
            params.link,
        )

    @property
    def rho(self):
        return self._latent_cov[0, 1:].copy()

    def to_document(self):
        document = super().to_document()
        document["rho"] = self.rho.tolist()
        return document


def validate(params, zero_tol=ZERO_TOL):
    """
    Check every invariant of the parameter space. Returns None on success
    and raises InvalidParameterError naming the first violation.
    """
    structure = params.structure
    A = structure.loadings
    L, G = structure.n_primary, structure.n_testlets
    pattern = structure.pattern(zero_tol)

    for j, g in enumerate(structure.assignment):
        for h in structure.testlets():
            if h != g and pattern[j, structure.testlet_column(h)]:
                raise InvalidParameterError(
                    "item {} of testlet {} has nonzero loading on testlet {}".format(
                        j + 1, g, h
                    )
                )
    for g in structure.testlets():
        if structure.items(g).size == 0:
            raise InvalidParameterError("testlet {} has no items".format(g))

    for k in range(structure.n_factors):
        nonzero = np.flatnonzero(pattern[:, k])
        if nonzero.size == 0:
            raise InvalidParameterError("column {} of A is identically zero".format(k + 1))
        if A[nonzero[0], k] < 0:
            raise InvalidParameterError(
                "first nonzero entry of column {} (item {}) is negative".format(
                    k + 1, nonzero[0] + 1
                )
            )

    cov = params.latent_cov
    if not np.allclose(cov, cov.T, rtol=0.0, atol=COV_TOL):
        raise InvalidParameterError("latent covariance is not symmetric")
    if np.max(np.abs(np.diag(cov) - 1.0)) > COV_TOL:
        raise InvalidParameterError("latent covariance does not have unit diagonal")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidParameterError("latent covariance is not positive definite")

    cross = cov[:L, L:]
    if not isinstance(params, UnrestrictedRhoParams) and np.any(np.abs(cross) > zero_tol):
        raise InvalidParameterError("primary-testlet block of Sigma is not zero")
    if params.kind == "standard" and np.max(np.abs(cov - np.eye(L + G))) > zero_tol:
        raise InvalidParameterError("standard bifactor model requires Sigma = I")
    if params.kind == "extended" and L != 1:
        raise InvalidParameterError("extended bifactor model requires one primary factor")
    if params.kind == "two_tier" and np.max(np.abs(cov[L:, L:] - np.eye(G))) > zero_tol:
        raise InvalidParameterError("two-tier model requires an identity testlet block")

    lam = params.unique_vars
    if params.link == "linear":
        if lam is None:
            raise InvalidParameterError("linear link requires unique variances")
        if np.any(lam <= 0):
            j = int(np.flatnonzero(lam <= 0)[0])
            raise InvalidParameterError(
                "unique variance of item {} is not positive".format(j + 1)
            )
    elif lam is not None:
        raise InvalidParameterError("probit link fixes the error scale; drop unique variances")


def normalize_signs(params, zero_tol=ZERO_TOL):
    """
    Flip loading columns so each has a positive first nonzero entry. The
    matching rows and columns of Sigma are negated, so implied moments are
    unchanged.
    """
    A = params.loadings
    pattern = np.abs(A) > zero_tol
    flips = np.ones(A.shape[1])
    for k in range(A.shape[1]):
        nonzero = np.flatnonzero(pattern[:, k])
        if nonzero.size == 0:
            raise InvalidParameterError("column {} of A is identically zero".format(k + 1))
        if A[nonzero[0], k] < 0:
            flips[k] = -1.0
    if np.all(flips > 0):
        return params
    cov = params.latent_cov * np.outer(flips, flips)
    return params.replace(loadings=A * flips, latent_cov=cov)
