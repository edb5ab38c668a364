class ArmLabError(ValueError):
    """
    Base class for every error raised by sle_armlab

    Subclasses ValueError so callers validating plain inputs can catch either
    """

    pass


class DomainError(ArmLabError):
    """
    Raised if an input lies outside the domain of a map or formula

    Examples are a point inside a removed semidisc, a branch-cut interior point of
    the half-strip map, or an interval endpoint off the boundary
    """

    pass


class RegimeError(DomainError):
    """
    Raised if a parameter combination is outside the regime an identity,
    event or experiment is stated for (eg. an H^pi event with kappa > 4)
    """

    pass


class StepSizeError(ArmLabError):
    """
    Raised if a flow or driver step produced non-finite values

    The caller must refine dt and retry
    """

    pass


class BranchError(StepSizeError):
    """Raised if trace reconstruction left the closed upper half-plane"""

    pass


class SwallowedMarkError(ArmLabError):
    """Raised on queries that need an unswallowed mark"""

    pass


class ConvergenceError(ArmLabError):
    """
    Raised if the half-strip inversion did not converge

    This happens for points very close to the corner singularities
    """

    pass


class FitError(ArmLabError):
    """Raised if fewer than the minimum number of grid points are usable"""

    pass


class DataTooLarge(ArmLabError):
    """
    Raised if the data being added exceeds the cache limit

    This being raised means that it was not possible to store the data within the
    user set max size constraint of the cache
    """

    pass


class ManifestError(ArmLabError):
    """Raised if neither a manifest nor its backup copy can be read"""

    pass
