"""Exception types shared across the package."""


class CovgradError(Exception):
    """Base class for all package errors."""


class ContractError(CovgradError):
    """A caller violated an operation's precondition."""


class ModelContractError(ContractError):
    """A system model returned or received data of the wrong shape."""


class ConfigError(CovgradError):
    """A run configuration file is missing, malformed, or inconsistent."""


class NumericalError(CovgradError):
    """A computation produced non-finite or otherwise unusable values."""


class NotPSDError(NumericalError):
    """A matrix required to be positive semidefinite is not."""


class SingularInnovationError(NumericalError):
    """The innovation covariance is numerically singular."""


class SingularPriorError(NumericalError):
    """The prior covariance is singular where strict invertibility is required."""


class SingularNoiseError(NumericalError):
    """A noise covariance is numerically singular."""


class DomainError(CovgradError):
    """An input left the domain where the dynamics are defined."""


class LineSearchError(CovgradError):
    """Backtracking exhausted its budget without an acceptable step."""
