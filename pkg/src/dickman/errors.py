"""Exception hierarchy shared by every module."""


class DickmanError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(DickmanError, ValueError):
    """A precondition of an operation was violated."""


class DomainError(ContractError):
    """An argument lies outside the mathematical domain of an operation."""


class RangeError(DomainError):
    """An argument lies outside the range of a utility function."""


class ExtrapolationError(DomainError):
    """A tabulated function was queried outside its grid."""


class CertificationError(DickmanError):
    """A contraction constant could not be certified below one."""


class ResourceError(DickmanError, MemoryError):
    """A request exceeds the configured memory budget."""
