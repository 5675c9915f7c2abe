"""Exception types shared across the package.

The CLI maps these onto its exit codes: contract violations exit with 2,
numerical aborts with 3.
"""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its documented contract."""


class ConfigError(ValueError):
    """A configuration is malformed or internally inconsistent."""


class NumericalAbort(FloatingPointError):
    """Training or an update step produced non-finite values."""
