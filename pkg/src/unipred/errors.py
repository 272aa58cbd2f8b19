"""Exception types shared across the package.

The CLI maps these onto exit codes: SpecError -> 2, CapacityError -> 3,
NumericalError -> 4.
"""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class SpecError(ValueError):
    """A spec or config file is malformed or refers to something missing."""


class CapacityError(RuntimeError):
    """An exact enumeration or table would exceed the configured budget."""


class NumericalError(ArithmeticError):
    """A computation produced NaN/inf where a finite value was required."""
