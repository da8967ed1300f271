"""Exception types shared across the package."""


class CPTError(Exception):
    """Base class for all package errors."""


class DomainError(CPTError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(CPTError, ValueError):
    """Input data is malformed (NaN, wrong shape, mismatched grids)."""


class ConfigError(CPTError, ValueError):
    """A scenario or run configuration is invalid or inconsistent."""


class NumericalError(CPTError, ArithmeticError):
    """A numerical procedure failed (no bracket, rank-deficient regression)."""
