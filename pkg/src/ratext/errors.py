"""Error taxonomy shared across the package.

Every failure mode surfaced by the library maps onto one of these classes
so the CLI can translate them into stable exit codes.
"""


class RatextError(Exception):
    """Base class for all package-specific errors."""


class ContractViolation(RatextError):
    """An interface precondition was broken (shapes, dtypes, ranges, modes)."""


class NumericFault(RatextError):
    """A NaN or Inf showed up where finite values are required."""


class DataError(RatextError):
    """Corpus or checkpoint files are missing, malformed, or inconsistent."""


class ConfigError(RatextError):
    """A run configuration is invalid or contains unknown keys."""


class VerificationFailure(RatextError):
    """A self-check (finite-difference gradient audit) did not pass."""
