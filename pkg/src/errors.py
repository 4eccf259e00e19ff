# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exceptions raised by the cfp modules.

All of them derive from CfpError so that the command-line entry point can map a whole family
of failures onto one exit code.
"""


class CfpError(Exception):
    """Base class for all the errors raised by this package."""

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


class InvalidArgumentError(CfpError, ValueError):
    """Raised when an argument is outside of the domain of an operation."""


class KernelSpecError(InvalidArgumentError):
    """Raised when a kernel specification is malformed."""


class ResourceLimitError(CfpError):
    """Raised when an enumeration or state space exceeds its configured cap."""


class UnreachableConfigurationError(CfpError):
    """Raised when a quantity is conditioned on a cluster count with C_{N,K} = 0."""


class DegenerateChainError(CfpError):
    """Raised when every rate of a birth-death ladder is zero."""


class NumericOverflowError(CfpError):
    """Raised when a floating point computation overflows."""

    def __init__(self, message: str = ""):
        super().__init__(f"{message}; retry with --numeric rational")


class StructuralError(CfpError):
    """Raised when the absorbing state of a chain is not reachable."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class InsufficientDataError(CfpError):
    """Raised when an estimate is requested without any completed episode."""
