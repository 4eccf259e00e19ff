# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Numeric modes and log-space helpers.

Every table of the package is computed either with exact rationals (fractions.Fraction over
Python integers) or with double precision. In floating mode products of weights are carried as
natural logarithms so that normalization constants survive beyond the range of a double.
"""
import math
from enum import Enum
from fractions import Fraction
from typing import Iterable, Tuple, Union

import numpy as np
from scipy.special import gammaln, logsumexp

from errors import InvalidArgumentError

Number = Union[Fraction, float]

NEG_INF = float("-inf")


class NumericMode(str, Enum):
    """Arithmetic used by a computation."""

    EXACT = "exact"
    FLOATING = "floating"

    @classmethod
    def parse(cls, value: str) -> "NumericMode":
        """Parse the command-line spelling (rational | float) or the enum value."""
        aliases = {"rational": cls.EXACT, "float": cls.FLOATING}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise InvalidArgumentError(f"Unknown numeric mode '{value}'")

    @property
    def is_exact(self) -> bool:
        """Whether this mode uses rational arithmetic."""
        return self is NumericMode.EXACT

    def number(self, value) -> Number:
        """Convert a value to the number type of this mode."""
        if self.is_exact:
            return to_fraction(value)
        if isinstance(value, str):
            return float(to_fraction(value))
        return float(value)

    def zero(self) -> Number:
        """Additive identity of this mode."""
        return Fraction(0) if self.is_exact else 0.0

    def one(self) -> Number:
        """Multiplicative identity of this mode."""
        return Fraction(1) if self.is_exact else 1.0

    def ratio(self, numerator, denominator) -> Number:
        """Quotient of two values in this mode."""
        if denominator == 0:
            raise InvalidArgumentError(f"Division of {numerator} by zero")
        return self.number(numerator) / self.number(denominator)


def to_fraction(value) -> Fraction:
    """Convert a value to an exact rational.

    Floats go through their shortest decimal representation, so 0.1 becomes 1/10.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidArgumentError(f"Cannot represent {value} as a rational")
        return Fraction(repr(value))
    try:
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise InvalidArgumentError(f"Invalid number '{value}'")


def log_of(value: Number) -> float:
    """Natural logarithm of a non-negative number, -inf for zero.

    Rationals are handled through their integer numerator and denominator so that values far
    beyond the double range keep a finite logarithm.
    """
    if value < 0:
        raise InvalidArgumentError(f"Logarithm of negative value {value}")
    if value == 0:
        return NEG_INF
    if isinstance(value, Fraction):
        return math.log(value.numerator) - math.log(value.denominator)
    return math.log(value)


def log_factorial(n: int) -> float:
    """Natural logarithm of n!."""
    return float(gammaln(n + 1))


def log_sum(logs: Iterable[float]) -> float:
    """Logarithm of a sum of positive terms given by their logarithms."""
    finite = [value for value in logs if value != NEG_INF]
    if not finite:
        return NEG_INF
    return float(logsumexp(finite))


def signed_log_sum(logs: Iterable[float], signs: Iterable[int]) -> Tuple[float, int]:
    """Sum signed terms given as (log-magnitude, sign) pairs.

    Returns:
        the log-magnitude and the sign of the sum; a zero sum is (-inf, 0).
    """
    pairs = [(value, sign) for value, sign in zip(logs, signs) if value != NEG_INF and sign]
    if not pairs:
        return NEG_INF, 0
    magnitudes = np.array([value for value, _ in pairs])
    weights = np.array([float(sign) for _, sign in pairs])
    result, sign = logsumexp(magnitudes, b=weights, return_sign=True)
    if sign == 0:
        return NEG_INF, 0
    return float(result), int(sign)


def format_number(value: Number) -> str:
    """Serialize a number: "p/q" for rationals, shortest repr for floats."""
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    return repr(float(value))


def as_float(value: Number) -> float:
    """Convert to float, keeping huge rationals finite where possible."""
    if isinstance(value, Fraction):
        try:
            return float(value)
        except OverflowError:
            return math.inf if value > 0 else -math.inf
    return float(value)
