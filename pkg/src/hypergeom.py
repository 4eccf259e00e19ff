# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Closed-form analytics of the constant kernel a_i = a, C = 1, F = a.

Everything is expressed with terminating Kummer functions 1F1(-m; b; z) and their ratios
G_n = 1F1(-N+1+n; 2+n; -2a) / 1F1(-N+1; 2; -2a).
"""
import logging
import math
from fractions import Fraction
from functools import lru_cache
from typing import List, Tuple

from constants import KUMMER_LOG_SUM_THRESHOLD
from errors import InvalidArgumentError, NumericOverflowError
from exact import ClusterCountDistribution
from numeric import Number, NumericMode, log_factorial, log_sum, signed_log_sum

logger = logging.getLogger(__name__)

GN_METHODS = ("exact", "asymptotic", "continued_fraction", "taylor")


class GValue:
    """Value of G_n(a, N) together with the method that produced it."""

    def __init__(self, n: int, a: Number, big_n: int, value: Number, method: str):
        self.n = n
        self.a = a
        self.N = big_n
        self.value = value
        self.method = method

    @property
    def approximation(self) -> bool:
        """Whether the value is an approximation of G_n rather than G_n itself."""
        return self.method in ("asymptotic", "taylor")

    def __float__(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"GValue(n={self.n}, N={self.N}, method={self.method}, value={self.value})"


def _check_a(a, mode: NumericMode) -> Number:
    value = mode.number(a)
    if value <= 0:
        raise InvalidArgumentError(f"a must be positive, got {a}")
    return value


def _check_n(big_n: int, minimum: int = 2) -> None:
    if not isinstance(big_n, int) or big_n < minimum:
        raise InvalidArgumentError(f"N must be an integer >= {minimum}, got {big_n!r}")


def kummer_terminating(m: int, b: int, z, mode: NumericMode = NumericMode.FLOATING) -> Number:
    """Terminating Kummer function 1F1(-m; b; z) = Σ_{n=0}^{m} (-m)_n/(b)_n · z^n/n!.

    Floating mode adds the terms with compensated summation.
    """
    if not isinstance(m, int) or m < 0:
        raise InvalidArgumentError(f"m must be a non-negative integer, got {m!r}")
    if not isinstance(b, int) or b < 1:
        raise InvalidArgumentError(f"b must be a positive integer, got {b!r}")
    z = mode.number(z)
    term = mode.one()
    terms = [term]
    for n in range(m):
        term = term * (n - m) / (b + n) * z / (n + 1)
        terms.append(term)
    if mode.is_exact:
        return sum(terms, Fraction(0))
    try:
        return math.fsum(terms)
    except OverflowError:
        raise NumericOverflowError(f"1F1(-{m}; {b}; {z}) overflows a double")


def log_kummer_terminating(m: int, b: int, z: float) -> Tuple[float, int]:
    """Log-magnitude and sign of 1F1(-m; b; z), summed term by term in log space."""
    z = float(z)
    if z == 0 or m == 0:
        return 0.0, 1
    log_z = math.log(abs(z))
    logs: List[float] = []
    signs: List[int] = []
    for n in range(m + 1):
        logs.append(
            log_factorial(m)
            - log_factorial(m - n)
            + math.lgamma(b)
            - math.lgamma(b + n)
            + n * log_z
            - log_factorial(n)
        )
        # (-m)_n has sign (-1)^n, z^n has sign (-1)^n for negative z.
        signs.append(1 if z < 0 or n % 2 == 0 else -1)
    return signed_log_sum(logs, signs)


def _kummer_ratio(
    numerator: Tuple[int, int], denominator: Tuple[int, int], z, mode: NumericMode
):
    m_top, b_top = numerator
    m_bottom, b_bottom = denominator
    if mode.is_exact or max(m_top, m_bottom) <= KUMMER_LOG_SUM_THRESHOLD:
        top = kummer_terminating(m_top, b_top, z, mode)
        bottom = kummer_terminating(m_bottom, b_bottom, z, mode)
        if mode.is_exact or (math.isfinite(top) and math.isfinite(bottom) and bottom):
            return top / bottom
    log_top, sign_top = log_kummer_terminating(m_top, b_top, z)
    log_bottom, sign_bottom = log_kummer_terminating(m_bottom, b_bottom, z)
    if sign_bottom == 0:
        raise NumericOverflowError(f"1F1(-{m_bottom}; {b_bottom}; {z}) vanished")
    if sign_top == 0:
        return 0.0
    return sign_top * sign_bottom * math.exp(log_top - log_bottom)


def _g_exact(n: int, a: Number, big_n: int, mode: NumericMode) -> Number:
    if n == 0:
        return mode.one()
    if n > big_n - 1:
        raise InvalidArgumentError(f"G_{n} does not terminate for N={big_n}")
    return _kummer_ratio((big_n - 1 - n, 2 + n), (big_n - 1, 2), -2 * a, mode)


def g1_continued_fraction(a: Number, big_n: int) -> Number:
    """G_1 as the finite continued fraction 1/(1 + c_1/(1 + c_2/(... 1 + c_{2N-3}))).

    c_j = 2a(N + (j+1)/2)/((j+1)(j+2)) for odd j and 2a(N - 1 - j/2)/((j+1)(j+2)) for even j,
    i.e. (N+1)a/3, (N-2)a/6, (N+2)a/10, ... down to a/((N-1)(2N-3)) and a/(N-1).
    """
    value = 1
    for level in range(2 * big_n - 3, 0, -1):
        if level % 2:
            numerator = 2 * a * (2 * big_n + level + 1)
            coefficient = numerator / (2 * (level + 1) * (level + 2))
        else:
            coefficient = 2 * a * (big_n - 1 - level // 2) / ((level + 1) * (level + 2))
        value = 1 + coefficient / value
    return 1 / value


def g1_taylor(a: Number, big_n: int) -> Number:
    """Cubic expansion of G_1 for small a.

    G_1 ≈ 1 - f1·a + (f1² + f1·f2)·a² - (f1·f2·f3 + f1·f2² + 2·f1²·f2 + f1³)·a³ with
    f1 = (N+1)/3, f2 = (N-2)/6, f3 = (N+2)/10.
    """
    f1 = Fraction(big_n + 1, 3)
    f2 = Fraction(big_n - 2, 6)
    f3 = Fraction(big_n + 2, 10)
    second = f1 * f1 + f1 * f2
    third = f1 * f2 * f3 + f1 * f2 * f2 + 2 * f1 * f1 * f2 + f1**3
    if isinstance(a, Fraction):
        return 1 - f1 * a + second * a**2 - third * a**3
    return 1 - float(f1) * a + float(second) * a**2 - float(third) * a**3


def g_asymptotic(n: int, a: float, big_n: int) -> float:
    """Large-N approximation (n+1)!/(2aN)^{n/2} · exp(-n·√(a/(2N)))."""
    a = float(a)
    return math.exp(
        log_factorial(n + 1) - n / 2 * math.log(2 * a * big_n) - n * math.sqrt(a / (2 * big_n))
    )


def g_n(
    n: int, a, big_n: int, method: str = "exact", mode: NumericMode = NumericMode.FLOATING
) -> GValue:
    """Evaluate G_n(a, N) with the requested method.

    Args:
        n: order, 1 <= n <= N - 1 for the exact method.
        a: the kernel parameter.
        big_n: the number of particles N >= 2.
        method: exact | asymptotic | continued_fraction | taylor.
        mode: arithmetic of the exact, continued fraction and Taylor methods.

    Raises:
        InvalidArgumentError: on an unknown method or when continued_fraction or taylor is
            requested with n != 1.
    """
    if method not in GN_METHODS:
        raise InvalidArgumentError(f"Unknown method '{method}', expected one of {GN_METHODS}")
    if not isinstance(n, int) or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    _check_n(big_n)
    if method in ("continued_fraction", "taylor") and n != 1:
        raise InvalidArgumentError(f"The {method} method only evaluates G_1")
    if method == "asymptotic":
        value = g_asymptotic(n, _check_a(a, NumericMode.FLOATING), big_n)
        return GValue(n, float(a), big_n, value, method)
    a = _check_a(a, mode)
    if method == "exact":
        value = _g_exact(n, a, big_n, mode)
    elif method == "continued_fraction":
        value = g1_continued_fraction(a, big_n)
    else:
        value = g1_taylor(a, big_n)
    return GValue(n, a, big_n, value, method)


def pi_constant(
    big_n: int, a, mode: NumericMode = NumericMode.FLOATING
) -> ClusterCountDistribution:
    """Cluster-count law of the constant kernel.

    Π_{K+1}/Π_1 = (2a)^K (N-1)!/(K!(K+1)!(N-K-1)!) and Π_1 = 1/1F1(-N+1; 2; -2a).
    """
    _check_n(big_n, minimum=1)
    a = _check_a(a, mode)
    if mode.is_exact:
        weights = [
            (2 * a) ** k
            * Fraction(math.factorial(big_n - 1))
            / (math.factorial(k) * math.factorial(k + 1) * math.factorial(big_n - k - 1))
            for k in range(big_n)
        ]
        total = sum(weights, Fraction(0))
        return ClusterCountDistribution(big_n, [weight / total for weight in weights], mode)
    log_two_a = math.log(2 * a)
    logs = [
        k * log_two_a
        + log_factorial(big_n - 1)
        - log_factorial(k)
        - log_factorial(k + 1)
        - log_factorial(big_n - k - 1)
        for k in range(big_n)
    ]
    total = log_sum(logs)
    return ClusterCountDistribution(big_n, [math.exp(value - total) for value in logs], mode)


@lru_cache(maxsize=None)
def alpha(n: int, k: int) -> int:
    """Coefficient α_k^n of the cluster-count moments, the Stirling number S(n+1, k+1).

    Evaluated with the parity-split alternating sum
    α_k^n = (Σ_{j ≡ k (mod 2)} binom(k, j)(j+1)^n - Σ_{j ≢ k (mod 2)} binom(k, j)(j+1)^n)/k!,
    so that α_0^n = α_n^n = 1.
    """
    if not 0 <= k <= n:
        return 0
    positive = sum(math.comb(k, j) * (j + 1) ** n for j in range(k % 2, k + 1, 2))
    negative = sum(math.comb(k, j) * (j + 1) ** n for j in range(1 - k % 2, k + 1, 2))
    return (positive - negative) // math.factorial(k)


def alpha_recurrence(n: int) -> List[int]:
    """Row α_0^n, ..., α_n^n from expanding (x·d/dx + 1)^n on monomials.

    The coefficients follow α_k^{n+1} = (k+1)·α_k^n + α_{k-1}^n with α_0^0 = 1.
    """
    row = [1]
    for _ in range(n):
        row = [
            (k + 1) * (row[k] if k < len(row) else 0) + (row[k - 1] if k >= 1 else 0)
            for k in range(len(row) + 1)
        ]
    return row


def mu_n(n: int, a, big_n: int, mode: NumericMode = NumericMode.FLOATING) -> Number:
    """Moment μ_n = Σ_K K^n·Π_K of the number of clusters.

    μ_1 = 1 + a(N-1)·G_1; higher orders use
    μ_n = Σ_k α_k^n·(2a)^k·(N-1)!/((k+1)!(N-1-k)!)·G_k with G_0 = 1.
    """
    if not isinstance(n, int) or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    _check_n(big_n)
    a = _check_a(a, mode)
    if n == 1:
        return 1 + a * (big_n - 1) * _g_exact(1, a, big_n, mode)
    top = min(n, big_n - 1)
    if mode.is_exact:
        total = Fraction(0)
        for k in range(top + 1):
            binomial = Fraction(
                math.factorial(big_n - 1), math.factorial(k + 1) * math.factorial(big_n - 1 - k)
            )
            total += alpha(n, k) * (2 * a) ** k * binomial * _g_exact(k, a, big_n, mode)
        return total
    logs = []
    for k in range(top + 1):
        g = _g_exact(k, a, big_n, mode)
        if g <= 0:
            continue
        logs.append(
            math.log(alpha(n, k))
            + k * math.log(2 * a)
            + log_factorial(big_n - 1)
            - log_factorial(k + 1)
            - log_factorial(big_n - 1 - k)
            + math.log(g)
        )
    return math.exp(log_sum(logs))


def variance_constant(a, big_n: int, mode: NumericMode = NumericMode.FLOATING) -> Number:
    """Variance of the number of clusters.

    a(N-1)·G_1 + (2/3)·a²(N-1)(N-2)·G_2 - a²(N-1)²·G_1²
    """
    _check_n(big_n)
    a = _check_a(a, mode)
    g1 = _g_exact(1, a, big_n, mode)
    variance = a * (big_n - 1) * g1 - a * a * (big_n - 1) ** 2 * g1 * g1
    if big_n > 2:
        factor = Fraction(2, 3) if mode.is_exact else 2 / 3
        variance += factor * a * a * (big_n - 1) * (big_n - 2) * _g_exact(2, a, big_n, mode)
    return variance


def mu1_asymptotic(a, big_n: int) -> float:
    """Approximation 1 + √(2aN)·exp(-√(a/(2N))) of the mean number of clusters."""
    _check_n(big_n)
    a = _check_a(a, NumericMode.FLOATING)
    return 1 + math.sqrt(2 * a * big_n) * math.exp(-math.sqrt(a / (2 * big_n)))


def mean_counts_constant(
    n: int, a, big_n: int, mode: NumericMode = NumericMode.FLOATING
) -> Number:
    """Mean number of clusters of size n.

    ⟨M_n⟩ = 2a·1F1(-N+1+n; 2; -2a)/1F1(-N+1; 2; -2a) for n < N and ⟨M_N⟩ = 1/1F1(-N+1; 2; -2a).
    """
    _check_n(big_n, minimum=1)
    if not isinstance(n, int) or not 1 <= n <= big_n:
        raise InvalidArgumentError(f"Size must satisfy 1 <= n <= N={big_n}, got {n!r}")
    a = _check_a(a, mode)
    if n == big_n:
        return _kummer_ratio((0, 2), (big_n - 1, 2), -2 * a, mode)
    return 2 * a * _kummer_ratio((big_n - 1 - n, 2), (big_n - 1, 2), -2 * a, mode)


def p2_constant(
    a, big_n: int, asymptotic: bool = False, mode: NumericMode = NumericMode.FLOATING
) -> Number:
    """Probability that two particles share a cluster, equal to G_1(a, N).

    With asymptotic=True the large-N approximation √(2/(aN)) is returned instead.
    """
    _check_n(big_n)
    if asymptotic:
        return math.sqrt(2 / (float(_check_a(a, NumericMode.FLOATING)) * big_n))
    return g_n(1, a, big_n, mode=mode).value

