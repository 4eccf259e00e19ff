# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Steady-state statistics of the finite coagulation-fragmentation process.

Given a detailed-balance kernel, the invariant measure of a configuration (m_1, ..., m_N) with K
clusters is proportional to Π_i a_i^{m_i}/m_i!. Conditioned on K the normalization constant is
C_{N,K}; the number of clusters itself follows a birth-death chain with separation rates s_K and
formation rates f_K whose stationary law is Π_K.
"""
import logging
import math
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import (
    DegenerateChainError,
    InvalidArgumentError,
    NumericOverflowError,
    UnreachableConfigurationError,
)
from kernels import Kernel, KernelSpec, build_kernel
from numeric import (
    NEG_INF,
    Number,
    NumericMode,
    as_float,
    format_number,
    log_factorial,
    log_of,
    log_sum,
    to_fraction,
)
from partitions import OccupancyPartition, enumerate_occupancy

logger = logging.getLogger(__name__)

METHODS = ("recurrence", "enumeration")

# exp() of anything above this overflows a double.
_MAX_LOG = 709.0


class CnkTable:
    """Triangular table of the normalization constants C_{n,k}, 1 <= k <= n <= N.

    Entries are exact rationals in exact mode and natural logarithms in floating mode. Out of
    range indices follow C_{n,k} = 0 when k > n, n < 0 or k < 1, and C_{0,0} = 1.
    """

    def __init__(self, kernel: Kernel, n: int, mode: NumericMode, entries: List[List[Any]]):
        self.kernel = kernel
        self.n = n
        self.mode = mode
        self._entries = entries

    def _in_range(self, n: int, k: int) -> bool:
        return 0 <= k <= n <= self.n

    def log_value(self, n: int, k: int) -> float:
        """Natural logarithm of C_{n,k}, -inf when it is zero."""
        if not self._in_range(n, k):
            return NEG_INF
        entry = self._entries[n][k]
        return log_of(entry) if self.mode.is_exact else entry

    def value(self, n: int, k: int) -> Number:
        """C_{n,k} in the number type of the table.

        Raises:
            NumericOverflowError: when a floating mode value exceeds the double range.
        """
        if not self._in_range(n, k):
            return self.mode.zero()
        entry = self._entries[n][k]
        if self.mode.is_exact:
            return entry
        if entry > _MAX_LOG:
            raise NumericOverflowError(f"C_{{{n},{k}}} = exp({entry:.1f}) overflows a double")
        return math.exp(entry) if entry != NEG_INF else 0.0

    def is_zero(self, n: int, k: int) -> bool:
        """Whether C_{n,k} vanishes."""
        return self.log_value(n, k) == NEG_INF

    def ratio(
        self, weights: Sequence[Fraction], numerator: Tuple[int, int], denominator: Tuple[int, int]
    ) -> Number:
        """Return Π weights · C[numerator] / C[denominator].

        Raises:
            UnreachableConfigurationError: when the denominator vanishes.
        """
        if self.is_zero(*denominator):
            raise UnreachableConfigurationError(
                f"C_{{{denominator[0]},{denominator[1]}}} = 0 for {self.kernel!r}"
            )
        if self.mode.is_exact:
            product = Fraction(1)
            for weight in weights:
                product *= weight
            return product * self.value(*numerator) / self.value(*denominator)
        log_ratio = self.log_value(*numerator) - self.log_value(*denominator)
        log_ratio += sum(log_of(weight) for weight in weights)
        if log_ratio == NEG_INF:
            return 0.0
        if log_ratio > _MAX_LOG:
            raise NumericOverflowError(f"ratio exp({log_ratio:.1f}) overflows a double")
        return math.exp(log_ratio)

    def row(self, n: int) -> List[Number]:
        """C_{n,1}, ..., C_{n,n}."""
        return [self.value(n, k) for k in range(1, n + 1)]

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation; floating mode values are written as logarithms."""
        if self.mode.is_exact:
            values = [
                [format_number(self._entries[n][k]) for k in range(1, n + 1)]
                for n in range(1, self.n + 1)
            ]
            key = "values"
        else:
            values = [
                [_log_entry(self._entries[n][k]) for k in range(1, n + 1)]
                for n in range(1, self.n + 1)
            ]
            key = "log_values"
        return {
            "N": self.n,
            "numeric_mode": self.mode.value,
            "kernel": self.kernel.spec.to_dict(),
            key: values,
        }


def _log_entry(value: float) -> Optional[float]:
    return None if value == NEG_INF else value


def _weights(kernel: Kernel, n: int) -> List[Fraction]:
    kernel.check_size(n)
    return [Fraction(0)] + [kernel.weight(i) for i in range(1, n + 1)]


def _recurrence_entries(weights: List[Fraction], n: int, mode: NumericMode) -> List[List[Any]]:
    # n·C_{n,k} = Σ_{j=1}^{n-k+1} j·a_j·C_{n-j,k-1}
    if mode.is_exact:
        entries: List[List[Any]] = [[Fraction(0)] * (n + 1) for _ in range(n + 1)]
        entries[0][0] = Fraction(1)
        for size in range(1, n + 1):
            for k in range(1, size + 1):
                total = Fraction(0)
                for j in range(1, size - k + 2):
                    if weights[j]:
                        total += j * weights[j] * entries[size - j][k - 1]
                entries[size][k] = total / size
        return entries
    log_weights = [NEG_INF] + [log_of(j * weights[j]) for j in range(1, n + 1)]
    entries = [[NEG_INF] * (n + 1) for _ in range(n + 1)]
    entries[0][0] = 0.0
    for size in range(1, n + 1):
        for k in range(1, size + 1):
            terms = [log_weights[j] + entries[size - j][k - 1] for j in range(1, size - k + 2)]
            entries[size][k] = log_sum(terms) - math.log(size)
    return entries


def partition_weight(kernel: Kernel, m: Sequence[int], mode: NumericMode) -> Number:
    """Unnormalized invariant weight Π a_i^{m_i}/m_i! (its logarithm in floating mode)."""
    if mode.is_exact:
        weight = Fraction(1)
        for size, count in enumerate(m, start=1):
            if count:
                weight *= kernel.weight(size) ** count / math.factorial(count)
        return weight
    log_weight = 0.0
    for size, count in enumerate(m, start=1):
        if count:
            log_weight += count * log_of(kernel.weight(size)) - log_factorial(count)
    return log_weight


def _enumeration_entries(kernel: Kernel, n: int, mode: NumericMode) -> List[List[Any]]:
    if mode.is_exact:
        entries: List[List[Any]] = [[Fraction(0)] * (n + 1) for _ in range(n + 1)]
        entries[0][0] = Fraction(1)
    else:
        entries = [[NEG_INF] * (n + 1) for _ in range(n + 1)]
        entries[0][0] = 0.0
    for size in range(1, n + 1):
        grouped: Dict[int, List[Any]] = {}
        for partition in enumerate_occupancy(size, max_size=kernel.max_size):
            grouped.setdefault(partition.clusters, []).append(
                partition_weight(kernel, partition, mode)
            )
        for k, weights in grouped.items():
            entries[size][k] = sum(weights, Fraction(0)) if mode.is_exact else log_sum(weights)
    return entries


def compute_cnk(
    kernel: Kernel,
    n: int,
    method: str = "recurrence",
    mode: NumericMode = NumericMode.EXACT,
) -> CnkTable:
    """Compute the table of normalization constants C_{n,k} up to n = N.

    Args:
        kernel: a detailed-balance kernel.
        n: the number of particles N.
        method: "recurrence" fills the table from the boundary rows with
            (n+1)·C_{n+1,K} = Σ_{k=0}^{n-K+1} (k+1)·a_{k+1}·C_{n-k,K-1};
            "enumeration" sums the weights of the enumerated partitions (oracle).
        mode: exact rationals or floating logarithms.

    Returns:
        the filled table.
    """
    if not isinstance(n, int) or n < 1:
        raise InvalidArgumentError(f"N must be a positive integer, got {n!r}")
    if method not in METHODS:
        raise InvalidArgumentError(f"Unknown method '{method}', expected one of {METHODS}")
    weights = _weights(kernel, n)
    if method == "recurrence":
        entries = _recurrence_entries(weights, n, mode)
    else:
        entries = _enumeration_entries(kernel, n, mode)
    logger.debug(f"Computed C_{{n,k}} up to N={n} by {method} in {mode.value} mode")
    return CnkTable(kernel, n, mode, entries)


def _check_partition(table: CnkTable, m: Sequence[int]) -> OccupancyPartition:
    counts = tuple(m)
    if len(counts) < table.n:
        counts = counts + (0,) * (table.n - len(counts))
    return OccupancyPartition.parse(counts, table.n)


def config_probability(table: CnkTable, m: Sequence[int]) -> Number:
    """Conditional probability p'(m | K(m)) = (Π a_i^{m_i}/m_i!) / C_{N,K(m)}.

    Raises:
        UnreachableConfigurationError: when C_{N,K(m)} = 0.
    """
    partition = _check_partition(table, m)
    k = partition.clusters
    if table.is_zero(table.n, k):
        raise UnreachableConfigurationError(f"No configuration of N={table.n} has K={k} clusters")
    weight = partition_weight(table.kernel, partition, table.mode)
    if table.mode.is_exact:
        return weight / table.value(table.n, k)
    log_probability = weight - table.log_value(table.n, k)
    return math.exp(log_probability) if log_probability != NEG_INF else 0.0


def _check_k(table: CnkTable, k: int) -> None:
    if not isinstance(k, int) or not 1 <= k <= table.n:
        raise InvalidArgumentError(f"K must satisfy 1 <= K <= N={table.n}, got {k!r}")
    if table.is_zero(table.n, k):
        raise UnreachableConfigurationError(f"C_{{{table.n},{k}}} = 0: K={k} is unreachable")


def mean_count_given_k(table: CnkTable, i: int, k: int) -> Number:
    """Mean number of clusters of size i given K clusters, a_i·C_{N-i,K-1}/C_{N,K}.

    Raises:
        InvalidArgumentError: when i or K is outside 1..N.
        UnreachableConfigurationError: when C_{N,K} = 0.
    """
    if not isinstance(i, int) or not 1 <= i <= table.n:
        raise InvalidArgumentError(f"Size must satisfy 1 <= i <= N={table.n}, got {i!r}")
    _check_k(table, k)
    # The largest cluster holds at most N - K + 1 particles.
    if i > table.n - k + 1:
        return table.mode.zero()
    return table.ratio([table.kernel.weight(i)], (table.n - i, k - 1), (table.n, k))


class MomentReport:
    """Means, second moments and covariances of the cluster counts M_i."""

    def __init__(
        self,
        n: int,
        k: Optional[int],
        mode: NumericMode,
        mean_counts: List[Number],
        second_moments: Optional[List[Number]] = None,
        covariances: Optional[Dict[Tuple[int, int], Number]] = None,
    ):
        self.n = n
        self.k = k
        self.mode = mode
        self.mean_counts = mean_counts
        self.second_moments = second_moments
        self.covariances = covariances or {}

    @property
    def marginal(self) -> bool:
        """Whether the report is unconditional on K."""
        return self.k is None

    def mean(self, i: int) -> Number:
        """⟨M_i⟩."""
        return self.mean_counts[i - 1]

    def variance(self, i: int) -> Number:
        """⟨M_i²⟩ - ⟨M_i⟩²."""
        if self.second_moments is None:
            raise InvalidArgumentError("The report carries no second moments")
        return self.second_moments[i - 1] - self.mean_counts[i - 1] ** 2

    def particles(self) -> Number:
        """Σ i·⟨M_i⟩, equal to N."""
        return sum(
            (size * mean for size, mean in enumerate(self.mean_counts, start=1)), self.mode.zero()
        )

    def clusters(self) -> Number:
        """Σ ⟨M_i⟩, equal to K for conditional reports."""
        return sum(self.mean_counts, self.mode.zero())

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation."""
        result: Dict[str, Any] = {
            "N": self.n,
            "K": self.k,
            "numeric_mode": self.mode.value,
            "mean_counts": [_serialize(value) for value in self.mean_counts],
        }
        if self.second_moments is not None:
            result["second_moments"] = [_serialize(value) for value in self.second_moments]
        if self.covariances:
            result["covariances"] = [
                {"i": i, "j": j, "value": _serialize(value)}
                for (i, j), value in sorted(self.covariances.items())
            ]
        return result


def _serialize(value: Number):
    return format_number(value) if isinstance(value, Fraction) else float(value)


def _joint_moment(table: CnkTable, i: int, j: int, k: int) -> Number:
    # ⟨M_i M_j⟩ for i != j, and the factorial moment ⟨M_i(M_i - 1)⟩ for i = j.
    n = table.n
    if i == j:
        return table.ratio([table.kernel.weight(i)] * 2, (n - 2 * i, k - 2), (n, k))
    return table.ratio(
        [table.kernel.weight(i), table.kernel.weight(j)], (n - i - j, k - 2), (n, k)
    )


def moments_given_k(
    table: CnkTable, k: int, pairs: Optional[Sequence[Tuple[int, int]]] = None
) -> MomentReport:
    """Conditional means, second moments and requested covariances given K clusters.

    ⟨M_i²⟩ = a_i²·C_{N-2i,K-2}/C_{N,K} + a_i·C_{N-i,K-1}/C_{N,K} and, for i != j,
    ⟨M_i M_j⟩ = a_i·a_j·C_{N-i-j,K-2}/C_{N,K}; out of range constants count as zero.
    """
    _check_k(table, k)
    n = table.n
    means = [mean_count_given_k(table, i, k) for i in range(1, n + 1)]
    second = [_joint_moment(table, i, i, k) + means[i - 1] for i in range(1, n + 1)]
    covariances: Dict[Tuple[int, int], Number] = {}
    for i, j in pairs or []:
        if not (1 <= i <= n and 1 <= j <= n):
            raise InvalidArgumentError(f"Invalid size pair ({i}, {j}) for N={n}")
        if i == j:
            covariances[(i, j)] = second[i - 1] - means[i - 1] ** 2
        else:
            covariances[(i, j)] = _joint_moment(table, i, j, k) - means[i - 1] * means[j - 1]
    return MomentReport(n, k, table.mode, means, second, covariances)


class RateSchedule:
    """Separation rates s_K (K = 1..N-1) and formation rates f_K (K = 2..N)."""

    def __init__(
        self,
        n: int,
        mode: NumericMode,
        separation: List[Number],
        formation: List[Number],
        reachable: List[bool],
    ):
        # All three lists are indexed by K from 0 to N; s_N = f_1 = 0.
        self.n = n
        self.mode = mode
        self._separation = separation
        self._formation = formation
        self._reachable = reachable

    def s(self, k: int) -> Number:
        """Separation rate from K to K + 1 clusters."""
        return self._separation[k] if 1 <= k <= self.n else self.mode.zero()

    def f(self, k: int) -> Number:
        """Formation rate from K to K - 1 clusters."""
        return self._formation[k] if 1 <= k <= self.n else self.mode.zero()

    def reachable(self, k: int) -> bool:
        """Whether some configuration has K clusters."""
        return 1 <= k <= self.n and self._reachable[k]

    @property
    def separation(self) -> List[Number]:
        """s_1, ..., s_{N-1}."""
        return self._separation[1 : self.n]

    @property
    def formation(self) -> List[Number]:
        """f_2, ..., f_N."""
        return self._formation[2 : self.n + 1]

    def scaled(self, factor) -> "RateSchedule":
        """Schedule with every rate multiplied by factor."""
        factor = self.mode.number(factor)
        return RateSchedule(
            self.n,
            self.mode,
            [rate * factor for rate in self._separation],
            [rate * factor for rate in self._formation],
            list(self._reachable),
        )

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation."""
        return {
            "N": self.n,
            "numeric_mode": self.mode.value,
            "s": [_serialize(rate) for rate in self.separation],
            "f": [_serialize(rate) for rate in self.formation],
        }


def formation_rate(kernel: Kernel, table: CnkTable, k: int) -> Number:
    """Aggregate coagulation rate f_K of the configurations with K clusters.

    f_K = (1/C_{N,K})·[Σ_{i<j} C(i,j)·a_i·a_j·C_{N-i-j,K-2}
                       + ½·Σ_i C(i,i)·a_i²·C_{N-2i,K-2}],
    the expected number of coagulating pairs weighted by C. For unit coagulation it is the number
    of cluster pairs K(K - 1)/2.
    """
    n = table.n
    if k < 2 or table.is_zero(n, k):
        return table.mode.zero()
    if kernel.unit_coagulation:
        return table.mode.number(Fraction(k * (k - 1), 2))
    total = table.mode.zero()
    for i in range(1, n):
        for j in range(i, n + 1 - i):
            rate = kernel.coag(i, j)
            if not rate:
                continue
            if i == j:
                rate = rate / 2
            weights = [rate, kernel.weight(i), kernel.weight(j)]
            total += table.ratio(weights, (n - i - j, k - 2), (n, k))
    return total


def separation_rate(kernel: Kernel, table: CnkTable, k: int) -> Number:
    """Aggregate fragmentation rate s_K = Σ_i d(i)·a_i·C_{N-i,K-1}/C_{N,K}."""
    n = table.n
    if k >= n or table.is_zero(n, k):
        return table.mode.zero()
    total = table.mode.zero()
    for i in range(2, n - k + 2):
        dissociation = kernel.dissociation(i)
        if dissociation:
            total += table.ratio([dissociation, kernel.weight(i)], (n - i, k - 1), (n, k))
    return total


def _enumerated_rates(kernel: Kernel, table: CnkTable) -> Tuple[List[Number], List[Number]]:
    # Configuration-space expectations of the total fragmentation and coagulation rates.
    n = table.n
    mode = table.mode
    separation = [mode.zero()] * (n + 1)
    formation = [mode.zero()] * (n + 1)
    for partition in enumerate_occupancy(n, max_size=kernel.max_size):
        k = partition.clusters
        if table.is_zero(n, k):
            continue
        probability = config_probability(table, partition)
        frag_total = Fraction(0)
        coag_total = Fraction(0)
        sizes = [size for size in range(1, n + 1) if partition[size - 1]]
        for i in sizes:
            count_i = partition[i - 1]
            frag_total += count_i * kernel.dissociation(i)
            if count_i > 1:
                coag_total += kernel.coag(i, i) * Fraction(count_i * (count_i - 1), 2)
            for j in sizes:
                if j > i:
                    coag_total += kernel.coag(i, j) * count_i * partition[j - 1]
        separation[k] += probability * mode.number(frag_total)
        formation[k] += probability * mode.number(coag_total)
    separation[n] = mode.zero()
    return separation, formation


def rate_schedule(kernel: Kernel, table: CnkTable, method: str = "closed") -> RateSchedule:
    """Separation and formation rates of the cluster-count chain.

    Args:
        kernel: the kernel the table was computed for.
        table: normalization constants up to N.
        method: "closed" uses the C_{N,K} ratio formulas, "enumeration" averages the
            configuration-space rates over P'_{N,K} (oracle, O(q(N))).
    """
    n = table.n
    reachable = [False] + [not table.is_zero(n, k) for k in range(1, n + 1)]
    if method == "enumeration":
        separation, formation = _enumerated_rates(kernel, table)
    elif method == "closed":
        separation = [table.mode.zero()]
        formation = [table.mode.zero()]
        for k in range(1, n + 1):
            separation.append(separation_rate(kernel, table, k))
            formation.append(formation_rate(kernel, table, k))
    else:
        raise InvalidArgumentError(f"Unknown rate method '{method}'")
    logger.debug(f"Rate schedule for N={n}: s={separation[1:n]}, f={formation[2:]}")
    return RateSchedule(n, table.mode, separation, formation, reachable)


class ClusterCountDistribution:
    """Distribution (Π_1, ..., Π_N) of the number of clusters."""

    def __init__(self, n: int, pi: List[Number], mode: NumericMode):
        self.n = n
        self.pi = pi
        self.mode = mode

    def __getitem__(self, k: int) -> Number:
        """Π_K for 1 <= K <= N."""
        if not 1 <= k <= self.n:
            raise IndexError(f"K={k} outside 1..{self.n}")
        return self.pi[k - 1]

    def mean(self) -> Number:
        """Mean number of clusters Σ K·Π_K."""
        return sum((k * value for k, value in enumerate(self.pi, start=1)), self.mode.zero())

    def moment(self, order: int) -> Number:
        """Σ K^order·Π_K."""
        return sum(
            (k**order * value for k, value in enumerate(self.pi, start=1)), self.mode.zero()
        )

    def as_floats(self) -> np.ndarray:
        """Probabilities as a float array indexed from K = 1."""
        return np.array([as_float(value) for value in self.pi])

    def rows(self) -> List[Tuple[int, Number]]:
        """(K, Π_K) rows for tabular output."""
        return [(k, value) for k, value in enumerate(self.pi, start=1)]


def steady_state_pi(rates: RateSchedule) -> ClusterCountDistribution:
    """Stationary law of the cluster-count chain from the ladder Π_K/Π_{K-1} = s_{K-1}/f_K.

    The ladder starts at the smallest reachable K; floating mode works with logarithms.

    Raises:
        DegenerateChainError: when every rate vanishes or the ladder cannot be continued.
    """
    n = rates.n
    mode = rates.mode
    reachable = [k for k in range(1, n + 1) if rates.reachable(k)]
    if not reachable:
        raise DegenerateChainError(f"No cluster count is reachable for N={n}")
    if n > 1 and not any(rates.s(k) or rates.f(k) for k in range(1, n + 1)):
        raise DegenerateChainError(f"Every separation and formation rate vanishes for N={n}")
    start = reachable[0]
    logs = [NEG_INF] * (n + 1)
    exact = [Fraction(0)] * (n + 1)
    logs[start] = 0.0
    exact[start] = Fraction(1)
    for k in range(start, n):
        separation, formation = rates.s(k), rates.f(k + 1)
        if not separation:
            break
        if not formation:
            raise DegenerateChainError(f"s_{k} > 0 but f_{k + 1} = 0 for N={n}")
        if mode.is_exact:
            exact[k + 1] = exact[k] * separation / formation
        else:
            logs[k + 1] = logs[k] + math.log(separation) - math.log(formation)
    if mode.is_exact:
        total = sum(exact[1:], Fraction(0))
        pi = [value / total for value in exact[1:]]
    else:
        total = log_sum(logs[1:])
        pi = [math.exp(value - total) if value != NEG_INF else 0.0 for value in logs[1:]]
    return ClusterCountDistribution(n, pi, mode)


def transient_pi(
    rates: RateSchedule,
    p0: ClusterCountDistribution,
    t: float,
    dt: Optional[float] = None,
) -> ClusterCountDistribution:
    """Integrate the cluster-count master equation with the classical fourth-order scheme.

    dΠ_K/dt = s_{K-1}·Π_{K-1} + f_{K+1}·Π_{K+1} - (s_K + f_K)·Π_K

    Args:
        rates: the separation and formation rates.
        p0: the initial distribution.
        t: the integration horizon, t >= 0.
        dt: the largest step, 0.1/max_K(f_K + s_K) by default.

    Raises:
        InvalidArgumentError: on a negative horizon, a non-normalized p0 or an unstable step.
    """
    n = rates.n
    if p0.n != n:
        raise InvalidArgumentError(f"p0 has N={p0.n}, the rates N={n}")
    if t < 0:
        raise InvalidArgumentError(f"t must be non-negative, got {t}")
    initial = p0.as_floats()
    if abs(initial.sum() - 1.0) > 1e-9 or (initial < 0).any():
        raise InvalidArgumentError("p0 must be a probability distribution")
    if t == 0:
        return ClusterCountDistribution(n, list(p0.pi), p0.mode)

    separation = np.array([as_float(rates.s(k)) for k in range(1, n + 1)])
    formation = np.array([as_float(rates.f(k)) for k in range(1, n + 1)])
    outflow = separation + formation
    largest = float(outflow.max())
    if dt is None:
        dt = 0.1 / largest if largest > 0 else t
    if dt <= 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if dt * largest > 1:
        raise InvalidArgumentError(
            f"dt={dt} is unstable for max(f_K + s_K)={largest}; use dt <= {0.1 / largest:.3g}"
        )

    generator = np.diag(-outflow)
    for index in range(n - 1):
        # K -> K + 1 at s_K and K + 1 -> K at f_{K+1}.
        generator[index + 1, index] += separation[index]
        generator[index, index + 1] += formation[index + 1]

    steps = max(1, math.ceil(t / dt))
    step = t / steps
    state = initial.copy()
    for _ in range(steps):
        k1 = generator @ state
        k2 = generator @ (state + 0.5 * step * k1)
        k3 = generator @ (state + 0.5 * step * k2)
        k4 = generator @ (state + step * k3)
        state = state + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    state = np.clip(state, 0.0, None)
    state /= state.sum()
    logger.debug(f"Integrated N={n} cluster-count chain to t={t} in {steps} steps")
    return ClusterCountDistribution(n, [float(value) for value in state], NumericMode.FLOATING)


def _reachable_ks(table: CnkTable, pi: ClusterCountDistribution) -> List[int]:
    if pi.n != table.n:
        raise InvalidArgumentError(f"Distribution has N={pi.n}, the table N={table.n}")
    return [k for k in range(1, table.n + 1) if pi[k] and not table.is_zero(table.n, k)]


def marginal_moments(table: CnkTable, pi: ClusterCountDistribution) -> MomentReport:
    """Unconditional means ⟨M_i⟩ = Σ_K Π_K·⟨M_i⟩_{N,K} and second moments."""
    n = table.n
    means = [table.mode.zero()] * n
    second = [table.mode.zero()] * n
    for k in _reachable_ks(table, pi):
        weight = table.mode.number(pi[k])
        report = moments_given_k(table, k)
        for index in range(n):
            means[index] += weight * report.mean_counts[index]
            second[index] += weight * report.second_moments[index]
    return MomentReport(n, None, table.mode, means, second)


def square_size_sum(table: CnkTable, k: int) -> Number:
    """Σ_j j²·⟨M_j⟩_{N,K}."""
    return sum(
        (j * j * mean_count_given_k(table, j, k) for j in range(1, table.n - k + 2)),
        table.mode.zero(),
    )


def p2_exact(table: CnkTable, pi: ClusterCountDistribution) -> Number:
    """Probability that two tagged particles share a cluster.

    ⟨P₂⟩ = (1/(N(N-1)))·Σ_K Π_K·Σ_j j²·⟨M_j⟩_{N,K} - 1/(N-1)

    Raises:
        InvalidArgumentError: when N < 2.
    """
    n = table.n
    if n < 2:
        raise InvalidArgumentError("⟨P₂⟩ needs at least two particles")
    total = table.mode.zero()
    for k in _reachable_ks(table, pi):
        total += table.mode.number(pi[k]) * square_size_sum(table, k)
    if table.mode.is_exact:
        return total / (n * (n - 1)) - Fraction(1, n - 1)
    return min(1.0, max(0.0, total / (n * (n - 1)) - 1.0 / (n - 1)))


def pn_exact(table: CnkTable, pi: ClusterCountDistribution, count: int) -> Number:
    """Probability that `count` tagged particles all share one cluster.

    Σ_K Π_K·Σ_j (j)_count·⟨M_j⟩_{N,K} / (N)_count with falling factorials (x)_c.
    """
    n = table.n
    if not 1 <= count <= n:
        raise InvalidArgumentError(f"Need 1 <= count <= N={n}, got {count}")
    total = table.mode.zero()
    for k in _reachable_ks(table, pi):
        inner = table.mode.zero()
        for j in range(count, n - k + 2):
            inner += math.perm(j, count) * mean_count_given_k(table, j, k)
        total += table.mode.number(pi[k]) * inner
    return total / math.perm(n, count)


def configuration_distribution(
    table: CnkTable, pi: ClusterCountDistribution
) -> Dict[OccupancyPartition, Number]:
    """Unconditional law p(m) = Π_{K(m)}·p'(m | K(m)) over the enumerated configurations."""
    result: Dict[OccupancyPartition, Number] = {}
    reachable = set(_reachable_ks(table, pi))
    for partition in enumerate_occupancy(table.n, max_size=table.kernel.max_size):
        k = partition.clusters
        if k not in reachable:
            continue
        probability = table.mode.number(pi[k]) * config_probability(table, partition)
        if probability:
            result[partition] = probability
    return result


class NucleationLimit:
    """a → 0 limit of the bounded kernel: the chain freezes with ceil(N/M) clusters."""

    def __init__(self, kernel: Kernel, table: CnkTable, pi: ClusterCountDistribution):
        self.kernel = kernel
        self.table = table
        self.pi = pi

    @property
    def clusters(self) -> int:
        """The frozen number of clusters ceil(N/M)."""
        return next(k for k, value in self.pi.rows() if value)


def nucleation_limit(max_size: int, n: int) -> NucleationLimit:
    """Limit probabilities of the bounded kernel as a → 0, in exact arithmetic.

    Only K0 = ceil(N/M) survives; within it the conditional weights Π a^{m_i}/m_i! share the
    factor a^{K0}, so the table is computed at a = 1 and Π is the point mass at K0.
    """
    if not isinstance(max_size, int) or max_size < 1:
        raise InvalidArgumentError(f"M must be a positive integer, got {max_size!r}")
    kernel = build_kernel(KernelSpec(family="bounded", a=1, M=max_size))
    table = compute_cnk(kernel, n, mode=NumericMode.EXACT)
    frozen = -(-n // max_size)
    pi = [Fraction(1) if k == frozen else Fraction(0) for k in range(1, n + 1)]
    logger.info(f"Nucleation limit of N={n}, M={max_size}: {frozen} clusters")
    return NucleationLimit(kernel, table, ClusterCountDistribution(n, pi, NumericMode.EXACT))


def linear_cnk(a, n: int, k: int) -> Fraction:
    """C_{N,K} of the linear kernel a_i = a·i: a^K/K!·binom(N+K-1, N-K)."""
    a = to_fraction(a)
    if not 1 <= k <= n:
        return Fraction(0)
    return a**k / math.factorial(k) * math.comb(n + k - 1, n - k)


def linear_cnk_displayed(a, n: int, k: int) -> Fraction:
    """a^K·binom(N+K-1, N-K): the same closed form without the 1/K! of the definition."""
    a = to_fraction(a)
    if not 1 <= k <= n:
        return Fraction(0)
    return a**k * math.comb(n + k - 1, n - k)


def _comb(n: int, k: int) -> int:
    if n < 0 or k < 0 or k > n:
        return 1 if n == -1 and k == 0 else 0
    return math.comb(n, k)


def linear_mean_count_displayed(n: int, k: int, i: int) -> Fraction:
    """Linear kernel ⟨M_i⟩_{N,K} from the closed form without 1/K!.

    i·binom(N-i+K-2, N-K-i+1)/binom(N+K-1, N-K) is smaller than the true mean by the factor K.
    """
    if i > n - k + 1:
        return Fraction(0)
    return Fraction(i * _comb(n - i + k - 2, n - k - i + 1), _comb(n + k - 1, n - k))


def linear_separation_rate(a, n: int, k: int) -> Fraction:
    """s_K of the linear kernel as a binomial sum with the 1/K! convention.

    s_K = K·(a/6)·Σ_{i=1}^{N-K+1} i(i²-1)·binom(N-i+K-2, N-i-K+1) / binom(N+K-1, N-K)
    """
    a = to_fraction(a)
    if not 1 <= k < n:
        return Fraction(0)
    total = sum(
        i * (i * i - 1) * _comb(n - i + k - 2, n - i - k + 1) for i in range(1, n - k + 2)
    )
    return k * a / 6 * Fraction(total, _comb(n + k - 1, n - k))
