# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Integer partitions of N in size form and occupancy form.

A size partition lists the cluster sizes in non-increasing order, e.g. (4, 4, 1, 1). The
occupancy form of the same state is the dense vector (m_1, ..., m_N) where m_i is the number of
clusters of size i, here (2, 0, 0, 2, 0, 0, 0, 0, 0, 0). Enumerations follow the
reverse-lexicographic order of the size form (largest first), which gives stable indices.
"""
import logging
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from errors import InvalidArgumentError, ResourceLimitError
from utils import enumeration_cap

logger = logging.getLogger(__name__)


class SizePartition(tuple):
    """Cluster sizes of a configuration, non-increasing."""

    @classmethod
    def parse(cls, parts: Sequence[int]) -> "SizePartition":
        """Validate and build a size partition.

        Raises:
            InvalidArgumentError: on an empty, non-sorted or non-positive sequence.
        """
        parts = tuple(parts)
        if not parts:
            raise InvalidArgumentError("A size partition needs at least one part")
        for part in parts:
            if not isinstance(part, int) or part < 1:
                raise InvalidArgumentError(f"Invalid part {part!r} in {parts}")
        for left, right in zip(parts, parts[1:]):
            if left < right:
                raise InvalidArgumentError(f"Parts must be non-increasing, got {parts}")
        return cls(parts)

    @property
    def total(self) -> int:
        """Number of particles N."""
        return sum(self)


class OccupancyPartition(tuple):
    """Dense occupancy vector (m_1, ..., m_N) of a configuration."""

    @classmethod
    def parse(cls, counts: Sequence[int], n: Optional[int] = None) -> "OccupancyPartition":
        """Validate and build an occupancy partition, optionally checking Σ i·m_i = n."""
        counts = tuple(counts)
        if any(not isinstance(count, int) or count < 0 for count in counts):
            raise InvalidArgumentError(f"Invalid occupancy counts {counts}")
        partition = cls(counts)
        if partition.clusters < 1:
            raise InvalidArgumentError("An occupancy partition needs at least one cluster")
        if n is not None and partition.total != n:
            raise InvalidArgumentError(f"{counts} is not a partition of {n}")
        return partition

    @property
    def total(self) -> int:
        """Number of particles, Σ i·m_i."""
        return sum(size * count for size, count in enumerate(self, start=1))

    @property
    def clusters(self) -> int:
        """Number of clusters K(m) = Σ m_i."""
        return sum(self)

    def multiplicity(self, size: int) -> int:
        """Return m_size, zero for sizes outside the vector."""
        if 1 <= size <= len(self):
            return self[size - 1]
        return 0

    def sizes(self) -> SizePartition:
        """Expand the counts into the size form."""
        parts: List[int] = []
        for size in range(len(self), 0, -1):
            parts.extend([size] * self[size - 1])
        return SizePartition(parts)

    def to_sparse(self) -> List[List[int]]:
        """Sparse [size, count] pairs sorted by size, zero counts omitted."""
        return [[size, count] for size, count in enumerate(self, start=1) if count]


def occupancy_from_sizes(sizes: Sequence[int]) -> OccupancyPartition:
    """Map a size partition to its occupancy vector.

    Args:
        sizes: non-empty, non-increasing positive cluster sizes.

    Returns:
        the dense occupancy vector of length Σ sizes.
    """
    sizes = SizePartition.parse(sizes)
    counts = [0] * sizes.total
    for size in sizes:
        counts[size - 1] += 1
    return OccupancyPartition(counts)


def sizes_from_occupancy(counts: Sequence[int]) -> SizePartition:
    """Map an occupancy vector back to its size partition."""
    return OccupancyPartition.parse(counts).sizes()


def from_sparse(pairs: Sequence[Sequence[int]], n: int) -> OccupancyPartition:
    """Build an occupancy partition of n from sparse [size, count] pairs."""
    counts = [0] * n
    for pair in pairs:
        if len(pair) != 2:
            raise InvalidArgumentError(f"Invalid sparse entry {pair!r}")
        size, count = pair
        if not 1 <= size <= n or count < 0:
            raise InvalidArgumentError(f"Invalid sparse entry {pair!r} for N={n}")
        counts[size - 1] += count
    return OccupancyPartition.parse(counts, n)


@lru_cache(maxsize=None)
def partition_count(n: int) -> int:
    """Number of partitions q(n) by Euler's pentagonal number recurrence."""
    if n < 0:
        return 0
    if n == 0:
        return 1
    total = 0
    k = 1
    while True:
        first = k * (3 * k - 1) // 2
        if first > n:
            break
        second = k * (3 * k + 1) // 2
        sign = 1 if k % 2 else -1
        total += sign * (partition_count(n - first) + partition_count(n - second))
        k += 1
    return total


def _descending_partitions(n: int, max_part: int) -> Iterator[Tuple[int, ...]]:
    """Yield the partitions of n with parts at most max_part in reverse-lexicographic order."""
    parts = [max_part] * (n // max_part)
    if n % max_part:
        parts.append(n % max_part)
    yield tuple(parts)
    while True:
        ones = 0
        while parts and parts[-1] == 1:
            parts.pop()
            ones += 1
        if not parts:
            return
        last = parts.pop()
        remainder = ones + last
        value = last - 1
        while remainder >= value:
            parts.append(value)
            remainder -= value
        if remainder:
            parts.append(remainder)
        yield tuple(parts)


class PartitionIndex:
    """Ordered table of occupancy partitions with a reverse lookup."""

    def __init__(
        self,
        n: int,
        partitions: List[OccupancyPartition],
        max_size: Optional[int] = None,
        k: Optional[int] = None,
    ):
        self.n = n
        self.max_size = max_size
        self.k = k
        self._partitions = partitions
        self._lookup: Dict[OccupancyPartition, int] = {
            partition: position for position, partition in enumerate(partitions)
        }

    def __len__(self) -> int:
        return len(self._partitions)

    def __getitem__(self, position: int) -> OccupancyPartition:
        return self._partitions[position]

    def __iter__(self) -> Iterator[OccupancyPartition]:
        return iter(self._partitions)

    def __contains__(self, partition) -> bool:
        return tuple(partition) in self._lookup

    def index(self, partition: Sequence[int]) -> int:
        """Position of a partition in the table.

        Raises:
            KeyError: when the partition is not part of the table.
        """
        return self._lookup[tuple(partition)]

    def filter_k(self, k: int) -> "PartitionIndex":
        """Sub-table of the partitions with exactly k clusters, order preserved."""
        selected = [partition for partition in self._partitions if partition.clusters == k]
        return PartitionIndex(self.n, selected, max_size=self.max_size, k=k)

    def size_forms(self) -> List[SizePartition]:
        """All partitions of the table in size form."""
        return [partition.sizes() for partition in self._partitions]


def _check_enumerable(n: int, max_size: Optional[int]) -> int:
    if not isinstance(n, int) or n < 1:
        raise InvalidArgumentError(f"N must be a positive integer, got {n!r}")
    if max_size is not None and (not isinstance(max_size, int) or max_size < 1):
        raise InvalidArgumentError(f"max_size must be a positive integer, got {max_size!r}")
    cap = enumeration_cap()
    if n > cap:
        raise ResourceLimitError(
            f"Refusing to enumerate the partitions of N={n} (cap {cap}, q(N)={partition_count(n)})"
        )
    return n if max_size is None else min(max_size, n)


def enumerate_occupancy(n: int, max_size: Optional[int] = None) -> PartitionIndex:
    """Enumerate every occupancy partition of n, with parts at most max_size when given.

    Raises:
        InvalidArgumentError: when n or max_size is not a positive integer.
        ResourceLimitError: when n exceeds the enumeration cap.
    """
    max_part = _check_enumerable(n, max_size)
    partitions = []
    for parts in _descending_partitions(n, max_part):
        counts = [0] * n
        for part in parts:
            counts[part - 1] += 1
        partitions.append(OccupancyPartition(counts))
    logger.debug(f"Enumerated {len(partitions)} partitions of N={n} (max size {max_size})")
    return PartitionIndex(n, partitions, max_size=max_size)


def enumerate_occupancy_given_k(
    n: int, k: int, max_size: Optional[int] = None
) -> PartitionIndex:
    """Enumerate the occupancy partitions of n with exactly k clusters.

    An empty table is returned when no partition satisfies the size bound (k < ceil(n/M)).

    Raises:
        InvalidArgumentError: when k is outside 1..n.
    """
    if not isinstance(k, int) or not 1 <= k <= n:
        raise InvalidArgumentError(f"K must satisfy 1 <= K <= N={n}, got {k!r}")
    max_part = _check_enumerable(n, max_size)
    partitions = []
    for parts in _descending_partitions(n, max_part):
        if len(parts) != k:
            continue
        counts = [0] * n
        for part in parts:
            counts[part - 1] += 1
        partitions.append(OccupancyPartition(counts))
    return PartitionIndex(n, partitions, max_size=max_size, k=k)
