# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Brute-force oracles shared by the unit and integration tests."""
import math
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

# q(0), ..., q(25).
PARTITION_COUNTS = [
    1, 1, 2, 3, 5, 7, 11, 15, 22, 30, 42, 56, 77, 101, 135, 176, 231, 297, 385, 490, 627, 792,
    1002, 1255, 1575, 1958,
]  # fmt: skip


def _size_forms(remaining: int, largest: int) -> Iterator[Tuple[int, ...]]:
    if remaining == 0:
        yield ()
        return
    for size in range(min(remaining, largest), 0, -1):
        for rest in _size_forms(remaining - size, size):
            yield (size,) + rest


def brute_partitions(n: int, max_size: Optional[int] = None) -> List[Tuple[int, ...]]:
    """Occupancy vectors of n by recursion on the largest part."""
    result = []
    for sizes in _size_forms(n, max_size or n):
        counts = [0] * n
        for size in sizes:
            counts[size - 1] += 1
        result.append(tuple(counts))
    return result


def brute_cnk(kernel, n: int, k: int) -> Fraction:
    """C_{n,k} as the sum of Π a_i^{m_i}/m_i! over the partitions of n into k clusters."""
    total = Fraction(0)
    for counts in brute_partitions(n):
        if sum(counts) != k:
            continue
        term = Fraction(1)
        for size, count in enumerate(counts, start=1):
            term *= Fraction(kernel.weight(size)) ** count / math.factorial(count)
        total += term
    return total


def _moved(counts, removed, added) -> Tuple[int, ...]:
    result = list(counts)
    for size in removed:
        result[size - 1] -= 1
    for size in added:
        result[size - 1] += 1
    return tuple(result)


def brute_stationary(kernel, n: int) -> Dict[Tuple[int, ...], float]:
    """Stationary law of the configuration chain, from its full generator.

    The chain moves by coagulation of every unordered cluster pair at C(i, j) and by
    fragmentation of every cluster of size s into (i, s - i) at F(i, s - i).
    """
    states = brute_partitions(n, kernel.max_size)
    index = {state: position for position, state in enumerate(states)}
    generator = np.zeros((len(states), len(states)))
    for state in states:
        row = index[state]
        for i in range(1, n + 1):
            for j in range(i, n + 1 - i):
                if i == j:
                    pairs = state[i - 1] * (state[i - 1] - 1) // 2
                else:
                    pairs = state[i - 1] * state[j - 1]
                rate = float(kernel.coag(i, j)) * pairs
                if rate:
                    generator[row, index[_moved(state, (i, j), (i + j,))]] += rate
            for left in range(1, i):
                rate = float(kernel.frag(left, i - left)) * state[i - 1]
                if rate:
                    generator[row, index[_moved(state, (i,), (left, i - left))]] += rate
    np.fill_diagonal(generator, -generator.sum(axis=1))
    system = np.vstack([generator.T, np.ones(len(states))])
    target = np.zeros(len(states) + 1)
    target[-1] = 1.0
    law = np.linalg.lstsq(system, target, rcond=None)[0]
    return {state: float(law[index[state]]) for state in states}


def brute_pi(law: Dict[Tuple[int, ...], float], n: int) -> List[float]:
    """Π_1, ..., Π_N of a configuration law."""
    pi = [0.0] * n
    for state, probability in law.items():
        pi[sum(state) - 1] += probability
    return pi


def brute_p2(law: Dict[Tuple[int, ...], float], n: int) -> float:
    """Probability that two tagged particles share a cluster."""
    return sum(
        probability
        * sum(size * (size - 1) * count for size, count in enumerate(state, start=1))
        / (n * (n - 1))
        for state, probability in law.items()
    )
