# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import os
import unittest
from unittest.mock import patch

from errors import InvalidArgumentError, ResourceLimitError
from partitions import (
    OccupancyPartition,
    SizePartition,
    enumerate_occupancy,
    enumerate_occupancy_given_k,
    from_sparse,
    occupancy_from_sizes,
    partition_count,
    sizes_from_occupancy,
)
from tests.helpers import PARTITION_COUNTS, brute_partitions


class TestPartitions(unittest.TestCase):
    def test_partition_count(self):
        for n, count in enumerate(PARTITION_COUNTS):
            self.assertEqual(partition_count(n), count)
        self.assertEqual(partition_count(100), 190569292)

    def test_enumerate_occupancy(self):
        # Test the enumeration against the recursive oracle.
        for n in range(1, 16):
            partitions = enumerate_occupancy(n)
            self.assertEqual(len(partitions), partition_count(n))
            self.assertEqual(set(partitions), set(brute_partitions(n)))
            for partition in partitions:
                self.assertEqual(partition.total, n)

        # Test the reverse-lexicographic order of the size forms.
        self.assertEqual(
            [tuple(sizes) for sizes in enumerate_occupancy(4).size_forms()],
            [(4,), (3, 1), (2, 2), (2, 1, 1), (1, 1, 1, 1)],
        )

        # Test the size bound.
        bounded = enumerate_occupancy(9, max_size=4)
        self.assertEqual(set(bounded), set(brute_partitions(9, 4)))
        self.assertTrue(all(max(partition.sizes()) <= 4 for partition in bounded))

    def test_enumerate_occupancy_given_k(self):
        # Test the count of partitions of 10 into 3 parts.
        self.assertEqual(len(enumerate_occupancy_given_k(10, 3)), 8)
        self.assertEqual(len(enumerate_occupancy_given_k(5, 5)), 1)

        # Test the bounded case below ceil(N/M), which is empty.
        self.assertEqual(len(enumerate_occupancy_given_k(9, 2, max_size=4)), 0)
        self.assertEqual(
            {tuple(p.sizes()) for p in enumerate_occupancy_given_k(9, 3, max_size=4)},
            {(4, 4, 1), (4, 3, 2), (3, 3, 3)},
        )
        for k in [0, 11]:
            with self.assertRaises(InvalidArgumentError):
                enumerate_occupancy_given_k(10, k)

    def test_index(self):
        partitions = enumerate_occupancy(6)
        for position, partition in enumerate(partitions):
            self.assertEqual(partitions.index(partition), position)
        self.assertIn((6, 0, 0, 0, 0, 0), partitions)
        with self.assertRaises(KeyError):
            partitions.index((1, 1, 0, 0, 0, 0))
        self.assertTrue(all(p.clusters == 2 for p in partitions.filter_k(2)))

    def test_conversions(self):
        self.assertEqual(
            occupancy_from_sizes([4, 4, 1, 1]), (2, 0, 0, 2, 0, 0, 0, 0, 0, 0)
        )
        self.assertEqual(sizes_from_occupancy((2, 0, 0, 2, 0, 0, 0, 0, 0, 0)), (4, 4, 1, 1))
        partition = OccupancyPartition.parse((2, 0, 0, 2, 0, 0, 0, 0, 0, 0), 10)
        self.assertEqual(partition.to_sparse(), [[1, 2], [4, 2]])
        self.assertEqual(from_sparse([[1, 2], [4, 2]], 10), partition)
        self.assertEqual(partition.multiplicity(4), 2)
        self.assertEqual(partition.multiplicity(11), 0)

        # Test invalid partitions.
        with self.assertRaises(InvalidArgumentError):
            SizePartition.parse([1, 2])
        with self.assertRaises(InvalidArgumentError):
            SizePartition.parse([])
        with self.assertRaises(InvalidArgumentError):
            OccupancyPartition.parse((1, 1), 4)
        with self.assertRaises(InvalidArgumentError):
            from_sparse([[5, 1]], 4)

    def test_caps(self):
        with self.assertRaises(InvalidArgumentError):
            enumerate_occupancy(0)
        with self.assertRaises(ResourceLimitError):
            enumerate_occupancy(129)

        # The cap can be lowered through the environment.
        with patch.dict(os.environ, {"CFP_MAX_N": "5"}):
            with self.assertRaises(ResourceLimitError):
                enumerate_occupancy(6)
            self.assertEqual(len(enumerate_occupancy(5)), 7)
