# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import math
import unittest
from fractions import Fraction

from errors import InsufficientDataError, InvalidArgumentError
from exact import compute_cnk, config_probability
from kernels import kernel_from_options
from partitions import OccupancyPartition
from simulate import (
    COAGULATION,
    FRAGMENTATION,
    Estimate,
    EventLog,
    KahanSum,
    estimate_pair_times,
    flux_balance,
    make_config,
    run_ssa,
)


class TestSimConfig(unittest.TestCase):
    def test_defaults(self):
        config = make_config(n=4, t_end=10.0)
        self.assertEqual(config.burn_in, 0.0)
        self.assertEqual(config.replicas, 1)
        self.assertEqual(config.initial, "all-singletons")
        self.assertEqual(config.initial_counts(), (4, 0, 0, 0))

    def test_initial_conditions(self):
        self.assertEqual(
            make_config(n=3, t_end=1.0, initial="single-cluster").initial_counts(), (0, 0, 1)
        )
        config = make_config(n=4, t_end=1.0, initial=[1, 3])
        self.assertEqual(config.initial, [3, 1])
        self.assertEqual(config.initial_counts(), (1, 0, 1, 0))

    def test_invalid(self):
        invalid = [
            {"n": 0, "t_end": 1.0},
            {"n": 3, "t_end": 1.0, "burn_in": 1.0},
            {"n": 3, "t_end": 1.0, "burn_in": -0.5},
            {"n": 3, "t_end": 1.0, "replicas": 0},
            {"n": 3, "t_end": 1.0, "seed": -1},
            {"n": 3, "t_end": 1.0, "seed": 2**64},
            {"n": 3, "t_end": 1.0, "initial": "half-and-half"},
            {"n": 3, "t_end": 1.0, "initial": [2, 2]},
            {"n": 1, "t_end": 1.0, "track_pair": True},
        ]
        for content in invalid:
            with self.assertRaises(InvalidArgumentError):
                make_config(**content)

    def test_immutable(self):
        config = make_config(n=3, t_end=1.0)
        with self.assertRaises(TypeError):
            config.n = 4


class TestAccumulators(unittest.TestCase):
    def test_compensated_sum(self):
        total = KahanSum()
        total.add(1.0)
        for _ in range(10):
            total.add(1e-16)
        self.assertAlmostEqual(total.total, 1.0 + 1e-15, places=15)

    def test_event_log(self):
        log = EventLog()
        log.append(0.5, COAGULATION, 1, 1)
        log.append(0.75, FRAGMENTATION, 1, 1)
        self.assertEqual(len(log), 2)
        with self.assertRaises(InvalidArgumentError):
            log.append(0.75, COAGULATION, 1, 1)

    def test_estimate(self):
        estimate = Estimate([1.0, 2.0, 3.0])
        self.assertEqual(estimate.mean, 2.0)
        self.assertAlmostEqual(estimate.se, 1 / math.sqrt(3))
        self.assertTrue(estimate.within(2.5, sigma=1.0))
        self.assertFalse(estimate.within(3.0, sigma=1.0))
        self.assertTrue(estimate.within(3.0, sigma=1.0, floor=0.5))
        single = Estimate([4.0])
        self.assertEqual(single.se, math.inf)
        self.assertEqual(single.to_dict(), {"mean": 4.0, "se": None})


class TestRunSsa(unittest.TestCase):
    def test_deterministic(self):
        kernel = kernel_from_options("constant", a="1")
        config = make_config(n=5, t_end=50.0, burn_in=5.0, seed=7, replicas=3, track_pair=True)
        first = run_ssa(kernel, config).to_dict()
        self.assertEqual(first, run_ssa(kernel, config).to_dict())
        self.assertEqual(first, run_ssa(kernel, config, workers=2).to_dict())
        other = make_config(n=5, t_end=50.0, burn_in=5.0, seed=8, replicas=3, track_pair=True)
        self.assertNotEqual(first, run_ssa(kernel, other).to_dict())

    def test_conservation(self):
        kernel = kernel_from_options("linear", a="1/2")
        config = make_config(n=7, t_end=100.0, replicas=2, track_pair=True)
        stats = run_ssa(kernel, config)
        for replica in stats.replicas:
            for (counts, marks), duration in replica.state_times.items():
                self.assertEqual(sum(size * count for size, count in enumerate(counts, 1)), 7)
                self.assertIn(len(marks), (1, 2))
                self.assertGreater(duration, 0)
            self.assertAlmostEqual(sum(replica.state_times.values()), 100.0, places=8)
        self.assertAlmostEqual(sum(estimate.mean for estimate in stats.pi_k), 1.0, places=10)
        particles = sum(i * estimate.mean for i, estimate in enumerate(stats.mean_counts, 1))
        self.assertAlmostEqual(particles, 7.0, places=8)

    def test_stationary_law(self):
        kernel = kernel_from_options("constant", a="1")
        config = make_config(n=3, t_end=2000.0, burn_in=100.0, seed=3, replicas=8)
        stats = run_ssa(kernel, config)
        for estimate, expected in zip(stats.pi_k, (3 / 11, 6 / 11, 2 / 11)):
            self.assertAlmostEqual(estimate.mean, expected, delta=0.03)
        self.assertAlmostEqual(stats.mean_clusters.mean, 21 / 11, delta=0.05)
        for estimate, expected in zip(stats.mean_counts, (12 / 11, 6 / 11, 3 / 11)):
            self.assertAlmostEqual(estimate.mean, expected, delta=0.05)
        self.assertIsNone(stats.p2)
        self.assertEqual(stats.absorbed, [None] * 8)

    def test_conditional_fractions(self):
        kernel = kernel_from_options("constant", a="1")
        stats = run_ssa(kernel, make_config(n=4, t_end=2000.0, burn_in=50.0, replicas=4))
        table = compute_cnk(kernel, 4)
        fractions = stats.conditional_fractions(2)
        self.assertEqual(
            set(fractions), {OccupancyPartition((1, 0, 1, 0)), OccupancyPartition((0, 2, 0, 0))}
        )
        for config, estimate in fractions.items():
            self.assertAlmostEqual(
                estimate.mean, float(config_probability(table, config)), delta=0.05
            )

    def test_event_log(self):
        kernel = kernel_from_options("constant", a="2")
        config = make_config(n=4, t_end=20.0, burn_in=2.0, replicas=2, record_events=True)
        stats = run_ssa(kernel, config)
        self.assertIsNotNone(stats.events)
        self.assertIsNone(stats.replicas[1].log)
        self.assertEqual(len(stats.events), stats.replicas[0].events)
        times = [row[0] for row in stats.events.rows]
        self.assertEqual(times, sorted(set(times)))
        self.assertTrue(all(2.0 <= time < 20.0 for time in times))
        for _, kind, size_a, size_b in stats.events.rows:
            self.assertIn(kind, (COAGULATION, FRAGMENTATION))
            self.assertLessEqual(size_a + size_b, 4)

    def test_nucleation_absorbs(self):
        # Without fragmentation, clusters of at most 4 particles freeze into three clusters.
        kernel = kernel_from_options("bounded", a="0", m=4)
        config = make_config(n=9, t_end=1000.0, replicas=20, seed=11)
        stats = run_ssa(kernel, config)
        self.assertTrue(all(counts is not None for counts in stats.absorbed))
        for counts in stats.absorbed:
            self.assertEqual(sum(counts), 3)
        for replica in stats.replicas:
            self.assertLess(replica.absorbed_at, 1000.0)
        self.assertAlmostEqual(stats.pi_k[2].mean, 1.0, delta=0.05)

    def test_to_dict(self):
        kernel = kernel_from_options("constant", a="1")
        config = make_config(n=3, t_end=30.0, replicas=2, track_pair=True)
        content = run_ssa(kernel, config).to_dict()
        self.assertEqual(content["metadata"]["seed"], 0)
        self.assertEqual(content["metadata"]["kernel"], {"family": "constant", "a": "1/1"})
        self.assertEqual(len(content["pi_k"]), 3)
        self.assertIn("p2", content)
        self.assertIn("episodes", content)
        self.assertEqual(content["absorbed"], [None, None])


class TestPairTimes(unittest.TestCase):
    def test_two_particles(self):
        kernel = kernel_from_options("constant", a="1")
        config = make_config(n=2, t_end=5000.0, burn_in=10.0, seed=5, replicas=4, track_pair=True)
        estimate = estimate_pair_times(run_ssa(kernel, config))
        self.assertAlmostEqual(estimate.t_s_hat, 1.0, delta=0.06)
        self.assertAlmostEqual(estimate.t_r_hat, 1.0, delta=0.06)
        self.assertAlmostEqual(estimate.p2_hat, 0.5, delta=0.03)
        self.assertTrue(estimate.consistent(sigma=5.0))
        self.assertGreater(min(estimate.episodes), 1000)
        content = estimate.to_dict()
        self.assertEqual(content["together_episodes"], estimate.episodes[0])

    def test_three_particles(self):
        kernel = kernel_from_options("constant", a="1")
        config = make_config(n=3, t_end=4000.0, burn_in=10.0, seed=9, replicas=4, track_pair=True)
        estimate = estimate_pair_times(run_ssa(kernel, config))
        self.assertAlmostEqual(estimate.t_s_hat, 5 / 6, delta=0.06)
        self.assertAlmostEqual(estimate.t_r_hat, 1.0, delta=0.07)
        self.assertAlmostEqual(estimate.p2_hat, 5 / 11, delta=0.03)

    def test_untracked(self):
        kernel = kernel_from_options("constant", a="1")
        stats = run_ssa(kernel, make_config(n=3, t_end=10.0))
        with self.assertRaises(InvalidArgumentError):
            estimate_pair_times(stats)

    def test_no_episodes(self):
        # Single particle clusters can neither merge nor split.
        kernel = kernel_from_options("bounded", a="0", m=1)
        stats = run_ssa(kernel, make_config(n=3, t_end=10.0, replicas=2, track_pair=True))
        self.assertEqual(stats.absorbed, [(3, 0, 0), (3, 0, 0)])
        with self.assertRaises(InsufficientDataError):
            estimate_pair_times(stats)


class TestFluxBalance(unittest.TestCase):
    def test_balanced_at_stationarity(self):
        kernel = kernel_from_options("linear", a=Fraction(1, 2))
        config = make_config(n=5, t_end=1000.0, burn_in=50.0, seed=2, replicas=4)
        rows = flux_balance(run_ssa(kernel, config), sigma=5.0)
        self.assertTrue(rows)
        self.assertTrue(all(row["ok"] for row in rows))
        self.assertTrue(all(row["i"] <= row["j"] for row in rows))
        self.assertTrue(all(row["i"] + row["j"] <= 5 for row in rows))

    def test_unbalanced_transient(self):
        # Pure coagulation from singletons never fragments.
        kernel = kernel_from_options("bounded", a="0", m=4)
        rows = flux_balance(run_ssa(kernel, make_config(n=9, t_end=100.0, replicas=10)), 1.0)
        self.assertTrue(all(row["fragmentations"] == 0 for row in rows))
        self.assertFalse(all(row["ok"] for row in rows))


if __name__ == "__main__":
    unittest.main()
