# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exact event-driven simulation of the finite coagulation-fragmentation process.

The state is the occupancy vector plus, when a tagged pair is tracked, the sizes of the
clusters holding the two tagged particles: (k,) when they share a cluster, (k1, k2) otherwise.
Coagulation happens per unordered cluster pair at rate C(i, j); a cluster of size n splits into
(i, n - i) at rate F(i, n - i) for every ordered i. When a cluster holding tagged particles
splits, the particles are placed by a uniform random bipartition, which is sampled as part of
the event choice. Event tables are cached per visited state.
"""
import bisect
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, root_validator, validator

from constants import DEFAULT_SIGMA, MIN_EPISODES, RNG_ALGORITHM
from errors import InsufficientDataError, InvalidArgumentError
from kernels import Kernel, verify_detailed_balance
from numeric import NumericMode
from partitions import OccupancyPartition, SizePartition, occupancy_from_sizes

logger = logging.getLogger(__name__)

COAGULATION = "coagulation"
FRAGMENTATION = "fragmentation"
INITIAL_CONDITIONS = ("all-singletons", "single-cluster")

# Random numbers are drawn from the generator in blocks of this size.
_BLOCK = 4096

State = Tuple[Tuple[int, ...], Tuple[int, ...]]


class SimConfig(BaseModel):
    """Parameters of a simulation run."""

    n: int
    t_end: float
    burn_in: float = 0.0
    seed: int = 0
    replicas: int = 1
    track_pair: bool = False
    initial: Union[str, List[int]] = "all-singletons"
    record_events: bool = False

    class Config:
        allow_mutation = False

    @validator("n")
    def n_validator(cls, value):
        """At least one particle."""
        if value < 1:
            raise ValueError("N must be positive")
        return value

    @validator("replicas")
    def replicas_validator(cls, value):
        """At least one replica."""
        if value < 1:
            raise ValueError("replicas must be >= 1")
        return value

    @validator("seed")
    def seed_validator(cls, value):
        """Seeds are unsigned 64-bit integers."""
        if not 0 <= value < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return value

    @validator("initial")
    def initial_validator(cls, value):
        """Named initial condition or a non-increasing list of cluster sizes."""
        if isinstance(value, str):
            if value not in INITIAL_CONDITIONS:
                raise ValueError(f"initial must be one of {INITIAL_CONDITIONS} or a size list")
            return value
        return list(SizePartition.parse(sorted(value, reverse=True)))

    @root_validator(skip_on_failure=True)
    def horizon_validator(cls, values):
        """burn_in < t_end and the initial sizes sum to N."""
        if values["burn_in"] < 0 or values["burn_in"] >= values["t_end"]:
            raise ValueError("burn_in must satisfy 0 <= burn_in < t_end")
        initial = values["initial"]
        if isinstance(initial, list) and sum(initial) != values["n"]:
            raise ValueError(f"initial sizes {initial} do not sum to N={values['n']}")
        if values["track_pair"] and values["n"] < 2:
            raise ValueError("pair tracking needs N >= 2")
        return values

    def initial_counts(self) -> Tuple[int, ...]:
        """Occupancy vector of the initial configuration."""
        if self.initial == "all-singletons":
            return (self.n,) + (0,) * (self.n - 1)
        if self.initial == "single-cluster":
            return (0,) * (self.n - 1) + (1,)
        return tuple(occupancy_from_sizes(self.initial))


def make_config(**kwargs) -> SimConfig:
    """Build a SimConfig, converting validation failures to InvalidArgumentError."""
    try:
        return SimConfig(**kwargs)
    except ValueError as e:
        raise InvalidArgumentError(f"Invalid simulation configuration: {e}")


class KahanSum:
    """Compensated running sum."""

    __slots__ = ("total", "compensation")

    def __init__(self):
        self.total = 0.0
        self.compensation = 0.0

    def add(self, value: float) -> None:
        """Add a value, carrying the rounding error."""
        y = value - self.compensation
        t = self.total + y
        self.compensation = (t - self.total) - y
        self.total = t


class EventLog:
    """Sequence of (time, kind, size_a, size_b) events of one replica."""

    HEADER = ("time", "kind", "size_a", "size_b")

    def __init__(self):
        self.rows: List[Tuple[float, str, int, int]] = []

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, time: float, kind: str, size_a: int, size_b: int) -> None:
        """Record an event; times must increase strictly."""
        if self.rows and time <= self.rows[-1][0]:
            raise InvalidArgumentError(f"Event time {time} does not increase")
        self.rows.append((time, kind, size_a, size_b))


class _EventTable:
    """Cumulative propensities and outcomes of one state."""

    __slots__ = ("cumulative", "outcomes", "total")

    def __init__(self, rates: List[float], outcomes: List[Tuple[Any, ...]]):
        self.cumulative = list(np.cumsum(rates)) if rates else []
        self.outcomes = outcomes
        self.total = self.cumulative[-1] if rates else 0.0


def _moved(counts: Tuple[int, ...], removed: Tuple[int, ...], added: Tuple[int, ...]):
    result = list(counts)
    for size in removed:
        result[size - 1] -= 1
    for size in added:
        result[size - 1] += 1
    return tuple(result)


def _pair(first: int, second: int) -> Tuple[int, int]:
    return (first, second) if first <= second else (second, first)


class _Propensities:
    """Builds the event table of a state from dense kernel tables."""

    def __init__(self, kernel: Kernel, n: int):
        self.n = n
        self.coag = kernel.coag_table(n).tolist()
        self.frag = kernel.frag_table(n).tolist()
        self._cache: Dict[State, _EventTable] = {}

    def table(self, state: State) -> _EventTable:
        """Event table of a state, cached."""
        cached = self._cache.get(state)
        if cached is None:
            cached = self._build(state)
            self._cache[state] = cached
        return cached

    def _build(self, state: State) -> _EventTable:
        counts, marks = state
        assert sum(size * count for size, count in enumerate(counts, 1)) == self.n
        free = [0] + list(counts)
        for size in marks:
            free[size] -= 1
        sizes = [size for size in range(1, self.n + 1) if free[size]]
        events: List[Tuple[float, Tuple[Any, ...]]] = []
        self._background(counts, marks, free, sizes, events)
        if len(marks) == 1:
            self._together(counts, marks[0], free, sizes, events)
        elif len(marks) == 2:
            self._apart(counts, marks, free, sizes, events)
        events = [event for event in events if event[0] > 0]
        return _EventTable([rate for rate, _ in events], [outcome for _, outcome in events])

    def _background(self, counts, marks, free, sizes, events) -> None:
        # Events among the clusters without a tagged particle.
        for position, i in enumerate(sizes):
            for j in sizes[position:]:
                if i + j <= self.n:
                    pairs = free[i] * (free[i] - 1) // 2 if i == j else free[i] * free[j]
                    merged = _moved(counts, (i, j), (i + j,))
                    events.append((self.coag[i][j] * pairs, ((merged, marks), COAGULATION, i, j)))
            for left in range(1, i):
                split = _moved(counts, (i,), (left, i - left))
                rate = self.frag[left][i - left] * free[i]
                events.append((rate, ((split, marks), FRAGMENTATION, left, i - left)))

    def _together(self, counts, k, free, sizes, events) -> None:
        # Both tagged particles in one cluster of size k.
        for j in sizes:
            if k + j <= self.n:
                merged = _moved(counts, (k, j), (k + j,))
                rate = self.coag[k][j] * free[j]
                events.append((rate, ((merged, (k + j,)), COAGULATION, k, j)))
        pairs = k * (k - 1)
        for i in range(1, k):
            rate = self.frag[i][k - i]
            split = _moved(counts, (k,), (i, k - i))
            for marks, weight in (
                ((i,), i * (i - 1)),
                ((k - i,), (k - i) * (k - i - 1)),
                (_pair(i, k - i), 2 * i * (k - i)),
            ):
                events.append((rate * weight / pairs, ((split, marks), FRAGMENTATION, i, k - i)))

    def _apart(self, counts, marks, free, sizes, events) -> None:
        # Tagged particles in two clusters of sizes k1 and k2.
        k1, k2 = marks
        merged = _moved(counts, (k1, k2), (k1 + k2,))
        events.append((self.coag[k1][k2], ((merged, (k1 + k2,)), COAGULATION, k1, k2)))
        for moving, staying in ((k1, k2), (k2, k1)):
            for j in sizes:
                if moving + j <= self.n:
                    merged = _moved(counts, (moving, j), (moving + j,))
                    marked = _pair(moving + j, staying)
                    rate = self.coag[moving][j] * free[j]
                    events.append((rate, ((merged, marked), COAGULATION, moving, j)))
            for i in range(1, moving):
                rate = self.frag[i][moving - i]
                split = _moved(counts, (moving,), (i, moving - i))
                for part in (i, moving - i):
                    outcome = ((split, _pair(part, staying)), FRAGMENTATION, i, moving - i)
                    events.append((rate * part / moving, outcome))


class ReplicaResult:
    """Raw accumulators of one replica."""

    def __init__(self, replica: int, burn_in: float, t_end: float):
        self.replica = replica
        self.window = (burn_in, t_end)
        self.state_times: Dict[State, float] = {}
        self._holding: Dict[State, KahanSum] = {}
        self.together_durations = KahanSum()
        self.together_episodes = 0
        self.apart_durations = KahanSum()
        self.apart_episodes = 0
        self.coagulations: Dict[Tuple[int, int], int] = {}
        self.fragmentations: Dict[Tuple[int, int], int] = {}
        self.events = 0
        self.absorbed: Optional[Tuple[int, ...]] = None
        self.absorbed_at: Optional[float] = None
        self.log: Optional[EventLog] = None

    def hold(self, state: State, start: float, stop: float) -> None:
        """Add the part of [start, stop) inside the measurement window to a state."""
        low, high = max(start, self.window[0]), min(stop, self.window[1])
        if high > low:
            accumulator = self._holding.get(state)
            if accumulator is None:
                accumulator = self._holding[state] = KahanSum()
            accumulator.add(high - low)

    def record(self, time: float, kind: str, size_a: int, size_b: int) -> None:
        """Count an event of the measurement window."""
        self.events += 1
        key = _pair(size_a, size_b)
        tally = self.coagulations if kind == COAGULATION else self.fragmentations
        tally[key] = tally.get(key, 0) + 1
        if self.log is not None:
            self.log.append(time, kind, size_a, size_b)

    def close_episode(self, together: bool, duration: float) -> None:
        """Add a completed together or apart episode."""
        if together:
            self.together_durations.add(duration)
            self.together_episodes += 1
        else:
            self.apart_durations.add(duration)
            self.apart_episodes += 1

    def finish(self) -> None:
        """Freeze the holding times."""
        self.state_times = {state: total.total for state, total in self._holding.items()}
        self._holding = {}


def _initial_marks(counts: Tuple[int, ...], rng: np.random.Generator) -> Tuple[int, ...]:
    # The first tagged particle sits in a size-s cluster with probability s·m_s/N; the second
    # shares it with probability (s - 1)/(N - 1).
    n = len(counts)
    weights = np.array([size * count for size, count in enumerate(counts, 1)], dtype=float)
    first = int(rng.choice(n, p=weights / n)) + 1
    if rng.random() < (first - 1) / (n - 1):
        return (first,)
    weights[first - 1] -= first
    second = int(rng.choice(n, p=weights / weights.sum())) + 1
    return _pair(first, second)


def _run_replica(kernel: Kernel, config: SimConfig, replica: int) -> ReplicaResult:
    sequence = np.random.SeedSequence(config.seed, spawn_key=(replica,))
    rng = np.random.Generator(np.random.PCG64(sequence))
    propensities = _Propensities(kernel, config.n)
    result = ReplicaResult(replica, config.burn_in, config.t_end)
    result.log = EventLog() if config.record_events and replica == 0 else None

    counts = config.initial_counts()
    marks = _initial_marks(counts, rng) if config.track_pair else ()
    state: State = (counts, marks)
    burn_in, t_end = config.burn_in, config.t_end
    exponentials = rng.standard_exponential(_BLOCK)
    uniforms = rng.random(_BLOCK)
    drawn = 0
    t = 0.0
    episode_start: Optional[float] = None

    while True:
        table = propensities.table(state)
        if table.total <= 0:
            result.hold(state, t, t_end)
            result.absorbed = state[0]
            result.absorbed_at = t
            logger.debug(f"Replica {replica} absorbed at t={t} in {state[0]}")
            break
        if drawn == _BLOCK:
            exponentials = rng.standard_exponential(_BLOCK)
            uniforms = rng.random(_BLOCK)
            drawn = 0
        step = exponentials[drawn] / table.total
        choice = uniforms[drawn] * table.total
        drawn += 1
        if t + step >= t_end:
            result.hold(state, t, t_end)
            break
        result.hold(state, t, t + step)
        t += step
        position = min(bisect.bisect_right(table.cumulative, choice), len(table.outcomes) - 1)
        new_state, kind, size_a, size_b = table.outcomes[position]
        if t >= burn_in:
            result.record(t, kind, size_a, size_b)
        if config.track_pair and len(new_state[1]) != len(state[1]):
            # The pair changed between together and apart: close the running episode.
            if episode_start is not None and episode_start >= burn_in:
                result.close_episode(len(state[1]) == 1, t - episode_start)
            episode_start = t
        state = new_state
    result.finish()
    logger.debug(f"Replica {replica} finished with {result.events} events")
    return result


class Estimate:
    """Mean across replicas and its standard error."""

    def __init__(self, values: List[float]):
        self.values = [float(value) for value in values]
        array = np.array(self.values)
        self.mean = float(array.mean()) if len(array) else math.nan
        if len(array) > 1:
            self.se = float(array.std(ddof=1) / math.sqrt(len(array)))
        else:
            self.se = math.inf

    def within(self, expected: float, sigma: float = DEFAULT_SIGMA, floor: float = 0.0) -> bool:
        """Whether the expected value lies within sigma standard errors (plus floor)."""
        return bool(abs(self.mean - expected) <= sigma * self.se + floor)

    def to_dict(self) -> Dict[str, float]:
        """JSON representation."""
        return {"mean": self.mean, "se": self.se if math.isfinite(self.se) else None}


class SimStats:
    """Time-averaged statistics of all replicas with across-replica standard errors."""

    def __init__(self, kernel: Kernel, config: SimConfig, replicas: List[ReplicaResult]):
        self.kernel = kernel
        self.config = config
        self.replicas = replicas
        n = config.n
        window = config.t_end - config.burn_in
        pi_rows, count_rows, p2_values, clusters = [], [], [], []
        configs: Dict[Tuple[int, ...], List[float]] = {}
        for index, replica in enumerate(replicas):
            pi = np.zeros(n)
            mean_counts = np.zeros(n)
            together = 0.0
            for (counts, marks), duration in replica.state_times.items():
                fraction = duration / window
                pi[sum(counts) - 1] += fraction
                mean_counts += fraction * np.array(counts)
                if len(marks) == 1:
                    together += fraction
                configs.setdefault(counts, [0.0] * len(replicas))[index] += fraction
            pi_rows.append(pi)
            count_rows.append(mean_counts)
            p2_values.append(together)
            clusters.append(float(np.dot(np.arange(1, n + 1), pi)))
        self.pi_k = [Estimate([row[k] for row in pi_rows]) for k in range(n)]
        self.mean_counts = [Estimate([row[i] for row in count_rows]) for i in range(n)]
        self.mean_clusters = Estimate(clusters)
        self.p2 = Estimate(p2_values) if config.track_pair else None
        self.config_fractions = {
            OccupancyPartition(counts): Estimate(values)
            for counts, values in sorted(configs.items(), reverse=True)
        }
        self.together_episodes = sum(replica.together_episodes for replica in replicas)
        self.apart_episodes = sum(replica.apart_episodes for replica in replicas)
        self.coagulations = _merge_counts(replica.coagulations for replica in replicas)
        self.fragmentations = _merge_counts(replica.fragmentations for replica in replicas)
        self.absorbed = [replica.absorbed for replica in replicas]
        self.events = replicas[0].log if replicas else None

    def conditional_fractions(self, k: int) -> Dict[OccupancyPartition, Estimate]:
        """Per-replica configuration frequencies conditioned on K clusters."""
        selected = {
            config: estimate
            for config, estimate in self.config_fractions.items()
            if config.clusters == k
        }
        totals = [sum(values) for values in zip(*(e.values for e in selected.values()))]
        result = {}
        for config, estimate in selected.items():
            ratios = [
                value / total for value, total in zip(estimate.values, totals) if total > 0
            ]
            result[config] = Estimate(ratios)
        return result

    def metadata(self) -> Dict[str, Any]:
        """Reproducibility block of the serialized statistics."""
        return {
            "seed": self.config.seed,
            "rng": RNG_ALGORITHM,
            "kernel": self.kernel.spec.to_dict(),
            "kernel_digest": self.kernel.spec.digest(),
            "config": self.config.dict(),
        }

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation."""
        result: Dict[str, Any] = {
            "metadata": self.metadata(),
            "mean_clusters": self.mean_clusters.to_dict(),
            "pi_k": [estimate.to_dict() for estimate in self.pi_k],
            "mean_counts": [estimate.to_dict() for estimate in self.mean_counts],
            "config_fractions": [
                {"config": config.to_sparse(), **estimate.to_dict()}
                for config, estimate in self.config_fractions.items()
            ],
            "coagulations": [[i, j, count] for (i, j), count in sorted(self.coagulations.items())],
            "fragmentations": [
                [i, j, count] for (i, j), count in sorted(self.fragmentations.items())
            ],
            "absorbed": [list(config) if config else None for config in self.absorbed],
        }
        if self.p2 is not None:
            result["p2"] = self.p2.to_dict()
            result["episodes"] = {
                "together": self.together_episodes,
                "apart": self.apart_episodes,
            }
        return result


def _merge_counts(tallies) -> Dict[Tuple[int, int], int]:
    merged: Dict[Tuple[int, int], int] = {}
    for tally in tallies:
        for key, count in tally.items():
            merged[key] = merged.get(key, 0) + count
    return merged


def run_ssa(kernel: Kernel, config: SimConfig, workers: int = 1) -> SimStats:
    """Simulate config.replicas independent trajectories and aggregate them.

    Replica r draws from PCG64 seeded with SeedSequence(seed, spawn_key=(r,)); results are
    reduced in replica order, so the output does not depend on the number of workers.
    """
    kernel.check_size(config.n)
    if config.n >= 2:
        report = verify_detailed_balance(kernel, config.n, mode=NumericMode.FLOATING)
        if not report.ok:
            logger.warning(f"Simulating a kernel without detailed balance: {report.to_dict()}")
    logger.info(
        f"Simulating N={config.n} up to t={config.t_end} with {config.replicas} replica(s)"
    )
    if workers > 1 and config.replicas > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_run_replica, kernel, config, replica)
                for replica in range(config.replicas)
            ]
            results = [future.result() for future in futures]
    else:
        results = [_run_replica(kernel, config, replica) for replica in range(config.replicas)]
    stopped = [result.replica for result in results if result.absorbed is not None]
    if stopped:
        logger.warning(f"Replicas {stopped} stopped early in an absorbing configuration")
    return SimStats(kernel, config, results)


class PairTimeEstimate:
    """Empirical mean episode durations and time fraction together."""

    def __init__(self, t_s: Estimate, t_r: Estimate, p2: Estimate, episodes: Tuple[int, int]):
        self.t_s = t_s
        self.t_r = t_r
        self.p2 = p2
        self.episodes = episodes

    @property
    def t_s_hat(self) -> float:
        """Pooled mean together-episode duration."""
        return self.t_s.mean

    @property
    def t_r_hat(self) -> float:
        """Pooled mean apart-episode duration."""
        return self.t_r.mean

    @property
    def p2_hat(self) -> float:
        """Fraction of time together."""
        return self.p2.mean

    @property
    def episode_ratio(self) -> float:
        """T_S_hat/(T_S_hat + T_R_hat)."""
        return self.t_s_hat / (self.t_s_hat + self.t_r_hat)

    def consistent(self, sigma: float = DEFAULT_SIGMA) -> bool:
        """Whether p2_hat agrees with the episode ratio within sampling error."""
        bound = self.t_s_hat + self.t_r_hat
        error = math.hypot(self.t_r_hat * self.t_s.se, self.t_s_hat * self.t_r.se) / bound**2
        return abs(self.p2_hat - self.episode_ratio) <= sigma * math.hypot(error, self.p2.se)

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation."""
        return {
            "t_s": self.t_s.to_dict(),
            "t_r": self.t_r.to_dict(),
            "p2": self.p2.to_dict(),
            "episode_ratio": self.episode_ratio,
            "together_episodes": self.episodes[0],
            "apart_episodes": self.episodes[1],
        }


def _episode_estimate(sums: List[float], counts: List[int]) -> Estimate:
    # The mean pools all episodes, the error spreads the per-replica means.
    estimate = Estimate([total / count for total, count in zip(sums, counts) if count])
    estimate.mean = float(sum(sums) / sum(counts))
    return estimate


def estimate_pair_times(stats: SimStats) -> PairTimeEstimate:
    """Mean together and apart episode durations and the time fraction together.

    Raises:
        InvalidArgumentError: when the pair was not tracked.
        InsufficientDataError: when no episode of either kind completed.
    """
    if not stats.config.track_pair:
        raise InvalidArgumentError("Pair times need a simulation with track_pair enabled")
    together = [replica.together_episodes for replica in stats.replicas]
    apart = [replica.apart_episodes for replica in stats.replicas]
    if not sum(together) or not sum(apart):
        raise InsufficientDataError("No completed together or apart episode")
    if min(sum(together), sum(apart)) < MIN_EPISODES:
        logger.warning(
            f"Only {sum(together)} together and {sum(apart)} apart episodes completed; "
            "standard errors are unreliable"
        )
    t_s = _episode_estimate([r.together_durations.total for r in stats.replicas], together)
    t_r = _episode_estimate([r.apart_durations.total for r in stats.replicas], apart)
    return PairTimeEstimate(t_s, t_r, stats.p2, (sum(together), sum(apart)))


def flux_balance(stats: SimStats, sigma: float = DEFAULT_SIGMA) -> List[Dict[str, Any]]:
    """Compare coagulation (i, j) -> i + j and fragmentation i + j -> (i, j) event counts.

    At stationarity both counts estimate the same flux; each pair passes when the difference is
    within sigma·√(coagulations + fragmentations).
    """
    rows = []
    for key in sorted(set(stats.coagulations) | set(stats.fragmentations)):
        coagulations = stats.coagulations.get(key, 0)
        fragmentations = stats.fragmentations.get(key, 0)
        scale = math.sqrt(max(1, coagulations + fragmentations))
        rows.append(
            {
                "i": key[0],
                "j": key[1],
                "coagulations": coagulations,
                "fragmentations": fragmentations,
                "ok": bool(abs(coagulations - fragmentations) <= sigma * scale),
            }
        )
    return rows
