# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Mean times two tagged particles spend together (T_S) and apart (T_R).

Both times are mean absorption times of jump chains over pair-marked configurations. A state of
the separation chain is a configuration plus the size of the cluster holding both tagged
particles; a state of the reunion chain is a configuration plus the unordered sizes of the two
clusters holding them. Episodes are averaged over their entrance distribution (the stationary
flux of the events that start them), which makes T_S/(T_S + T_R) the stationary ⟨P₂⟩.
"""
import logging
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, solve

from constants import REUNION_CHAIN_CAP, ROW_SUM_TOLERANCE, SEPARATION_CHAIN_CAP
from errors import InvalidArgumentError, ResourceLimitError, StructuralError
from exact import (
    compute_cnk,
    configuration_distribution,
    p2_exact,
    rate_schedule,
    steady_state_pi,
)
from kernels import Kernel
from numeric import Number, NumericMode
from partitions import OccupancyPartition
from utils import scaled_cap

logger = logging.getLogger(__name__)

SEPARATION = "separation"
REUNION = "reunion"
TARGETS = (SEPARATION, REUNION)

Marked = Tuple[int, ...]


class PairState:
    """Configuration plus the marked cluster size(s).

    marked is (k,) for the separation chain and (k1, k2) with k1 <= k2 for the reunion chain.
    """

    __slots__ = ("config", "marked")

    def __init__(self, config: OccupancyPartition, marked: Marked):
        self.config = config
        self.marked = marked

    def __eq__(self, other) -> bool:
        return (self.config, self.marked) == (other.config, other.marked)

    def __hash__(self) -> int:
        return hash((self.config, self.marked))

    def __repr__(self) -> str:
        return f"PairState(sizes={tuple(self.config.sizes())}, marked={self.marked})"

    def unmarked(self) -> List[int]:
        """Occupancy counts of the clusters not holding a tagged particle, indexed from 0."""
        counts = [0] + list(self.config)
        for size in self.marked:
            counts[size] -= 1
        return counts


class PairChain:
    """Absorbing embedded jump chain with per-state mean holding times.

    The absorbing state is the last index of jump_matrix.
    """

    def __init__(
        self,
        target: str,
        states: List[PairState],
        jump_matrix: np.ndarray,
        holding: np.ndarray,
        exit_rates: np.ndarray,
    ):
        self.target = target
        self.states = states
        self.jump_matrix = jump_matrix
        self.holding = holding
        # Rate of the absorbing event out of each transient state.
        self.exit_rates = exit_rates
        self._lookup = {state: index for index, state in enumerate(states)}

    @property
    def absorbing(self) -> int:
        """Index of the absorbing state."""
        return len(self.states)

    def index(self, state: PairState) -> int:
        """Position of a transient state."""
        return self._lookup[state]

    def scaled(self, factor: float) -> "PairChain":
        """Same chain with every rate multiplied by factor."""
        return PairChain(
            self.target,
            self.states,
            self.jump_matrix,
            self.holding / factor,
            self.exit_rates * factor,
        )


def _move(
    counts: List[int], removed: Tuple[int, ...], added: Tuple[int, ...]
) -> OccupancyPartition:
    result = list(counts[1:])
    for size in removed:
        result[size - 1] -= 1
    for size in added:
        result[size - 1] += 1
    return OccupancyPartition(result)


class _ChainBuilder:
    """Accumulates the transition rates of one pair chain."""

    def __init__(self, kernel: Kernel, n: int):
        self.n = n
        self.coag = kernel.coag_table(n)
        self.frag = kernel.frag_table(n)

    def background(self, state: PairState, rates: Dict[Any, float]) -> None:
        """Events among the clusters that do not hold a tagged particle."""
        counts = [0] + list(state.config)
        free = state.unmarked()
        sizes = [size for size in range(1, self.n + 1) if free[size]]
        for position, i in enumerate(sizes):
            for j in sizes[position:]:
                if i + j > self.n:
                    continue
                pairs = free[i] * (free[i] - 1) / 2 if i == j else free[i] * free[j]
                rate = self.coag[i, j] * pairs
                if rate > 0:
                    target = PairState(_move(counts, (i, j), (i + j,)), state.marked)
                    rates[target] = rates.get(target, 0.0) + rate
            for left in range(1, i):
                rate = self.frag[left, i - left] * free[i]
                if rate > 0:
                    target = PairState(_move(counts, (i,), (left, i - left)), state.marked)
                    rates[target] = rates.get(target, 0.0) + rate

    def separation(self, state: PairState) -> Dict[Any, float]:
        """Outgoing rates of a state whose tagged particles share a cluster of size k."""
        rates: Dict[Any, float] = {}
        (k,) = state.marked
        counts = [0] + list(state.config)
        free = state.unmarked()
        for j in range(1, self.n + 1 - k):
            rate = self.coag[k, j] * free[j]
            if rate > 0:
                target = PairState(_move(counts, (k, j), (k + j,)), (k + j,))
                rates[target] = rates.get(target, 0.0) + rate
        self.background(state, rates)
        pairs = k * (k - 1)
        for i in range(1, k):
            rate = self.frag[i, k - i]
            if rate <= 0:
                continue
            config = _move(counts, (k,), (i, k - i))
            # Uniform placement of the k particles: both tagged ones land in the i part with
            # probability i(i-1)/(k(k-1)), both in the other part with (k-i)(k-i-1)/(k(k-1)).
            for part in (i, k - i):
                if part >= 2:
                    target = PairState(config, (part,))
                    rates[target] = rates.get(target, 0.0) + rate * part * (part - 1) / pairs
            rates[None] = rates.get(None, 0.0) + rate * 2 * i * (k - i) / pairs
        return rates

    def reunion(self, state: PairState) -> Dict[Any, float]:
        """Outgoing rates of a state whose tagged particles sit in clusters of sizes k1, k2."""
        rates: Dict[Any, float] = {}
        k1, k2 = state.marked
        counts = [0] + list(state.config)
        free = state.unmarked()
        if k1 + k2 <= self.n and self.coag[k1, k2] > 0:
            rates[None] = self.coag[k1, k2]
        for moving, staying in ((k1, k2), (k2, k1)):
            for j in range(1, self.n + 1 - moving):
                rate = self.coag[moving, j] * free[j]
                if rate > 0:
                    marked = tuple(sorted((moving + j, staying)))
                    target = PairState(_move(counts, (moving, j), (moving + j,)), marked)
                    rates[target] = rates.get(target, 0.0) + rate
            for i in range(1, moving):
                rate = self.frag[i, moving - i]
                if rate <= 0:
                    continue
                # The tagged particle follows the i part with probability i/moving.
                config = _move(counts, (moving,), (i, moving - i))
                for part in (i, moving - i):
                    target = PairState(config, tuple(sorted((part, staying))))
                    rates[target] = rates.get(target, 0.0) + rate * part / moving
        self.background(state, rates)
        return rates


def _positive_configs(kernel: Kernel, n: int) -> Dict[OccupancyPartition, float]:
    table = compute_cnk(kernel, n, mode=NumericMode.FLOATING)
    pi = steady_state_pi(rate_schedule(kernel, table))
    return configuration_distribution(table, pi)


def pair_states(configs, target: str) -> List[PairState]:
    """Enumerate the pair-marked states over a collection of configurations, in order."""
    states = []
    for config in configs:
        sizes = [size for size in range(1, len(config) + 1) if config[size - 1]]
        if target == SEPARATION:
            states.extend(PairState(config, (k,)) for k in sizes if k >= 2)
            continue
        for position, k1 in enumerate(sizes):
            if config[k1 - 1] >= 2:
                states.append(PairState(config, (k1, k1)))
            states.extend(PairState(config, (k1, k2)) for k2 in sizes[position + 1 :])
    return states


def _check_size(n: int, target: str) -> None:
    if target not in TARGETS:
        raise InvalidArgumentError(f"Unknown pair chain target '{target}'")
    if not isinstance(n, int) or n < 2:
        raise InvalidArgumentError(f"Pair chains need N >= 2, got {n!r}")
    cap = scaled_cap(SEPARATION_CHAIN_CAP if target == SEPARATION else REUNION_CHAIN_CAP)
    if n > cap:
        raise ResourceLimitError(f"The {target} chain is limited to N <= {cap}, got N={n}")


def build_pair_chain(
    kernel: Kernel, n: int, target: str, configs: Optional[List[OccupancyPartition]] = None
) -> PairChain:
    """Build the absorbing jump chain of a tagged pair.

    Args:
        kernel: a detailed-balance kernel.
        n: the number of particles N >= 2.
        target: "separation" (absorbed when the pair splits) or "reunion" (absorbed when the
            two clusters holding the pair coagulate).
        configs: the configurations to build on, all configurations of positive stationary
            weight by default.

    Raises:
        ResourceLimitError: beyond the state space cap of the target.
    """
    _check_size(n, target)
    kernel.check_size(n)
    if configs is None:
        configs = list(_positive_configs(kernel, n))
    states = pair_states(configs, target)
    lookup = {state: index for index, state in enumerate(states)}
    size = len(states)
    builder = _ChainBuilder(kernel, n)
    jump = np.zeros((size + 1, size + 1))
    holding = np.zeros(size)
    exit_rates = np.zeros(size)
    for index, state in enumerate(states):
        rates = builder.separation(state) if target == SEPARATION else builder.reunion(state)
        total = sum(rates.values())
        if total <= 0:
            raise StructuralError(f"State {state} has no outgoing transition", state)
        holding[index] = 1.0 / total
        for destination, rate in rates.items():
            column = size if destination is None else lookup.get(destination)
            if column is None:
                raise StructuralError(f"Transition from {state} leaves the state space", state)
            jump[index, column] += rate / total
        exit_rates[index] = rates.get(None, 0.0)
    jump[size, size] = 1.0
    worst = float(np.abs(jump.sum(axis=1) - 1.0).max())
    if worst > ROW_SUM_TOLERANCE:
        raise StructuralError(f"Jump matrix rows deviate from 1 by {worst}")
    logger.debug(f"Built the {target} chain of N={n} with {size} transient states")
    return PairChain(target, states, jump, holding, exit_rates)


def _unreachable_state(chain: PairChain) -> Optional[PairState]:
    # Backward search from the absorbing state over positive jump probabilities.
    size = len(chain.states)
    reached = np.zeros(size + 1, dtype=bool)
    reached[size] = True
    frontier = [size]
    while frontier:
        column = frontier.pop()
        for row in np.nonzero(chain.jump_matrix[:size, column] > 0)[0]:
            if not reached[row]:
                reached[row] = True
                frontier.append(int(row))
    missing = np.nonzero(~reached[:size])[0]
    return chain.states[int(missing[0])] if len(missing) else None


def mean_absorption_times(chain: PairChain) -> np.ndarray:
    """Solve (I - T)·t = τ over the transient states with LU and partial pivoting.

    Raises:
        StructuralError: when some state cannot reach the absorbing state.
    """
    offending = _unreachable_state(chain)
    if offending is not None:
        raise StructuralError(f"Absorption is unreachable from {offending}", offending)
    size = len(chain.states)
    system = np.eye(size) - chain.jump_matrix[:size, :size]
    try:
        times = solve(system, chain.holding)
    except LinAlgError as e:
        raise StructuralError(f"Singular absorbing chain: {e}", chain.states[0])
    return times


def solve_residual(chain: PairChain, times: np.ndarray) -> float:
    """‖(I - T)·t - τ‖∞ relative to ‖τ‖∞."""
    size = len(chain.states)
    system = np.eye(size) - chain.jump_matrix[:size, :size]
    residual = np.abs(system @ times - chain.holding).max()
    return float(residual / np.abs(chain.holding).max())


def _together_weight(config: OccupancyPartition, k: int, n: int) -> Number:
    return config[k - 1] * k * (k - 1) / (n * (n - 1))


def _apart_weight(config: OccupancyPartition, k1: int, k2: int, n: int) -> Number:
    if k1 == k2:
        return config[k1 - 1] * (config[k1 - 1] - 1) * k1 * k1 / (n * (n - 1))
    return 2 * config[k1 - 1] * k1 * config[k2 - 1] * k2 / (n * (n - 1))


class StartDistributions:
    """Stationary laws of the pair states, conditioned on the pair being together or apart."""

    def __init__(
        self,
        together: Dict[PairState, Number],
        apart: Dict[PairState, Number],
        p2: Number,
        configs: Dict[OccupancyPartition, Number],
    ):
        self.together = together
        self.apart = apart
        self.p2 = p2
        self.configs = configs

    def recombined(self) -> Dict[OccupancyPartition, Number]:
        """⟨P₂⟩·p*_together + (1 - ⟨P₂⟩)·p*_apart, marginalized over the marks."""
        result: Dict[OccupancyPartition, Number] = {}
        for law, weight in ((self.together, self.p2), (self.apart, 1 - self.p2)):
            for state, probability in law.items():
                result[state.config] = result.get(state.config, 0) + weight * probability
        return result

    def total_variation(self) -> Number:
        """Total variation distance between the recombined and the stationary law."""
        recombined = self.recombined()
        keys = set(recombined) | set(self.configs)
        return sum(abs(recombined.get(key, 0) - self.configs.get(key, 0)) for key in keys) / 2


def start_distributions(
    kernel: Kernel, n: int, mode: NumericMode = NumericMode.FLOATING
) -> StartDistributions:
    """Bayes start laws p*(state) ∝ P(pair placement | config)·p(config), together and apart."""
    if n < 2:
        raise InvalidArgumentError(f"Pair statistics need N >= 2, got {n}")
    table = compute_cnk(kernel, n, mode=mode)
    pi = steady_state_pi(rate_schedule(kernel, table))
    configs = configuration_distribution(table, pi)
    together: Dict[PairState, Number] = {}
    apart: Dict[PairState, Number] = {}
    big_n = Fraction(n) if mode.is_exact else n
    for state in pair_states(configs, SEPARATION):
        (k,) = state.marked
        together[state] = configs[state.config] * _together_weight(state.config, k, big_n)
    for state in pair_states(configs, REUNION):
        k1, k2 = state.marked
        apart[state] = configs[state.config] * _apart_weight(state.config, k1, k2, big_n)
    p2 = sum(together.values(), mode.zero())
    together = {state: value / p2 for state, value in together.items()}
    apart = {state: value / (1 - p2) for state, value in apart.items()}
    return StartDistributions(together, apart, p2, configs)


def _merge(state: PairState) -> PairState:
    k1, k2 = state.marked
    counts = [0] + list(state.config)
    return PairState(_move(counts, (k1, k2), (k1 + k2,)), (k1 + k2,))


def entrance_distributions(
    kernel: Kernel, starts: StartDistributions, separation: PairChain, reunion: PairChain
) -> Tuple[np.ndarray, np.ndarray]:
    """Entrance laws of together and apart episodes over the chain states.

    A together episode starts when the two clusters holding the pair coagulate, from each
    reunion state at the stationary flux p*(state)·C(k1, k2); an apart episode starts when a
    split separates the pair, at the flux p*(state)·(rate of separating splits).
    """
    together = np.zeros(len(separation.states))
    for index, state in enumerate(reunion.states):
        flux = float(starts.apart[state]) * reunion.exit_rates[index]
        if flux > 0:
            together[separation.index(_merge(state))] += flux
    apart = np.zeros(len(reunion.states))
    n = len(separation.states[0].config)
    frag = kernel.frag_table(n)
    for state in separation.states:
        (k,) = state.marked
        counts = [0] + list(state.config)
        probability = float(starts.together[state])
        for i in range(1, k):
            flux = probability * frag[i, k - i] * 2 * i * (k - i) / (k * (k - 1))
            if flux > 0:
                config = _move(counts, (k,), (i, k - i))
                apart[reunion.index(PairState(config, tuple(sorted((i, k - i)))))] += flux
    return together / together.sum(), apart / apart.sum()


class PairTimesReport:
    """Mean episode durations of a tagged pair and the colocalization identity."""

    def __init__(
        self,
        t_s: float,
        t_r: float,
        p2_exact: float,
        max_residual: float,
        t_s_stationary: float,
        t_r_stationary: float,
        states: Tuple[int, int],
    ):
        self.t_s = t_s
        self.t_r = t_r
        self.p2_exact = p2_exact
        self.max_residual = max_residual
        self.t_s_stationary = t_s_stationary
        self.t_r_stationary = t_r_stationary
        self.states = states

    @property
    def p2_ratio(self) -> float:
        """T_S/(T_S + T_R)."""
        return self.t_s / (self.t_s + self.t_r)

    def to_dict(self) -> Dict[str, Any]:
        """JSON representation."""
        return {
            "t_s": self.t_s,
            "t_r": self.t_r,
            "p2_ratio": self.p2_ratio,
            "p2_exact": self.p2_exact,
            "max_residual": self.max_residual,
            "t_s_stationary": self.t_s_stationary,
            "t_r_stationary": self.t_r_stationary,
            "separation_states": self.states[0],
            "reunion_states": self.states[1],
        }


def pair_times(kernel: Kernel, n: int) -> PairTimesReport:
    """Mean time together T_S, mean time apart T_R and the ratio T_S/(T_S + T_R).

    T_S and T_R average the absorption times over the entrance laws of the episodes; the
    averages over the stationary Bayes start laws (mean residual times) are reported alongside.
    """
    _check_size(n, SEPARATION)
    _check_size(n, REUNION)
    starts = start_distributions(kernel, n)
    configs = list(starts.configs)
    separation = build_pair_chain(kernel, n, SEPARATION, configs)
    reunion = build_pair_chain(kernel, n, REUNION, configs)
    together_times = mean_absorption_times(separation)
    apart_times = mean_absorption_times(reunion)
    residual = max(
        solve_residual(separation, together_times), solve_residual(reunion, apart_times)
    )
    together_entry, apart_entry = entrance_distributions(kernel, starts, separation, reunion)
    together_start = np.array([float(starts.together[state]) for state in separation.states])
    apart_start = np.array([float(starts.apart[state]) for state in reunion.states])
    table = compute_cnk(kernel, n, mode=NumericMode.FLOATING)
    reference = p2_exact(table, steady_state_pi(rate_schedule(kernel, table)))
    report = PairTimesReport(
        t_s=float(together_entry @ together_times),
        t_r=float(apart_entry @ apart_times),
        p2_exact=float(reference),
        max_residual=residual,
        t_s_stationary=float(together_start @ together_times),
        t_r_stationary=float(apart_start @ apart_times),
        states=(len(separation.states), len(reunion.states)),
    )
    logger.info(
        f"Pair times for N={n}: T_S={report.t_s:.6g}, T_R={report.t_r:.6g}, "
        f"ratio={report.p2_ratio:.6g}, ⟨P₂⟩={report.p2_exact:.6g}"
    )
    return report
