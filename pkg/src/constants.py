# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""File containing constants shared by the cfp modules."""

# Largest N for which partitions are enumerated (q(128) is about 4.35 million).
ENUMERATION_CAP = 128
ENUMERATION_CAP_ENV = "CFP_MAX_N"
CONFIG_PATH_ENV = "CFP_CONFIG"

# State space caps of the pair chains (the pair-augmented space grows faster than q(N)).
SEPARATION_CHAIN_CAP = 20
REUNION_CHAIN_CAP = 14

# Above this N the floating mode Kummer ratio is summed in log-magnitude form.
KUMMER_LOG_SUM_THRESHOLD = 60

DETAILED_BALANCE_TOLERANCE = 1e-12
ROW_SUM_TOLERANCE = 1e-12

# Number of standard errors a simulated value may deviate from its exact counterpart.
DEFAULT_SIGMA = 3.0
MIN_EPISODES = 100

RNG_ALGORITHM = "numpy.PCG64/SeedSequence(seed, spawn_key=(replica,))"

KERNEL_FAMILIES = ["constant", "bounded", "linear", "tabulated"]

# CLI exit codes.
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_TOLERANCE = 3

# Absolute slack of a comparison, for quantities never observed in a simulation.
COMPARE_FLOOR = 1e-6
