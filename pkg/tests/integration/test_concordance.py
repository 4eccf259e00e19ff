#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import logging

import pytest

from constants import EXIT_OK
from tests.integration.helpers import read_rows

logger = logging.getLogger(__name__)

# Kernel options, N, a and simulated horizon of each compared system.
SYSTEMS = [
    (["--kernel", "constant"], 8, "1", 1000),
    (["--kernel", "constant"], 12, "5", 400),
    (["--kernel", "bounded", "--m", "3"], 9, "0.5", 1000),
    (["--kernel", "bounded", "--m", "4"], 9, "0.01", 20000),
    (["--kernel", "linear"], 7, "1", 1000),
]


@pytest.mark.parametrize("kernel,n,a,horizon", SYSTEMS)
def test_simulation_matches_exact_values(cli, output_dir, kernel, n, a, horizon):
    """Stationary law, mean counts, configurations, pair times and flux balance agree."""
    out = output_dir / f"compare-{kernel[1]}-{n}-{a}.csv"
    argv = ["compare", *kernel, "--n", str(n), "--a", a, "--sim-t", str(horizon)]
    argv += ["--replicas", "16", "--seed", "7", "--sigma", "5", "--compare-floor", "0.001"]
    code, summary = cli(argv + ["--track-pair", "--out", str(out)])
    logger.info(summary)
    assert code == EXIT_OK, summary
    rows = read_rows(out)
    quantities = {row["quantity"] for row in rows}
    assert quantities == {"pi", "mean-count", "config", "p2", "t_s", "t_r", "flux"}
    assert all(row["ok"] == "true" for row in rows)


def test_nucleation_frozen_clusters(cli, output_dir):
    """Without fragmentation a bounded system freezes into ceil(N/M) clusters."""
    out = output_dir / "nucleation.csv"
    argv = ["simulate", "--kernel", "bounded", "--m", "4", "--n", "9", "--a", "0"]
    code, _ = cli(argv + ["--sim-t", "100", "--replicas", "8", "--out", str(out)])
    assert code == EXIT_OK
    pi = {row["key"]: float(row["mean"]) for row in read_rows(out) if row["quantity"] == "pi"}
    assert pi["3"] > 0.9
    assert sum(value for key, value in pi.items() if int(key) < 3) == 0
