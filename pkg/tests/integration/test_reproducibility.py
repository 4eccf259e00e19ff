#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import pytest

from constants import EXIT_OK, EXIT_TOLERANCE
from tests.integration.helpers import csv_rows


@pytest.mark.parametrize("subcommand,extra", [("simulate", []), ("compare", ["--sigma", "6"])])
def test_byte_identical_outputs(cli, output_dir, subcommand, extra):
    """Identical command lines give identical files, whatever the number of workers."""
    argv = [subcommand, "--n", "6", "--a", "2", "--sim-t", "200", "--replicas", "4"]
    argv += ["--seed", "12345", "--track-pair"] + extra
    contents = []
    for name, workers in (("first", "1"), ("second", "1"), ("pooled", "3")):
        out = output_dir / f"{subcommand}-{name}.csv"
        code, _ = cli(argv + ["--workers", workers, "--out", str(out)])
        assert code in (EXIT_OK, EXIT_TOLERANCE)
        contents.append(out.read_bytes())
    assert contents[0] == contents[1] == contents[2]


def test_seed_changes_simulation(cli):
    argv = ["simulate", "--n", "5", "--a", "1", "--sim-t", "50", "--replicas", "2"]
    _, first = cli(argv + ["--seed", "1"])
    _, second = cli(argv + ["--seed", "2"])
    assert csv_rows(first) != csv_rows(second)


def test_g1_asymptotic_error(cli):
    """The large-N approximation of G_1 is accurate at a = 1 and changes sign at a = 10."""
    n_grid = ",".join(str(n) for n in range(100, 1001, 100))
    code, out = cli(["emit", "--n", n_grid, "--a", "1", "--quantity", "g1-error"])
    assert code == EXIT_OK
    errors = [abs(float(row["relative_error"])) for row in csv_rows(out)]
    assert max(errors) < 0.05
    assert errors == sorted(errors, reverse=True)

    n_grid = ",".join(str(n) for n in range(2, 201))
    code, out = cli(["emit", "--n", n_grid, "--a", "10", "--quantity", "g1-error"])
    assert code == EXIT_OK
    signs = [float(row["error"]) > 0 for row in csv_rows(out)]
    assert signs.index(False) == 22
    assert not any(signs[22:])


def test_sweep_over_a(cli):
    """⟨P₂⟩ decreases with the fragmentation parameter a."""
    code, out = cli(["sweep", "--n", "20", "--a", "0.05,0.5,5,50", "--quantity", "p2"])
    assert code == EXIT_OK
    values = [float(row["p2"]) for row in csv_rows(out)]
    assert values == sorted(values, reverse=True)
