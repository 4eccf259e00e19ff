#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import contextlib
import csv
import io
from typing import Dict, List, Tuple

from cfp import main


def run_cli(argv: List[str]) -> Tuple[int, str]:
    """Run cfp with the given arguments and return its exit code and stdout."""
    stdout = io.StringIO()
    with contextlib.redirect_stdout(stdout):
        code = main(argv + ["--log-level", "WARNING"])
    return code, stdout.getvalue()


def csv_rows(text: str) -> List[Dict[str, str]]:
    """Parse cfp CSV output, skipping the metadata lines."""
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


def read_rows(path) -> List[Dict[str, str]]:
    """Parse a cfp CSV file."""
    with open(path) as file:
        return csv_rows(file.read())
