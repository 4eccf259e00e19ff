#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.
import logging

import pytest

from tests.integration.helpers import run_cli


@pytest.fixture(scope="module")
def output_dir(tmp_path_factory):
    """Directory shared by the runs of a test module."""
    return tmp_path_factory.mktemp("cfp")


@pytest.fixture
def cli(caplog):
    """Run the command line with stdout captured."""
    caplog.set_level(logging.WARNING)
    return run_cli
