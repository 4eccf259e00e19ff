# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Run manifest of a command-line invocation."""
import itertools
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional

from pydantic import BaseModel, validator

from utils import digest

logger = logging.getLogger(__name__)

SUBCOMMANDS = ["exact", "analytic", "pairtimes", "simulate", "compare", "sweep", "emit"]


class GridPoint(NamedTuple):
    """One (M, N, a) point of a parameter grid."""

    m: Optional[int]
    n: int
    a: str


class RunManifest(BaseModel):
    """Everything that determines the output of a run."""

    subcommand: str
    kernel: Dict[str, Any]
    n: List[int]
    a: List[str]
    m: List[Optional[int]] = [None]
    numeric: str
    outputs: List[str] = []
    seed: int = 0
    options: Dict[str, Any] = {}

    class Config:
        allow_mutation = False

    @validator("subcommand")
    def subcommand_validator(cls, value):
        """Known subcommand."""
        if value not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand '{value}'")
        return value

    @validator("n")
    def n_validator(cls, value):
        """Non-empty list of positive particle counts."""
        if not value:
            raise ValueError("the N grid is empty")
        if any(n < 1 for n in value):
            raise ValueError(f"N values must be positive, got {value}")
        return value

    @validator("a", "m")
    def grid_validator(cls, value):
        """Non-empty grid axis."""
        if not value:
            raise ValueError("empty parameter grid")
        return value

    @validator("outputs", each_item=True)
    def output_validator(cls, value):
        """Outputs go to stdout or a writable directory."""
        if value == "-":
            return value
        directory = Path(value).resolve().parent
        if not directory.is_dir() or not os.access(directory, os.W_OK):
            raise ValueError(f"output directory {directory} is not writable")
        return value

    def grid(self) -> List[GridPoint]:
        """Cartesian product of the axes in lexicographic (M, N, a) order."""
        return [GridPoint(*point) for point in itertools.product(self.m, self.n, self.a)]

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of the manifest, output paths excluded."""
        return digest(self.dict(exclude={"outputs"}))
