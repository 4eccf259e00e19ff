# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""A collection of utility functions that are used across the cfp modules."""
import hashlib
import json
import logging
import os
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List

import yaml

from constants import CONFIG_PATH_ENV, ENUMERATION_CAP, ENUMERATION_CAP_ENV
from errors import InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config.yaml"


def enumeration_cap() -> int:
    """Return the largest N that may be fully enumerated.

    The value can be raised (at the user's own risk) through the CFP_MAX_N environment variable.
    """
    value = os.environ.get(ENUMERATION_CAP_ENV)
    if value is None:
        return ENUMERATION_CAP
    try:
        cap = int(value)
    except ValueError:
        raise InvalidArgumentError(f"Invalid {ENUMERATION_CAP_ENV} value '{value}'")
    if cap < 1:
        raise InvalidArgumentError(f"{ENUMERATION_CAP_ENV} must be positive, got {cap}")
    return cap


def scaled_cap(default_cap: int) -> int:
    """Scale a state space cap with the enumeration cap override."""
    cap = enumeration_cap()
    if cap == ENUMERATION_CAP:
        return default_cap
    return max(1, default_cap * cap // ENUMERATION_CAP)


def split_list(value: str) -> List[str]:
    """Split a comma separated command-line value into its stripped items."""
    items = [item.strip() for item in value.split(",")]
    if not items or any(not item for item in items):
        raise InvalidArgumentError(f"Invalid list '{value}'")
    return items


def parse_int_list(value: str) -> List[int]:
    """Parse a comma separated list of integers, e.g. "3,5,9"."""
    try:
        return [int(item) for item in split_list(value)]
    except ValueError:
        raise InvalidArgumentError(f"Invalid integer list '{value}'")


def parse_number_list(value: str) -> List[str]:
    """Parse a comma separated list of real numbers, e.g. "0.05,1/3,5".

    Numbers are kept as their decimal strings so that rational mode can convert them exactly.
    """
    items = split_list(value)
    for item in items:
        try:
            Fraction(item)
        except (ValueError, ZeroDivisionError):
            raise InvalidArgumentError(f"Invalid number '{item}' in '{value}'")
    return items


def canonical_json(payload: Any) -> str:
    """Serialize a payload as compact JSON with sorted keys."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


def digest(payload: Any) -> str:
    """Return the SHA-256 hex digest of the canonical JSON of a payload."""
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def load_defaults(path: str = None) -> Dict[str, Any]:
    """Load the default option values from config.yaml.

    Args:
        path: an explicit file, otherwise CFP_CONFIG or the repository config.yaml.

    Returns:
        a mapping from option name to its default value.
    """
    config_path = Path(path or os.environ.get(CONFIG_PATH_ENV) or DEFAULT_CONFIG_PATH)
    if not config_path.exists():
        logger.debug(f"No configuration file at {config_path}, using built-in defaults")
        return {}
    with open(config_path) as file:
        content = yaml.safe_load(file) or {}
    options = content.get("options", {})
    return {name: option.get("default") for name, option in options.items()}
