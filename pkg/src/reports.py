# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Writers of the CSV, JSON and text outputs."""
import csv
import io
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from jinja2 import Template

from numeric import format_number

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent.parent / "templates"


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (Fraction, float)):
        return format_number(value)
    if isinstance(value, np.floating):
        return format_number(float(value))
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, Fraction):
        return format_number(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def csv_text(
    rows: List[Dict[str, Any]], metadata: Dict[str, Any], header: Optional[List[str]] = None
) -> str:
    """Render rows as CSV preceded by '#'-prefixed metadata lines.

    Without an explicit header, the header is the union of the row keys in first-seen order;
    missing cells stay empty.
    """
    buffer = io.StringIO()
    for key in sorted(metadata):
        buffer.write(f"# {key}: {_cell(metadata[key])}\n")
    if header is None:
        header = []
        for row in rows:
            header.extend(key for key in row if key not in header)
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row.get(key)) for key in header])
    return buffer.getvalue()


def json_text(payload: Dict[str, Any], metadata: Dict[str, Any]) -> str:
    """Render a payload as indented JSON with sorted keys and a metadata block."""
    content = dict(payload)
    content["metadata"] = metadata
    return json.dumps(content, sort_keys=True, indent=2, default=_jsonable) + "\n"


def write_text(path: Optional[str], text: str) -> None:
    """Write text to a file, or to stdout for None and "-"."""
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w") as file:
        file.write(text)
    logger.info(f"Wrote {path}")


def write_csv(path: Optional[str], rows: List[Dict[str, Any]], metadata: Dict[str, Any]) -> None:
    """Write rows as CSV."""
    write_text(path, csv_text(rows, metadata))


def write_json(path: Optional[str], payload: Dict[str, Any], metadata: Dict[str, Any]) -> None:
    """Write a payload as JSON."""
    write_text(path, json_text(payload, metadata))


def write_events(path: str, log, metadata: Dict[str, Any]) -> None:
    """Write an event log as CSV with the time,kind,size_a,size_b header."""
    rows = [dict(zip(log.HEADER, row)) for row in log.rows]
    write_text(path, csv_text(rows, metadata, header=list(log.HEADER)))


def render_template(name: str, **context) -> str:
    """Render templates/<name> with jinja2."""
    with open(TEMPLATES_DIR / name, "r") as file:
        template = Template(file.read(), keep_trailing_newline=True)
    return template.render(**context)
