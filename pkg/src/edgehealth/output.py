"""Deterministic artifact writers with an audit header.

Every CSV a command emits starts with one comment line::

    # edgehealth <version> config=<hash> seed=<seed>

so any artifact can be traced back to the exact configuration and root
seed that produced it. Floats are written with ``repr`` (shortest
round-trip form) and rows are emitted in the order given, so re-running a
command with identical inputs rewrites byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import __version__

__all__ = ["audit_header", "write_csv", "write_summary", "read_header"]


def audit_header(config_sha: str, seed: int) -> str:
    return "# edgehealth %s config=%s seed=%d" % (__version__, config_sha, seed)


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, fieldnames, rows, *, config_sha: str, seed: int) -> None:
    """Write rows (dicts or sequences) under the audit header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(audit_header(config_sha, seed) + "\n")
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            if isinstance(row, dict):
                missing = [f for f in fieldnames if f not in row]
                if missing:
                    raise ValueError(
                        "row lacks fields: %s" % ", ".join(missing)
                    )
                row = [row[f] for f in fieldnames]
            elif len(row) != len(fieldnames):
                raise ValueError(
                    "row has %d cells, header has %d"
                    % (len(row), len(fieldnames))
                )
            writer.writerow([_cell(v) for v in row])


def write_summary(path, metrics: dict, *, config_sha: str, seed: int) -> None:
    """Machine-readable per-command summary (stable key order)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "tool": "edgehealth",
        "version": __version__,
        "config": config_sha,
        "seed": int(seed),
        "metrics": metrics,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_header(path) -> dict:
    """Parse the audit header of an artifact; raises on a missing one."""
    with open(path) as fh:
        first = fh.readline().strip()
    parts = first.split()
    if len(parts) < 4 or parts[0] != "#" or parts[1] != "edgehealth":
        raise ValueError("%s does not start with an edgehealth header" % path)
    meta = {"version": parts[2]}
    for token in parts[3:]:
        key, _, value = token.partition("=")
        meta[key] = value
    return meta
