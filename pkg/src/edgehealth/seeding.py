"""Deterministic seed derivation.

All randomness in the package flows from one 64-bit root seed. Sub-seeds are
derived by hashing the root together with a path of string labels, so any
sub-run (a command, a scenario, a single window) can be reproduced in
isolation without replaying everything before it.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["child_seed", "rng_for"]


def child_seed(root_seed: int, *path: str) -> int:
    """Derive a stable 64-bit sub-seed from ``root_seed`` and a label path.

    The derivation is sha256 over ``"<root>/<label>/<label>/..."``, truncated
    to 8 bytes. Different paths give independent streams for all practical
    purposes; the same path always gives the same seed.
    """
    if root_seed < 0:
        raise ValueError("root_seed must be non-negative")
    tag = str(int(root_seed)) + "/" + "/".join(path)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(root_seed: int, *path: str) -> np.random.Generator:
    """A fresh numpy Generator seeded from :func:`child_seed`."""
    return np.random.default_rng(child_seed(root_seed, *path))
