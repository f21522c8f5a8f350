"""Deterministic RNG streams derived from string labels.

Every stochastic operation in the repo takes an explicit generator; streams
are derived from a master seed plus a label path so results do not depend on
execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *labels) -> int:
    """Stable 64-bit seed for the substream identified by `labels`."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Generator for the substream identified by `labels`."""
    return np.random.default_rng(derive_seed(master_seed, *labels))
