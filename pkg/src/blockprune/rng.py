"""Seed handling.

All randomness in the package flows from one user-supplied 64-bit seed.
Each purpose (weight init, calibration sampling, batch sampling, random
baseline scores, ...) draws from its own named sub-stream so that, e.g.,
changing the number of calibration samples never perturbs weight init.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Deterministic 64-bit sub-seed for a named purpose."""
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=False))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def substream(seed: int, label: str) -> np.random.Generator:
    """Generator for the sub-stream named by `label`."""
    return np.random.default_rng(derive_seed(seed, label))
