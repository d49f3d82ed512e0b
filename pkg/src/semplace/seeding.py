"""Stable sub-seed derivation.

All randomness in a run flows from one user seed; sub-streams are derived
by hashing (seed, role) so they are reproducible across platforms and
independent of execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_seed(seed: int, *role) -> int:
    """64-bit sub-seed derived from a root seed and a role path."""
    payload = f"{int(seed)}/" + "/".join(str(r) for r in role)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stable_rng(seed: int, *role) -> np.random.Generator:
    return np.random.default_rng(stable_seed(seed, *role))
