"""Deterministic seed derivation.

All randomness in the package flows through explicit integer seeds.  Derived
streams (per subject, per enrollment, ...) are obtained by hashing the parent
seed together with string context parts, so results do not depend on iteration
order or on how many draws earlier consumers made.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Collapse (seed, context...) into a stable 63-bit integer seed."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def seeded_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
