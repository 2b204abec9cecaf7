"""Stable seed derivation.

Every stochastic step takes an explicit integer seed. Sub-seeds are derived by
hashing the parent seed together with string labels, so they do not depend on
``PYTHONHASHSEED`` or on the order in which work is scheduled.
"""
from __future__ import annotations

import hashlib


def derive_seed(seed: int, *labels: object) -> int:
    text = ":".join([str(int(seed)), *(str(label) for label in labels)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
