"""Deterministic 64-bit seed derivation.

All sub-seeds in the toolkit come from a keyed blake2b hash over the parent
seed and a label path, never from the platform default hasher, so every
experiment replays bit-identically across processes and machines.
"""

from __future__ import annotations

import hashlib

# personalization constant for the seed-derivation hash; changing it changes
# every derived stream
_PERSON = b"privaudit1"


def derive_seed(master_seed: int, *parts) -> int:
    """Derive a 64-bit sub-seed from a master seed and a label path."""
    h = hashlib.blake2b(digest_size=8, person=_PERSON)
    h.update(str(int(master_seed)).encode("ascii"))
    for p in parts:
        h.update(b"/")
        h.update(str(p).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")
