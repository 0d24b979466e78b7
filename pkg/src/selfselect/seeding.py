"""Deterministic seed derivation shared by backends, strategies, and the pipeline."""

from __future__ import annotations

import hashlib

_MASK63 = (1 << 63) - 1


def stable_seed(*parts: object) -> int:
    """Derive a 63-bit seed from the given parts.

    Stable across processes and platforms (unlike hash()), so any RNG stream
    keyed this way survives re-runs, resumes, and worker reordering. Parts are
    joined by their str() form with a unit separator and hashed with SHA-256.
    """
    joined = "\x1f".join(str(part) for part in parts)
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK63
