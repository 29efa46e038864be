"""
Seed derivation.

All randomness flows from one integer seed. Each stage derives its own
64-bit key by hashing "<stage>:<seed>" with SHA-256, and draws from a
numpy Generator backed by Philox (a counter-based generator whose stream
is identical across platforms).
"""
import hashlib

import numpy as np


def derive_seed(seed: int, stage: str) -> int:
    """Derive a stage-specific 64-bit seed from the run seed"""
    digest = hashlib.sha256(f"{stage}:{int(seed)}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, stage: str) -> np.random.Generator:
    """Philox-backed generator for one named stage"""
    return np.random.Generator(np.random.Philox(derive_seed(seed, stage)))
