"""
Feature-space augmentation: a weak view (small Gaussian jitter) and a
strong view (larger jitter plus inverted coordinate dropout).
"""
from typing import Union

import numpy as np

from src.errors import InputError
from src.seeding import make_rng

STRENGTHS = ("weak", "strong")

SeedOrRng = Union[int, np.random.Generator]


def _generator(seed: SeedOrRng, strength: str) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(int(seed), f"augment.{strength}")


def augment(batch: np.ndarray, strength: str, seed: SeedOrRng,
            weak_noise: float = 0.05, strong_noise: float = 0.2, strong_dropout: float = 0.2) -> np.ndarray:
    """
    weak: x + N(0, s_w^2)
    strong: (x + N(0, s_s^2)) * mask / (1 - strong_dropout), mask ~ Bernoulli(1 - strong_dropout)

    s = noise / sqrt(D) per coordinate, so each jitter vector has norm
    about weak_noise or strong_noise.

    seed may be an int (a fresh stage generator) or a Generator that the
    caller threads through a run.
    """
    if strength not in STRENGTHS:
        raise InputError(f"strength must be one of {STRENGTHS}, got '{strength}'")
    if not 0.0 <= strong_dropout < 1.0:
        raise InputError(f"strong_dropout must be in [0, 1), got {strong_dropout}")
    x = np.asarray(batch, dtype=np.float64)
    rng = _generator(seed, strength)
    per_coordinate = 1.0 / np.sqrt(x.shape[-1])
    if strength == "weak":
        return x + weak_noise * per_coordinate * rng.standard_normal(x.shape)
    noisy = x + strong_noise * per_coordinate * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) >= strong_dropout
    return noisy * keep / (1.0 - strong_dropout)
