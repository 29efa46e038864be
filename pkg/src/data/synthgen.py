"""
Synthetic Data Generator
Hierarchically structured Gaussian feature datasets and paired synthetic
text embeddings, deterministic given a seed
"""
import logging
from typing import List

import numpy as np

from src.data.dataset import Dataset, Sample
from src.errors import InputError
from src.seeding import make_rng
from src.taxonomy.tree import LabelPath, Taxonomy, validate

logger = logging.getLogger(__name__)

DEFAULT_LEVEL_SIZES = (4, 12, 48)
DEFAULT_PER_LEAF = 60
DEFAULT_FEATURE_DIM = 64
DEFAULT_TEXT_DIM = 32
DEFAULT_NOISE_SCALE = 0.3
DEFAULT_HIER_CORR = 0.6


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def class_means(t: Taxonomy, feature_dim: int, hier_corr: float, seed: int) -> List[np.ndarray]:
    """
    Per-level class means. Level-1 means are unit-norm standard normal
    draws; a class at level l >= 2 mixes its parent's mean with its own
    unit-norm offset: hier_corr * parent + (1 - hier_corr) * offset.
    """
    rng = make_rng(seed, "synthgen.means")
    means = [_unit_rows(rng.standard_normal((t.level_sizes[0], feature_dim)))]
    for level in range(2, t.num_levels + 1):
        offsets = _unit_rows(rng.standard_normal((t.level_sizes[level - 1], feature_dim)))
        parent_means = means[-1][t.parent_array(level)]
        means.append(hier_corr * parent_means + (1.0 - hier_corr) * offsets)
    return means


def generate(t: Taxonomy, per_leaf: int, feature_dim: int, noise_scale: float,
             hier_corr: float, seed: int) -> Dataset:
    """
    per_leaf fully labeled samples for every finest-level class, ordered by
    leaf. Features are the leaf mean plus isotropic Gaussian noise with
    per-coordinate deviation noise_scale / sqrt(feature_dim), so the noise
    vector has norm about noise_scale against unit-norm class means.
    """
    violations = validate(t)
    if violations:
        raise InputError(f"invalid taxonomy: {violations[0].kind} at level {violations[0].level}")
    if per_leaf < 1:
        raise InputError(f"per_leaf must be >= 1, got {per_leaf}")
    if feature_dim < 1:
        raise InputError(f"feature_dim must be >= 1, got {feature_dim}")
    if noise_scale < 0:
        raise InputError(f"noise_scale must be non-negative, got {noise_scale}")
    if not 0.0 <= hier_corr <= 1.0:
        raise InputError(f"hier_corr must be in [0, 1], got {hier_corr}")

    leaf_means = class_means(t, feature_dim, hier_corr, seed)[-1]
    rng = make_rng(seed, "synthgen.noise")
    coordinate_scale = noise_scale / np.sqrt(feature_dim)
    samples = []
    for leaf in range(t.level_sizes[-1]):
        label = LabelPath(tuple(t.leaf_path(leaf)))
        noise = rng.standard_normal((per_leaf, feature_dim))
        for row in noise:
            features = leaf_means[leaf] + coordinate_scale * row
            features.setflags(write=False)
            samples.append(Sample(id=len(samples), features=features, label=label))

    logger.info("Generated %d samples over %d leaves (D=%d, noise=%.3f, hier_corr=%.2f, seed=%d)",
                len(samples), t.level_sizes[-1], feature_dim, noise_scale, hier_corr, seed)
    return Dataset(taxonomy=t, samples=tuple(samples), feature_dim=feature_dim, text_dim=None, seed=seed)


def leaf_text_anchors(t: Taxonomy, text_dim: int, seed: int) -> np.ndarray:
    """One fixed unit vector per finest-level class"""
    return _unit_rows(make_rng(seed, "synthgen.text_anchors").standard_normal((t.level_sizes[-1], text_dim)))


def attach_synthetic_text(d: Dataset, text_dim: int, informativeness: float, seed: int) -> Dataset:
    """
    Give each sample a unit text embedding mixing its leaf anchor with
    Gaussian noise: normalize(w * anchor + (1 - w) * noise). The noise has
    per-coordinate deviation 1/sqrt(text_dim), so both parts have roughly
    unit norm.
    """
    if text_dim < 1:
        raise InputError(f"text_dim must be >= 1, got {text_dim}")
    if not 0.0 <= informativeness <= 1.0:
        raise InputError(f"informativeness must be in [0, 1], got {informativeness}")
    if any(s.text_embedding is not None for s in d.samples):
        raise InputError("dataset already carries text embeddings")
    L = d.taxonomy.num_levels
    if any(s.label.deepest != L for s in d.samples):
        raise InputError("text is attached per finest class; attach before pruning")

    anchors = leaf_text_anchors(d.taxonomy, text_dim, seed)
    rng = make_rng(seed, "synthgen.text_noise")
    samples = []
    for s in d.samples:
        noise = rng.standard_normal(text_dim) / np.sqrt(text_dim)
        mixed = informativeness * anchors[s.label.labels[-1]] + (1.0 - informativeness) * noise
        norm = np.linalg.norm(mixed)
        if norm == 0.0:
            raise InputError(f"sample {s.id} drew a zero text vector")
        embedding = mixed / norm
        embedding.setflags(write=False)
        samples.append(Sample(id=s.id, features=s.features, label=s.label, text_embedding=embedding))
    logger.info("Attached %d-dim text to %d samples (informativeness=%.2f)", text_dim, len(samples), informativeness)
    return Dataset(taxonomy=d.taxonomy, samples=tuple(samples), feature_dim=d.feature_dim,
                   text_dim=text_dim, seed=d.seed)
