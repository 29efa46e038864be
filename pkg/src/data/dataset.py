"""
Dataset Module
Samples, datasets, the JSON Lines file format and the held-out split
"""
import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

from src.errors import InputError
from src.seeding import derive_seed
from src.taxonomy.tree import MISSING, LabelPath, Taxonomy, check_label_path, load_taxonomy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    label: LabelPath
    text_embedding: Optional[np.ndarray] = None

    def with_label(self, label: LabelPath) -> "Sample":
        return replace(self, label=label)


@dataclass(frozen=True)
class Dataset:
    taxonomy: Taxonomy
    samples: Tuple[Sample, ...]
    feature_dim: int
    text_dim: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        for sample in self.samples:
            if sample.features.shape != (self.feature_dim,):
                raise InputError(f"sample {sample.id} has feature shape {sample.features.shape}, expected ({self.feature_dim},)")
            if not np.all(np.isfinite(sample.features)):
                raise InputError(f"sample {sample.id} has non-finite features")
            if sample.text_embedding is not None and sample.text_embedding.shape != (self.text_dim,):
                raise InputError(f"sample {sample.id} has text shape {sample.text_embedding.shape}, expected ({self.text_dim},)")
            violations = check_label_path(self.taxonomy, sample.label)
            if violations:
                raise InputError(f"sample {sample.id}: {violations[0].kind} at level {violations[0].level}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> np.ndarray:
        return np.asarray([s.id for s in self.samples], dtype=np.int64)

    def features(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, self.feature_dim))
        return np.stack([s.features for s in self.samples])

    def text_embeddings(self) -> Optional[np.ndarray]:
        if self.text_dim is None or not self.samples:
            return None
        if any(s.text_embedding is None for s in self.samples):
            return None
        return np.stack([s.text_embedding for s in self.samples])

    def labels(self) -> np.ndarray:
        """(n, L) label matrix with MISSING entries"""
        return np.asarray([s.label.labels for s in self.samples], dtype=np.int64).reshape(len(self.samples), self.taxonomy.num_levels)

    def deepest(self) -> np.ndarray:
        return np.asarray([s.label.deepest for s in self.samples], dtype=np.int64)

    def is_fully_labeled(self) -> bool:
        return all(s.label.deepest == self.taxonomy.num_levels for s in self.samples)

    def with_samples(self, samples: Sequence[Sample]) -> "Dataset":
        return replace(self, samples=tuple(samples))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return self.with_samples([self.samples[i] for i in indices])

    def by_id(self) -> Dict[int, Sample]:
        return {s.id: s for s in self.samples}


def header_path(path: str) -> str:
    """Sidecar header next to a JSON Lines dataset file"""
    p = Path(path)
    return str(p.with_name(p.stem + ".header.json"))


def write_dataset(d: Dataset, path: str, taxonomy_path: Optional[str] = None):
    """Write one JSON object per sample plus the sidecar header"""
    with open(path, "w") as f:
        for s in d.samples:
            record = {"id": s.id, "features": s.features.tolist(), "labels": s.label.to_json()}
            if s.text_embedding is not None:
                record["text"] = s.text_embedding.tolist()
            f.write(json.dumps(record) + "\n")

    header = {
        "taxonomy": os.path.relpath(taxonomy_path, os.path.dirname(os.path.abspath(path))) if taxonomy_path else None,
        "level_sizes": list(d.taxonomy.level_sizes),
        "feature_dim": d.feature_dim,
        "text_dim": d.text_dim,
        "seed": d.seed,
        "num_samples": len(d),
    }
    with open(header_path(path), "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
    logger.debug("Wrote %d samples to %s", len(d), path)


def read_dataset(path: str, taxonomy: Optional[Taxonomy] = None) -> Dataset:
    """
    Read a dataset written by write_dataset. The taxonomy comes from the
    argument or, when omitted, from the path recorded in the header.
    """
    hpath = header_path(path)
    try:
        with open(hpath, "r") as f:
            header = json.load(f)
    except FileNotFoundError:
        raise InputError("dataset header not found", path=hpath)
    except json.JSONDecodeError as e:
        raise InputError(f"malformed JSON: {e.msg}", path=hpath, line=e.lineno)

    for key in ("feature_dim", "level_sizes", "seed"):
        if key not in header:
            raise InputError(f"header is missing '{key}'", path=hpath)

    if taxonomy is None:
        if not header.get("taxonomy"):
            raise InputError("header names no taxonomy file; pass one explicitly", path=hpath)
        taxonomy = load_taxonomy(os.path.join(os.path.dirname(os.path.abspath(path)), header["taxonomy"]))
    if list(taxonomy.level_sizes) != list(header["level_sizes"]):
        raise InputError(f"taxonomy sizes {list(taxonomy.level_sizes)} do not match header {header['level_sizes']}", path=hpath)

    feature_dim = int(header["feature_dim"])
    text_dim = header.get("text_dim")
    samples = []
    try:
        f = open(path, "r")
    except FileNotFoundError:
        raise InputError("file not found", path=path)
    with f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"malformed JSON: {e.msg}", path=path, line=line_no)
            try:
                text = record.get("text")
                sample = Sample(
                    id=int(record["id"]),
                    features=np.asarray(record["features"], dtype=np.float64),
                    label=LabelPath(tuple(MISSING if v is None else v for v in record["labels"])),
                    text_embedding=np.asarray(text, dtype=np.float64) if text is not None else None,
                )
            except (KeyError, TypeError, ValueError) as e:
                raise InputError(f"bad sample record: {e}", path=path, line=line_no)
            violations = check_label_path(taxonomy, sample.label)
            if violations:
                raise InputError(f"{violations[0].kind} at level {violations[0].level}", path=path, line=line_no)
            if sample.features.shape != (feature_dim,):
                raise InputError(f"expected {feature_dim} features, got {sample.features.shape}", path=path, line=line_no)
            samples.append(sample)

    try:
        return Dataset(taxonomy=taxonomy, samples=tuple(samples), feature_dim=feature_dim,
                       text_dim=int(text_dim) if text_dim is not None else None, seed=int(header["seed"]))
    except InputError as e:
        raise InputError(str(e), path=path)


def stratify_keys(d: Dataset) -> List[str]:
    """Stratification key per sample: its label path with missing levels shown as '-'"""
    return ["/".join("-" if v == MISSING else str(v) for v in s.label.labels) for s in d.samples]


def stratified_split(d: Dataset, test_fraction: float, seed: int,
                     reference: Optional[Dataset] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Seeded split into (train, held-out) sample indices, stratified by the
    finest class. When the dataset is pruned, the fully labeled reference
    dataset (same ids) supplies the strata.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InputError(f"test fraction must be in (0, 1), got {test_fraction}")
    source = d
    if reference is not None:
        ref = reference.by_id()
        missing = [s.id for s in d.samples if s.id not in ref]
        if missing:
            raise InputError(f"{len(missing)} sample ids are absent from the reference dataset (first: {missing[0]})")
        source = d.with_samples([ref[s.id] for s in d.samples])

    keys = np.asarray(stratify_keys(source))
    indices = np.arange(len(d))
    # strata with a single member cannot be split; sklearn rejects them
    _, counts = np.unique(keys, return_counts=True)
    stratify = keys if counts.min() >= 2 else None
    random_state = derive_seed(seed, "split") % (2 ** 32)
    try:
        train_idx, test_idx = train_test_split(
            indices, test_size=test_fraction, random_state=random_state, stratify=stratify
        )
    except ValueError as e:
        # too few samples per stratum for the requested fraction
        logger.warning("Stratified split impossible (%s); falling back to a plain seeded split", e)
        train_idx, test_idx = train_test_split(indices, test_size=test_fraction, random_state=random_state)
    return np.sort(train_idx), np.sort(test_idx)
