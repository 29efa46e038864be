"""
Label Pruning Module
Turns fully labeled datasets into free-grain ones, either from per-sample
correctness flags (semantic rules) or from an a-b-c retention spec (random)
"""
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.data.dataset import Dataset
from src.errors import InputError, UnsupportedShapeError
from src.seeding import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorrectnessFlags:
    """Per-sample (fine_correct, sub_correct), keyed by sample id"""
    flags: Dict[int, Tuple[bool, bool]]

    def __len__(self) -> int:
        return len(self.flags)

    @classmethod
    def uniform(cls, d: Dataset, fine_correct: bool, sub_correct: bool) -> "CorrectnessFlags":
        return cls({s.id: (fine_correct, sub_correct) for s in d.samples})


@dataclass(frozen=True)
class PruneSpec:
    """Retention fraction per level, coarsest first; level 1 is always kept"""
    keep_fractions: Tuple[Fraction, ...]

    def __post_init__(self):
        fractions = tuple(Fraction(k).limit_denominator(10 ** 6) for k in self.keep_fractions)
        object.__setattr__(self, "keep_fractions", fractions)
        if not fractions:
            raise InputError("prune spec needs at least one level")
        if fractions[0] != 1:
            raise InputError(f"basic labels are always kept: first fraction must be 1.0, got {float(fractions[0])}")
        for level, k in enumerate(fractions, start=1):
            if not 0 <= k <= 1:
                raise InputError(f"keep fraction {float(k)} at level {level} outside [0, 1]")
        for level in range(1, len(fractions)):
            if fractions[level] > fractions[level - 1]:
                raise InputError(
                    f"keep fractions increase with depth at level {level + 1}: "
                    f"{float(fractions[level])} > {float(fractions[level - 1])}"
                )

    def __str__(self) -> str:
        return "-".join(f"{float(k * 100):g}" for k in self.keep_fractions)


def parse_prune_spec(text: str) -> PruneSpec:
    """Parse an "a-b-c" percentage string such as "100-50-10" """
    try:
        percents = [Fraction(part) for part in text.split("-")]
    except (ValueError, ZeroDivisionError):
        raise InputError(f"cannot parse prune spec '{text}'")
    return PruneSpec(tuple(p / 100 for p in percents))


def read_flags(path: str) -> CorrectnessFlags:
    """Flags file: JSON Lines {"id", "fine_correct", "sub_correct"}"""
    flags = {}
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
                sample_id = int(record["id"])
                entry = (bool(record["fine_correct"]), bool(record["sub_correct"]))
            except json.JSONDecodeError as e:
                raise InputError(f"malformed JSON: {e.msg}", path=path, line=line_no)
            except (KeyError, TypeError, ValueError) as e:
                raise InputError(f"bad flags record: {e}", path=path, line=line_no)
            if sample_id in flags:
                raise InputError(f"duplicate id {sample_id}", path=path, line=line_no)
            flags[sample_id] = entry
    return CorrectnessFlags(flags)


def flags_from_scores(d: Dataset, scores: Dict[int, dict]) -> CorrectnessFlags:
    """
    Correctness flags from per-sample class scores (argmax vs truth).
    Each entry carries "fine_scores" over level-3 classes and "sub_scores"
    over level-2 classes.
    """
    _require_three_levels(d)
    flags = {}
    for s in d.samples:
        if s.id not in scores:
            raise InputError(f"no scores for sample {s.id}")
        entry = scores[s.id]
        try:
            fine = np.asarray(entry["fine_scores"], dtype=np.float64)
            sub = np.asarray(entry["sub_scores"], dtype=np.float64)
        except KeyError as e:
            raise InputError(f"sample {s.id} scores missing {e}")
        if fine.shape != (d.taxonomy.level_sizes[2],) or sub.shape != (d.taxonomy.level_sizes[1],):
            raise InputError(f"sample {s.id} scores have wrong widths {fine.shape}/{sub.shape}")
        flags[s.id] = (int(np.argmax(fine)) == s.label.labels[2], int(np.argmax(sub)) == s.label.labels[1])
    return CorrectnessFlags(flags)


def read_scores(path: str) -> Dict[int, dict]:
    """Score file: JSON Lines {"id", "fine_scores": [..], "sub_scores": [..]}"""
    scores = {}
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
                scores[int(record["id"])] = record
            except json.JSONDecodeError as e:
                raise InputError(f"malformed JSON: {e.msg}", path=path, line=line_no)
            except (KeyError, TypeError, ValueError) as e:
                raise InputError(f"bad score record: {e}", path=path, line=line_no)
    return scores


def _require_three_levels(d: Dataset):
    if d.taxonomy.num_levels != 3:
        raise UnsupportedShapeError(f"semantic pruning needs a 3-level taxonomy, got {d.taxonomy.num_levels}")


def _require_full_labels(d: Dataset):
    if not d.is_fully_labeled():
        raise InputError("pruning needs a fully labeled dataset")


def _apply_depths(d: Dataset, depths: Sequence[int]) -> Dataset:
    samples = []
    for s, depth in zip(d.samples, depths):
        samples.append(s if depth == s.label.deepest else s.with_label(s.label.truncated(int(depth))))
    return d.with_samples(samples)


def semantic_prune(d: Dataset, flags: CorrectnessFlags, seed: int = 0) -> Dataset:
    """
    Keep all three levels where both fine and subordinate predictions were
    correct, levels 1-2 where only the subordinate one was, level 1
    otherwise. Then, per finest class with fine-label removal rate r, drop
    the subordinate label from floor(r * m) of its m remaining two-level
    samples, picked in seeded order.
    """
    _require_three_levels(d)
    _require_full_labels(d)
    ids = set(s.id for s in d.samples)
    if set(flags.flags) != ids:
        raise InputError(
            f"flags cover {len(flags.flags)} ids, dataset has {len(ids)}; "
            f"{len(ids - set(flags.flags))} samples lack flags"
        )

    depths = np.empty(len(d), dtype=np.int64)
    for i, s in enumerate(d.samples):
        fine_ok, sub_ok = flags.flags[s.id]
        if fine_ok and sub_ok:
            depths[i] = 3
        elif sub_ok:
            depths[i] = 2
        else:
            depths[i] = 1

    rng = make_rng(seed, "pruning.semantic")
    leaves = d.labels()[:, 2]
    for leaf in np.unique(leaves):
        members = np.flatnonzero(leaves == leaf)
        removed_fine = int(np.sum(depths[members] < 3))
        two_level = members[depths[members] == 2]
        # integer floor of r * m with r = removed_fine / |members|
        extra = (removed_fine * len(two_level)) // len(members)
        if extra:
            chosen = rng.permutation(two_level)[:extra]
            depths[chosen] = 1

    pruned = _apply_depths(d, depths)
    logger.info("Semantic pruning histogram: %s", granularity_histogram(pruned))
    return pruned


def _stratified_quotas(class_sizes: np.ndarray, fractions: Sequence[Fraction], totals: List[int],
                       order: np.ndarray) -> np.ndarray:
    """
    Per-class counts a[l][c] of samples keeping depth >= l+1, nested across
    levels and summing exactly to totals[l]. Each class starts from its
    floored proportional share; the remainder is assigned in seeded class
    order.
    """
    L = len(fractions)
    quotas = np.zeros((L, len(class_sizes)), dtype=np.int64)
    quotas[0] = class_sizes
    lower = np.zeros(len(class_sizes), dtype=np.int64)
    for level in range(L - 1, 0, -1):
        k = fractions[level]
        base = np.asarray([(k.numerator * int(n)) // k.denominator for n in class_sizes], dtype=np.int64)
        a = np.maximum(base, lower)
        target = totals[level]
        while a.sum() > target:
            for c in order[::-1]:
                if a.sum() == target:
                    break
                if a[c] > lower[c]:
                    a[c] -= 1
        while a.sum() < target:
            for c in order:
                if a.sum() == target:
                    break
                if a[c] < class_sizes[c]:
                    a[c] += 1
        quotas[level] = a
        lower = a
    return quotas


def random_prune(d: Dataset, spec: PruneSpec, seed: int, stratify: bool = True) -> Dataset:
    """
    Exactly floor(k_L * n) samples keep all L levels and
    floor(k_l * n) - floor(k_{l+1} * n) samples stop at level l. With
    stratify on, every finest class receives its proportional share.
    """
    _require_full_labels(d)
    L = d.taxonomy.num_levels
    if len(spec.keep_fractions) != L:
        raise InputError(f"prune spec has {len(spec.keep_fractions)} levels, taxonomy has {L}")

    n = len(d)
    totals = [(k.numerator * n) // k.denominator for k in spec.keep_fractions]
    depths = np.ones(n, dtype=np.int64)
    rng = make_rng(seed, "pruning.random")

    if not stratify:
        ranks = np.empty(n, dtype=np.int64)
        ranks[rng.permutation(n)] = np.arange(n)
        for level in range(2, L + 1):
            depths[ranks < totals[level - 1]] = level
    else:
        leaves = d.labels()[:, L - 1]
        classes = np.unique(leaves)
        class_sizes = np.asarray([np.sum(leaves == c) for c in classes], dtype=np.int64)
        order = rng.permutation(len(classes))
        quotas = _stratified_quotas(class_sizes, spec.keep_fractions, totals, order)
        for ci, c in enumerate(classes):
            members = rng.permutation(np.flatnonzero(leaves == c))
            for level in range(2, L + 1):
                depths[members[:quotas[level - 1][ci]]] = level

    pruned = _apply_depths(d, depths)
    logger.info("Random pruning %s (stratify=%s) histogram: %s", spec, stratify, granularity_histogram(pruned))
    return pruned


def granularity_histogram(d: Dataset) -> Dict[int, int]:
    """Number of samples whose deepest labeled level is l, for l = 1..L"""
    deepest = d.deepest()
    return {level: int(np.sum(deepest == level)) for level in range(1, d.taxonomy.num_levels + 1)}


def supervision_table(d: Dataset, reference: Optional[Dataset] = None) -> pd.DataFrame:
    """
    Label availability per finest class: how many samples of the class stop
    at each depth, and how many keep their fine label. The finest class of
    pruned samples comes from the fully labeled reference (same ids).
    """
    source = d if reference is None else reference
    if not source.is_fully_labeled():
        raise InputError("supervision table needs a fully labeled dataset or reference")
    truth = source.by_id()
    L = d.taxonomy.num_levels
    rows = []
    for s in d.samples:
        if s.id not in truth:
            raise InputError(f"sample {s.id} missing from reference")
        rows.append({"fine_class": truth[s.id].label.labels[-1], "depth": s.label.deepest})
    frame = pd.DataFrame(rows, columns=["fine_class", "depth"])
    table = pd.crosstab(frame["fine_class"], frame["depth"])
    table = table.reindex(columns=range(1, L + 1), fill_value=0)
    table.columns = [f"depth_{level}" for level in range(1, L + 1)]
    table["fine_labels"] = table[f"depth_{L}"]
    return table.sort_values(["fine_labels"], kind="stable")
