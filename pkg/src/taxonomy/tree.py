"""
Taxonomy Module
L-level class trees, label paths and the ancestor/consistency queries used
by every other module
"""
import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import InputError
from src.seeding import make_rng

logger = logging.getLogger(__name__)

# Absent label at a level (JSON null on disk)
MISSING = -1


@dataclass(frozen=True)
class Violation:
    kind: str
    level: int
    class_idx: Optional[int] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "level": self.level, "class_idx": self.class_idx, "detail": self.detail}


@dataclass(frozen=True)
class Taxonomy:
    """
    An L-level forest. Levels are numbered 1 (coarsest) .. L (finest),
    classes are dense 0-based indices per level.

    parents[k] maps a class at level k+2 to its parent at level k+1.
    """
    level_sizes: Tuple[int, ...]
    parents: Tuple[Tuple[int, ...], ...]
    names: Optional[Tuple[Tuple[str, ...], ...]] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "level_sizes", tuple(int(s) for s in self.level_sizes))
        object.__setattr__(self, "parents", tuple(tuple(int(p) for p in row) for row in self.parents))
        if self.names is not None:
            object.__setattr__(self, "names", tuple(tuple(str(n) for n in row) for row in self.names))
        if len(self.level_sizes) < 1:
            raise InputError("taxonomy needs at least one level")
        if len(self.parents) != len(self.level_sizes) - 1:
            raise InputError(
                f"expected {len(self.level_sizes) - 1} parent tables, got {len(self.parents)}"
            )

    @property
    def num_levels(self) -> int:
        return len(self.level_sizes)

    def size(self, level: int) -> int:
        self._check_level(level)
        return self.level_sizes[level - 1]

    def parent_of(self, level: int, class_idx: int) -> int:
        """Parent at level-1 of class_idx at level (level >= 2)"""
        if level < 2:
            raise InputError(f"level {level} has no parent level")
        self._check_class(level, class_idx)
        return self.parents[level - 2][class_idx]

    def children_of(self, level: int, class_idx: int) -> List[int]:
        """Children at level+1 of class_idx at level"""
        self._check_class(level, class_idx)
        if level == self.num_levels:
            return []
        return [c for c, p in enumerate(self.parents[level - 1]) if p == class_idx]

    def parent_array(self, level: int) -> np.ndarray:
        """Parent table of a level >= 2 as an int array"""
        if level < 2:
            raise InputError(f"level {level} has no parent level")
        self._check_level(level)
        return np.asarray(self.parents[level - 2], dtype=np.int64)

    def leaf_path(self, leaf: int) -> List[int]:
        """Full root-to-leaf label list for a finest-level class"""
        return [ancestor_at(self, self.num_levels, leaf, level) for level in range(1, self.num_levels + 1)]

    def all_paths(self) -> List[List[int]]:
        """Every root-to-leaf path, ordered by leaf index"""
        return [self.leaf_path(leaf) for leaf in range(self.level_sizes[-1])]

    def _check_level(self, level: int):
        if not 1 <= level <= self.num_levels:
            raise InputError(f"level {level} out of range 1..{self.num_levels}")

    def _check_class(self, level: int, class_idx: int):
        self._check_level(level)
        if not 0 <= class_idx < self.level_sizes[level - 1]:
            raise InputError(
                f"class {class_idx} out of range at level {level} (size {self.level_sizes[level - 1]})"
            )

    def to_dict(self) -> dict:
        data = {"level_sizes": list(self.level_sizes), "parents": [list(row) for row in self.parents]}
        if self.names is not None:
            data["names"] = [list(row) for row in self.names]
        return data

    @classmethod
    def from_dict(cls, data: dict, path: Optional[str] = None) -> "Taxonomy":
        if not isinstance(data, dict) or "level_sizes" not in data or "parents" not in data:
            raise InputError("taxonomy object needs 'level_sizes' and 'parents'", path=path)
        try:
            return cls(
                level_sizes=tuple(data["level_sizes"]),
                parents=tuple(tuple(row) for row in data["parents"]),
                names=tuple(tuple(row) for row in data["names"]) if data.get("names") else None,
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, InputError):
                raise InputError(str(e), path=path)
            raise InputError(f"malformed taxonomy: {e}", path=path)


@dataclass(frozen=True)
class LabelPath:
    """
    Partial hierarchical label: entry l-1 holds the level-l class or MISSING.
    Present labels always form a prefix starting at level 1.
    """
    labels: Tuple[int, ...]

    def __post_init__(self):
        labels = tuple(MISSING if v is None else int(v) for v in self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels or labels[0] == MISSING:
            raise InputError("the level-1 label is never missing")
        seen_missing = False
        for value in labels:
            if value == MISSING:
                seen_missing = True
            elif seen_missing:
                raise InputError(f"label path {list(labels)} breaks the prefix property")
            elif value < 0:
                raise InputError(f"negative class index in label path {list(labels)}")

    @property
    def deepest(self) -> int:
        """Deepest labeled level S_x (1-based)"""
        return sum(1 for v in self.labels if v != MISSING)

    def truncated(self, depth: int) -> "LabelPath":
        """Same path with every level below depth marked MISSING"""
        if not 1 <= depth <= len(self.labels):
            raise InputError(f"depth {depth} out of range 1..{len(self.labels)}")
        return LabelPath(tuple(v if i < depth else MISSING for i, v in enumerate(self.labels)))

    def to_json(self) -> List[Optional[int]]:
        return [None if v == MISSING else v for v in self.labels]


def validate(t: Taxonomy) -> List[Violation]:
    """
    Report every structural violation of a taxonomy. An empty list means
    the taxonomy is valid.
    """
    violations = []
    for level, size in enumerate(t.level_sizes, start=1):
        if size <= 0:
            violations.append(Violation("nonpositive level size", level, None, f"size {size}"))

    for level in range(2, t.num_levels + 1):
        table = t.parents[level - 2]
        size = t.level_sizes[level - 1]
        parent_size = t.level_sizes[level - 2]
        if len(table) != size:
            violations.append(Violation(
                "parent table size mismatch", level, None, f"{len(table)} entries for {size} classes"
            ))
        for class_idx, parent in enumerate(table):
            if not 0 <= parent < parent_size:
                violations.append(Violation(
                    "parent out of range", level, class_idx, f"parent {parent} not in 0..{parent_size - 1}"
                ))

    for level in range(1, t.num_levels):
        has_child = set(p for p in t.parents[level - 1])
        for class_idx in range(max(t.level_sizes[level - 1], 0)):
            if class_idx not in has_child:
                violations.append(Violation("childless internal node", level, class_idx, "no children"))

    if t.names is not None:
        for level, (row, size) in enumerate(zip(t.names, t.level_sizes), start=1):
            if len(row) != size:
                violations.append(Violation("name list size mismatch", level, None, f"{len(row)} names"))

    return violations


def ancestor_at(t: Taxonomy, level_from: int, class_idx: int, level_to: int) -> int:
    """Follow parent_of from level_from up to level_to"""
    if not 1 <= level_to <= level_from <= t.num_levels:
        raise InputError(f"need 1 <= level_to ({level_to}) <= level_from ({level_from}) <= {t.num_levels}")
    t._check_class(level_from, class_idx)
    current = class_idx
    for level in range(level_from, level_to, -1):
        current = t.parent_of(level, current)
    return current


def is_consistent_path(t: Taxonomy, pred: Sequence[int]) -> bool:
    """True iff every adjacent pair of the L-tuple is a parent/child edge"""
    if len(pred) != t.num_levels:
        raise InputError(f"prediction has {len(pred)} levels, taxonomy has {t.num_levels}")
    for level, class_idx in enumerate(pred, start=1):
        t._check_class(level, int(class_idx))
    for level in range(2, t.num_levels + 1):
        if t.parents[level - 2][int(pred[level - 1])] != int(pred[level - 2]):
            return False
    return True


def check_label_path(t: Taxonomy, path: LabelPath) -> List[Violation]:
    """Violations of a label path against a taxonomy (range and on-path checks)"""
    violations = []
    if len(path.labels) != t.num_levels:
        return [Violation("label path length", 0, None, f"{len(path.labels)} levels for {t.num_levels}")]
    for level in range(1, path.deepest + 1):
        value = path.labels[level - 1]
        if not 0 <= value < t.level_sizes[level - 1]:
            violations.append(Violation("label out of range", level, value))
        elif level >= 2 and t.parents[level - 2][value] != path.labels[level - 2]:
            violations.append(Violation("label off path", level, value, f"parent is not {path.labels[level - 2]}"))
    return violations


def random_taxonomy(level_sizes: Sequence[int], seed: int) -> Taxonomy:
    """
    A valid random tree with the given sizes. Every internal node gets at
    least one child, so sizes must be non-decreasing with depth.
    """
    sizes = [int(s) for s in level_sizes]
    if not sizes or any(s <= 0 for s in sizes):
        raise InputError(f"level sizes must be positive, got {sizes}")
    for coarse, fine in zip(sizes, sizes[1:]):
        if fine < coarse:
            raise InputError(f"level sizes must be non-decreasing to avoid childless nodes, got {sizes}")

    rng = make_rng(seed, "taxonomy.random")
    parents = []
    for coarse, fine in zip(sizes, sizes[1:]):
        # one guaranteed child per parent, the rest drawn uniformly
        table = np.concatenate([np.arange(coarse), rng.integers(0, coarse, size=fine - coarse)])
        table = np.sort(table)
        parents.append(tuple(int(p) for p in table))
    return Taxonomy(level_sizes=tuple(sizes), parents=tuple(parents))


def parse_sizes(text: str) -> List[int]:
    """Parse "4-12-48" into [4, 12, 48]"""
    try:
        sizes = [int(part) for part in text.split("-")]
    except ValueError:
        raise InputError(f"cannot parse level sizes '{text}'")
    return sizes


def load_taxonomy(path: str) -> Taxonomy:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InputError("file not found", path=path)
    except json.JSONDecodeError as e:
        raise InputError(f"malformed JSON: {e.msg}", path=path, line=e.lineno)
    t = Taxonomy.from_dict(data, path=path)
    logger.debug("Loaded taxonomy %s with sizes %s", path, t.level_sizes)
    return t


def save_taxonomy(t: Taxonomy, path: str):
    with open(path, "w") as f:
        f.write(taxonomy_to_json(t))


def taxonomy_to_json(t: Taxonomy) -> str:
    return json.dumps(t.to_dict(), sort_keys=True) + "\n"
