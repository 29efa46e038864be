from src.pruning.label_pruning import (
    CorrectnessFlags,
    PruneSpec,
    flags_from_scores,
    granularity_histogram,
    parse_prune_spec,
    random_prune,
    read_flags,
    read_scores,
    semantic_prune,
    supervision_table,
)

__all__ = [
    "CorrectnessFlags",
    "PruneSpec",
    "flags_from_scores",
    "granularity_histogram",
    "parse_prune_spec",
    "random_prune",
    "read_flags",
    "read_scores",
    "semantic_prune",
    "supervision_table",
]
