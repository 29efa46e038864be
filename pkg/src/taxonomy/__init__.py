from src.taxonomy.tree import (
    MISSING,
    LabelPath,
    Taxonomy,
    Violation,
    ancestor_at,
    check_label_path,
    is_consistent_path,
    load_taxonomy,
    random_taxonomy,
    save_taxonomy,
    validate,
)

__all__ = [
    "MISSING",
    "LabelPath",
    "Taxonomy",
    "Violation",
    "ancestor_at",
    "check_label_path",
    "is_consistent_path",
    "load_taxonomy",
    "random_taxonomy",
    "save_taxonomy",
    "validate",
]
