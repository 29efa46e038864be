from src.losses.objectives import (
    ACCEPT_NOTHING,
    NONE,
    AffinityGraphSet,
    HierLoss,
    LossBreakdown,
    PseudoLabelResult,
    build_affinity,
    combine,
    hier_loss,
    pseudo_label_loss,
    tacl_loss,
    text_loss,
)

__all__ = [
    "ACCEPT_NOTHING",
    "NONE",
    "AffinityGraphSet",
    "HierLoss",
    "LossBreakdown",
    "PseudoLabelResult",
    "build_affinity",
    "combine",
    "hier_loss",
    "pseudo_label_loss",
    "tacl_loss",
    "text_loss",
]
