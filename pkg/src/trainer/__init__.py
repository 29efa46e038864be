from src.trainer.augment import augment
from src.trainer.experiments import alpha_sweep, paired_differences, paired_seed_comparison
from src.trainer.memory_bank import MemoryBank, update_thresholds
from src.trainer.optimizer import SGD, Adam, build_optimizer, learning_rate
from src.trainer.trainer import EpochRecord, HierarchicalTrainer, active_terms, heldout_ids, train

__all__ = [
    "Adam",
    "EpochRecord",
    "HierarchicalTrainer",
    "MemoryBank",
    "SGD",
    "active_terms",
    "alpha_sweep",
    "augment",
    "build_optimizer",
    "heldout_ids",
    "learning_rate",
    "paired_differences",
    "paired_seed_comparison",
    "train",
    "update_thresholds",
]
