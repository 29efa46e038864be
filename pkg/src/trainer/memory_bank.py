"""
Confidence Memory Bank
Ring buffers of recent max-softmax confidences on unlabeled entries, one
per level, and the percentile threshold schedule read from them
"""
import logging
from collections import deque
from typing import List, Sequence

import numpy as np

from src.errors import InputError
from src.losses.objectives import ACCEPT_NOTHING

logger = logging.getLogger(__name__)


class MemoryBank:
    """Per-level bounded FIFO of confidences"""

    def __init__(self, num_levels: int, capacity: int):
        if num_levels < 1 or capacity < 1:
            raise InputError(f"memory bank needs positive levels and capacity, got {num_levels}, {capacity}")
        self.capacity = int(capacity)
        self._levels: List[deque] = [deque(maxlen=self.capacity) for _ in range(num_levels)]

    @property
    def num_levels(self) -> int:
        return len(self._levels)

    def __len__(self) -> int:
        return sum(len(level) for level in self._levels)

    def size(self, level: int) -> int:
        return len(self._levels[level - 1])

    def push(self, confidences: Sequence[np.ndarray]):
        """Append one batch of confidences per level, oldest values fall out"""
        if len(confidences) != self.num_levels:
            raise InputError(f"{len(confidences)} confidence arrays for {self.num_levels} levels")
        for buffer, values in zip(self._levels, confidences):
            buffer.extend(float(v) for v in np.ravel(values))

    def values(self, level: int) -> np.ndarray:
        return np.fromiter(self._levels[level - 1], dtype=np.float64)

    def percentile(self, level: int, q: float) -> float:
        """
        Nearest-rank percentile: the smallest banked value whose empirical
        CDF reaches q/100 (q = 0 gives the minimum). An empty bank gives
        ACCEPT_NOTHING.
        """
        values = self.values(level)
        if values.size == 0:
            return ACCEPT_NOTHING
        return float(np.percentile(values, q, method="inverted_cdf"))


def keep_percent(epoch: int, cfg) -> float:
    """K(epoch): linear from k_start at epoch 0 to k_end at epoch == epochs"""
    return cfg.k_start + (cfg.k_end - cfg.k_start) * epoch / cfg.epochs


def update_thresholds(bank: MemoryBank, epoch: int, cfg) -> List[float]:
    """Per-level threshold = (100 - K)th percentile of the banked confidences"""
    k = float(np.clip(keep_percent(epoch, cfg), 0.0, 100.0))
    thresholds = [bank.percentile(level, 100.0 - k) for level in range(1, bank.num_levels + 1)]
    logger.debug("Epoch %d keep %.1f%% thresholds %s", epoch, k, thresholds)
    return thresholds
