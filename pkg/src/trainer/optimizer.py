"""
Optimizers and learning-rate schedule

SGD with momentum and Adam, both with decoupled weight decay. A parameter
whose gradient is None or identically zero in a step is left untouched:
no decay, no momentum carry-over, no Adam moment update.
"""
import logging
import math
from typing import Dict, List

import numpy as np

from src.diffcore import Tensor
from src.errors import InputError

logger = logging.getLogger(__name__)


def _has_signal(p: Tensor) -> bool:
    return p.grad is not None and bool(np.any(p.grad != 0.0))


class Optimizer:
    def __init__(self, params: List[Tensor], weight_decay: float = 0.0):
        self.params = list(params)
        self.weight_decay = float(weight_decay)
        self.steps = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> int:
        """Apply one update; returns how many parameters moved"""
        self.steps += 1
        moved = 0
        for i, p in enumerate(self.params):
            if not _has_signal(p):
                continue
            update = self._update(i, p.grad)
            p.assign(p.data * (1.0 - lr * self.weight_decay) - lr * update)
            moved += 1
        return moved

    def _update(self, i: int, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params: List[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        super().__init__(params, weight_decay)
        self.momentum = float(momentum)
        self._velocity: Dict[int, np.ndarray] = {}

    def _update(self, i: int, grad: np.ndarray) -> np.ndarray:
        v = self._velocity.get(i)
        v = grad.copy() if v is None else self.momentum * v + grad
        self._velocity[i] = v
        return v


class Adam(Optimizer):
    def __init__(self, params: List[Tensor], betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}
        # bias correction counts this parameter's own updates
        self._t: Dict[int, int] = {}

    def _update(self, i: int, grad: np.ndarray) -> np.ndarray:
        t = self._t.get(i, 0) + 1
        m = self.beta1 * self._m.get(i, np.zeros_like(grad)) + (1.0 - self.beta1) * grad
        v = self.beta2 * self._v.get(i, np.zeros_like(grad)) + (1.0 - self.beta2) * grad * grad
        self._m[i], self._v[i], self._t[i] = m, v, t
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(kind: str, params: List[Tensor], momentum: float, weight_decay: float) -> Optimizer:
    if kind == "sgd":
        return SGD(params, momentum=momentum, weight_decay=weight_decay)
    elif kind == "adam":
        return Adam(params, weight_decay=weight_decay)
    raise InputError(f"unknown optimizer '{kind}'")


def learning_rate(epoch: int, cfg) -> float:
    """Linear warmup over warmup_epochs, then cosine decay to 0 at the last epoch (or constant)"""
    base = cfg.learning_rate
    if epoch < cfg.warmup_epochs:
        return base * (epoch + 1) / cfg.warmup_epochs
    if not cfg.cosine_decay:
        return base
    span = max(cfg.epochs - cfg.warmup_epochs, 1)
    progress = (epoch - cfg.warmup_epochs) / span
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))
