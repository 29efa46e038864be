"""
Hierarchical Trainer
Optimization loop for the hier-only, textattr, taxonssl and combined
regimes, with per-epoch held-out evaluation and a JSON Lines step log
"""
import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src import diffcore as dc
from src.config_loader import TrainConfig
from src.data.dataset import Dataset, stratified_split
from src.errors import InputError, NumericError
from src.eval.metrics import PredictionMatrix, evaluate
from src.losses.objectives import (
    LossBreakdown,
    build_affinity,
    combine,
    hier_loss,
    pseudo_label_loss,
    tacl_loss,
    text_loss,
)
from src.model.hier_classifier import ModelParams, forward, init, predict
from src.seeding import make_rng
from src.taxonomy.tree import MISSING, Taxonomy
from src.trainer.augment import augment
from src.trainer.memory_bank import MemoryBank, update_thresholds
from src.trainer.optimizer import build_optimizer, learning_rate

logger = logging.getLogger(__name__)


def active_terms(cfg: TrainConfig, epoch: int) -> Tuple[bool, bool]:
    """(text alignment on, taxonomy SSL on) for this epoch"""
    if cfg.regime == "hier-only":
        return False, False
    if cfg.regime == "textattr":
        return True, False
    if cfg.regime == "taxonssl":
        return False, True
    if cfg.stage_switch_epoch is None:
        return True, True
    first_stage = epoch < cfg.stage_switch_epoch
    text_first = cfg.stage_order == "textattr-first"
    return (first_stage == text_first), (first_stage != text_first)


def _guard(term: str, fn: Callable, *args):
    try:
        return fn(*args)
    except NumericError as e:
        raise NumericError(f"non-finite {term} loss ({e})", op=term) from e


@dataclass
class StepResult:
    breakdown: LossBreakdown
    accepted_per_level: List[int]
    moved: int


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    active_terms: List[str]
    losses: Dict[str, float]
    identity_ok: bool
    steps: int
    pseudo_labels_accepted: List[int]
    heldout: Optional[dict] = None
    train: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "active_terms": list(self.active_terms),
            "losses": dict(self.losses),
            "identity_ok": self.identity_ok,
            "steps": self.steps,
            "pseudo_labels_accepted": list(self.pseudo_labels_accepted),
            "heldout": self.heldout,
            "train": self.train,
        }


class HierarchicalTrainer:
    """
    Owns the model parameters, optimizer state, confidence memory bank and
    the augmentation stream for one training run.
    """

    def __init__(self, t: Taxonomy, cfg: TrainConfig, feature_dim: int, text_dim: Optional[int] = None):
        self.taxonomy = t
        self.cfg = cfg.validate()
        self.params: ModelParams = init(t, feature_dim, cfg.hidden_dims, text_dim=text_dim,
                                        seed=cfg.seed, head_layers=cfg.head_layers)
        self.optimizer = build_optimizer(cfg.optimizer, self.params.parameters(), cfg.momentum, cfg.weight_decay)
        self.bank = MemoryBank(t.num_levels, cfg.memory_bank_size)
        self._augment_rng = make_rng(cfg.seed, "trainer.augment")

    def step(self, x: np.ndarray, labels: np.ndarray, text: Optional[np.ndarray], epoch: int, lr: float) -> StepResult:
        cfg = self.cfg
        use_text, use_ssl = active_terms(cfg, epoch)
        if use_text and text is None:
            raise InputError("text alignment needs text embeddings on every training sample")

        weak = augment(x, "weak", self._augment_rng, cfg.weak_noise, cfg.strong_noise, cfg.strong_dropout)
        out = _guard("forward", forward, self.params, weak)
        hier = _guard("hier", hier_loss, out, labels)
        text_term = _guard("text", text_loss, out.projected, text, cfg.tau) if use_text else None

        pl_term = tacl_term = None
        accepted = [0] * self.taxonomy.num_levels
        if use_ssl:
            strong = augment(x, "strong", self._augment_rng, cfg.weak_noise, cfg.strong_noise, cfg.strong_dropout)
            strong_out = _guard("forward", forward, self.params, strong)
            thresholds = update_thresholds(self.bank, epoch, cfg)
            pseudo = _guard("pl", pseudo_label_loss, [l.data for l in out.logits_per_level],
                            strong_out.logits_per_level, thresholds, labels)
            self.bank.push(pseudo.confidences)
            graphs = build_affinity(pseudo.pseudo_labels)
            tacl_term = _guard("tacl", tacl_loss, strong_out.projected, graphs, cfg.tacl_temperature, cfg.tacl_form)
            pl_term = pseudo.loss
            accepted = pseudo.accepted_per_level

        total, breakdown = _guard("total", combine, hier, text_term, pl_term, tacl_term,
                                  cfg.alpha if use_text else 0.0,
                                  cfg.lambda_pl if use_ssl else 0.0,
                                  cfg.lambda_tacl if use_ssl else 0.0)
        self.optimizer.zero_grad()
        dc.backward(total)
        moved = self.optimizer.step(lr)
        return StepResult(breakdown=breakdown, accepted_per_level=list(accepted), moved=moved)

    def evaluate_rows(self, features: np.ndarray, truth: np.ndarray) -> Optional[dict]:
        if len(features) == 0:
            return None
        preds = PredictionMatrix.from_logits(predict(self.params, features))
        return evaluate(preds, truth, self.taxonomy).to_dict()

    def fit(self, d: Dataset, reference: Optional[Dataset] = None,
            step_log_path: Optional[str] = None) -> List[EpochRecord]:
        cfg = self.cfg
        if len(d) == 0:
            raise InputError("cannot train on an empty dataset")
        if len(d) < 2:
            raise InputError("training needs at least 2 samples to hold some out")
        if d.taxonomy != self.taxonomy:
            raise InputError("dataset taxonomy does not match the training taxonomy")

        train_idx, held_idx = stratified_split(d, cfg.holdout_fraction, cfg.seed, reference)
        features, labels, text = d.features(), d.labels(), d.text_embeddings()
        truth = labels
        if reference is not None:
            ref = reference.by_id()
            truth = np.asarray([ref[s.id].label.labels for s in d.samples], dtype=np.int64)
        held_full = held_idx[np.all(truth[held_idx] != MISSING, axis=1)]
        train_full = train_idx[np.all(labels[train_idx] != MISSING, axis=1)]
        logger.info("Training %s on %d samples, holding out %d (%d fully labeled)",
                    cfg.regime, len(train_idx), len(held_idx), len(held_full))

        shuffle_rng = make_rng(cfg.seed, "trainer.shuffle")
        history: List[EpochRecord] = []
        log_file = open(step_log_path, "w") if step_log_path else None
        try:
            for epoch in range(cfg.epochs):
                lr = learning_rate(epoch, cfg)
                order = shuffle_rng.permutation(train_idx)
                results = []
                for start in range(0, len(order), cfg.batch_size):
                    batch = order[start:start + cfg.batch_size]
                    results.append(self.step(features[batch], labels[batch],
                                             text[batch] if text is not None else None, epoch, lr))
                record = self._epoch_record(epoch, lr, results)
                record.heldout = self.evaluate_rows(features[held_full], truth[held_full])
                record.train = self.evaluate_rows(features[train_full], labels[train_full])
                history.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
                logger.info("Epoch %d/%d lr=%.2e total=%.4f heldout_fpa=%s heldout_tice=%s",
                            epoch + 1, cfg.epochs, lr, record.losses["total"],
                            _fmt(record.heldout, "fpa"), _fmt(record.heldout, "tice"))
        finally:
            if log_file is not None:
                log_file.close()
        return history

    def _epoch_record(self, epoch: int, lr: float, results: List[StepResult]) -> EpochRecord:
        use_text, use_ssl = active_terms(self.cfg, epoch)
        terms = ["hier"] + (["text"] if use_text else []) + (["pl", "tacl"] if use_ssl else [])
        frame = pd.DataFrame([r.breakdown.to_dict() for r in results]).drop(columns=["hier_per_level"])
        losses = {k: float(v) for k, v in frame[["hier", "text", "pl", "tacl", "total"]].mean().items()}
        accepted = np.sum([r.accepted_per_level for r in results], axis=0).astype(int).tolist()
        return EpochRecord(
            epoch=epoch,
            lr=lr,
            active_terms=terms,
            losses=losses,
            identity_ok=all(r.breakdown.identity_holds() for r in results),
            steps=len(results),
            pseudo_labels_accepted=accepted,
        )


def _fmt(report: Optional[dict], key: str) -> str:
    return "n/a" if report is None else f"{report[key]:.4f}"


def heldout_ids(d: Dataset, cfg: TrainConfig, reference: Optional[Dataset] = None) -> List[int]:
    """Ids of the samples fit() holds out of d under cfg"""
    _, held = stratified_split(d, cfg.holdout_fraction, cfg.seed, reference)
    return [int(d.samples[i].id) for i in held]


def train(d: Dataset, t: Taxonomy, cfg: TrainConfig, reference: Optional[Dataset] = None,
          step_log_path: Optional[str] = None) -> Tuple[ModelParams, List[EpochRecord]]:
    """
    Train a hierarchical classifier on d under cfg's regime. reference is
    the fully labeled version of d (same ids) and supplies held-out truths
    when d is pruned; without it only fully labeled held-out samples count.
    """
    if len(d) == 0:
        raise InputError("cannot train on an empty dataset")
    trainer = HierarchicalTrainer(t, cfg, d.feature_dim, text_dim=d.text_dim)
    history = trainer.fit(d, reference=reference, step_log_path=step_log_path)
    return trainer.params, history
