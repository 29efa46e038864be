"""
Training Objectives
Masked hierarchical cross-entropy, image-to-text contrastive alignment,
pseudo-label affinity graphs, the taxonomy-aligned contrastive loss and the
pseudo-label loss, all built on diffcore so they are differentiable
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.special import softmax

from src import diffcore as dc
from src.diffcore import Tensor
from src.errors import InputError
from src.model.hier_classifier import ForwardOutput
from src.taxonomy.tree import MISSING, LabelPath

logger = logging.getLogger(__name__)

# below-threshold pseudo-label
NONE = MISSING

# threshold above every confidence; what an empty memory bank yields
ACCEPT_NOTHING = float("inf")

TACL_FORMS = ("printed", "supcon")

Labels = Union[np.ndarray, Sequence[LabelPath]]


def label_array(labels: Labels, num_levels: int) -> np.ndarray:
    """(n, L) int matrix from LabelPaths or an existing matrix"""
    if isinstance(labels, np.ndarray):
        matrix = labels.astype(np.int64)
    else:
        matrix = np.asarray([p.labels for p in labels], dtype=np.int64).reshape(len(labels), -1)
    if matrix.ndim != 2 or matrix.shape[1] != num_levels:
        raise InputError(f"labels have shape {matrix.shape}, expected (n, {num_levels})")
    return matrix


def _zero_like(t: Tensor) -> Tensor:
    """A 0 scalar wired to t so backward reaches it with zero gradient"""
    return dc.scale(dc.sum(t), 0.0)


@dataclass
class HierLoss:
    loss: Tensor
    per_level: List[float]
    labeled_per_level: List[int]


def hier_loss(out: ForwardOutput, labels: Labels) -> HierLoss:
    """
    Sum over levels of the mean cross-entropy over samples labeled at that
    level. A level without labeled samples contributes exactly 0.
    """
    L = len(out.logits_per_level)
    matrix = label_array(labels, L)
    n = out.logits_per_level[0].shape[0]
    if matrix.shape[0] != n:
        raise InputError(f"{matrix.shape[0]} labels for a batch of {n}")

    total = None
    per_level, counts = [], []
    for level, logits in enumerate(out.logits_per_level):
        column = matrix[:, level]
        present = column != MISSING
        width = logits.shape[1]
        if np.any(column[present] < 0) or np.any(column[present] >= width):
            raise InputError(f"label out of range at level {level + 1} (width {width})")
        targets = np.where(present, column, 0)
        nll = dc.scale(dc.pick(dc.row_softmax_log(logits), targets), -1.0)
        term = dc.masked_mean(nll, present)
        per_level.append(term.item())
        counts.append(int(present.sum()))
        total = term if total is None else dc.add(total, term)
    return HierLoss(loss=total, per_level=per_level, labeled_per_level=counts)


def text_loss(projected: Tensor, text_embeddings: np.ndarray, tau: float) -> Tensor:
    """
    -(1/N) sum_i log softmax_j(cos(z_i^v, z_j^t) / tau)[i]: image-to-text
    direction only, the denominator runs over all text rows including i.
    """
    if tau <= 0:
        raise InputError(f"temperature tau must be positive, got {tau}")
    text = np.asarray(text_embeddings, dtype=np.float64)
    n = projected.shape[0]
    if n == 0:
        raise InputError("text loss on an empty batch")
    if text.shape != projected.shape:
        raise InputError(f"text embeddings {text.shape} do not match projections {projected.shape}")
    norms = np.linalg.norm(text, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise InputError("text embeddings must be unit-norm")
    sims = dc.scale(dc.cosine_similarity_matrix(projected, dc.tensor(text)), 1.0 / tau)
    matched = dc.pick(dc.row_softmax_log(sims), np.arange(n))
    return dc.scale(dc.sum(matched), -1.0 / n)


@dataclass
class AffinityGraphSet:
    per_level: List[np.ndarray]
    conjunction: np.ndarray
    pseudo_labels: List[np.ndarray]

    @property
    def num_levels(self) -> int:
        return len(self.per_level)


def build_affinity(pseudo_labels: Sequence[np.ndarray]) -> AffinityGraphSet:
    """
    W^l[i, j] = 1 iff samples i and j both have a level-l label and the
    labels agree; W is the conjunction over all levels.
    """
    labels = [np.asarray(level, dtype=np.int64) for level in pseudo_labels]
    if not labels:
        raise InputError("affinity needs at least one level")
    n = labels[0].shape[0]
    if any(level.shape != (n,) for level in labels):
        raise InputError("every level needs one pseudo-label per sample")
    per_level = []
    for level in labels:
        exists = level != NONE
        per_level.append((level[:, None] == level[None, :]) & exists[:, None] & exists[None, :])
    conjunction = np.logical_and.reduce(per_level)
    return AffinityGraphSet(per_level=per_level, conjunction=conjunction, pseudo_labels=labels)


def tacl_loss(projected: Tensor, graphs: AffinityGraphSet, t: float, form: str = "printed") -> Tensor:
    """
    Taxonomy-aligned contrastive loss over unit-norm projections with
    similarities s_ij = g_i . g_j and self-pairs excluded.

    printed: per anchor -(L / P_i) * log(sum_pos e^{s/t} / sum_neg e^{s/t});
    anchors need at least one positive and one negative.
    supcon: per anchor -(1/P_i) sum_pos (s_ij/t - log sum_{k != i} e^{s_ik/t}).

    The batch loss is the mean over contributing anchors; the others add 0.
    For the printed form this departs from a mean over every anchor with a
    positive: an anchor whose positives cover the whole batch has an empty
    negative sum (infinite log ratio) and is left out of the mean.
    """
    if t <= 0:
        raise InputError(f"temperature t must be positive, got {t}")
    if form not in TACL_FORMS:
        raise InputError(f"tacl form must be one of {TACL_FORMS}, got '{form}'")
    n = projected.shape[0]
    W = np.asarray(graphs.conjunction, dtype=bool)
    if W.shape != (n, n):
        raise InputError(f"affinity {W.shape} does not match batch of {n}")

    off_diagonal = ~np.eye(n, dtype=bool)
    positives = W & off_diagonal
    negatives = ~W & off_diagonal
    pos_counts = positives.sum(axis=1)
    if form == "printed":
        valid = (pos_counts > 0) & (negatives.sum(axis=1) > 0)
    else:
        valid = pos_counts > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        return _zero_like(projected)

    logits = dc.scale(dc.matmul(projected, dc.transpose(projected)), 1.0 / t)
    safe_counts = np.where(valid, pos_counts, 1)
    if form == "printed":
        ratio = dc.sub(dc.row_masked_logsumexp(logits, positives & valid[:, None]),
                       dc.row_masked_logsumexp(logits, negatives & valid[:, None]))
        coef = np.where(valid, -float(graphs.num_levels) / safe_counts, 0.0)
        per_anchor = dc.mul(ratio, coef)
    else:
        weights = (positives & valid[:, None]) / safe_counts[:, None]
        pos_mean = dc.sum(dc.mul(logits, weights), axis=1)
        log_norm = dc.row_masked_logsumexp(logits, off_diagonal & valid[:, None])
        per_anchor = dc.scale(dc.sub(pos_mean, log_norm), -1.0)
    return dc.scale(dc.sum(per_anchor), 1.0 / n_valid)


@dataclass
class PseudoLabelResult:
    loss: Tensor
    per_level: List[float]
    pseudo_labels: List[np.ndarray]
    accepted_per_level: List[int]
    # max weak-view probability of every unlabeled entry, per level
    confidences: List[np.ndarray] = field(default_factory=list)


def pseudo_label_loss(weak_logits: Sequence, strong_logits: Sequence[Tensor], thresholds: Sequence[float],
                      labels: Labels) -> PseudoLabelResult:
    """
    For each (sample, level) without a label, the weak view's argmax
    becomes a target for the strong view when its softmax confidence
    reaches the level threshold. ACCEPT_NOTHING accepts nothing; a threshold
    of 1.0 still accepts confidences that have saturated to 1.0.
    Per level: mean cross-entropy over accepted entries, summed over
    levels. Labeled entries pass their true label to the pseudo-label record.
    """
    L = len(strong_logits)
    if len(weak_logits) != L or len(thresholds) != L:
        raise InputError("weak logits, strong logits and thresholds need one entry per level")
    for level, thr in enumerate(thresholds, start=1):
        if thr != ACCEPT_NOTHING and not 0.0 <= thr <= 1.0:
            raise InputError(f"threshold {thr} at level {level} outside [0, 1]")
    matrix = label_array(labels, L)
    n = matrix.shape[0]

    total = None
    per_level, accepted_counts, records, confidences = [], [], [], []
    for level in range(L):
        weak = weak_logits[level].data if isinstance(weak_logits[level], Tensor) else np.asarray(weak_logits[level])
        strong = strong_logits[level]
        if weak.shape != strong.shape or weak.shape[0] != n:
            raise InputError(f"weak {weak.shape} and strong {strong.shape} logits misaligned at level {level + 1}")
        probs = softmax(weak, axis=1)
        confidence = probs.max(axis=1)
        guess = probs.argmax(axis=1)
        labeled = matrix[:, level] != MISSING
        accepted = ~labeled & (confidence >= thresholds[level])

        nll = dc.scale(dc.pick(dc.row_softmax_log(strong), np.where(accepted, guess, 0)), -1.0)
        term = dc.masked_mean(nll, accepted)
        total = term if total is None else dc.add(total, term)

        record = np.full(n, NONE, dtype=np.int64)
        record[labeled] = matrix[labeled, level]
        record[accepted] = guess[accepted]
        records.append(record)
        per_level.append(term.item())
        accepted_counts.append(int(accepted.sum()))
        confidences.append(confidence[~labeled])
    return PseudoLabelResult(loss=total, per_level=per_level, pseudo_labels=records,
                             accepted_per_level=accepted_counts, confidences=confidences)


@dataclass
class LossBreakdown:
    hier: float
    text: float
    tacl: float
    pl: float
    total: float
    alpha: float
    lambda_pl: float
    lambda_tacl: float
    hier_per_level: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "hier": self.hier, "text": self.text, "tacl": self.tacl, "pl": self.pl, "total": self.total,
            "alpha": self.alpha, "lambda_pl": self.lambda_pl, "lambda_tacl": self.lambda_tacl,
            "hier_per_level": list(self.hier_per_level),
        }

    def identity_holds(self) -> bool:
        return self.total == self.hier + self.alpha * self.text + self.lambda_pl * self.pl + self.lambda_tacl * self.tacl


def combine(hier: HierLoss, text: Optional[Tensor], pl: Optional[Tensor], tacl: Optional[Tensor],
            alpha: float, lambda_pl: float, lambda_tacl: float):
    """
    total = hier + alpha * text + lambda_pl * pl + lambda_tacl * tacl,
    accumulated left to right so the float breakdown matches the tensor
    value bit for bit. Absent terms count as 0.
    """
    zero = dc.tensor(0.0)
    text = text if text is not None else zero
    pl = pl if pl is not None else zero
    tacl = tacl if tacl is not None else zero
    total = dc.add(dc.add(dc.add(hier.loss, dc.scale(text, alpha)), dc.scale(pl, lambda_pl)),
                   dc.scale(tacl, lambda_tacl))
    breakdown = LossBreakdown(
        hier=hier.loss.item(), text=text.item(), tacl=tacl.item(), pl=pl.item(), total=total.item(),
        alpha=float(alpha), lambda_pl=float(lambda_pl), lambda_tacl=float(lambda_tacl),
        hier_per_level=list(hier.per_level),
    )
    return total, breakdown
