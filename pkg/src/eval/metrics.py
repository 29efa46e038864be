"""
Hierarchical Evaluation
Level accuracy, full-path accuracy (FPA), tree-based inconsistency error
(TICE), consistency-based stopping inference and class-wise breakdowns
"""
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import InputError
from src.taxonomy.tree import MISSING, LabelPath, Taxonomy

logger = logging.getLogger(__name__)


@dataclass
class PredictionMatrix:
    """Per-level argmax labels (n, L), optionally with the logits they came from"""
    labels: np.ndarray
    logits: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise InputError(f"prediction labels must be (n, L), got shape {self.labels.shape}")

    @classmethod
    def from_logits(cls, logits: Sequence[np.ndarray]) -> "PredictionMatrix":
        logits = [np.asarray(l, dtype=np.float64) for l in logits]
        if not logits:
            raise InputError("no logits given")
        labels = np.stack([np.argmax(l, axis=1) for l in logits], axis=1) if len(logits[0]) else np.zeros((0, len(logits)), dtype=np.int64)
        return cls(labels=labels, logits=logits)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def check(self, t: Taxonomy):
        if self.labels.shape[1] != t.num_levels:
            raise InputError(f"predictions have {self.labels.shape[1]} levels, taxonomy has {t.num_levels}")
        for level in range(t.num_levels):
            column = self.labels[:, level]
            if column.size and (column.min() < 0 or column.max() >= t.level_sizes[level]):
                raise InputError(f"predicted class out of range at level {level + 1}")


@dataclass
class StoppedPredictions:
    """Stop depth per sample and the emitted prefix (MISSING beyond it)"""
    depth: np.ndarray
    labels: np.ndarray

    def paths(self) -> List[LabelPath]:
        return [LabelPath(tuple(row)) for row in self.labels]


@dataclass
class EvalReport:
    level_accuracy: List[float]
    fpa: float
    tice: float
    n: int
    stop_histogram: Optional[Dict[int, int]] = None
    stop_correctness: Optional[Dict[int, Optional[float]]] = None

    def to_dict(self) -> dict:
        data = {
            "n": self.n,
            "fpa": self.fpa,
            "tice": self.tice,
            "level_accuracy": {str(level): acc for level, acc in enumerate(self.level_accuracy, start=1)},
        }
        if self.stop_histogram is not None:
            data["stop_histogram"] = {str(k): v for k, v in self.stop_histogram.items()}
            data["stop_correctness"] = {str(k): v for k, v in self.stop_correctness.items()}
        return data


TruthLike = Union[np.ndarray, Sequence[LabelPath]]


def _truth_matrix(truths: TruthLike, t: Taxonomy) -> np.ndarray:
    if isinstance(truths, np.ndarray):
        matrix = truths.astype(np.int64)
    else:
        matrix = np.asarray([p.labels for p in truths], dtype=np.int64).reshape(len(truths), -1)
    if matrix.ndim != 2 or matrix.shape[1] != t.num_levels:
        raise InputError(f"truths have shape {matrix.shape}, expected (n, {t.num_levels})")
    if np.any(matrix == MISSING):
        raise InputError("evaluation needs fully labeled truths")
    return matrix


def consistent_edges(labels: np.ndarray, t: Taxonomy) -> np.ndarray:
    """(n, L-1) booleans: does level l+1's prediction sit under level l's"""
    edges = [t.parent_array(level)[labels[:, level - 1]] == labels[:, level - 2] for level in range(2, t.num_levels + 1)]
    if not edges:
        return np.zeros((labels.shape[0], 0), dtype=bool)
    return np.stack(edges, axis=1)


def evaluate(preds: PredictionMatrix, truths: TruthLike, t: Taxonomy) -> EvalReport:
    preds.check(t)
    truth = _truth_matrix(truths, t)
    if truth.shape[0] != len(preds):
        raise InputError(f"{len(preds)} predictions for {truth.shape[0]} truths")
    n = len(preds)
    if n == 0:
        raise InputError("evaluation on an empty set")
    correct = preds.labels == truth
    consistent = consistent_edges(preds.labels, t).all(axis=1)
    return EvalReport(
        level_accuracy=[float(v) for v in correct.mean(axis=0)],
        fpa=float(correct.all(axis=1).mean()),
        tice=float((~consistent).mean()),
        n=n,
    )


def stopping_infer(preds: PredictionMatrix, t: Taxonomy) -> StoppedPredictions:
    """
    Emit the longest prefix of each predicted tuple in which every level
    sits under the previous one; level 1 is always emitted.
    """
    preds.check(t)
    edges = consistent_edges(preds.labels, t)
    depth = 1 + np.cumprod(edges, axis=1).sum(axis=1) if edges.shape[1] else np.ones(len(preds), dtype=np.int64)
    depth = depth.astype(np.int64)
    levels = np.arange(1, t.num_levels + 1)
    labels = np.where(levels[None, :] <= depth[:, None], preds.labels, MISSING)
    return StoppedPredictions(depth=depth, labels=labels)


def stopping_report(stopped: StoppedPredictions, truths: TruthLike, t: Taxonomy) -> Tuple[Dict[int, int], Dict[int, Optional[float]]]:
    """
    Per stop depth: how many samples stopped there and the fraction whose
    whole emitted prefix matches the truth (None when nobody stopped there).
    """
    truth = _truth_matrix(truths, t)
    if truth.shape[0] != stopped.depth.shape[0]:
        raise InputError(f"{stopped.depth.shape[0]} stopped outputs for {truth.shape[0]} truths")
    emitted = stopped.labels != MISSING
    prefix_correct = np.all((stopped.labels == truth) | ~emitted, axis=1)
    histogram, correctness = {}, {}
    for d in range(1, t.num_levels + 1):
        at_depth = stopped.depth == d
        histogram[d] = int(at_depth.sum())
        correctness[d] = float(prefix_correct[at_depth].mean()) if histogram[d] else None
    return histogram, correctness


def evaluate_with_stopping(preds: PredictionMatrix, truths: TruthLike, t: Taxonomy) -> EvalReport:
    report = evaluate(preds, truths, t)
    report.stop_histogram, report.stop_correctness = stopping_report(stopping_infer(preds, t), truths, t)
    return report


def classwise_report(preds: PredictionMatrix, truths: TruthLike, t: Taxonomy,
                     fine_label_counts: Optional[pd.Series] = None) -> pd.DataFrame:
    """
    Held-out accuracy per finest class, with the number of fine-grained
    training labels of that class, ordered from the scarcest class up.
    """
    preds.check(t)
    truth = _truth_matrix(truths, t)
    frame = pd.DataFrame({
        "fine_class": truth[:, -1],
        "fine_correct": preds.labels[:, -1] == truth[:, -1],
        "path_correct": (preds.labels == truth).all(axis=1),
    })
    table = frame.groupby("fine_class").agg(
        n=("fine_correct", "size"),
        fine_accuracy=("fine_correct", "mean"),
        fpa=("path_correct", "mean"),
    )
    if fine_label_counts is not None:
        table["fine_labels"] = fine_label_counts.reindex(table.index).fillna(0).astype(int)
        table = table.sort_values(["fine_labels"], kind="stable")
    return table


def write_predictions(path: str, ids: Sequence[int], preds: PredictionMatrix,
                      stopped: Optional[StoppedPredictions] = None, with_logits: bool = False):
    """Predictions file: JSON Lines {"id", "labels"} (plus "logits", "stop_depth")"""
    with open(path, "w") as f:
        for i, sample_id in enumerate(ids):
            record = {"id": int(sample_id)}
            if stopped is not None:
                record["labels"] = [None if v == MISSING else int(v) for v in stopped.labels[i]]
                record["stop_depth"] = int(stopped.depth[i])
            else:
                record["labels"] = [int(v) for v in preds.labels[i]]
            if with_logits and preds.logits is not None:
                record["logits"] = [l[i].tolist() for l in preds.logits]
            f.write(json.dumps(record) + "\n")


def read_predictions(path: str) -> Tuple[np.ndarray, PredictionMatrix]:
    """Read a predictions file; logits take precedence over labels when present"""
    ids, labels, logits = [], [], []
    widths = None
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
            except json.JSONDecodeError as e:
                raise InputError(f"malformed JSON: {e.msg}", path=path, line=line_no)
            if "id" not in record or ("logits" not in record and "labels" not in record):
                raise InputError("prediction record needs 'id' and 'logits' or 'labels'", path=path, line=line_no)
            try:
                ids.append(int(record["id"]))
                if "logits" in record:
                    row = [np.asarray(level, dtype=np.float64) for level in record["logits"]]
                    shape = tuple(len(level) for level in row)
                    labels.append([int(np.argmax(level)) for level in row])
                    logits.append(row)
                else:
                    if any(v is None for v in record["labels"]):
                        raise InputError("evaluation needs a label at every level", path=path, line=line_no)
                    labels.append([int(v) for v in record["labels"]])
                    shape = (len(labels[-1]),)
            except InputError:
                raise
            except (TypeError, ValueError) as e:
                raise InputError(f"malformed prediction record: {e}", path=path, line=line_no)
            if widths is None:
                widths = shape
            elif shape != widths:
                raise InputError(f"record shape {list(shape)} differs from the first record's {list(widths)}",
                                 path=path, line=line_no)
    if logits and len(logits) != len(ids):
        raise InputError("mixing logits and label records is not supported", path=path)
    matrix = np.asarray(labels, dtype=np.int64)
    if logits:
        per_level = [np.stack([row[level] for row in logits]) for level in range(len(logits[0]))]
        return np.asarray(ids, dtype=np.int64), PredictionMatrix(labels=matrix, logits=per_level)
    return np.asarray(ids, dtype=np.int64), PredictionMatrix(labels=matrix)


def write_report(path: str, report: dict):
    with open(path, "w") as f:
        f.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
